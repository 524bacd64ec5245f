"""Joint training, run configuration and finite-difference gradient checks."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import torch

from .checkpoint import Checkpoint
from .corpus import Vocab, make_batches, make_examples
from .encoder import EmbeddingConfig, FrozenPretrained, Provider, pretrained_vectors
from .evaluation import joint_goal_accuracy, predict_examples, slot_goal_accuracy
from .model import ActAwareDST
from .ontology import Policy

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    learning_rate: float = 0.001
    batch_size: int = 24
    optimizer: str = "adam"
    max_epochs: int = 20
    max_steps: Optional[int] = None
    patience: Optional[int] = 3
    seed: int = 0
    slot_policy: str = "hybrid"
    act_attention: bool = True
    provider: str = "trainable_lookup"
    pretrained_vectors: Optional[str] = None
    context_cap: int = 512
    max_len: int = 10
    precision: int = 32
    word_dim: int = 512
    char_dim: int = 100
    role_dim: int = 128
    char_emb_dim: int = 16
    grad_clip: Optional[float] = 5.0
    loss_reduction: str = "sum"
    span_choice: str = "last"
    strip_act_domain: bool = True
    ontology: Optional[str] = None
    train: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.optimizer == "adam", "only the adam optimizer is supported"),
            (self.max_epochs >= 1, "max_epochs must be >= 1"),
            (self.max_steps is None or self.max_steps >= 1, "max_steps must be >= 1"),
            (self.patience is None or self.patience >= 1, "patience must be >= 1"),
            (self.slot_policy in {p.value for p in Policy}, f"unknown slot_policy {self.slot_policy!r}"),
            (self.provider in {p.value for p in Provider}, f"unknown provider {self.provider!r}"),
            (self.context_cap >= 1, "context_cap must be >= 1"),
            (self.max_len >= 1, "max_len must be >= 1"),
            (self.precision in (32, 64), "precision must be 32 or 64"),
            ((self.word_dim + self.char_dim) % 2 == 0, "word_dim + char_dim must be even"),
            (self.char_dim >= 3, "char_dim must be >= 3"),
            (self.loss_reduction in ("sum", "mean"), "loss_reduction must be sum or mean"),
            (self.span_choice in ("last", "first"), "span_choice must be last or first"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)

    @property
    def dtype(self):
        return torch.float64 if self.precision == 64 else torch.float32

    def embedding_config(self, ontology):
        return EmbeddingConfig(
            word_dim=self.word_dim,
            char_dim=self.char_dim,
            role_dim=self.role_dim,
            exact_dim=ontology.num_slots,
            char_emb_dim=self.char_emb_dim,
            provider=Provider(self.provider),
        )


def load_config(path, **overrides):
    """Read a JSON run config; relative data paths resolve against the config's directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("ontology", "train", "dev", "test", "pretrained_vectors"):
        if data.get(key) and not Path(data[key]).is_absolute():
            data[key] = str((path.parent / data[key]).resolve())
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)


def build_model(config, vocab, ontology):
    provider = None
    if config.provider == Provider.PRETRAINED_CONTEXTUAL.value:
        provider = FrozenPretrained(
            pretrained_vectors(vocab, config.word_dim, config.pretrained_vectors, config.seed)
        )
    model = ActAwareDST(
        config.embedding_config(ontology),
        vocab,
        ontology,
        act_attention=config.act_attention,
        provider=provider,
        seed=config.seed,
    )
    return model.to(config.dtype)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: ActAwareDST
    history: list = field(default_factory=list)


def make_checkpoint(model, config, ontology, epoch=0, step=0, metrics=None):
    return Checkpoint(
        state_dict={k: v.detach().clone() for k, v in model.state_dict().items()},
        config=config.to_dict(),
        ontology=ontology.to_dict(include_partition=True),
        ontology_hash=ontology.fingerprint(),
        vocab=model.encoder.vocab.to_dict(),
        epoch=epoch,
        step=step,
        metrics=dict(metrics or {}),
    )


def evaluate_examples(model, examples, config):
    if not examples:
        return {"joint": float("nan"), "slot": float("nan"), "n_turns": 0}
    preds = predict_examples(model, examples, max_len=config.max_len)
    golds = [ex.gold_state for ex in examples]
    return {
        "joint": joint_goal_accuracy(preds, golds),
        "slot": slot_goal_accuracy(preds, golds),
        "n_turns": len(examples),
    }


def train(config, train_dialogues, ontology, dev_dialogues=None, log_path=None, vocab=None):
    """Minimize L_v + L_type + L_s with Adam; keep the best-dev checkpoint.

    Without dev dialogues the final parameters are kept. Each epoch appends
    one record to ``log_path`` (line-delimited JSON) when given.
    """
    torch.manual_seed(config.seed)
    if vocab is None:
        vocab = Vocab.build(ontology, train_dialogues)
    model = build_model(config, vocab, ontology)
    optimizer = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=config.learning_rate)

    train_examples = make_examples(train_dialogues, ontology, config.context_cap, config.span_choice)
    dev_examples = make_examples(dev_dialogues or [], ontology, config.context_cap, config.span_choice)
    tag = "act_attention" if config.act_attention else "no_act_attention"

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    history = []
    best, best_score, stale = None, -math.inf, 0
    step = 0
    try:
        for epoch in range(1, config.max_epochs + 1):
            model.train()
            batches = make_batches(train_examples, config.batch_size, config.seed + epoch, vocab, ontology)
            epoch_loss = 0.0
            for batch in batches:
                out = model(batch)
                losses = model.losses(batch, out, config.loss_reduction)
                loss = losses["total"]
                if not torch.isfinite(loss):
                    parts = {k: float(v) for k, v in losses.items()}
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step + 1}: {parts}")
                optimizer.zero_grad()
                loss.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                step += 1
                epoch_loss += float(loss.detach())
                if config.max_steps is not None and step >= config.max_steps:
                    break

            model.eval()
            dev = evaluate_examples(model, dev_examples, config) if dev_examples else None
            record = {
                "epoch": epoch,
                "step": step,
                "train_loss": epoch_loss,
                "dev_joint": dev["joint"] if dev else None,
                "dev_slot": dev["slot"] if dev else None,
                "ablation": tag,
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            logger.info("epoch %d step %d loss %.4f dev_joint %s", epoch, step, epoch_loss, record["dev_joint"])

            score = dev["joint"] if dev else epoch
            # ties keep the later epoch; only strict gains reset patience
            if score >= best_score:
                stale = 0 if score > best_score else stale + 1
                best_score = score
                metrics = {"dev_joint": record["dev_joint"], "dev_slot": record["dev_slot"]}
                best = make_checkpoint(model, config, ontology, epoch, step, metrics)
            else:
                stale += 1
            if dev and config.patience is not None and stale >= config.patience:
                break
            if config.max_steps is not None and step >= config.max_steps:
                break
    finally:
        if log_fh:
            log_fh.close()

    final_model = best.build_model(ontology) if best is not None else model
    return TrainResult(checkpoint=best, model=final_model, history=history)


def relative_error(analytic, numeric):
    diff = torch.linalg.vector_norm(analytic - numeric)
    scale = torch.linalg.vector_norm(analytic) + torch.linalg.vector_norm(numeric)
    if scale == 0:
        return 0.0
    return float(diff / scale)


def gradient_check(loss_fn, params, eps=1e-3):
    """Compare autograd gradients with central differences.

    ``params`` maps names to leaf tensors that ``loss_fn()`` reads. Tensors
    with ``requires_grad=False`` are reported with their analytic gradient
    (identically zero). Returns {name: max relative error}.
    """
    names = list(params)
    trainable = [n for n in names if params[n].requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [params[n] for n in trainable], allow_unused=True)
    analytic = {
        n: (g if g is not None else torch.zeros_like(params[n])) for n, g in zip(trainable, grads)
    }
    report = {}
    with torch.no_grad():
        for name in names:
            tensor = params[name]
            if not tensor.requires_grad:
                report[name] = 0.0
                continue
            numeric = torch.zeros_like(tensor)
            flat, nflat = tensor.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                plus = float(loss_fn())
                flat[i] = orig - eps
                minus = float(loss_fn())
                flat[i] = orig
                nflat[i] = (plus - minus) / (2 * eps)
            report[name] = relative_error(analytic[name], numeric)
    return report


def model_gradient_check(model, batch, eps=1e-3, names=None):
    """Finite-difference check of the full model's total loss (run in 64-bit)."""
    available = dict(model.named_parameters())
    available.update(model.named_buffers())
    params = available if names is None else {n: available[n] for n in names}

    def loss_fn():
        return model.losses(batch, model(batch))["total"]

    return gradient_check(loss_fn, params, eps)


def _composite_instance(seed, w, n_ctx, n_acts, n_options, dtype=torch.float64, min_margin=1e-2):
    """Random small tensors plus a Heads module, away from rectifier kinks."""
    from .attention import SlotAttention
    from .heads import Heads

    gen = torch.Generator().manual_seed(seed)
    for attempt in range(1000):

        def randn(*shape):
            return torch.randn(*shape, generator=gen, dtype=dtype)

        heads = Heads(w).to(dtype)
        attn = SlotAttention(w).to(dtype)
        with torch.no_grad():
            for p in list(heads.parameters()) + list(attn.parameters()):
                p.copy_(randn(*p.shape) * 0.5)
        inst = {
            "X_e": randn(n_ctx, w),
            "W_act": randn(n_acts, w),
            "q_d": randn(w),
            "q_s": randn(w),
            "w_v": randn(n_options, w),
            "probe": randn(w),
        }
        with torch.no_grad():
            q = inst["q_d"] + inst["q_s"]
            Q_o = _fused(attn, inst, q)
            pre = torch.cat(
                [heads.ffn_type[0](Q_o), heads.ffn_c1[0](inst["X_e"]).flatten(), heads.ffn_c2[0](inst["X_e"]).flatten()]
            )
        if pre.abs().min() > min_margin:
            gold = torch.randint(0, n_options, (4,), generator=gen)
            labels = {
                "value": int(gold[0]),
                "type": int(gold[1]) % 3,
                "start": int(gold[2]) % n_ctx,
                "end": n_ctx - 1,
            }
            return heads, attn, inst, labels
    raise RuntimeError("could not draw a kink-free instance")


def _fused(attn, inst, q):
    from .attention import attention

    alpha1, _ = attention(inst["X_e"], q, attn.k1)
    Q_c = alpha1 @ inst["X_e"]
    alpha2, _ = attention(inst["W_act"], Q_c, attn.k2)
    return Q_c + alpha2 @ inst["W_act"] + q


def composite_losses(heads, attn, inst, labels):
    """Scalar losses through attention, the bilinear classifier, the span heads and L."""
    from .heads import classify_span_type, classify_value, span_distributions, span_loss, type_loss, value_loss

    q = inst["q_d"] + inst["q_s"]
    Q_o = _fused(attn, inst, q)
    P_e = q.unsqueeze(0) + inst["w_v"]
    p_v = classify_value(P_e, Q_o, heads.theta_v)
    p_type = classify_span_type(Q_o, heads.ffn_type)
    p_st, p_end = span_distributions(inst["X_e"], Q_o, heads.theta_s, heads.theta_e, heads.ffn_c1, heads.ffn_c2)
    l_v = value_loss(p_v, labels["value"])
    l_type = type_loss(p_type, labels["type"])
    l_s = span_loss(p_st, p_end, labels["start"], labels["end"])
    return {
        "attention": Q_o @ inst["probe"],
        "value": l_v,
        "span": l_s,
        "total": l_v + l_type + l_s,
    }


def composite_gradient_check(seed=0, w=6, n_ctx=5, n_acts=3, n_options=4, eps=1e-3):
    """Finite-difference check of each loss against every tensor it depends on.

    Runs in 64-bit on a random instance; returns {loss: {tensor: rel error}}.
    """
    heads, attn, inst, labels = _composite_instance(seed, w, n_ctx, n_acts, n_options)
    tensors = {f"heads.{n}": p for n, p in heads.named_parameters()}
    tensors.update({f"attention.{n}": p for n, p in attn.named_parameters()})
    for name, t in inst.items():
        t.requires_grad_(True)
        tensors[name] = t
    report = {}
    for which in ("attention", "value", "span", "total"):
        report[which] = gradient_check(lambda: composite_losses(heads, attn, inst, labels)[which], tensors, eps)
    return report
