"""State prediction, goal accuracies, ablation reports and act-attention export."""

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .corpus import collate, make_turn_example
from .heads import DEFAULT_MAX_SPAN_LEN
from .ontology import slot_key
from .text import match_key, tokenize


def load_aliases():
    data = json.loads(resources.files("actdst").joinpath("data/aliases.json").read_text(encoding="utf-8"))
    return data["aliases"]


_ALIASES = None


def default_aliases():
    global _ALIASES
    if _ALIASES is None:
        _ALIASES = load_aliases()
    return _ALIASES


@torch.no_grad()
def predict_examples(model, examples, batch_size=64, max_len=DEFAULT_MAX_SPAN_LEN):
    """One DialogueState (dict (domain, slot) -> value) per TurnExample."""
    model.eval()
    vocab, ontology = model.encoder.vocab, model.ontology
    states = []
    for start in range(0, len(examples), batch_size):
        batch = collate(examples[start : start + batch_size], vocab, ontology)
        states.extend(model.decode(batch, model(batch), max_len))
    return states


def predict_turn(checkpoint, dialogue, t, ontology, max_len=None, context_cap=None):
    """Predicted state after user turn ``t`` (1-based)."""
    checkpoint.check_ontology(ontology)
    model = checkpoint.build_model(ontology)
    cfg = checkpoint.config
    example = make_turn_example(
        dialogue, t, ontology, context_cap or cfg.get("context_cap", 512), cfg.get("span_choice", "last")
    )
    return predict_examples(model, [example], max_len=max_len or cfg.get("max_len", DEFAULT_MAX_SPAN_LEN))[0]


def _check_aligned(predictions, golds):
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} gold turns")
    for pred, gold in zip(predictions, golds):
        if set(pred) != set(gold):
            raise ValueError("prediction and gold states cover different slots")


def _cell_matches(predictions, golds, aliases):
    return [
        [match_key(pred[slot], aliases) == match_key(gold[slot], aliases) for slot in gold]
        for pred, gold in zip(predictions, golds)
    ]


def joint_goal_accuracy(predictions, golds, aliases=None):
    """Fraction of turns whose every slot value matches gold."""
    _check_aligned(predictions, golds)
    if not golds:
        return 0.0
    aliases = default_aliases() if aliases is None else aliases
    cells = _cell_matches(predictions, golds, aliases)
    return sum(all(row) for row in cells) / len(cells)


def slot_goal_accuracy(predictions, golds, aliases=None):
    """Fraction of (turn, slot) cells predicted correctly."""
    _check_aligned(predictions, golds)
    aliases = default_aliases() if aliases is None else aliases
    cells = _cell_matches(predictions, golds, aliases)
    total = sum(len(row) for row in cells)
    return sum(sum(row) for row in cells) / total if total else 0.0


def prediction_records(examples, predictions):
    for ex, pred in zip(examples, predictions):
        for pair, value in pred.items():
            yield {
                "dialogue_id": ex.dialogue_id,
                "turn": ex.turn,
                "slot": slot_key(*pair),
                "predicted": value,
                "gold": ex.gold_state[pair],
            }


def write_predictions(path, examples, predictions):
    with open(path, "w", encoding="utf-8") as fh:
        for record in prediction_records(examples, predictions):
            fh.write(json.dumps(record) + "\n")


def write_metrics(path, metrics):
    Path(path).write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")


@dataclass
class AblationReport:
    dev_joint_with: float
    dev_joint_without: float
    dev_slot_with: float
    dev_slot_without: float

    @property
    def joint_delta(self):
        return self.dev_joint_without - self.dev_joint_with

    @property
    def slot_delta(self):
        return self.dev_slot_without - self.dev_slot_with

    def to_dict(self):
        return {
            "dev_joint_with": self.dev_joint_with,
            "dev_joint_without": self.dev_joint_without,
            "joint_delta": self.joint_delta,
            "dev_slot_with": self.dev_slot_with,
            "dev_slot_without": self.dev_slot_without,
            "slot_delta": self.slot_delta,
        }

    def table(self):
        """Two-row text table: the full model, then the act-free model with its delta."""
        j1, s1 = 100 * self.dev_joint_with, 100 * self.dev_slot_with
        j0, s0 = 100 * self.dev_joint_without, 100 * self.dev_slot_without
        return "\n".join(
            [
                f"{'Model':<24}| {'Dev Joint':<16}| Dev Slot",
                f"{'with dialogue acts':<24}| {j1:<16.2f}| {s1:.2f}",
                f"{'- w/o dialogue acts':<24}| {f'{j0:.2f}({j0 - j1:+.2f})':<16}| {s0:.2f}({s0 - s1:+.2f})",
            ]
        )


def check_ablation_pair(config_with, config_without):
    a, b = config_with.to_dict(), config_without.to_dict()
    differing = sorted(k for k in a if a[k] != b[k] and k != "act_attention")
    if differing:
        raise ValueError(f"ablation configs differ beyond act_attention: {differing}")
    if not (a["act_attention"] and not b["act_attention"]):
        raise ValueError("first config must enable act attention and the second disable it")


def ablation_run(config_with, config_without, train_dialogues, dev_dialogues, ontology):
    """Train both variants and report dev accuracies with and without act attention."""
    from .training import train

    check_ablation_pair(config_with, config_without)
    scores = []
    for config in (config_with, config_without):
        result = train(config, train_dialogues, ontology, dev_dialogues)
        scores.append(result.checkpoint.metrics)
    return AblationReport(
        dev_joint_with=scores[0]["dev_joint"],
        dev_joint_without=scores[1]["dev_joint"],
        dev_slot_with=scores[0]["dev_slot"],
        dev_slot_without=scores[1]["dev_slot"],
    )


def ablation_from_checkpoints(ckpt_with, ckpt_without, dev_dialogues, ontology):
    """Same report as ``ablation_run`` for two already-trained checkpoints."""
    from .corpus import make_examples
    from .training import RunConfig, evaluate_examples

    config_with = RunConfig.from_dict(ckpt_with.config)
    config_without = RunConfig.from_dict(ckpt_without.config)
    check_ablation_pair(config_with, config_without)
    examples = make_examples(dev_dialogues, ontology, config_with.context_cap, config_with.span_choice)
    scores = [
        evaluate_examples(ckpt.build_model(ontology), examples, cfg)
        for ckpt, cfg in ((ckpt_with, config_with), (ckpt_without, config_without))
    ]
    return AblationReport(scores[0]["joint"], scores[1]["joint"], scores[0]["slot"], scores[1]["slot"])


@dataclass
class AttentionExport:
    weights: np.ndarray  # [A, M]; column m is slot m's distribution over acts
    acts: list
    slots: list

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["act"] + [slot_key(*s) for s in self.slots])
            for act, row in zip(self.acts, self.weights):
                writer.writerow([act] + [f"{x:.8f}" for x in row])

    def plot(self, path):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(self.slots)), max(3, 0.4 * len(self.acts))))
        im = ax.imshow(self.weights, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(self.slots)))
        ax.set_xticklabels([slot_key(*s) for s in self.slots], rotation=90, fontsize=7)
        ax.set_yticks(range(len(self.acts)))
        ax.set_yticklabels(self.acts)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def read_attention_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return [r[0] for r in body], header[1:], np.array([[float(x) for x in r[1:]] for r in body])


@torch.no_grad()
def export_attention(model, acts, context="i need some help .", csv_path=None, image_path=None):
    """Act-attention weights of every slot for a simulated act sequence.

    The context passage only feeds the context-attended slot vector that
    queries the acts, so a neutral context keeps slots comparable.
    """
    if not model.act_attention:
        raise ValueError("model was trained without act attention")
    ontology = model.ontology
    unknown = [a for a in acts if a not in ontology.acts]
    if unknown:
        raise KeyError(f"unknown act(s) {unknown}")
    if not acts:
        raise ValueError("need at least one act")
    from .corpus import Dialogue, Turn

    dialogue = Dialogue("simulated", [Turn([], tokenize(context), list(acts), {})])
    example = make_turn_example(dialogue, 1, ontology)
    model.eval()
    batch = collate([example], model.encoder.vocab, ontology)
    out = model(batch)
    weights = out.act_weights[0].T.cpu().double().numpy()  # [A, M]
    export = AttentionExport(weights=weights, acts=list(acts), slots=list(ontology.slots))
    if csv_path:
        export.write_csv(csv_path)
    if image_path:
        export.plot(image_path)
    return export
