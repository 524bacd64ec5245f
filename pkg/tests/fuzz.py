"""Fuzzed comparisons of package functions against the oracles.

Each ``check_*`` runs ``n`` random instances and returns the worst deviation
(probabilities and losses) or the number of mismatches (exact quantities).
"""

import random

import numpy as np
import torch

import oracles
from actdst.attention import attention
from actdst.evaluation import joint_goal_accuracy, slot_goal_accuracy
from actdst.heads import (
    FeedForward,
    classify_span_type,
    classify_value,
    decode_span,
    span_distributions,
    span_loss,
    type_loss,
    value_loss,
)
from actdst.ontology import ontology_from_dict
from actdst.corpus import exact_match_features

T = torch.float64


def _np(t):
    return t.detach().numpy()


def _linear(ffn):
    layer = ffn[0]
    return _np(layer.weight), _np(layer.bias)


def _randomize(module, gen):
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=T))
    return module


def check_attention(n, seed=0):
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    worst, sums = 0.0, 0.0
    for _ in range(n):
        rows, h = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        R = torch.randn(rows, h, generator=gen, dtype=T)
        s = torch.randn(h, generator=gen, dtype=T)
        k = torch.randn(3 * h, generator=gen, dtype=T)
        mask = torch.from_numpy(rng.random(rows) < 0.75)
        weights, empty = attention(R, s, k, mask)
        expect = oracles.attention(_np(R), _np(s), _np(k), mask.numpy())
        worst = max(worst, float(np.abs(_np(weights) - expect).max()))
        if mask.any():
            sums = max(sums, abs(float(weights.sum()) - 1.0))
        else:
            assert bool(empty)
        assert (weights[~mask] == 0).all()
    return max(worst, sums)


def check_value(n, seed=1):
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        options, w = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        P = torch.randn(options, w, generator=gen, dtype=T)
        theta = torch.randn(w, w, generator=gen, dtype=T)
        q = torch.randn(w, generator=gen, dtype=T)
        got = _np(classify_value(P, q, theta))
        worst = max(worst, float(np.abs(got - oracles.value_probs(_np(P), _np(theta), _np(q))).max()))
    return worst


def check_span(n, seed=2):
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        length, w = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        X = torch.randn(length, w, generator=gen, dtype=T)
        q = torch.randn(w, generator=gen, dtype=T)
        theta_s = torch.randn(w, w, generator=gen, dtype=T)
        theta_e = torch.randn(w, w, generator=gen, dtype=T)
        c1 = _randomize(FeedForward([w, w]).to(T), gen)
        c2 = _randomize(FeedForward([w, w]).to(T), gen)
        live = rng.random(length) < 0.8
        live[0] = True
        mask = torch.from_numpy(live)
        p_st, p_end = span_distributions(X, q, theta_s, theta_e, c1, c2, mask)
        W1, b1 = _linear(c1)
        W2, b2 = _linear(c2)
        exp_st = oracles.span_probs(_np(X), W1, b1, _np(theta_s), _np(q), live)
        exp_end = oracles.span_probs(_np(X), W2, b2, _np(theta_e), _np(q), live)
        worst = max(worst, float(np.abs(_np(p_st) - exp_st).max()), float(np.abs(_np(p_end) - exp_end).max()))
    return worst


def check_type(n, seed=3):
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        w = int(rng.integers(1, 6))
        ffn = _randomize(FeedForward([w, w, 3], last_activation=False).to(T), gen)
        q = torch.randn(w, generator=gen, dtype=T)
        expect = oracles.type_probs(_np(q), *_linear(ffn), _np(ffn[2].weight), _np(ffn[2].bias))
        worst = max(worst, float(np.abs(_np(classify_span_type(q, ffn)) - expect).max()))
    return worst


def _simplex(rng, size):
    p = rng.random(size) + 1e-3
    return p / p.sum()


def check_losses(n, seed=4):
    """Worst deviation over L_v, L_type and L_s."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p_v = _simplex(rng, int(rng.integers(1, 8)))
        gold_v = int(rng.integers(len(p_v)))
        worst = max(worst, abs(float(value_loss(torch.from_numpy(p_v), gold_v)) - oracles.nll(p_v, gold_v)))
        p_t = _simplex(rng, 3)
        gold_t = int(rng.integers(3))
        worst = max(worst, abs(float(type_loss(torch.from_numpy(p_t), gold_t)) - oracles.nll(p_t, gold_t)))
        length = int(rng.integers(1, 9))
        p_st, p_end = _simplex(rng, length), _simplex(rng, length)
        s = int(rng.integers(length))
        e = int(rng.integers(s, length))
        got = float(span_loss(torch.from_numpy(p_st), torch.from_numpy(p_end), s, e))
        worst = max(worst, abs(got - (oracles.nll(p_st, s) + oracles.nll(p_end, e))))
    return worst


def random_states(rng, n_turns, n_slots, values=("a", "b", "none", "dont_care")):
    slots = [("d", f"s{m}") for m in range(n_slots)]
    golds = [{s: rng.choice(values) for s in slots} for _ in range(n_turns)]
    preds = [{s: (g[s] if rng.random() < 0.7 else rng.choice(values)) for s in slots} for g in golds]
    return preds, golds


def check_metrics(n, seed=5):
    """Mismatches between package and oracle accuracies; also slot >= joint."""
    rng = random.Random(seed)
    bad = 0
    for _ in range(n):
        preds, golds = random_states(rng, rng.randint(1, 6), rng.randint(1, 4))
        joint = joint_goal_accuracy(preds, golds, aliases={})
        slot = slot_goal_accuracy(preds, golds, aliases={})
        bad += joint != oracles.joint_accuracy(preds, golds)
        bad += slot != oracles.slot_accuracy(preds, golds)
        bad += slot < joint
    return bad


def check_exact_match(n, seed=6):
    rng = random.Random(seed)
    alphabet = ["a", "b", "c", "d"]
    bad = 0
    for _ in range(n):
        doc, per_slot = {}, []
        for m in range(rng.randint(1, 3)):
            vals = []
            for _ in range(rng.randint(0, 3)):
                v = " ".join(rng.choice(alphabet) for _ in range(rng.randint(1, 3)))
                if v not in vals:
                    vals.append(v)
            doc[f"hotel-s{m}"] = vals
            per_slot.append([v.split() for v in vals])
        onto = ontology_from_dict({"slots": doc}, "all_noncat")
        context = [rng.choice(alphabet) for _ in range(rng.randint(0, 12))]
        bad += not np.array_equal(exact_match_features(context, onto), oracles.exact_match(context, per_slot))
    return bad


def check_decode(n, seed=7):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        length = int(rng.integers(1, 15))
        max_len = int(rng.integers(1, 12))
        # coarse values force ties
        p_st = rng.integers(0, 4, length) / 4.0
        p_end = rng.integers(0, 4, length) / 4.0
        s, e = decode_span(p_st, p_end, max_len)
        bad += (s, e) != oracles.best_span(p_st, p_end, max_len)
        bad += not (s <= e < s + max_len)
    return bad


ALL = {
    "attention weights": check_attention,
    "value probabilities": check_value,
    "span distributions": check_span,
    "span type probabilities": check_type,
    "losses": check_losses,
    "joint/slot accuracy": check_metrics,
    "exact-match features": check_exact_match,
    "decode_span": check_decode,
}
EXACT = {"joint/slot accuracy", "exact-match features", "decode_span"}
