"""Categorical value classification, span prediction and the training losses."""

import numpy as np
import torch
from torch import nn

from .attention import masked_log_softmax, masked_softmax

SPAN_TYPES = ("SPAN", "NONE", "DONT_CARE")
DEFAULT_MAX_SPAN_LEN = 10


def value_logits(P_e, Q_o, theta_v):
    """Bilinear option scores P^e Theta^v Q^o.

    P_e [Mc, N, w] (or [N, w]), Q_o [B, Mc, w] (or [w]) -> [B, Mc, N] (or [N]).
    """
    if P_e.dim() == 2:
        return P_e @ theta_v @ Q_o
    return torch.einsum("mnw,wv,bmv->bmn", P_e, theta_v, Q_o)


def classify_value(P_e, Q_o, theta_v, option_mask=None):
    logits = value_logits(P_e, Q_o, theta_v)
    if option_mask is None:
        return torch.softmax(logits, dim=-1)
    return masked_softmax(logits, option_mask)


def span_logits(X_e, Q_o, theta, ffn):
    """FFN(X^e) Theta Q^o for every context position.

    X_e [B, T, w], Q_o [B, M, w] -> [B, M, T]; unbatched [T, w] and [w] -> [T].
    """
    projected = ffn(X_e) @ theta
    if X_e.dim() == 2:
        return projected @ Q_o
    return Q_o @ projected.transpose(1, 2)


def span_distributions(X_e, Q_o, theta_s, theta_e, ffn_c1, ffn_c2, mask=None):
    start = span_logits(X_e, Q_o, theta_s, ffn_c1)
    end = span_logits(X_e, Q_o, theta_e, ffn_c2)
    if mask is None:
        return torch.softmax(start, -1), torch.softmax(end, -1)
    if mask.dim() == 2:
        mask = mask.unsqueeze(1)
    if start.shape[-1] == 0 or not mask.any():
        raise ValueError("span prediction needs a non-empty context")
    return masked_softmax(start, mask), masked_softmax(end, mask)


def classify_span_type(Q_o, ffn_type):
    """Probabilities over (SPAN, NONE, DONT_CARE)."""
    return torch.softmax(ffn_type(Q_o), dim=-1)


def decode_span(p_st, p_end, max_len=DEFAULT_MAX_SPAN_LEN, length=None):
    """Best (start, end) with start <= end < start + max_len.

    Maximizes p_st[s] * p_end[e]; ties go to the smaller start, then the
    smaller end.
    """
    p_st = np.asarray(p_st, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    n = len(p_st) if length is None else length
    if n < 1:
        raise ValueError("cannot decode a span from an empty context")
    scores = np.outer(p_st[:n], p_end[:n])
    idx = np.arange(n)
    valid = (idx[None, :] >= idx[:, None]) & (idx[None, :] - idx[:, None] < max_len)
    scores = np.where(valid, scores, -1.0)
    flat = int(np.argmax(scores))  # first maximum in row-major order
    return divmod(flat, n)


def _nll(prob, index):
    if not 0 <= index < len(prob):
        raise IndexError(f"gold index {index} out of range for {len(prob)} options")
    return -torch.log(prob[index])


def value_loss(p_v, gold):
    return _nll(p_v, gold)


def type_loss(p_span, gold):
    return _nll(p_span, int(gold))


def span_loss(p_st, p_end, start, end):
    return _nll(p_st, start) + _nll(p_end, end)


class FeedForward(nn.Sequential):
    """Linear layers with rectifier activations; ``last_activation`` controls the output layer."""

    def __init__(self, dims, last_activation=True):
        layers = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            layers.append(nn.Linear(d_in, d_out))
            if i < len(dims) - 2 or last_activation:
                layers.append(nn.ReLU())
        super().__init__(*layers)


class Heads(nn.Module):
    """Theta^v, Theta^s, Theta^e and the three feed-forward maps."""

    def __init__(self, w):
        super().__init__()
        self.theta_v = nn.Parameter(torch.empty(w, w))
        self.theta_s = nn.Parameter(torch.empty(w, w))
        self.theta_e = nn.Parameter(torch.empty(w, w))
        self.ffn_type = FeedForward([w, w, 3], last_activation=False)
        self.ffn_c1 = FeedForward([w, w])
        self.ffn_c2 = FeedForward([w, w])
        for theta in (self.theta_v, self.theta_s, self.theta_e):
            nn.init.uniform_(theta, -(w**-0.5), w**-0.5)

    def value_log_probs(self, P_e, Q_o, option_mask):
        return masked_log_softmax(value_logits(P_e, Q_o, self.theta_v), option_mask)

    def type_logits(self, Q_o):
        return self.ffn_type(Q_o)

    def span_log_probs(self, X_e, Q_o, ctx_mask):
        mask = ctx_mask.unsqueeze(1)
        start = masked_log_softmax(span_logits(X_e, Q_o, self.theta_s, self.ffn_c1), mask)
        end = masked_log_softmax(span_logits(X_e, Q_o, self.theta_e, self.ffn_c2), mask)
        return start, end
