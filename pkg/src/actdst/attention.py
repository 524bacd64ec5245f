"""Trilinear slot attention over dialogue context and system acts."""

from dataclasses import dataclass

import torch
from torch import nn

MASK_VALUE = -1e9


def masked_softmax(logits, mask, dim=-1):
    """Softmax over unmasked entries; masked entries come out exactly 0.

    An all-masked row yields all zeros rather than NaN.
    """
    mask = mask.to(torch.bool)
    probs = torch.softmax(logits.masked_fill(~mask, MASK_VALUE), dim=dim)
    return probs * mask.to(probs.dtype)


def masked_log_softmax(logits, mask, dim=-1):
    mask = mask.to(torch.bool)
    return torch.log_softmax(logits.masked_fill(~mask, MASK_VALUE), dim=dim)


def attention_logits(R, S, k):
    """[R_i; S_j; R_i * S_j] . k for every (j, i) pair.

    R: [..., n, h], S: [..., m, h], k: [3h] -> [..., m, n]. The concatenation
    is split into its three h-wide blocks so no [m, n, 3h] tensor is built.
    """
    h = R.shape[-1]
    k_r, k_s, k_rs = k[:h], k[h : 2 * h], k[2 * h :]
    passage = (R @ k_r).unsqueeze(-2)  # [..., 1, n]
    query = (S @ k_s).unsqueeze(-1)  # [..., m, 1]
    joint = (S * k_rs) @ R.transpose(-1, -2)  # [..., m, n]
    return passage + query + joint


def attention(R, s, k, mask=None):
    """Weights of query ``s`` over the rows of ``R``.

    Accepts a single query vector [h] with R [n, h] or batched queries
    [..., m, h] with R [..., n, h]. Returns ``(weights, empty)`` where
    ``empty`` flags queries whose passage was entirely masked (their
    weights are all zero).
    """
    single = s.dim() == 1
    if single:
        s = s.unsqueeze(0)
    if mask is None:
        mask = torch.ones(R.shape[:-1], dtype=torch.bool)
    mask = mask.to(torch.bool).unsqueeze(-2)  # broadcast over queries
    logits = attention_logits(R, s, k)
    weights = masked_softmax(logits, mask)
    empty = ~mask.any(dim=-1)
    if single:
        return weights[0], empty[0]
    return weights, empty.expand(weights.shape[:-1])


@dataclass
class FusedSlot:
    Q_c: torch.Tensor
    Q_a: torch.Tensor
    domain_vec: torch.Tensor
    slot_vec: torch.Tensor

    @property
    def Q_o(self):
        return self.Q_c + self.Q_a + self.domain_vec + self.slot_vec


def fuse_slot(Q_c, Q_a, domain_vec, slot_vec, act_attention=True):
    if not act_attention or Q_a is None:
        Q_a = torch.zeros_like(Q_c)
    return FusedSlot(Q_c, Q_a, domain_vec, slot_vec)


class SlotAttention(nn.Module):
    """Holds k1 (context) and, unless ablated, k2 (acts)."""

    def __init__(self, w, act_attention=True):
        super().__init__()
        self.w = w
        self.act_attention = act_attention
        self.k1 = nn.Parameter(torch.empty(3 * w))
        if act_attention:
            self.k2 = nn.Parameter(torch.empty(3 * w))
        else:
            self.register_parameter("k2", None)
        bound = (3 * w) ** -0.5
        for p in self.parameters():
            nn.init.uniform_(p, -bound, bound)

    def attend_context(self, X_e, query, mask):
        """X_e [B, T, w], query [B, M, w] -> Q_c [B, M, w], alpha1 [B, M, T]."""
        alpha, _ = attention(X_e, query, self.k1, mask)
        return alpha @ X_e, alpha

    def attend_acts(self, W_act, Q_c, act_mask):
        """W_act [B, A, w], Q_c [B, M, w] -> Q_a [B, M, w], alpha2 [B, M, A].

        Turns with no acts get Q_a = 0 and an all-zero (or empty) alpha2.
        """
        if W_act.shape[-2] == 0:
            return torch.zeros_like(Q_c), Q_c.new_zeros(*Q_c.shape[:-1], 0)
        alpha, _ = attention(W_act, Q_c, self.k2, act_mask)
        return alpha @ W_act, alpha

    def forward(self, X_e, ctx_mask, W_act, act_mask, domain_vec, slot_vec, ablate=False):
        query = (domain_vec + slot_vec).expand(X_e.shape[0], -1, -1)
        Q_c, alpha1 = self.attend_context(X_e, query, ctx_mask)
        use_acts = self.act_attention and not ablate and W_act is not None
        if use_acts:
            Q_a, alpha2 = self.attend_acts(W_act, Q_c, act_mask)
        else:
            Q_a, alpha2 = None, None
        fused = fuse_slot(Q_c, Q_a, domain_vec, slot_vec, use_acts)
        return fused, alpha1, alpha2
