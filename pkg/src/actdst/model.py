"""The act-aware tracker: encoder -> context/act attention -> value and span heads."""

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .attention import SlotAttention
from .corpus import SpanType
from .encoder import DialogueEncoder
from .heads import DEFAULT_MAX_SPAN_LEN, Heads, decode_span
from .ontology import option_set
from .text import DONT_CARE, NONE, detokenize


@dataclass
class ModelOutput:
    value_log_probs: torch.Tensor  # [B, Mc, Nmax]
    type_logits: torch.Tensor  # [B, Mn, 3]
    start_log_probs: torch.Tensor  # [B, Mn, T]
    end_log_probs: torch.Tensor  # [B, Mn, T]
    context_weights: torch.Tensor  # [B, M, T]
    act_weights: Optional[torch.Tensor]  # [B, M, A]
    Q_o: torch.Tensor  # [B, M, w]


def init_parameters(module, seed):
    """Uniform(+-1/sqrt(fan_in)) for weights and attention vectors, zeros for biases.

    Draws from a private generator; k2 is drawn last so models with and
    without act attention share every other initial value.
    """
    gen = torch.Generator().manual_seed(seed)
    named = [(n, p) for n, p in module.named_parameters() if not n.endswith("attention.k2")]
    named += [(n, p) for n, p in module.named_parameters() if n.endswith("attention.k2")]
    with torch.no_grad():
        for name, param in named:
            if name.endswith("bias") or "bias_" in name:
                param.zero_()
                continue
            if param.dim() == 1:
                fan_in = param.shape[0]
            else:
                fan_in = param[0].numel()
            bound = fan_in**-0.5
            param.copy_(torch.rand(param.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
        for sub in module.modules():
            if isinstance(sub, nn.Embedding) and sub.padding_idx is not None:
                sub.weight[sub.padding_idx].zero_()


class ActAwareDST(nn.Module):
    def __init__(self, emb_config, vocab, ontology, act_attention=True, provider=None, seed=0):
        super().__init__()
        self.ontology = ontology
        self.act_attention = act_attention
        self.encoder = DialogueEncoder(emb_config, vocab, ontology, provider)
        w = emb_config.w
        self.heads = Heads(w)
        self.attention = SlotAttention(w, act_attention)
        init_parameters(self, seed)
        self.cat_index = torch.tensor(
            [ontology.slots.index(p) for p in ontology.categorical_slots], dtype=torch.long
        )
        self.span_index = torch.tensor(
            [ontology.slots.index(p) for p in ontology.non_categorical_slots], dtype=torch.long
        )
        self._options = [option_set(ontology, *p).options for p in ontology.categorical_slots]

    @property
    def w(self):
        return self.encoder.w

    def forward(self, batch, ablate=False):
        enc = self.encoder
        inputs = enc.embed_tokens(batch.word_ids, batch.char_ids, batch.roles, batch.exact)
        X_e = enc.encode_context(inputs, batch.context_mask)
        W_act = None
        if self.act_attention and not ablate:
            W_act = enc.embed_acts(batch.act_word_ids, batch.act_char_ids)
        q_d, q_s = enc.slot_vectors()
        fused, alpha1, alpha2 = self.attention(
            X_e, batch.context_mask, W_act, batch.act_mask, q_d, q_s, ablate=ablate
        )
        Q_o = fused.Q_o

        P_e = enc.option_embeddings(q_d + q_s)
        value_lp = self.heads.value_log_probs(P_e, Q_o[:, self.cat_index], enc.option_mask)
        Q_span = Q_o[:, self.span_index]
        type_logits = self.heads.type_logits(Q_span)
        start_lp, end_lp = self.heads.span_log_probs(X_e, Q_span, batch.context_mask)
        return ModelOutput(value_lp, type_logits, start_lp, end_lp, alpha1, alpha2, Q_o)

    def losses(self, batch, out, reduction="sum"):
        """L_v, L_type, L_s and their sum, summed over turns and slots."""
        dtype = out.Q_o.dtype
        if out.value_log_probs.shape[1]:
            gold = out.value_log_probs.gather(2, batch.value_labels.unsqueeze(-1)).squeeze(-1)
            l_v = -gold.sum()
        else:
            l_v = torch.zeros((), dtype=dtype)
        if out.type_logits.shape[1]:
            type_lp = torch.log_softmax(out.type_logits, dim=-1)
            l_type = -type_lp.gather(2, batch.type_labels.unsqueeze(-1)).sum()
            is_span = (batch.type_labels == int(SpanType.SPAN)).to(dtype)
            st = out.start_log_probs.gather(2, batch.span_start.unsqueeze(-1)).squeeze(-1)
            en = out.end_log_probs.gather(2, batch.span_end.unsqueeze(-1)).squeeze(-1)
            l_s = -((st + en) * is_span).sum()
        else:
            l_type = l_s = torch.zeros((), dtype=dtype)
        total = l_v + l_type + l_s
        if reduction == "mean":
            scale = 1.0 / max(1, len(batch))
            l_v, l_type, l_s, total = (x * scale for x in (l_v, l_type, l_s, total))
        return {"value": l_v, "type": l_type, "span": l_s, "total": total}

    @torch.no_grad()
    def decode(self, batch, out, max_len=DEFAULT_MAX_SPAN_LEN):
        """Predicted DialogueState per example, keyed by (domain, slot)."""
        states = []
        cat_slots = self.ontology.categorical_slots
        span_slots = self.ontology.non_categorical_slots
        value_idx = out.value_log_probs.argmax(dim=-1)
        type_idx = out.type_logits.argmax(dim=-1)
        for b, ex in enumerate(batch.examples):
            state = {}
            for j, pair in enumerate(cat_slots):
                state[pair] = self._options[j][int(value_idx[b, j])]
            n = len(ex.context_tokens)
            for j, pair in enumerate(span_slots):
                kind = SpanType(int(type_idx[b, j]))
                if kind is SpanType.NONE:
                    state[pair] = NONE
                elif kind is SpanType.DONT_CARE:
                    state[pair] = DONT_CARE
                else:
                    p_st = out.start_log_probs[b, j, :n].exp().cpu().numpy()
                    p_end = out.end_log_probs[b, j, :n].exp().cpu().numpy()
                    s, e = decode_span(p_st, p_end, max_len)
                    state[pair] = detokenize(ex.context_tokens[s : e + 1])
            states.append({pair: state[pair] for pair in self.ontology.slots})
        return states
