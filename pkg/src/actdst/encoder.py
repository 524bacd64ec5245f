"""Token, context, act and slot-name embeddings."""

import enum
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import MIN_CHAR_LEN, act_token, encode_tokens
from .text import DONT_CARE, NONE, tokenize

KERNEL_WIDTHS = (2, 3, 4)


class Provider(str, enum.Enum):
    PRETRAINED_CONTEXTUAL = "pretrained_contextual"
    TRAINABLE_LOOKUP = "trainable_lookup"


@dataclass(frozen=True)
class EmbeddingConfig:
    word_dim: int = 512
    char_dim: int = 100
    role_dim: int = 128
    exact_dim: int = 30
    char_emb_dim: int = 16
    provider: Provider = Provider.TRAINABLE_LOOKUP

    def __post_init__(self):
        if self.w % 2:
            raise ValueError(f"word_dim + char_dim must be even for a bidirectional encoder, got {self.w}")
        if self.char_dim < len(KERNEL_WIDTHS):
            raise ValueError("char_dim must cover one channel per kernel width")

    @property
    def w(self):
        return self.word_dim + self.char_dim

    @property
    def input_dim(self):
        return self.w + self.role_dim + self.exact_dim


class WordProvider(nn.Module):
    """Maps word ids (and optionally the raw tokens) to ``dim``-wide vectors.

    Subclasses wrapping a contextual embedder may use ``tokens`` and ignore
    ``ids``; the returned tensor must be shaped like ``ids`` plus ``dim``.
    """

    dim: int
    trainable: bool

    def forward(self, ids, tokens=None):
        raise NotImplementedError


class TrainableLookup(WordProvider):
    trainable = True

    def __init__(self, vocab_size, dim):
        super().__init__()
        self.dim = dim
        self.table = nn.Embedding(vocab_size, dim, padding_idx=0)

    def forward(self, ids, tokens=None):
        return self.table(ids)


class FrozenPretrained(WordProvider):
    """Fixed word vectors; never updated by the optimizer.

    Stands in for a pretrained contextual embedder at desk scale. The vectors
    live in a buffer so no gradient or optimizer state ever touches them.
    """

    trainable = False

    def __init__(self, vectors):
        super().__init__()
        vectors = torch.as_tensor(vectors, dtype=torch.get_default_dtype())
        self.dim = vectors.shape[1]
        self.register_buffer("vectors", vectors)

    def forward(self, ids, tokens=None):
        return self.vectors[ids]


def pretrained_vectors(vocab, dim, path=None, seed=0):
    """Vector table for ``vocab``; rows come from a whitespace text file when given.

    Words missing from the file get fixed random vectors.
    """
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    table[0] = 0.0
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip().split(" ")
                if len(parts) != dim + 1:
                    continue
                idx = vocab.word_id(parts[0])
                if idx > 1:
                    table[idx] = np.asarray(parts[1:], dtype=np.float64)
    return table


class CharCNN(nn.Module):
    """Convolutions of widths 2/3/4 over character embeddings, max-pooled over time."""

    def __init__(self, num_chars, char_emb_dim, out_dim):
        super().__init__()
        self.out_dim = out_dim
        self.embed = nn.Embedding(num_chars, char_emb_dim, padding_idx=0)
        base, extra = divmod(out_dim, len(KERNEL_WIDTHS))
        channels = [base + (1 if i < extra else 0) for i in range(len(KERNEL_WIDTHS))]
        self.convs = nn.ModuleList(
            nn.Conv1d(char_emb_dim, c, kernel_size=k) for c, k in zip(channels, KERNEL_WIDTHS)
        )

    def forward(self, char_ids):
        """char_ids: [..., L] -> [..., out_dim]; all-padding tokens map to zeros."""
        lead = char_ids.shape[:-1]
        flat = char_ids.reshape(-1, char_ids.shape[-1])
        if flat.shape[0] == 0:
            return self.embed.weight.new_zeros(*lead, self.out_dim)
        if flat.shape[1] < MIN_CHAR_LEN:
            flat = nn.functional.pad(flat, (0, MIN_CHAR_LEN - flat.shape[1]))
        x = self.embed(flat).transpose(1, 2)  # [N, E, L]
        lengths = (flat != 0).sum(dim=1, keepdim=True)
        pooled = []
        for conv, k in zip(self.convs, KERNEL_WIDTHS):
            h = torch.relu(conv(x))
            # windows running past the token end would make the output depend on batch padding
            positions = torch.arange(h.shape[-1]).unsqueeze(0)
            valid = positions < (lengths - k + 1).clamp(min=1)
            pooled.append(h.masked_fill(~valid.unsqueeze(1), 0.0).max(dim=2).values)
        out = torch.cat(pooled, dim=1)
        out = out * (flat != 0).any(dim=1, keepdim=True).to(out.dtype)
        return out.reshape(*lead, self.out_dim)


class TokenEmbedder(nn.Module):
    """W^e: concatenated word-provider and char-CNN vectors, width w."""

    def __init__(self, provider, char_cnn):
        super().__init__()
        self.provider = provider
        self.char_cnn = char_cnn
        self.dim = provider.dim + char_cnn.out_dim

    def forward(self, word_ids, char_ids, tokens=None):
        return torch.cat([self.provider(word_ids, tokens), self.char_cnn(char_ids)], dim=-1)


class ContextEncoder(nn.Module):
    """One-layer bidirectional GRU with w/2 units per direction."""

    def __init__(self, input_dim, w):
        super().__init__()
        self.w = w
        self.gru = nn.GRU(input_dim, w // 2, num_layers=1, batch_first=True, bidirectional=True)

    def forward(self, inputs, mask):
        batch, width, _ = inputs.shape
        if width == 0:
            return inputs.new_zeros(batch, 0, self.w)
        lengths = mask.sum(dim=1).clamp(min=1).cpu()
        packed = pack_padded_sequence(inputs, lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.gru(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=width)
        return out


class PhraseTable:
    """Pre-encoded token ids for a fixed list of phrases (names, values, acts)."""

    def __init__(self, vocab, phrases):
        self.phrases = list(phrases)
        self.word_ids, self.char_ids, self.mask = encode_tokens(vocab, [tokenize(p) for p in self.phrases])


def mean_embed(embedder, table):
    """Mean of word vectors per phrase -> [P, w]."""
    vecs = embedder(table.word_ids, table.char_ids)
    mask = table.mask.unsqueeze(-1).to(vecs.dtype)
    return (vecs * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)


class DialogueEncoder(nn.Module):
    """Everything upstream of the attention layers.

    Produces X^e for contexts, W^act for act sequences, slot queries
    q^d + q^s and categorical option embeddings P^e.
    """

    def __init__(self, config, vocab, ontology, provider=None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.ontology = ontology
        if provider is None:
            if config.provider is Provider.TRAINABLE_LOOKUP:
                provider = TrainableLookup(len(vocab), config.word_dim)
            else:
                provider = FrozenPretrained(pretrained_vectors(vocab, config.word_dim))
        if provider.dim != config.word_dim:
            raise ValueError(f"provider dim {provider.dim} != word_dim {config.word_dim}")
        self.embedder = TokenEmbedder(provider, CharCNN(len(vocab.chars), config.char_emb_dim, config.char_dim))
        self.role_embed = nn.Embedding(3, config.role_dim, padding_idx=0)
        self.context_encoder = ContextEncoder(config.input_dim, config.w)

        self.slots = list(ontology.slots)
        self._domain_table = PhraseTable(vocab, ontology.domains)
        self._slot_table = PhraseTable(vocab, [s for _, s in self.slots])
        self._domain_of_slot = torch.tensor([ontology.domains.index(d) for d, _ in self.slots], dtype=torch.long)
        value_lists = [ontology.values[p] + (NONE, DONT_CARE) for p in ontology.categorical_slots]
        flat = sorted({v for values in value_lists for v in values})
        self._value_table = PhraseTable(vocab, flat)
        n_max = max((len(v) for v in value_lists), default=0)
        self._option_index = torch.zeros(len(value_lists), n_max, dtype=torch.long)
        self.option_mask = torch.zeros(len(value_lists), n_max, dtype=torch.bool)
        for j, values in enumerate(value_lists):
            self._option_index[j, : len(values)] = torch.tensor([flat.index(v) for v in values])
            self.option_mask[j, : len(values)] = True
        self._cat_index = torch.tensor(
            [self.slots.index(p) for p in ontology.categorical_slots], dtype=torch.long
        )

    @property
    def w(self):
        return self.config.w

    def embed_tokens(self, word_ids, char_ids, roles, exact):
        """[B, T] inputs -> [B, T, w + role_dim + exact_dim]."""
        tok = self.embedder(word_ids, char_ids)
        return torch.cat([tok, self.role_embed(roles), exact.to(tok.dtype)], dim=-1)

    def encode_context(self, inputs, mask):
        return self.context_encoder(inputs, mask)

    def embed_acts(self, act_word_ids, act_char_ids):
        """[B, A] act-name token ids -> W^act [B, A, w]."""
        return self.embedder(act_word_ids, act_char_ids)

    def embed_act_names(self, names):
        """Act names -> [A, w]; unknown names raise."""
        for name in names:
            if name not in self.ontology.acts:
                raise KeyError(f"unknown act {name!r}")
        word_ids, char_ids, _ = encode_tokens(self.vocab, [[act_token(n) for n in names]])
        return self.embedder(word_ids, char_ids)[0]

    def slot_vectors(self):
        """(q^d, q^s), each [M, w], in ontology slot order."""
        domain_vecs = mean_embed(self.embedder, self._domain_table)
        slot_vecs = mean_embed(self.embedder, self._slot_table)
        return domain_vecs[self._domain_of_slot], slot_vecs

    def value_vectors(self):
        """w^v for every categorical option, padded: [Mc, Nmax, w]."""
        flat = mean_embed(self.embedder, self._value_table)
        return flat[self._option_index]

    def option_embeddings(self, query):
        """P^e [Mc, Nmax, w] with row i = q^d + q^s + w^v_i; ``query`` is [M, w]."""
        return query[self._cat_index].unsqueeze(1) + self.value_vectors()

    def embed_slot_query(self, domain, slot):
        q_d, q_s = self.slot_vectors()
        j = self.slots.index((domain, slot))
        return SlotQuery(q_d[j], q_s[j])


@dataclass
class SlotQuery:
    domain_vec: torch.Tensor
    slot_vec: torch.Tensor

    @property
    def query(self):
        return self.domain_vec + self.slot_vec


def embed_options(slot_query, value_vectors):
    """Stack q^d + q^s + w^v_i for one categorical slot -> [(N+2), w]."""
    if value_vectors.shape[0] == 0:
        raise ValueError("empty value list")
    return slot_query.query.unsqueeze(0) + value_vectors
