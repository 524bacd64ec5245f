import numpy as np
import pytest
import torch

from actdst.corpus import Vocab, encode_tokens
from actdst.encoder import (
    CharCNN,
    ContextEncoder,
    DialogueEncoder,
    EmbeddingConfig,
    FrozenPretrained,
    Provider,
    embed_options,
    pretrained_vectors,
)
from actdst.model import init_parameters
from actdst.ontology import ontology_from_dict
from actdst.text import tokenize

FULL = EmbeddingConfig(word_dim=512, char_dim=100, role_dim=128, exact_dim=30)


@pytest.fixture(scope="module")
def full_encoder(multiwoz_ontology):
    torch.manual_seed(0)
    vocab = Vocab.build(multiwoz_ontology)
    enc = DialogueEncoder(FULL, vocab, multiwoz_ontology)
    init_parameters(enc, 0)
    return enc


def _ids(enc, tokens):
    return encode_tokens(enc.vocab, [tokens])


def test_token_width_single_slot():
    onto = ontology_from_dict({"slots": {"hotel-area": ["north"]}})
    cfg = EmbeddingConfig(word_dim=512, char_dim=100, role_dim=128, exact_dim=onto.num_slots)
    enc = DialogueEncoder(cfg, Vocab.build(onto), onto)
    w_ids, c_ids, _ = _ids(enc, ["north"])
    out = enc.embed_tokens(w_ids, c_ids, torch.tensor([[2]]), torch.zeros(1, 1, 1))
    assert out.shape == (1, 1, 741)
    assert cfg.input_dim == 741 and cfg.w == 612


def test_roles_change_only_role_block(full_encoder):
    w_ids, c_ids, _ = _ids(full_encoder, ["hello"])
    exact = torch.zeros(1, 1, 30)
    sys_vec = full_encoder.embed_tokens(w_ids, c_ids, torch.tensor([[1]]), exact)[0, 0]
    usr_vec = full_encoder.embed_tokens(w_ids, c_ids, torch.tensor([[2]]), exact)[0, 0]
    assert torch.equal(sys_vec[:612], usr_vec[:612])
    assert torch.equal(sys_vec[740:], usr_vec[740:])
    assert not torch.equal(sys_vec[612:740], usr_vec[612:740])


def test_char_cnn_width_and_determinism(full_encoder):
    cnn = full_encoder.embedder.char_cnn
    chars = torch.tensor([full_encoder.vocab.char_ids("cambridge")])
    a, b = cnn(chars), cnn(chars)
    assert a.shape == (1, 100) and torch.equal(a, b)


def test_char_cnn_short_and_empty():
    cnn = CharCNN(num_chars=10, char_emb_dim=4, out_dim=9)
    one = cnn(torch.tensor([[3]]))  # shorter than every kernel after padding rules
    assert one.shape == (1, 9) and torch.isfinite(one).all()
    assert torch.equal(cnn(torch.zeros(2, 5, dtype=torch.long)), torch.zeros(2, 9))
    assert cnn(torch.zeros(0, 4, dtype=torch.long)).shape == (0, 9)


def test_context_encoder_shape(full_encoder):
    tokens = ["i", "need", "a", "train", "to", "cambridge", "."]
    w_ids, c_ids, mask = _ids(full_encoder, tokens)
    inputs = full_encoder.embed_tokens(w_ids, c_ids, torch.full((1, 7), 2), torch.zeros(1, 7, 30))
    assert full_encoder.encode_context(inputs, mask).shape == (1, 7, 612)


def test_context_encoder_reversal():
    torch.manual_seed(1)
    enc = ContextEncoder(input_dim=5, w=8)
    gru = enc.gru
    with torch.no_grad():
        for name in ("weight_ih_l0", "weight_hh_l0", "bias_ih_l0", "bias_hh_l0"):
            getattr(gru, name + "_reverse").copy_(getattr(gru, name))
    x = torch.randn(1, 6, 5)
    mask = torch.ones(1, 6, dtype=torch.bool)
    fwd = enc(x, mask)[0]
    rev = enc(x.flip(1), mask)[0]
    for i in range(6):
        assert torch.allclose(fwd[i, :4], rev[5 - i, 4:], atol=1e-6)
        assert torch.allclose(fwd[i, 4:], rev[5 - i, :4], atol=1e-6)


def test_padding_does_not_leak():
    torch.manual_seed(2)
    enc = ContextEncoder(input_dim=3, w=4)
    x = torch.randn(1, 3, 3)
    padded = torch.cat([x, torch.randn(1, 2, 3)], dim=1)
    short = enc(x, torch.ones(1, 3, dtype=torch.bool))
    long = enc(padded, torch.tensor([[1, 1, 1, 0, 0]], dtype=torch.bool))
    assert torch.allclose(short[0], long[0, :3], atol=1e-6)


def test_act_embeddings(full_encoder):
    assert full_encoder.embed_act_names(["Inform", "Request"]).shape == (2, 612)
    assert full_encoder.embed_act_names([]).shape == (0, 612)
    rep = full_encoder.embed_act_names(["Request", "Request"])
    assert torch.equal(rep[0], rep[1])
    with pytest.raises(KeyError):
        full_encoder.embed_act_names(["Dance"])


def test_slot_queries(full_encoder):
    q_d, q_s = full_encoder.slot_vectors()
    assert q_d.shape == q_s.shape == (30, 612)
    slots = list(full_encoder.ontology.slots)
    a = slots.index(("hotel", "area"))
    b = slots.index(("hotel", "parking"))
    c = slots.index(("train", "day"))
    assert torch.equal(q_d[a], q_d[b]) and not torch.equal(q_d[a], q_d[c])
    query = full_encoder.embed_slot_query("hotel", "area")
    assert query.query.shape == (612,)


def test_multiword_value_is_mean(full_encoder):
    table = full_encoder._value_table
    row = table.phrases.index("birmingham new street")
    words = tokenize("birmingham new street")
    w_ids, c_ids, _ = _ids(full_encoder, words)
    manual = full_encoder.embedder(w_ids, c_ids)[0].mean(dim=0)
    from actdst.encoder import mean_embed

    assert torch.allclose(mean_embed(full_encoder.embedder, table)[row], manual, atol=1e-6)


def test_option_embeddings(full_encoder):
    onto = full_encoder.ontology
    q_d, q_s = full_encoder.slot_vectors()
    P_e = full_encoder.option_embeddings(q_d + q_s)
    j = onto.categorical_slots.index(("hotel", "parking"))
    assert int(full_encoder.option_mask[j].sum()) == 5
    slot_row = list(onto.slots).index(("hotel", "parking"))
    values = full_encoder.value_vectors()[j]
    assert torch.allclose(P_e[j], q_d[slot_row] + q_s[slot_row] + values)
    opts = embed_options(full_encoder.embed_slot_query("hotel", "parking"), values[:5])
    assert opts.shape == (5, 612)


def test_provider_swap(multiwoz_ontology):
    vocab = Vocab.build(multiwoz_ontology)
    cfg = EmbeddingConfig(word_dim=8, char_dim=6, role_dim=2, exact_dim=30, char_emb_dim=3, provider=Provider.PRETRAINED_CONTEXTUAL)
    enc = DialogueEncoder(cfg, vocab, multiwoz_ontology)
    assert isinstance(enc.embedder.provider, FrozenPretrained)
    assert all("provider" not in n for n, _ in enc.named_parameters())
    w_ids, c_ids, _ = _ids(enc, ["north"])
    assert enc.embedder(w_ids, c_ids).shape == (1, 1, 14)


def test_pretrained_file(tmp_path, multiwoz_ontology):
    vocab = Vocab.build(multiwoz_ontology)
    path = tmp_path / "vec.txt"
    path.write_text("north 1 2 3\nbad line\n")
    table = pretrained_vectors(vocab, 3, path)
    assert np.array_equal(table[vocab.word_id("north")], [1, 2, 3])
    assert np.array_equal(table[0], [0, 0, 0])


def test_odd_width_rejected():
    with pytest.raises(ValueError):
        EmbeddingConfig(word_dim=5, char_dim=4)


def test_char_cnn_ignores_padding_width():
    torch.manual_seed(3)
    cnn = CharCNN(num_chars=10, char_emb_dim=4, out_dim=9)
    with torch.no_grad():
        for conv in cnn.convs:
            conv.bias.uniform_(-1, 1)
    short = cnn(torch.tensor([[3, 4, 5, 0]]))
    long = cnn(torch.tensor([[3, 4, 5, 0, 0, 0, 0, 0]]))
    assert torch.allclose(short, long, atol=1e-6)
