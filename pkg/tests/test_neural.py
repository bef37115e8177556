import json
import struct
from types import MappingProxyType, SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from torch import nn

from conftest import tiny_model
from provhunt.errors import InvalidInputError, SchemaError
from provhunt.graph import Entity, Event, Subgraph
from provhunt.neural import GraphTextModel, GraphBatch, ModelConfig, Tokenizer, load_checkpoint, save_checkpoint
from provhunt.neural.checkpoint import checkpoint_bytes
from provhunt.neural.gradcheck import central_difference, check_gradients, relative_error
from provhunt.neural.layers import AttentionPooling, gin_layer, segment_softmax
from provhunt.neural.model import to_padded
from provhunt.neural.tokenizer import CLS_ID, MASK_ID, PAD_ID, SPECIALS, UNK_ID


def relabel(sg: Subgraph, rng) -> Subgraph:
    """Fresh ids, shuffled node order and shuffled event order."""
    order = rng.permutation(len(sg.nodes))
    names = {sg.nodes[i]: f"x{rng.integers(1 << 30)}_{j}" for j, i in enumerate(order)}
    nodes = tuple(names[sg.nodes[i]] for i in order)
    ents = {names[k]: Entity(names[k], e.kind, e.attribute) for k, e in sg.entities.items()}
    evs = [Event(names[e.subject], e.action, names[e.object], e.timestamp) for e in sg.events]
    evs = tuple(evs[i] for i in rng.permutation(len(evs)))
    return Subgraph(nodes, MappingProxyType(ents), evs)


# -- tokenizer -------------------------------------------------------------

def test_special_ids():
    assert (CLS_ID, MASK_ID, PAD_ID, UNK_ID) == (0, 1, 2, 3)
    assert SPECIALS == ("[CLS]", "[MASK]", "[PAD]", "[UNK]")


def test_tokenize_examples():
    tok = Tokenizer.build(["alpha beta gamma"], max_len=256)
    assert tok.encode("") == [CLS_ID]
    ids = tok.encode("alpha beta gamma")
    assert len(ids) == 4 and tok.decode(ids) == "alpha beta gamma"
    assert len(tok.encode("a" * 3 + " b" * 5000)) == 256
    assert tok.encode("zzz")[1] == UNK_ID


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["run.exe", "wrote", "/tmp", "x", "a.b"]), max_size=20))
def test_tokenize_roundtrip(words):
    text = " ".join(words)
    tok = Tokenizer.build([text], max_len=512)
    assert tok.decode(tok.encode(text)).split() == tok.decode(tok.encode(" ".join(text.split()))).split()
    assert tok.encode(text)[0] == CLS_ID


def test_batch_pads_right(tokenizer):
    ids, pad = tokenizer.batch(["a", "a b c"])
    assert ids.shape[0] == 2 and pad[0, 2:].all() and not pad[1].any()


# -- text encoder ------------------------------------------------------------

def test_text_encoder_cls_only(model64):
    h, z = model64.encode_ids(torch.tensor([[CLS_ID]]))
    assert h.shape == (1, 1, 8) and torch.equal(z, h[:, 0])


def test_text_encoder_range_error(model64):
    with pytest.raises(InvalidInputError):
        model64.encode_ids(torch.tensor([[0, len(model64.tokenizer)]]))


def test_text_encoder_permutation_zero_positions(tokenizer):
    m = tiny_model(tokenizer)
    with torch.no_grad():
        m.text_encoder.pos.zero_()
    ids = torch.tensor([[0, 5, 6, 7, 8]])
    perm = torch.tensor([0, 3, 1, 4, 2])
    h, _ = m.encode_ids(ids)
    hp, _ = m.encode_ids(ids[:, perm])
    torch.testing.assert_close(hp, h[:, perm], rtol=1e-10, atol=1e-12)


def test_text_encoder_pad_ignored(model64):
    ids = torch.tensor([[0, 5, 6]])
    h1, _ = model64.encode_ids(ids)
    padded = torch.tensor([[0, 5, 6, PAD_ID, PAD_ID]])
    h2, _ = model64.encode_ids(padded)
    torch.testing.assert_close(h2[:, :3], h1)


def test_text_outputs_finite(model64, pairs):
    _, z, _ = model64.encode_texts([p.report for p in pairs])
    assert torch.isfinite(z).all() and (z.norm(dim=-1) > 0).all()


# -- GIN ---------------------------------------------------------------------

def _identity_layer(d):
    return SimpleNamespace(eps=torch.tensor(0.0), message=lambda he: he[:, :d], mlp=lambda s: s)


def test_gin_isolated_identity():
    h = torch.randn(3, 4, dtype=torch.float64)
    out = gin_layer(_identity_layer(4), h, torch.zeros(0, 4, dtype=torch.float64), torch.zeros(2, 0, dtype=torch.long))
    torch.testing.assert_close(out, h)


def test_gin_two_nodes_hand_arithmetic():
    h = torch.tensor([[1.0, 2.0], [10.0, 20.0]], dtype=torch.float64)
    edges = torch.tensor([[0, 1], [1, 0]])
    e = torch.ones(2, 2, dtype=torch.float64)
    out = gin_layer(_identity_layer(2), h, e, edges)
    torch.testing.assert_close(out, torch.tensor([[11.0, 22.0], [11.0, 22.0]], dtype=torch.float64))


def test_gin_equivariance(model64):
    rng = np.random.default_rng(0)
    layer = model64.graph_encoder.layers[0]
    n, m = 7, 12
    h = torch.randn(n, 8, dtype=torch.float64)
    edges = torch.tensor(rng.integers(0, n, (2, m)))
    e = torch.randn(m, 8, dtype=torch.float64)
    perm = torch.tensor(rng.permutation(n))
    inv = torch.argsort(perm)
    out = layer(h, e, edges)
    out_p = layer(h[perm], e, inv[edges])
    torch.testing.assert_close(out_p, out[perm])


def test_gin_shape_error(model64):
    layer = model64.graph_encoder.layers[0]
    with pytest.raises(InvalidInputError):
        layer(torch.zeros(2, 8, dtype=torch.float64), torch.zeros(3, 8, dtype=torch.float64),
              torch.zeros(2, 1, dtype=torch.long))


# -- graph encoder and pooling ------------------------------------------------

def test_pooling_single_and_duplicate():
    pool = AttentionPooling(4).double()
    h = torch.randn(1, 4, dtype=torch.float64)
    z, a = pool(h, torch.zeros(1, dtype=torch.long), 1)
    torch.testing.assert_close(z, h)
    torch.testing.assert_close(a, torch.ones(1, dtype=torch.float64))
    dup = h.repeat(6, 1)
    z, a = pool(dup, torch.zeros(6, dtype=torch.long), 1)
    torch.testing.assert_close(z, h)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=12), st.floats(0.1, 10))
def test_pooling_weights_probability_and_argmax(scores, scale):
    s = torch.tensor(scores, dtype=torch.float64)
    seg = torch.zeros(len(scores), dtype=torch.long)
    a = segment_softmax(s, seg, 1)
    assert (a >= 0).all() and abs(float(a.sum()) - 1) < 1e-12
    b = segment_softmax(s * scale, seg, 1)
    # the unscaled winner is still a winner after rescaling (ties may merge)
    assert float(b[int(torch.argmax(s))]) == float(b.max())


@torch.no_grad()
def test_graph_encode_weights_and_invariance(model64, subgraphs200):
    rng = np.random.default_rng(3)
    sg = max(subgraphs200, key=len)
    assert len(sg) == 20
    _, z, alpha = model64.encode_subgraphs([sg])
    assert (alpha >= 0).all() and abs(float(alpha.sum()) - 1) < 1e-12
    for _ in range(5):
        _, zp, _ = model64.encode_subgraphs([relabel(sg, rng)])
        assert float((zp - z).norm() / z.norm()) <= 1e-6


def test_empty_graph_rejected(model64):
    with pytest.raises(SchemaError):
        Subgraph((), MappingProxyType({}), ())
    with pytest.raises(InvalidInputError):
        model64.fuse(torch.zeros(1, 2, 8, dtype=torch.float64), None, torch.zeros(1, 0, 8, dtype=torch.float64), None)


# -- multimodal encoder --------------------------------------------------------

def test_single_node_cross_attention_is_value_projection(model64):
    attn = model64.fusion.blocks[0].cross_attn
    x = torch.randn(1, 5, 8, dtype=torch.float64)
    node = torch.randn(1, 1, 8, dtype=torch.float64)
    out = attn(x, node)
    expected = attn.o(attn.v(node)).expand(1, 5, 8)
    torch.testing.assert_close(out, expected)


@torch.no_grad()
def test_fusion_node_permutation(model64, pairs):
    rng = np.random.default_rng(0)
    sg, text = pairs[0].graph, pairs[0].report
    h_g, _, _ = model64.encode_subgraphs([sg])
    h_t, _, pad = model64.encode_texts([text])
    z = model64.fuse(h_t, pad, h_g[None], None)[:, 0]
    for _ in range(5):
        perm = torch.tensor(rng.permutation(h_g.shape[0]))
        zp = model64.fuse(h_t, pad, h_g[perm][None], None)[:, 0]
        assert float((zp - z).norm() / z.norm()) <= 1e-6


def test_zero_value_map_reduces_to_text_path(model64):
    block = model64.fusion.blocks[0]
    with torch.no_grad():
        block.cross_attn.v.weight.zero_()
        block.cross_attn.v.bias.zero_()
        block.cross_attn.o.bias.zero_()
    x = torch.randn(2, 4, 8, dtype=torch.float64)
    ctx = torch.randn(2, 3, 8, dtype=torch.float64)
    with_cross = block(x, None, ctx, None)
    block.cross = False
    try:
        text_only = block(x, None)
    finally:
        block.cross = True
    torch.testing.assert_close(with_cross, text_only)


def test_fusion_dimension_error(model64):
    with pytest.raises(InvalidInputError):
        model64.fuse(torch.zeros(1, 2, 8, dtype=torch.float64), None, torch.zeros(1, 2, 6, dtype=torch.float64), None)


# -- heads ---------------------------------------------------------------------

@torch.no_grad()
def test_heads_zero_in_zero_out(model64):
    for head in (model64.gtm_head, model64.mlm_head, model64.mgm_head):
        assert float(head.bias.abs().sum()) == 0.0
    z = torch.zeros(3, 8, dtype=torch.float64)
    assert not model64.gtm_logits(z).any() and not model64.mlm_logits(z).any() and not model64.mgm_predict(z).any()
    assert model64.gtm_logits(z).shape == (3, 2)
    assert model64.mlm_logits(z).shape == (3, len(model64.tokenizer))
    assert model64.mgm_predict(z).shape == (3, 8)


def test_mlm_softmax_rows(model64):
    logits = model64.mlm_logits(torch.randn(4, 8, dtype=torch.float64) * 5)
    assert torch.isfinite(logits).all()
    assert torch.allclose(torch.softmax(logits, -1).sum(-1), torch.ones(4, dtype=torch.float64), atol=1e-6)


def test_gtm_head_gradient_matches_fd(model64):
    z = torch.randn(3, 8, dtype=torch.float64)

    def closure():
        return model64.gtm_logits(z).pow(2).sum()

    res = check_gradients(closure, model64.gtm_head, n_params=18)
    assert res.pass_fraction == 1.0


def test_forward_deterministic(model64, pairs):
    a = model64.embed_graphs([p.graph for p in pairs])
    b = model64.embed_graphs([p.graph for p in pairs])
    assert np.array_equal(a, b)


# -- gradient checker --------------------------------------------------------

def test_central_difference_against_closed_form():
    w = nn.Parameter(torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64))

    def closure():
        return (w ** 3).sum() + torch.sin(w).prod()

    for i in range(3):
        num = central_difference(closure, w, i)
        others = torch.sin(w.detach()).prod() / torch.sin(w.detach()[i])
        exact = 3 * float(w.detach()[i]) ** 2 + float(others * torch.cos(w.detach()[i]))
        assert abs(num - exact) < 1e-8
    assert torch.equal(w.detach(), torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64))


def test_checker_flags_wrong_gradient():
    w = nn.Parameter(torch.randn(10, dtype=torch.float64))

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.ones(10, dtype=torch.float64)

    mod = nn.Module()
    mod.w = w
    res = check_gradients(lambda: Wrong.apply(w), mod, n_params=10)
    assert res.pass_fraction < 0.5


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(1e-3)


def test_encoder_outputs_autograd_gradcheck(tokenizer, pairs):
    m = tiny_model(tokenizer, d=4)
    sg, text = pairs[1].graph, pairs[1].report
    batch = GraphBatch.from_subgraphs([sg])
    h0, ef = m.node_features(batch)
    h0, ef = h0.detach().requires_grad_(), ef.detach().requires_grad_()
    h_t, _, pad = m.encode_texts([text])
    h_t = h_t.detach().requires_grad_()

    def joint(h0, ef, h_t):
        h_g, z_g, _ = m.encode_graph(batch, h0, ef)
        gp, gpad = to_padded(h_g, batch.counts)
        return z_g, m.fuse(h_t, pad, gp, gpad)[:, 0]

    assert torch.autograd.gradcheck(joint, (h0, ef, h_t), eps=1e-6, atol=1e-6, rtol=1e-4)


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_byte_identical_and_roundtrip(tmp_path, tokenizer, pairs):
    m = tiny_model(tokenizer, d=8, dtype=torch.float32)
    a = save_checkpoint(tmp_path / "a.ckpt", m, meta={"epoch": 1})
    b = save_checkpoint(tmp_path / "b.ckpt", m, meta={"epoch": 1})
    assert a == b == (tmp_path / "a.ckpt").read_bytes()
    back, meta = load_checkpoint(tmp_path / "a.ckpt")
    assert meta == {"epoch": 1}
    graphs = [p.graph for p in pairs]
    assert np.array_equal(back.embed_graphs(graphs), m.embed_graphs(graphs))
    assert checkpoint_bytes(back, {"epoch": 1}) == a


def test_checkpoint_layout_independent_reader(tokenizer):
    m = tiny_model(tokenizer, d=8, dtype=torch.float32)
    data = checkpoint_bytes(m)
    assert data[:4] == b"PHCK"
    version, hlen = struct.unpack("<II", data[4:12])
    header = json.loads(data[12:12 + hlen])
    assert version == header["version"] == 1 and header["d"] == 8
    assert header["vocab_digest"] == tokenizer.digest()
    assert header["layers"] == {"text": 1, "gin": 3, "fusion": 1}
    pos = 12 + hlen
    state = m.state_dict()
    for entry in header["params"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.array(struct.unpack(f"<{n}f", data[pos:pos + 4 * n])).reshape(entry["shape"])
        assert np.array_equal(arr, state[entry["name"]].numpy())
        pos += 4 * n
    assert pos == len(data)


def test_checkpoint_rejects_corruption(tmp_path, tokenizer):
    m = tiny_model(tokenizer, d=8, dtype=torch.float32)
    data = checkpoint_bytes(m)
    for bad in (b"XXXX" + data[4:], data + b"\0\0\0\0"):
        (tmp_path / "x.ckpt").write_bytes(bad)
        with pytest.raises(SchemaError):
            load_checkpoint(tmp_path / "x.ckpt")


def test_model_config_validation():
    from provhunt.errors import ConfigurationError

    with pytest.raises(ConfigurationError):
        ModelConfig(d=10, heads=4)
    with pytest.raises(ConfigurationError):
        ModelConfig(tau_init=5.0)


@torch.no_grad()
def test_parameters_finite_after_init(tokenizer):
    m = GraphTextModel(tokenizer, ModelConfig(d=16, heads=2, max_len=tokenizer.max_len))
    assert all(torch.isfinite(p).all() for p in m.parameters())
    assert all(float(layer.eps) == 0.0 for layer in m.graph_encoder.layers)
