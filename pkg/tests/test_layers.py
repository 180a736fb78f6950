import math

import numpy as np
import pytest

from orderkd import autodiff as ad
from orderkd.autodiff import Tensor
from orderkd.layers import (
    Biaffine,
    BiLSTMLayer,
    EmbeddingLayer,
    MLPHead,
    SelfAttentionLayer,
    biaffine_score,
    bilstm_forward,
    embed,
    self_attention,
)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestEmbedding:
    def test_empty_sequence(self):
        layer = EmbeddingLayer(5, 4, 3, 2)
        assert embed([], [], layer).shape == (0, 5)

    def test_known_tables(self):
        layer = EmbeddingLayer(2, 2, 2, 1)
        layer.word.data = np.array([[1.0, 2.0], [3.0, 4.0]])
        layer.pos.data = np.array([[10.0], [20.0]])
        out = embed([0, 1], [1, 0], layer).data
        np.testing.assert_array_equal(out, [[1.0, 2.0, 20.0], [3.0, 4.0, 10.0]])

    def test_width_law(self):
        layer = EmbeddingLayer(7, 5, 6, 50)
        rng = np.random.default_rng(0)
        assert embed(rng.integers(0, 7, (3, 4)), rng.integers(0, 5, (3, 4)), layer).shape == (3, 4, 56)

    def test_out_of_range(self):
        layer = EmbeddingLayer(3, 3, 2, 2)
        with pytest.raises(IndexError):
            embed([0, 3], [0, 0], layer)
        with pytest.raises(ValueError):
            embed([0, 1], [0], layer)


class TestBiLSTM:
    def test_single_step(self):
        layer = BiLSTMLayer(3, 4, layers=1, seed=0)
        fw, bw = layer.cells[0]
        for name in ("W", "U", "b"):
            getattr(bw, name).data = getattr(fw, name).data.copy()
        out = bilstm_forward(Tensor(np.random.default_rng(1).normal(size=(1, 3))), layer).data
        assert out.shape == (1, 8)
        np.testing.assert_array_equal(out[0, :4], out[0, 4:])

    def test_zero_weights_give_zero_output(self):
        layer = BiLSTMLayer(3, 4, layers=2, seed=0)
        for p in layer.params.values():
            p.data[...] = 0.0
        out = bilstm_forward(Tensor(np.ones((5, 3))), layer).data
        np.testing.assert_array_equal(out, 0.0)

    def test_hand_evaluated_recurrence(self):
        # one unit, input width 1: gates i, f, g, o
        layer = BiLSTMLayer(1, 1, layers=1, seed=0)
        fw, bw = layer.cells[0]
        W, U, b = [0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.7], [0.0, 1.0, 0.1, -0.2]
        for cell in (fw, bw):
            cell.W.data = np.array([W])
            cell.U.data = np.array([U])
            cell.b.data = np.array(b)
        xs = [1.5, -0.7]

        def run(seq):
            h = c = 0.0
            hs = []
            for x in seq:
                pre = [W[k] * x + U[k] * h + b[k] for k in range(4)]
                i, f, g, o = sig(pre[0]), sig(pre[1]), math.tanh(pre[2]), sig(pre[3])
                c = f * c + i * g
                h = o * math.tanh(c)
                hs.append(h)
            return hs

        fwd = run(xs)
        bwd = run(xs[::-1])[::-1]
        out = bilstm_forward(Tensor(np.array(xs)[:, None]), layer).data
        np.testing.assert_allclose(out[:, 0], fwd, rtol=1e-14)
        np.testing.assert_allclose(out[:, 1], bwd, rtol=1e-14)

    def test_padding_does_not_leak(self):
        layer = BiLSTMLayer(3, 4, layers=2, seed=3)
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 3))
        padded = np.zeros((2, 5, 3))
        padded[0], padded[1, :3] = a, b
        padded[1, 3:] = 99.0
        out = layer(Tensor(padded), lengths=[5, 3]).data
        np.testing.assert_allclose(out[0], layer(Tensor(a)).data, rtol=1e-13)
        np.testing.assert_allclose(out[1, :3], layer(Tensor(b)).data, rtol=1e-13)

    def test_output_width(self):
        layer = BiLSTMLayer(6, 5, layers=2)
        assert layer(Tensor(np.zeros((7, 6)))).shape == (7, 10)


class TestBiaffine:
    def test_zero_matrix_gives_bias(self):
        layer = Biaffine(3, 3)
        layer.U.data[...] = 0.0
        layer.b.data = np.array(0.7)
        rng = np.random.default_rng(0)
        out = biaffine_score(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(5, 3))), layer)
        np.testing.assert_array_equal(out.data, np.full((4, 5), 0.7))

    def test_identity_gives_dot_product(self):
        layer = Biaffine(2, 2)
        layer.U.data = np.eye(2)
        layer.b.data = np.array(-0.25)
        dep = np.array([[1.0, 2.0], [0.5, -1.0]])
        head = np.array([[3.0, 0.0], [1.0, 1.0], [-2.0, 4.0]])
        out = biaffine_score(Tensor(dep), Tensor(head), layer).data
        for j in range(2):
            for i in range(3):
                assert out[j, i] == dep[j, 0] * head[i, 0] + dep[j, 1] * head[i, 1] - 0.25

    @pytest.mark.parametrize("k", [None, 3])
    def test_batched_equals_double_loop(self, k):
        rng = np.random.default_rng(5)
        layer = Biaffine(4, 6, k, seed=2)
        layer.b.data = rng.normal(size=layer.b.shape)
        dep, head = rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 7, 6))
        out = layer(Tensor(dep), Tensor(head)).data
        U, bias = layer.U.data, layer.b.data
        for bb in range(2):
            for j in range(5):
                for i in range(7):
                    if k is None:
                        ref = sum(dep[bb, j, p] * U[p, q] * head[bb, i, q] for p in range(4) for q in range(6))
                        assert abs(out[bb, j, i] - (ref + bias)) < 1e-12
                    else:
                        for c in range(k):
                            ref = sum(dep[bb, j, p] * U[p, c, q] * head[bb, i, q]
                                      for p in range(4) for q in range(6))
                            assert abs(out[bb, j, i, c] - (ref + bias[c])) < 1e-12

    def test_label_shape(self):
        layer = Biaffine(2, 2, 3)
        assert layer(Tensor(np.ones((4, 2))), Tensor(np.ones((5, 2)))).shape == (4, 5, 3)

    def test_width_mismatch(self):
        with pytest.raises(ad.ShapeError):
            Biaffine(2, 3)(Tensor(np.ones((4, 3))), Tensor(np.ones((4, 3))))


class TestSelfAttention:
    def test_permutation_equivariance(self):
        layer = SelfAttentionLayer(6, heads=2, head_dim=3, ffn_dim=8, seed=1)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 6))
        perm = rng.permutation(5)
        out = self_attention(Tensor(x), layer).data
        out_perm = self_attention(Tensor(x[perm]), layer).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_single_position_attends_to_itself(self):
        layer = SelfAttentionLayer(4, heads=2, head_dim=2, ffn_dim=4)
        self_attention(Tensor(np.ones((1, 4))), layer)
        np.testing.assert_array_equal(layer.last_weights, 1.0)

    def test_hand_computed_two_positions(self):
        layer = SelfAttentionLayer(2, heads=1, head_dim=2, ffn_dim=2, seed=0)
        rng = np.random.default_rng(3)
        for p in layer.params.values():
            p.data = rng.normal(size=p.shape)
        P = {k.split(".")[-1]: v.data for k, v in layer.params.items()}
        x = [[0.3, -1.2], [0.9, 0.4]]

        def vecmat(v, M):
            return [sum(v[a] * M[a][c] for a in range(len(v))) for c in range(len(M[0]))]

        def lnorm(v, g, b):
            mu = sum(v) / len(v)
            var = sum((t - mu) ** 2 for t in v) / len(v)
            return [(t - mu) / math.sqrt(var + 1e-5) * g[c] + b[c] for c, t in enumerate(v)]

        q = [vecmat(r, P["Wq"]) for r in x]
        k = [vecmat(r, P["Wk"]) for r in x]
        v = [vecmat(r, P["Wv"]) for r in x]
        expected = []
        for a in range(2):
            s = [sum(q[a][c] * k[b][c] for c in range(2)) / math.sqrt(2) for b in range(2)]
            w = [math.exp(t) / sum(math.exp(u) for u in s) for t in s]
            ctx = [sum(w[b] * v[b][c] for b in range(2)) for c in range(2)]
            att = vecmat(ctx, P["Wo"])
            y = lnorm([x[a][c] + att[c] for c in range(2)], P["ln1_g"], P["ln1_b"])
            hid = [max(0.0, t + P["b1"][c]) for c, t in enumerate(vecmat(y, P["W1"]))]
            ff = [t + P["b2"][c] for c, t in enumerate(vecmat(hid, P["W2"]))]
            expected.append(lnorm([y[c] + ff[c] for c in range(2)], P["ln2_g"], P["ln2_b"]))
        np.testing.assert_allclose(self_attention(Tensor(np.array(x)), layer).data, expected, rtol=1e-12)

    def test_padding_mask(self):
        layer = SelfAttentionLayer(4, heads=2, head_dim=2, ffn_dim=4, seed=2)
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4))
        padded = np.concatenate([a, np.full((2, 4), 5.0)])[None]
        out = layer(Tensor(padded), lengths=[3]).data[0, :3]
        np.testing.assert_allclose(out, layer(Tensor(a)).data, atol=1e-12)


def test_mlp_head_is_tanh_affine():
    layer = MLPHead(3, 2, seed=0, prefix="m")
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_allclose(layer(Tensor(x)).data, np.tanh(x @ layer.W.data + layer.b.data))


def test_same_prefix_and_seed_give_same_params():
    a = BiLSTMLayer(3, 2, 1, seed=9)
    MLPHead(3, 2, seed=9, prefix="other")
    b = BiLSTMLayer(3, 2, 1, seed=9)
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()


LAYER_LOSSES = ["bce", "ce", "mse"]


def _loss(kind, out):
    flat = out.reshape(-1, out.shape[-1])
    if kind == "bce":
        return ad.bce_with_logits(flat, np.full(flat.shape, 0.25))
    if kind == "ce":
        return ad.cross_entropy(flat, np.arange(flat.shape[0]) % flat.shape[-1])
    return ad.mse(ad.sigmoid(flat), np.full(flat.shape, 0.6))


@pytest.mark.parametrize("kind", LAYER_LOSSES)
def test_gradcheck_bilstm_attention_stack(kind):
    rng = np.random.default_rng(0)
    lstm = BiLSTMLayer(3, 2, layers=2, seed=1)
    attn = SelfAttentionLayer(4, heads=2, head_dim=2, ffn_dim=3, seed=1)
    x = Tensor(rng.normal(size=(2, 4, 3)))
    params = {**lstm.params, **attn.params}
    res = ad.gradcheck(lambda: _loss(kind, attn(lstm(x, [4, 3]), [4, 3])), params, n_coords=60)
    assert res["rel_error"] < 1e-4
