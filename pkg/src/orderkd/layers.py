"""Neural building blocks on top of :mod:`orderkd.autodiff`.

Every layer keeps its parameters in ``self.params`` (name -> Tensor) and is
seeded per parameter name, so two layers built with the same prefix and seed
are identical regardless of what else was constructed before them.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Layer:
    params: Dict[str, Tensor]

    def _param(self, prefix: str, name: str, shape, seed: int, scheme: str = "xavier") -> Tensor:
        full = f"{prefix}.{name}" if prefix else name
        t = ad.init_params(shape, scheme, ad.sub_seed(seed, full))
        t.name = full
        self.params[full] = t
        return t

    def load(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if arrays[name].shape != t.shape:
                raise ad.ShapeError(f"{name}: stored {arrays[name].shape}, expected {t.shape}")
            t.data = np.array(arrays[name], dtype=ad.DTYPE)


def _batched(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    return x, False


class EmbeddingLayer(Layer):
    def __init__(self, n_words: int, n_tags: int, word_dim: int, pos_dim: int = 50,
                 seed: int = 0, prefix: str = "embed"):
        self.params = {}
        self.word_dim, self.pos_dim = word_dim, pos_dim
        self.word = self._param(prefix, "word", (n_words, word_dim), seed, "uniform") if word_dim else None
        self.pos = self._param(prefix, "pos", (n_tags, pos_dim), seed, "uniform")

    @property
    def out_dim(self) -> int:
        return self.word_dim + self.pos_dim

    def __call__(self, words: np.ndarray, tags: np.ndarray) -> Tensor:
        words, tags = np.asarray(words, dtype=np.int64), np.asarray(tags, dtype=np.int64)
        if words.shape != tags.shape:
            raise ValueError(f"word/tag index shapes differ: {words.shape} vs {tags.shape}")
        p = ad.take_rows(self.pos, tags)
        if self.word is None:
            return p
        return ad.concat([ad.take_rows(self.word, words), p], axis=-1)


def embed(words, tags, layer: EmbeddingLayer) -> Tensor:
    return layer(words, tags)


class LSTMCellParams(Layer):
    """Gate order in the stacked weights: input, forget, cell, output."""

    def __init__(self, in_dim: int, hidden: int, seed: int, prefix: str):
        self.params = {}
        self.hidden = hidden
        self.W = self._param(prefix, "W", (in_dim, 4 * hidden), seed)
        self.U = self._param(prefix, "U", (hidden, 4 * hidden), seed)
        self.b = self._param(prefix, "b", (4 * hidden,), seed, "zeros")

    def run(self, x: Tensor) -> Tensor:
        """Unidirectional pass over (B, T, D) input, returning (B, T, H)."""
        B, T, _ = x.shape
        H = self.hidden
        xw = ad.transpose(x @ self.W + self.b, (1, 0, 2))  # (T, B, 4H)
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        outs = []
        for t in range(T):
            gates = xw[t] + h @ self.U
            i = ad.sigmoid(gates[:, :H])
            f = ad.sigmoid(gates[:, H : 2 * H])
            g = ad.tanh(gates[:, 2 * H : 3 * H])
            o = ad.sigmoid(gates[:, 3 * H :])
            c = f * c + i * g
            h = o * ad.tanh(c)
            outs.append(h)
        return ad.stack(outs, axis=1)


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    idx = np.tile(np.arange(T), (len(lengths), 1))
    for b, n in enumerate(lengths):
        idx[b, :n] = np.arange(n)[::-1]
    return idx


class BiLSTMLayer(Layer):
    def __init__(self, in_dim: int, hidden: int = 100, layers: int = 2, seed: int = 0,
                 prefix: str = "bilstm", dropout: float = 0.0):
        self.params = {}
        self.hidden, self.n_layers, self.dropout = hidden, layers, dropout
        self.cells: List[Tuple[LSTMCellParams, LSTMCellParams]] = []
        dim = in_dim
        for k in range(layers):
            fw = LSTMCellParams(dim, hidden, seed, f"{prefix}.{k}.fw")
            bw = LSTMCellParams(dim, hidden, seed, f"{prefix}.{k}.bw")
            self.params.update(fw.params)
            self.params.update(bw.params)
            self.cells.append((fw, bw))
            dim = 2 * hidden

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    def __call__(self, x: Tensor, lengths: Optional[Sequence[int]] = None,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        x, squeeze = _batched(x)
        B, T, _ = x.shape
        if T == 0:
            raise ValueError("BiLSTM needs a non-empty sequence")
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        rev = _reverse_index(lengths, T)
        rows = np.arange(B)[:, None]
        for fw, bw in self.cells:
            x = ad.dropout(x, self.dropout, rng)
            forward = fw.run(x)
            backward = bw.run(x[rows, rev])[rows, rev]
            x = ad.concat([forward, backward], axis=-1)
        return x[0] if squeeze else x


def bilstm_forward(e: Tensor, layer: BiLSTMLayer, lengths=None) -> Tensor:
    return layer(e, lengths)


class MLPHead(Layer):
    """One affine map followed by tanh."""

    def __init__(self, in_dim: int, out_dim: int, seed: int, prefix: str, dropout: float = 0.0):
        self.params = {}
        self.dropout = dropout
        self.W = self._param(prefix, "W", (in_dim, out_dim), seed)
        self.b = self._param(prefix, "b", (out_dim,), seed, "zeros")

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        return ad.dropout(ad.tanh(x @ self.W + self.b), self.dropout, rng)


class Biaffine(Layer):
    """Bilinear scorer ``h_dep U h_head^T + b``.

    With ``n_labels`` set, U has shape (d_dep, k, d_head) and each pair gets a
    k-vector of scores.
    """

    def __init__(self, dep_dim: int, head_dim: int, n_labels: Optional[int] = None,
                 seed: int = 0, prefix: str = "biaffine"):
        self.params = {}
        self.n_labels = n_labels
        if n_labels is None:
            self.U = self._param(prefix, "U", (dep_dim, head_dim), seed)
            self.b = self._param(prefix, "b", (), seed, "zeros")
        else:
            self.U = self._param(prefix, "U", (dep_dim, n_labels, head_dim), seed)
            self.b = self._param(prefix, "b", (n_labels,), seed, "zeros")

    def __call__(self, h_dep: Tensor, h_head: Tensor) -> Tensor:
        """Scores indexed [..., dep j, head i(, label)]."""
        if h_dep.shape[-1] != self.U.shape[0] or h_head.shape[-1] != self.U.shape[-1]:
            raise ad.ShapeError(
                f"biaffine widths {h_dep.shape[-1]}/{h_head.shape[-1]} do not match U {self.U.shape}"
            )
        h_dep, squeeze = _batched(h_dep)
        h_head, _ = _batched(h_head)
        head_t = ad.swapaxes(h_head, -1, -2)  # (B, d, Lh)
        if self.n_labels is None:
            out = (h_dep @ self.U) @ head_t + self.b
        else:
            B, Ld, dd = h_dep.shape
            k, dh = self.n_labels, self.U.shape[-1]
            a = ad.reshape(h_dep @ ad.reshape(self.U, (dd, k * dh)), (B, Ld, k, dh))
            s = a @ ad.reshape(head_t, (B, 1, dh, head_t.shape[-1]))  # (B, Ld, k, Lh)
            out = ad.transpose(s, (0, 1, 3, 2)) + self.b
        return out[0] if squeeze else out


def biaffine_score(h_dep: Tensor, h_head: Tensor, layer: Biaffine) -> Tensor:
    return layer(h_dep, h_head)


class SelfAttentionLayer(Layer):
    """Post-norm transformer block with no positional signal of any kind."""

    def __init__(self, dim: int, heads: int = 4, head_dim: int = 16, ffn_dim: int = 100,
                 seed: int = 0, prefix: str = "attn"):
        self.params = {}
        self.heads, self.head_dim = heads, head_dim
        inner = heads * head_dim
        self.Wq = self._param(prefix, "Wq", (dim, inner), seed)
        self.Wk = self._param(prefix, "Wk", (dim, inner), seed)
        self.Wv = self._param(prefix, "Wv", (dim, inner), seed)
        self.Wo = self._param(prefix, "Wo", (inner, dim), seed)
        self.ln1_g = self._param(prefix, "ln1_g", (dim,), seed, "zeros")
        self.ln1_b = self._param(prefix, "ln1_b", (dim,), seed, "zeros")
        self.W1 = self._param(prefix, "W1", (dim, ffn_dim), seed)
        self.b1 = self._param(prefix, "b1", (ffn_dim,), seed, "zeros")
        self.W2 = self._param(prefix, "W2", (ffn_dim, dim), seed)
        self.b2 = self._param(prefix, "b2", (dim,), seed, "zeros")
        self.ln2_g = self._param(prefix, "ln2_g", (dim,), seed, "zeros")
        self.ln2_b = self._param(prefix, "ln2_b", (dim,), seed, "zeros")
        self.ln1_g.data[...] = 1.0
        self.ln2_g.data[...] = 1.0
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return ad.transpose(ad.reshape(x, (B, T, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, lengths: Optional[Sequence[int]] = None) -> Tensor:
        x, squeeze = _batched(x)
        B, T, _ = x.shape
        if T == 0:
            raise ValueError("self-attention needs a non-empty sequence")
        q, k, v = self._split(x @ self.Wq), self._split(x @ self.Wk), self._split(x @ self.Wv)
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.head_dim))
        if lengths is not None:
            pad = np.arange(T)[None, :] >= np.asarray(lengths)[:, None]
            scores = scores + np.where(pad, -1e9, 0.0)[:, None, None, :]
        weights = ad.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = ad.reshape(ad.transpose(weights @ v, (0, 2, 1, 3)), (B, T, self.heads * self.head_dim))
        y = ad.layer_norm(x + ctx @ self.Wo, self.ln1_g, self.ln1_b)
        ff = ad.relu(y @ self.W1 + self.b1) @ self.W2 + self.b2
        z = ad.layer_norm(y + ff, self.ln2_g, self.ln2_b)
        return z[0] if squeeze else z


def self_attention(e_pos: Tensor, layer: SelfAttentionLayer, lengths=None) -> Tensor:
    return layer(e_pos, lengths)
