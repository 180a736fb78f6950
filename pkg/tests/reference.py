"""Straight-line float reference implementations used as test oracles."""

import math


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def vecmat(v, M):
    return [sum(v[a] * M[a][c] for a in range(len(v))) for c in range(len(M[0]))]


def mlp(v, W, b):
    return [math.tanh(t + b[c]) for c, t in enumerate(vecmat(v, W))]


def bilinear(dep, U, head, bias):
    return sum(dep[p] * U[p][q] * head[q] for p in range(len(dep)) for q in range(len(head))) + bias


def lstm(seq, W, U, b):
    """One LSTM direction, gates ordered i, f, g, o."""
    H = len(U)
    h, c = [0.0] * H, [0.0] * H
    out = []
    for x in seq:
        pre = [a + u + bb for a, u, bb in zip(vecmat(x, W), vecmat(h, U), b)]
        i = [sig(t) for t in pre[:H]]
        f = [sig(t) for t in pre[H : 2 * H]]
        g = [math.tanh(t) for t in pre[2 * H : 3 * H]]
        o = [sig(t) for t in pre[3 * H :]]
        c = [f[k] * c[k] + i[k] * g[k] for k in range(H)]
        h = [o[k] * math.tanh(c[k]) for k in range(H)]
        out.append(h)
    return out


def bilstm(seq, fw, bw):
    forward = lstm(seq, *fw)
    backward = lstm(seq[::-1], *bw)[::-1]
    return [a + b for a, b in zip(forward, backward)]


def layer_norm(v, g, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((t - mu) ** 2 for t in v) / len(v)
    return [(t - mu) / math.sqrt(var + eps) * g[c] + b[c] for c, t in enumerate(v)]


def attention_block(xs, P, head_dim):
    """Single-head post-LN self-attention block with a ReLU feed-forward."""
    q = [vecmat(r, P["Wq"]) for r in xs]
    k = [vecmat(r, P["Wk"]) for r in xs]
    v = [vecmat(r, P["Wv"]) for r in xs]
    n, out = len(xs), []
    for a in range(n):
        s = [sum(q[a][c] * k[b][c] for c in range(head_dim)) / math.sqrt(head_dim) for b in range(n)]
        m = max(s)
        w = [math.exp(t - m) for t in s]
        w = [t / sum(w) for t in w]
        ctx = [sum(w[b] * v[b][c] for b in range(n)) for c in range(head_dim)]
        att = vecmat(ctx, P["Wo"])
        y = layer_norm([xs[a][c] + att[c] for c in range(len(att))], P["ln1_g"], P["ln1_b"])
        hid = [max(0.0, t + P["b1"][c]) for c, t in enumerate(vecmat(y, P["W1"]))]
        ff = [t + P["b2"][c] for c, t in enumerate(vecmat(hid, P["W2"]))]
        out.append(layer_norm([y[c] + ff[c] for c in range(len(y))], P["ln2_g"], P["ln2_b"]))
    return out
