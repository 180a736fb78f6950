"""Word-order teacher: head finding, order instances, the POS-only order model
and the random / heuristic teacher variants.

Order labels follow one convention throughout: y = 0 when the dependent is
left of its head, y = 1 when it is to the right. Every ``predict_right``
returns P(y = 1).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Biaffine, EmbeddingLayer, MLPHead, SelfAttentionLayer
from .parser import ParserModel, predict, run_training
from .treebank import RESERVED, UNK_INDEX, RuleSet, Sentence, Treebank
from .typology import TripleKey, edge_triples, order_feature

logger = logging.getLogger(__name__)

TEACHER_FORMAT = "orderkd-teacher"
Edge = Tuple[int, int]  # (dependent, head), 1-based


class OrderInstance(NamedTuple):
    sentence: int
    dep: int
    head: int
    dep_upos: str
    head_upos: str
    deprel: str
    y: int


def find_heads(source_parser: ParserModel, target_tb: Treebank) -> Treebank:
    """Target treebank with heads/labels predicted by a source-language parser.

    Gold heads stay available on each sentence's ``gold_heads``.
    """
    return predict(source_parser, target_tb)


def extract_instances(tb: Treebank) -> List[OrderInstance]:
    out = []
    for n, s in enumerate(tb.sentences):
        toks = s.tokens
        for t in toks:
            if t.head == 0:
                continue
            h = toks[t.head - 1]
            out.append(OrderInstance(n, t.id, t.head, t.upos, h.upos, t.deprel, 0 if t.id < t.head else 1))
    return out


@dataclass
class TeacherConfig:
    pos_dim: int = 50
    attn_layers: int = 1
    attn_heads: int = 4
    attn_head_dim: int = 16
    ffn_dim: int = 100
    mlp_dim: int = 100
    batch_size: int = 32
    epochs: int = 50
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 1e-5
    dropout: float = 0.0
    heldout_fraction: float = 0.1

    @classmethod
    def from_dict(cls, d) -> "TeacherConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class OrderBatch:
    tags: np.ndarray  # (B, T)
    lengths: np.ndarray
    rows: np.ndarray  # per edge: batch row, dependent and head positions (0-based)
    deps: np.ndarray
    heads: np.ndarray
    y: np.ndarray


class TeacherModel:
    """POS embedding, order-free self-attention, two MLP heads, scalar biaffine."""

    def __init__(self, tags: Sequence[str], cfg: Optional[TeacherConfig] = None, seed: int = 0):
        self.cfg = cfg = cfg or TeacherConfig()
        self.seed = seed
        self.tags = list(RESERVED) + [t for t in tags if t not in RESERVED]
        self.tag_index = {t: i for i, t in enumerate(self.tags)}
        self.embed = EmbeddingLayer(0, len(self.tags), 0, cfg.pos_dim, seed, "teacher.embed")
        self.attn = [
            SelfAttentionLayer(cfg.pos_dim, cfg.attn_heads, cfg.attn_head_dim, cfg.ffn_dim, seed,
                               f"teacher.attn.{k}")
            for k in range(cfg.attn_layers)
        ]
        self.order_head = MLPHead(cfg.pos_dim, cfg.mlp_dim, seed, "teacher.mlp.order_head")
        self.order_dep = MLPHead(cfg.pos_dim, cfg.mlp_dim, seed, "teacher.mlp.order_dep")
        self.biaffine = Biaffine(cfg.mlp_dim, cfg.mlp_dim, None, seed, "teacher.biaffine.order")
        self.loss_history: List[float] = []
        self.heldout_accuracy: Optional[float] = None

    def layers(self):
        return [self.embed, *self.attn, self.order_head, self.order_dep, self.biaffine]

    @property
    def params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for layer in self.layers():
            out.update(layer.params)
        return out

    def tag_ids(self, upos: Sequence[str]) -> List[int]:
        return [self.tag_index.get(u, UNK_INDEX) for u in upos]

    def make_batch(self, items: Sequence[Tuple[Sequence[str], Sequence[Edge], Sequence[int]]]) -> OrderBatch:
        """Items are (upos sequence, edges, labels)."""
        T = max(len(u) for u, _, _ in items)
        tags = np.zeros((len(items), T), dtype=np.int64)
        rows, deps, heads, ys = [], [], [], []
        for b, (upos, edges, y) in enumerate(items):
            tags[b, : len(upos)] = self.tag_ids(upos)
            for (d, h), lab in zip(edges, y):
                if not (1 <= d <= len(upos) and 1 <= h <= len(upos)):
                    raise IndexError(f"edge ({d}, {h}) out of range for length {len(upos)}")
                rows.append(b)
                deps.append(d - 1)
                heads.append(h - 1)
                ys.append(lab)
        lengths = np.array([len(u) for u, _, _ in items], dtype=np.int64)
        as_int = lambda v: np.array(v, dtype=np.int64)
        return OrderBatch(tags, lengths, as_int(rows), as_int(deps), as_int(heads), np.array(ys, dtype=float))

    def logits(self, batch: OrderBatch) -> Tensor:
        z = self.embed(np.zeros_like(batch.tags), batch.tags)
        for layer in self.attn:
            z = layer(z, batch.lengths)
        scores = self.biaffine(self.order_dep(z), self.order_head(z))  # (B, dep, head)
        return scores[batch.rows, batch.deps, batch.heads]

    def predict_right(self, sentences: Sequence[Sentence], edges: Sequence[Sequence[Edge]],
                      batch_size: int = 64) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for start in range(0, len(sentences), batch_size):
            chunk = list(zip(sentences[start : start + batch_size], edges[start : start + batch_size]))
            items = [(s.upos, e, [0] * len(e)) for s, e in chunk]
            if not any(e for _, e in chunk):
                out.extend(np.zeros(0) for _ in chunk)
                continue
            p = ad._sigmoid(self.logits(self.make_batch(items)).data)
            pos = 0
            for _, e in chunk:
                out.append(p[pos : pos + len(e)])
                pos += len(e)
        return out

    def save(self, path) -> None:
        meta = {"format": TEACHER_FORMAT, "version": 1, "tags": self.tags[len(RESERVED):],
                "config": asdict(self.cfg), "seed": self.seed,
                "heldout_accuracy": self.heldout_accuracy}
        ad.save_tensors(path, {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path) -> "TeacherModel":
        tensors, meta = ad.load_tensors(path)
        if meta.get("format") != TEACHER_FORMAT:
            raise ValueError(f"{path}: not a teacher model (format={meta.get('format')!r})")
        model = cls(meta["tags"], TeacherConfig.from_dict(meta["config"]), meta["seed"])
        for layer in model.layers():
            layer.load(tensors)
        model.heldout_accuracy = meta.get("heldout_accuracy")
        return model


def teacher_forward(t: TeacherModel, pos_seq: Sequence[str], edges: Sequence[Edge]) -> np.ndarray:
    """P(dependent right of head) for each (dependent, head) edge of one POS sequence."""
    if not edges:
        return np.zeros(0)
    batch = t.make_batch([(list(pos_seq), list(edges), [0] * len(edges))])
    return ad._sigmoid(t.logits(batch).data)


def _order_items(tb: Treebank) -> List[Tuple[List[str], List[Edge], List[int]]]:
    items = []
    for s in tb.sentences:
        edges = s.edges()
        if edges:
            items.append((s.upos, edges, [0 if d < h else 1 for d, h in edges]))
    return items


def order_accuracy(model, tb: Treebank) -> float:
    """Share of edges whose thresholded P(right) matches the positional label."""
    sents = [s for s in tb if s.edges()]
    if not sents:
        return float("nan")
    probs = model.predict_right(sents, [s.edges() for s in sents])
    hit = total = 0
    for s, p in zip(sents, probs):
        y = np.array([0 if d < h else 1 for d, h in s.edges()])
        hit += int(((p >= 0.5).astype(int) == y).sum())
        total += len(y)
    return hit / total


def split_heldout(tb: Treebank, fraction: float, seed: int) -> Tuple[Treebank, Treebank]:
    n = len(tb)
    n_held = int(round(n * fraction)) if n > 1 else 0
    if fraction > 0 and n > 1:
        n_held = max(1, n_held)
    order = np.random.default_rng(ad.sub_seed(seed, "heldout")).permutation(n)
    held = set(order[:n_held].tolist())
    train = tuple(s for k, s in enumerate(tb.sentences) if k not in held)
    dev = tuple(s for k, s in enumerate(tb.sentences) if k in held)
    return Treebank(train, tb.language), Treebank(dev, tb.language)


def train_teacher(tb: Treebank, cfg: Optional[TeacherConfig] = None, seed: int = 0,
                  heldout: Optional[Treebank] = None, epoch_callback=None) -> TeacherModel:
    """Fit the order teacher on the (predicted or gold) trees of ``tb``.

    Without an explicit ``heldout`` treebank a seeded fraction of ``tb`` is
    held out; its order accuracy ends up in ``heldout_accuracy``.
    """
    cfg = cfg or TeacherConfig()
    if heldout is None:
        tb, heldout = split_heldout(tb, cfg.heldout_fraction, seed)
    items = _order_items(tb)
    if not items:
        raise ValueError("no order instances to train on")
    tags = sorted({u for upos, _, _ in items for u in upos})
    model = TeacherModel(tags, cfg, seed)

    def loss_fn(batch: OrderBatch, rng):
        return ad.bce_with_logits(model.logits(batch), batch.y)

    model.loss_history = run_training(model.params, items, model.make_batch, cfg, seed, loss_fn,
                                      epoch_callback)
    if len(heldout):
        model.heldout_accuracy = order_accuracy(model, heldout)
        logger.info("teacher held-out order accuracy %.4f", model.heldout_accuracy)
    return model


# ---------------------------------------------------------------------------
# variants


def _hash_uniform(seed: int, upos: Sequence[str], edge: Edge) -> float:
    key = f"{seed}|{' '.join(upos)}|{edge[0]}|{edge[1]}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") / 2.0**64


@dataclass
class TeacherVariant:
    """``rand``: seeded uniform probability per (sentence, edge).
    ``heur``: target-language left-frequency of the edge's triple (0.5 when unseen).
    """

    tag: str
    table: Optional[Dict[TripleKey, float]] = None
    seed: int = 0

    def __post_init__(self):
        if self.tag not in ("rand", "heur"):
            raise ValueError(f"unknown teacher variant {self.tag!r}")
        if self.tag == "heur" and self.table is None:
            raise ValueError("heur teacher needs a triple table")
        if self.table is not None:
            self.table = {TripleKey(*k): float(v) for k, v in self.table.items()}

    def left_prob(self, key: TripleKey) -> float:
        return self.table.get(key, 0.5)

    def predict_right(self, sentences: Sequence[Sentence], edges: Sequence[Sequence[Edge]]) -> List[np.ndarray]:
        out = []
        for s, es in zip(sentences, edges):
            if self.tag == "rand":
                out.append(np.array([_hash_uniform(self.seed, s.upos, e) for e in es]))
                continue
            toks = s.tokens
            keys = [TripleKey(toks[d - 1].upos, toks[h - 1].upos, toks[d - 1].deprel) for d, h in es]
            out.append(np.array([1.0 - self.left_prob(k) for k in keys]))
        return out

    def to_ruleset(self) -> RuleSet:
        return RuleSet({tuple(k): v for k, v in (self.table or {}).items()})


def heur_teacher(target_tb: Treebank, triples: Sequence[TripleKey]) -> TeacherVariant:
    """Heuristic teacher from target left-frequencies of the supported triples."""
    vec = order_feature(target_tb, triples)
    table = {k: float(f) for k, f, n in zip(vec.keys, vec.freqs, vec.support) if n > 0}
    return TeacherVariant("heur", table)


def teacher_predict(teacher, sentence: Sentence, edges: Sequence[Edge]) -> np.ndarray:
    """P(right) for edges of one sentence, for a TeacherModel or TeacherVariant."""
    if isinstance(teacher, TeacherModel):
        return teacher_forward(teacher, sentence.upos, edges)
    return teacher.predict_right([sentence], [list(edges)])[0]


def load_teacher(path):
    """Load a trained teacher file, or a heur table in rule-set format."""
    with open(path, "rb") as fh:
        head = fh.read(len(ad.MAGIC))
    if head == ad.MAGIC:
        return TeacherModel.load(path)
    rules = RuleSet.load(path)
    return TeacherVariant("heur", {TripleKey(*k): v for k, v in rules.rules.items()})
