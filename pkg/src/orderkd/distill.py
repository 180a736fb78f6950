"""Student parser with an order head, trained with teacher word-order supervision.

Variants:
    kd      MSE between student and teacher P(right) at gold source edges
    pseudo  BCE against the teacher probabilities thresholded at 0.5
    wol     BCE against the source sentence's own order labels (no teacher)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Biaffine, MLPHead
from .parser import (
    Batch,
    ParseOutput,
    ParserConfig,
    ParserModel,
    decode_tree,
    edge_label_losses,
    make_batch,
    run_training,
)
from .treebank import Sentence, Treebank, Vocab, build_vocab

STUDENT_FORMAT = "orderkd-student"
VARIANTS = ("kd", "pseudo", "wol")


@dataclass
class DistillConfig(ParserConfig):
    order_mlp: int = 100
    lambda2: float = 0.001
    variant: str = "kd"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def parser_config(self) -> ParserConfig:
        names = {f.name for f in fields(ParserConfig)}
        return ParserConfig(**{k: v for k, v in asdict(self).items() if k in names})


class StudentModel:
    def __init__(self, vocab: Vocab, cfg: Optional[DistillConfig] = None, seed: int = 0):
        self.cfg = cfg = cfg or DistillConfig()
        self.seed = seed
        self.parser = ParserModel(vocab, cfg.parser_config(), seed)
        r = self.parser.bilstm.out_dim
        self.order_head = MLPHead(r, cfg.order_mlp, seed, "mlp.order_head", cfg.dropout)
        self.order_dep = MLPHead(r, cfg.order_mlp, seed, "mlp.order_dep", cfg.dropout)
        self.order_biaffine = Biaffine(cfg.order_mlp, cfg.order_mlp, None, seed, "biaffine.order")
        self.loss_history: List[float] = []

    @property
    def vocab(self) -> Vocab:
        return self.parser.vocab

    def order_layers(self):
        return [self.order_head, self.order_dep, self.order_biaffine]

    @property
    def params(self) -> Dict[str, Tensor]:
        out = dict(self.parser.params)
        for layer in self.order_layers():
            out.update(layer.params)
        return out

    def order_logits(self, r: Tensor, rows, deps, heads, rng=None) -> Tensor:
        """Order scores at (row, dependent, head) positions of the encoded batch."""
        scores = self.order_biaffine(self.order_dep(r, rng), self.order_head(r, rng))
        return scores[rows, deps, heads]

    def predict_right(self, sentences: Sequence[Sentence], edges: Sequence[Sequence[Tuple[int, int]]],
                      batch_size: int = 64) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for start in range(0, len(sentences), batch_size):
            chunk = list(sentences[start : start + batch_size])
            chunk_edges = list(edges[start : start + batch_size])
            rows, deps, heads = _edge_index(chunk_edges)
            if len(rows) == 0:
                out.extend(np.zeros(0) for _ in chunk)
                continue
            r = self.parser.encode(make_batch(chunk, self.vocab, with_gold=False))
            p = ad._sigmoid(self.order_logits(r, rows, deps, heads).data)
            pos = 0
            for e in chunk_edges:
                out.append(p[pos : pos + len(e)])
                pos += len(e)
        return out

    def save(self, path) -> None:
        meta = {"format": STUDENT_FORMAT, "version": 1, "vocab": self.vocab.to_dict(),
                "config": asdict(self.cfg), "seed": self.seed,
                "variant": self.cfg.variant, "lambda1": self.cfg.lambda1, "lambda2": self.cfg.lambda2}
        ad.save_tensors(path, {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path) -> "StudentModel":
        tensors, meta = ad.load_tensors(path)
        if meta.get("format") != STUDENT_FORMAT:
            raise ValueError(f"{path}: not a student model (format={meta.get('format')!r})")
        cfg = DistillConfig(**{k: v for k, v in meta["config"].items()
                               if k in {f.name for f in fields(DistillConfig)}})
        model = cls(Vocab.from_dict(meta["vocab"]), cfg, meta["seed"])
        for layer in model.parser.layers() + model.order_layers():
            layer.load(tensors)
        return model


def _edge_index(edges: Sequence[Sequence[Tuple[int, int]]]):
    rows, deps, heads = [], [], []
    for b, es in enumerate(edges):
        for d, h in es:
            rows.append(b)
            deps.append(d)
            heads.append(h)
    as_int = lambda v: np.array(v, dtype=np.int64)
    return as_int(rows), as_int(deps), as_int(heads)


def student_forward(m: StudentModel, s: Sentence) -> Tuple[ParseOutput, np.ndarray]:
    """Parser scores plus P(right) at each gold non-root edge of ``s``."""
    batch = make_batch([s], m.vocab, with_gold=False)
    r = m.parser.encode(batch)
    edge, label = m.parser.scores_from(r)
    n = len(s)
    es = edge.data[0, 1 : n + 1, : n + 1].T.copy()
    ls = np.transpose(label.data[0, 1 : n + 1, : n + 1], (1, 0, 2)).copy()
    heads, labs = decode_tree(es, ls)
    out = ParseOutput(es, ls, heads, [m.vocab.labels[k] for k in labs])
    rows, deps, hs = _edge_index([s.edges()])
    if len(rows) == 0:
        return out, np.zeros(0)
    return out, ad._sigmoid(m.order_logits(r, rows, deps, hs).data)


def kd_loss(teacher_probs, student_probs) -> Tensor:
    """Mean squared difference between teacher and student probabilities."""
    t, s = ad.as_tensor(teacher_probs), ad.as_tensor(student_probs)
    if t.shape != s.shape:
        raise ValueError(f"kd_loss: {t.shape[0] if t.ndim else 0} teacher vs "
                         f"{s.shape[0] if s.ndim else 0} student probabilities")
    return ad.mse(s, t)


def total_loss(edge_loss, label_loss, order_loss, lambda1: float = 1.0, lambda2: float = 0.001):
    return edge_loss + lambda1 * label_loss + lambda2 * order_loss


def order_targets(sentences: Sequence[Sentence], teacher, variant: str) -> List[np.ndarray]:
    """Per-sentence order targets at gold edges, in ``Sentence.edges()`` order."""
    edges = [s.edges() for s in sentences]
    if variant == "wol":
        return [np.array([0.0 if d < h else 1.0 for d, h in es]) for es in edges]
    if teacher is None:
        raise ValueError(f"variant {variant!r} needs a teacher")
    probs = teacher.predict_right(list(sentences), edges)
    if variant == "pseudo":
        return [(p >= 0.5).astype(float) for p in probs]
    return [np.asarray(p, dtype=float) for p in probs]


def train_student(source_tb: Treebank, teacher, cfg: Optional[DistillConfig] = None, seed: int = 0,
                  vocab: Optional[Vocab] = None, epoch_callback=None) -> StudentModel:
    """Train a student on gold source trees with an auxiliary order loss.

    Teacher targets are a pure function of each source sentence, so they are
    computed once up front.
    """
    if not len(source_tb):
        raise ValueError("cannot train on an empty treebank")
    cfg = cfg or DistillConfig()
    model = StudentModel(vocab or build_vocab(source_tb), cfg, seed)
    sentences = list(source_tb.sentences)
    targets = order_targets(sentences, teacher, cfg.variant)
    items = list(zip(sentences, targets))

    def make(chunk):
        batch = make_batch([s for s, _ in chunk], model.vocab)
        batch.order_edges = _edge_index([s.edges() for s, _ in chunk])
        batch.order_targets = np.concatenate([t for _, t in chunk]) if chunk else np.zeros(0)
        return batch

    def loss_fn(batch: Batch, rng):
        r = model.parser.encode(batch, rng)
        edge, label = model.parser.scores_from(r, rng)
        edge_loss, label_loss = edge_label_losses(edge, label, batch)
        rows, deps, heads = batch.order_edges
        if len(rows):
            logits = model.order_logits(r, rows, deps, heads, rng)
            if cfg.variant == "kd":
                order = kd_loss(batch.order_targets, ad.sigmoid(logits))
            else:
                order = ad.bce_with_logits(logits, batch.order_targets)
        else:
            order = Tensor(0.0)
        return total_loss(edge_loss, label_loss, order, cfg.lambda1, cfg.lambda2)

    model.loss_history = run_training(model.params, items, make, cfg, seed, loss_fn, epoch_callback)
    return model
