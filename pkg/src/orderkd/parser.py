"""Biaffine dependency parser: scoring, decoding, loss, training, evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .layers import Biaffine, BiLSTMLayer, EmbeddingLayer, MLPHead
from .treebank import ROOT_INDEX, Sentence, Token, Treebank, Vocab, build_vocab

logger = logging.getLogger(__name__)

PARSER_FORMAT = "orderkd-parser"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ParserConfig:
    word_dim: int = 100
    pos_dim: int = 50
    lstm_hidden: int = 100
    lstm_layers: int = 2
    edge_mlp: int = 100
    label_mlp: int = 100
    dropout: float = 0.0
    batch_size: int = 32
    epochs: int = 50
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 1e-5
    lambda1: float = 1.0

    @classmethod
    def from_dict(cls, d) -> "ParserConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Batch:
    sentences: List[Sentence]
    words: np.ndarray  # (B, T+1), position 0 is the virtual root
    tags: np.ndarray
    lengths: np.ndarray  # tokens per sentence, root excluded
    heads: np.ndarray  # (B, T+1), 0 at root/pad slots
    labels: np.ndarray

    @property
    def token_mask(self) -> np.ndarray:
        T = self.words.shape[1]
        pos = np.arange(T)[None, :]
        return (pos >= 1) & (pos <= self.lengths[:, None])

    @property
    def pair_mask(self) -> np.ndarray:
        """(B, dep, head) validity: real dependents against root or real heads."""
        T = self.words.shape[1]
        head_ok = np.arange(T)[None, :] <= self.lengths[:, None]
        return self.token_mask[:, :, None] & head_ok[:, None, :]


def make_batch(sentences: Sequence[Sentence], vocab: Vocab, with_gold: bool = True) -> Batch:
    B = len(sentences)
    T = max(len(s) for s in sentences) + 1
    words = np.zeros((B, T), dtype=np.int64)
    tags = np.zeros((B, T), dtype=np.int64)
    heads = np.zeros((B, T), dtype=np.int64)
    labels = np.zeros((B, T), dtype=np.int64)
    words[:, 0] = ROOT_INDEX
    tags[:, 0] = ROOT_INDEX
    for b, s in enumerate(sentences):
        for t in s.tokens:
            words[b, t.id] = vocab.word(t.form)
            tags[b, t.id] = vocab.tag(t.upos)
            if with_gold:
                heads[b, t.id] = t.head
                labels[b, t.id] = vocab.label_index.get(t.deprel, 0)
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    return Batch(list(sentences), words, tags, lengths, heads, labels)


@dataclass
class ParseOutput:
    """Scores for one sentence.

    ``edge_scores[i, j-1]`` scores head i (0 = root) for token j; label scores
    add a trailing class axis.
    """

    edge_scores: np.ndarray  # (L+1, L)
    label_scores: np.ndarray  # (L+1, L, k)
    heads: List[int] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)


class ParserModel:
    def __init__(self, vocab: Vocab, cfg: Optional[ParserConfig] = None, seed: int = 0):
        self.vocab = vocab
        self.cfg = cfg = cfg or ParserConfig()
        self.seed = seed
        self.embed = EmbeddingLayer(len(vocab.words), len(vocab.tags), cfg.word_dim, cfg.pos_dim, seed)
        self.bilstm = BiLSTMLayer(self.embed.out_dim, cfg.lstm_hidden, cfg.lstm_layers, seed,
                                  dropout=cfg.dropout)
        r = self.bilstm.out_dim
        self.edge_head = MLPHead(r, cfg.edge_mlp, seed, "mlp.edge_head", cfg.dropout)
        self.edge_dep = MLPHead(r, cfg.edge_mlp, seed, "mlp.edge_dep", cfg.dropout)
        self.label_head = MLPHead(r, cfg.label_mlp, seed, "mlp.label_head", cfg.dropout)
        self.label_dep = MLPHead(r, cfg.label_mlp, seed, "mlp.label_dep", cfg.dropout)
        self.edge_biaffine = Biaffine(cfg.edge_mlp, cfg.edge_mlp, None, seed, "biaffine.edge")
        self.label_biaffine = Biaffine(cfg.label_mlp, cfg.label_mlp, len(vocab.labels), seed,
                                       "biaffine.label")
        self.loss_history: List[float] = []

    def layers(self):
        return [self.embed, self.bilstm, self.edge_head, self.edge_dep, self.label_head,
                self.label_dep, self.edge_biaffine, self.label_biaffine]

    @property
    def params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for layer in self.layers():
            out.update(layer.params)
        return out

    def encode(self, batch: Batch, rng=None) -> Tensor:
        e = self.embed(batch.words, batch.tags)
        return self.bilstm(e, batch.lengths + 1, rng)

    def scores_from(self, r: Tensor, rng=None) -> Tuple[Tensor, Tensor]:
        """Edge scores (B, dep, head) and label scores (B, dep, head, k)."""
        edge = self.edge_biaffine(self.edge_dep(r, rng), self.edge_head(r, rng))
        label = self.label_biaffine(self.label_dep(r, rng), self.label_head(r, rng))
        return edge, label

    def score_batch(self, batch: Batch, rng=None) -> Tuple[Tensor, Tensor]:
        return self.scores_from(self.encode(batch, rng), rng)

    def outputs(self, batch: Batch) -> List[ParseOutput]:
        edge, label = self.score_batch(batch)
        outs = []
        for b, n in enumerate(batch.lengths):
            es = edge.data[b, 1 : n + 1, : n + 1].T.copy()
            ls = np.transpose(label.data[b, 1 : n + 1, : n + 1], (1, 0, 2)).copy()
            heads, labs = decode_tree(es, ls)
            outs.append(ParseOutput(es, ls, heads, [self.vocab.labels[k] for k in labs]))
        return outs

    def save(self, path, extra: Optional[dict] = None) -> None:
        meta = {"format": PARSER_FORMAT, "version": 1, "vocab": self.vocab.to_dict(),
                "config": asdict(self.cfg), "seed": self.seed}
        meta.update(extra or {})
        ad.save_tensors(path, {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path) -> "ParserModel":
        tensors, meta = ad.load_tensors(path)
        if meta.get("format") not in (PARSER_FORMAT, "orderkd-student"):
            raise ValueError(f"{path}: not a parser model (format={meta.get('format')!r})")
        model = cls(Vocab.from_dict(meta["vocab"]), ParserConfig.from_dict(meta["config"]), meta["seed"])
        for layer in model.layers():
            layer.load(tensors)
        return model


def score_sentence(model: ParserModel, sentence: Sentence) -> ParseOutput:
    if len(sentence) == 0:
        raise ValueError("cannot score an empty sentence")
    return model.outputs(make_batch([sentence], model.vocab, with_gold=False))[0]


def decode_graph(edge_scores: np.ndarray) -> Set[Tuple[int, int]]:
    """Edges (head i, dependent j) whose score is >= 0."""
    heads, deps = np.nonzero(np.asarray(edge_scores) >= 0)
    return {(int(i), int(j) + 1) for i, j in zip(heads, deps)}


def decode_tree(edge_scores: np.ndarray, label_scores: Optional[np.ndarray] = None):
    """Per-dependent argmax head (first maximum wins) and its argmax label."""
    edge_scores = np.asarray(edge_scores)
    heads = np.argmax(edge_scores, axis=0)
    labels = []
    if label_scores is not None:
        labels = [int(np.argmax(label_scores[h, j])) for j, h in enumerate(heads)]
    return [int(h) for h in heads], labels


# ---------------------------------------------------------------------------
# loss


def edge_label_losses(edge: Tensor, label: Tensor, batch: Batch) -> Tuple[Tensor, Tensor]:
    """Mean BCE over all valid (head, dependent) pairs and mean CE over gold edges."""
    B, T = batch.words.shape
    target = np.zeros((B, T, T))
    bi, ji = np.nonzero(batch.token_mask)
    target[bi, ji, batch.heads[bi, ji]] = 1.0
    edge_loss = ad.bce_with_logits(edge, target, batch.pair_mask)
    gold_label_scores = label[bi, ji, batch.heads[bi, ji]]  # (N, k)
    label_loss = ad.cross_entropy(gold_label_scores, batch.labels[bi, ji])
    return edge_loss, label_loss


def batch_parser_loss(edge: Tensor, label: Tensor, batch: Batch, lambda1: float = 1.0) -> Tensor:
    edge_loss, label_loss = edge_label_losses(edge, label, batch)
    return edge_loss + lambda1 * label_loss


def parser_loss(scores: ParseOutput, gold: Sentence, lambda1: float = 1.0, vocab: Optional[Vocab] = None) -> float:
    """Loss of one sentence's scores against its gold tree.

    Gold labels are indexed through ``vocab`` (default: sorted gold labels).
    """
    if vocab is None:
        vocab = Vocab([], [], sorted(set(gold.deprels)))
    L = len(gold)
    edge = np.zeros((1, L + 1, L + 1))
    edge[0, 1:, :] = scores.edge_scores.T
    k = scores.label_scores.shape[-1]
    label = np.zeros((1, L + 1, L + 1, k))
    label[0, 1:, :, :] = np.transpose(scores.label_scores, (1, 0, 2))
    batch = make_batch([gold], vocab)
    return batch_parser_loss(Tensor(edge), Tensor(label), batch, lambda1).item()


# ---------------------------------------------------------------------------
# training


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def run_training(
    params: Dict[str, Tensor],
    items: Sequence,
    make: Callable[[list], object],
    cfg,
    seed: int,
    loss_fn: Callable[[object, Optional[np.random.Generator]], Tensor],
    epoch_callback: Optional[Callable[[int, float], None]] = None,
) -> List[float]:
    """Mini-batch Adam over ``items``; returns the mean loss per epoch.

    ``make`` turns a list of items into whatever ``loss_fn`` consumes. The
    shuffling stream depends only on ``seed`` and the item count.
    """
    data_rng = np.random.default_rng(ad.sub_seed(seed, "data"))
    drop_rng = np.random.default_rng(ad.sub_seed(seed, "dropout")) if cfg.dropout > 0 else None
    state = ad.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                         weight_decay=cfg.weight_decay)
    names = list(params)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for idx in iterate_batches(len(items), cfg.batch_size, data_rng):
            batch = make([items[i] for i in idx])
            with Tape() as tape:
                loss = loss_fn(batch, drop_rng)
                grads = tape.gradient(loss, [params[n] for n in names])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, step {state.step + 1}"
                )
            ad.adam_step(state, params, {n: grads[params[n]] for n in names})
            total += value
            count += 1
        history.append(total / count)
        logger.info("epoch %d loss %.6f", epoch, history[-1])
        if epoch_callback is not None:
            epoch_callback(epoch, history[-1])
    return history


def train_parser(tb: Treebank, cfg: Optional[ParserConfig] = None, seed: int = 0,
                 vocab: Optional[Vocab] = None, epoch_callback=None) -> ParserModel:
    if not len(tb):
        raise ValueError("cannot train on an empty treebank")
    cfg = cfg or ParserConfig()
    model = ParserModel(vocab or build_vocab(tb), cfg, seed)

    def loss_fn(batch, rng):
        edge, label = model.score_batch(batch, rng)
        return batch_parser_loss(edge, label, batch, cfg.lambda1)

    model.loss_history = run_training(model.params, tb.sentences,
                                      lambda sents: make_batch(sents, model.vocab),
                                      cfg, seed, loss_fn, epoch_callback)
    return model


# ---------------------------------------------------------------------------
# prediction and evaluation


class Metrics(NamedTuple):
    uas: float
    las: float
    n_tokens: int

    def to_json(self) -> dict:
        return {"uas": self.uas, "las": self.las, "n_tokens": self.n_tokens}


def predict(model: ParserModel, tb: Treebank, batch_size: int = 64) -> Treebank:
    """Copy of ``tb`` with heads and labels replaced by the model's argmax decoding."""
    out = []
    sents = tb.sentences
    for start in range(0, len(sents), batch_size):
        chunk = sents[start : start + batch_size]
        for s, po in zip(chunk, model.outputs(make_batch(chunk, model.vocab, with_gold=False))):
            toks = tuple(Token(t.id, t.form, t.upos, h, l) for t, h, l in zip(s.tokens, po.heads, po.labels))
            if po.heads.count(0) != 1:
                logger.debug("non-tree prediction kept as-is: heads %s", po.heads)
            out.append(Sentence(toks, s.language, gold_heads=tuple(s.heads)))
    return Treebank(tuple(out), tb.language)


def attachment_scores(gold: Treebank, pred: Treebank) -> Metrics:
    n = head_ok = both_ok = 0
    for gs, ps in zip(gold.sentences, pred.sentences):
        if len(gs) != len(ps):
            raise ValueError("gold and predicted sentences differ in length")
        for g, p in zip(gs.tokens, ps.tokens):
            n += 1
            if g.head == p.head:
                head_ok += 1
                if g.deprel == p.deprel:
                    both_ok += 1
    if n == 0:
        return Metrics(0.0, 0.0, 0)
    return Metrics(head_ok / n, both_ok / n, n)


def evaluate(model: ParserModel, tb: Treebank) -> Metrics:
    """UAS/LAS over every token, punctuation included."""
    return attachment_scores(tb, predict(model, tb))
