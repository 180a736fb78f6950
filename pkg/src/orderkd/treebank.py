"""CoNLL-U reading/writing, tree validation, vocabularies and synthetic re-linearization."""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
ROOT = "<root>"
RESERVED = (PAD, UNK, ROOT)
PAD_INDEX, UNK_INDEX, ROOT_INDEX = 0, 1, 2


class ConlluError(ValueError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Token:
    id: int
    form: str
    upos: str
    head: int
    deprel: str


@dataclass(frozen=True)
class Sentence:
    tokens: Tuple[Token, ...]
    language: str = "und"
    # gold heads kept alongside predicted ones (see teacher.find_heads)
    gold_heads: Optional[Tuple[int, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> List[str]:
        return [t.form for t in self.tokens]

    @property
    def upos(self) -> List[str]:
        return [t.upos for t in self.tokens]

    @property
    def heads(self) -> List[int]:
        return [t.head for t in self.tokens]

    @property
    def deprels(self) -> List[str]:
        return [t.deprel for t in self.tokens]

    def edges(self) -> List[Tuple[int, int]]:
        """(dependent, head) pairs, 1-based, excluding root attachments."""
        return [(t.id, t.head) for t in self.tokens if t.head != 0]


@dataclass(frozen=True)
class Treebank:
    sentences: Tuple[Sentence, ...]
    language: str = "und"

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def n_edges(self) -> int:
        return sum(len(s.edges()) for s in self.sentences)


def make_sentence(rows: Sequence[Tuple[str, str, int, str]], language: str = "und") -> Sentence:
    """Build a sentence from (form, upos, head, deprel) rows."""
    return Sentence(
        tuple(Token(i + 1, f, u, h, d) for i, (f, u, h, d) in enumerate(rows)), language
    )


# ---------------------------------------------------------------------------
# validation


def validate_tree(sentence: Sentence) -> List[str]:
    violations = []
    n = len(sentence)
    for i, tok in enumerate(sentence.tokens, start=1):
        if tok.id != i:
            violations.append(f"non-consecutive id {tok.id} at position {i}")
        if not tok.upos or not tok.deprel:
            violations.append(f"empty upos or deprel at id {tok.id}")
    heads = sentence.heads
    bad = [i for i, h in enumerate(heads, start=1) if not 0 <= h <= n]
    for i in bad:
        violations.append(f"head out of range at id {i}: {heads[i - 1]}")
    roots = [i for i, h in enumerate(heads, start=1) if h == 0]
    if len(roots) == 0:
        violations.append("no-root")
    elif len(roots) > 1:
        violations.append(f"multiple-roots at ids {roots}")
    if bad:
        return violations
    # a node is safe once its head chain reaches the root
    state = [0] * (n + 1)  # 0 unvisited, 1 on current path, 2 done
    state[0] = 2
    reported = set()
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            cycle = tuple(sorted(path[path.index(node):]))
            if cycle not in reported:
                reported.add(cycle)
                violations.append(f"cycle at ids {list(cycle)}")
        for p in path:
            state[p] = 2
    return violations


def is_tree(sentence: Sentence) -> bool:
    return not validate_tree(sentence)


# ---------------------------------------------------------------------------
# CoNLL-U


def parse_conllu(text: str, language: Optional[str] = None, validate: bool = True) -> Treebank:
    """Parse CoNLL-U text. Multiword ranges and empty nodes are skipped.

    The language comes from a ``# language = xx`` comment when present,
    otherwise from ``language`` (default ``"und"``).
    """
    sentences: List[Sentence] = []
    rows: List[Tuple[int, Token]] = []
    found_lang = None

    def flush():
        nonlocal rows
        if not rows:
            return
        first_line = rows[0][0]
        toks = [t for _, t in rows]
        lang = found_lang or language or "und"
        for expected, (line_no, tok) in enumerate(rows, start=1):
            if tok.id != expected:
                raise ConlluError(f"expected token id {expected}, got {tok.id}", line_no)
            if not 0 <= tok.head <= len(toks):
                raise ConlluError(f"head {tok.head} out of range 0..{len(toks)}", line_no)
        sent = Sentence(tuple(toks), lang)
        if validate:
            problems = validate_tree(sent)
            if problems:
                raise ConlluError("invalid tree: " + "; ".join(problems), first_line)
        sentences.append(sent)
        rows = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "language" and value.strip():
                found_lang = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"expected 10 tab-separated columns, got {len(cols)}", line_no)
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        try:
            idx = int(tid)
        except ValueError:
            raise ConlluError(f"non-integer token id {tid!r}", line_no) from None
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluError(f"non-integer head {cols[6]!r}", line_no) from None
        if not cols[3] or cols[3] == "_" or not cols[7] or cols[7] == "_":
            raise ConlluError("missing upos or deprel", line_no)
        rows.append((line_no, Token(idx, cols[1], cols[3], head, cols[7])))
    flush()
    lang = language or found_lang or (sentences[0].language if sentences else "und")
    return Treebank(tuple(sentences), lang)


def write_conllu(tb: Treebank) -> str:
    out = []
    for sent in tb.sentences:
        if sent.language != "und":
            out.append(f"# language = {sent.language}")
        for t in sent.tokens:
            out.append(f"{t.id}\t{t.form}\t_\t{t.upos}\t_\t_\t{t.head}\t{t.deprel}\t_\t_")
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def read_conllu(path, language: Optional[str] = None, validate: bool = True) -> Treebank:
    path = Path(path)
    return parse_conllu(path.read_text(encoding="utf-8"), language=language, validate=validate)


def save_conllu(tb: Treebank, path) -> None:
    Path(path).write_text(write_conllu(tb), encoding="utf-8")


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Index maps for forms, UPOS tags and dependency labels.

    Words and tags reserve indices 0..2 for PAD, UNK and ROOT. Labels are dense
    from 0 with no reserved entries.
    """

    def __init__(self, words: Iterable[str], tags: Iterable[str], labels: Iterable[str]):
        self.words = list(RESERVED) + [w for w in words if w not in RESERVED]
        self.tags = list(RESERVED) + [t for t in tags if t not in RESERVED]
        self.labels = list(labels)
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.tag_index = {t: i for i, t in enumerate(self.tags)}
        self.label_index = {l: i for i, l in enumerate(self.labels)}

    def word(self, form: str) -> int:
        return self.word_index.get(form, UNK_INDEX)

    def tag(self, upos: str) -> int:
        return self.tag_index.get(upos, UNK_INDEX)

    def label(self, deprel: str) -> int:
        return self.label_index[deprel]

    def to_dict(self) -> Dict[str, List[str]]:
        return {
            "words": self.words[len(RESERVED):],
            "tags": self.tags[len(RESERVED):],
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d) -> "Vocab":
        return cls(d["words"], d["tags"], d["labels"])

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"Vocab(words={len(self.words)}, tags={len(self.tags)}, labels={len(self.labels)})"


def build_vocab(tb: Treebank, min_freq: int = 1) -> Vocab:
    if not len(tb):
        raise ValueError("cannot build a vocabulary from an empty treebank")
    counts = Counter(t.form for s in tb for t in s.tokens)
    words = sorted(w for w, c in counts.items() if c >= min_freq)
    tags = sorted({t.upos for s in tb for t in s.tokens})
    labels = sorted({t.deprel for s in tb for t in s.tokens})
    return Vocab(words, tags, labels)


# ---------------------------------------------------------------------------
# rule-driven re-linearization

TripleTuple = Tuple[str, str, str]


@dataclass
class RuleSet:
    """Left-probabilities keyed by (dep_upos, head_upos, deprel).

    ``default`` is used for triples without a rule; ``None`` keeps the
    dependent on the side it occupies in the input sentence.
    """

    rules: Dict[TripleTuple, float] = field(default_factory=dict)
    default: Optional[float] = None

    def __post_init__(self):
        for key, p in self.rules.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"left-probability {p} for {key} outside [0, 1]")
        if self.default is not None and not 0.0 <= self.default <= 1.0:
            raise ValueError(f"default left-probability {self.default} outside [0, 1]")

    def left_prob(self, key: TripleTuple) -> Optional[float]:
        return self.rules.get(tuple(key), self.default)

    def dumps(self) -> str:
        lines = []
        if self.default is not None:
            lines.append(f"# default = {self.default!r}")
        for (d, h, l), p in sorted(self.rules.items()):
            lines.append(f"{d} {h} {l} {p!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RuleSet":
        rules = {}
        default = None
        for no, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key.strip() == "default":
                    default = float(value)
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"line {no}: expected 'DEPUPOS HEADUPOS DEPREL LEFTPROB'")
            rules[(parts[0], parts[1], parts[2])] = float(parts[3])
        return cls(rules, default)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RuleSet":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _children(sentence: Sentence) -> Dict[int, List[int]]:
    kids: Dict[int, List[int]] = {i: [] for i in range(len(sentence) + 1)}
    for t in sentence.tokens:
        kids[t.head].append(t.id)
    return kids


def reorder_synthetic(sentence: Sentence, rules: RuleSet, seed: int) -> Sentence:
    """Re-linearize a tree, placing each dependent left or right of its head.

    Sides are sampled from ``rules``; dependents on the same side keep their
    input order and every subtree stays contiguous, so the output is projective.
    """
    problems = validate_tree(sentence)
    if problems:
        raise ValueError("reorder_synthetic needs a valid tree: " + "; ".join(problems))
    rng = random.Random(seed)
    toks = sentence.tokens
    kids = _children(sentence)

    def side_left(dep: int) -> bool:
        tok = toks[dep - 1]
        key = (tok.upos, toks[tok.head - 1].upos, tok.deprel)
        p = rules.left_prob(key)
        draw = rng.random()  # always drawn so the stream does not depend on rule coverage
        if p is None:
            return dep < tok.head
        return draw < p

    # explicit stack instead of recursion: deep chains are legal trees
    order: List[int] = []
    stack: List[object] = [kids[0][0]]
    while stack:
        item = stack.pop()
        if isinstance(item, tuple):
            order.append(item[1])
            continue
        node = item
        left, right = [], []
        for c in kids[node]:
            (left if side_left(c) else right).append(c)
        seq: List[object] = list(left) + [("emit", node)] + list(right)
        stack.extend(reversed(seq))

    new_pos = {old: new for new, old in enumerate(order, start=1)}
    new_tokens = []
    for old in order:
        t = toks[old - 1]
        new_tokens.append(replace(t, id=new_pos[old], head=new_pos.get(t.head, 0)))
    return Sentence(tuple(new_tokens), sentence.language)


def reorder_treebank(tb: Treebank, rules: RuleSet, seed: int, language: Optional[str] = None) -> Treebank:
    lang = language or tb.language
    out = []
    for k, sent in enumerate(tb.sentences):
        s = reorder_synthetic(sent, rules, seed * 1_000_003 + k)
        out.append(Sentence(s.tokens, lang))
    return Treebank(tuple(out), lang)
