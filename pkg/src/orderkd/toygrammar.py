"""A small probabilistic grammar producing English-like dependency trees.

Used to build desk-scale source languages; synthetic targets are derived
from them with :func:`orderkd.treebank.reorder_synthetic`.
"""

from __future__ import annotations

import random
from typing import Dict, Iterable, List, Optional, Tuple

from .treebank import RuleSet, Sentence, Token, Treebank, reorder_treebank

LEXICON_SIZES = {
    "NOUN": 40, "VERB": 20, "ADJ": 15, "ADV": 8, "PRON": 6, "DET": 4,
    "ADP": 6, "AUX": 4, "SCONJ": 2, "NUM": 5, "PUNCT": 1,
}

# left-probabilities of the source language; everything not listed is
# deterministic and matches the canonical construction order below
SOURCE_RULES: Dict[Tuple[str, str, str], float] = {
    ("NOUN", "VERB", "nsubj"): 1.0,
    ("PRON", "VERB", "nsubj"): 1.0,
    ("AUX", "VERB", "aux"): 1.0,
    ("ADV", "VERB", "advmod"): 0.7,
    ("NOUN", "VERB", "obj"): 0.0,
    ("PRON", "VERB", "obj"): 0.0,
    ("NOUN", "VERB", "obl"): 0.1,
    ("PUNCT", "VERB", "punct"): 0.0,
    ("VERB", "VERB", "ccomp"): 0.0,
    ("SCONJ", "VERB", "mark"): 1.0,
    ("DET", "NOUN", "det"): 1.0,
    ("NUM", "NOUN", "nummod"): 1.0,
    ("ADJ", "NOUN", "amod"): 1.0,
    ("ADV", "ADJ", "advmod"): 1.0,
    ("NOUN", "NOUN", "nmod"): 0.0,
    ("ADP", "NOUN", "case"): 1.0,
}

# most frequent triples first; flipping a prefix gives a graded family of targets
FLIP_ORDER: List[Tuple[str, str, str]] = [
    ("ADP", "NOUN", "case"),
    ("NOUN", "VERB", "obj"),
    ("ADJ", "NOUN", "amod"),
    ("NOUN", "NOUN", "nmod"),
    ("PRON", "VERB", "obj"),
    ("DET", "NOUN", "det"),
    ("NOUN", "VERB", "obl"),
    ("NOUN", "VERB", "nsubj"),
]


class _Node:
    __slots__ = ("upos", "deprel", "form", "left", "right")

    def __init__(self, upos, deprel, form):
        self.upos, self.deprel, self.form = upos, deprel, form
        self.left: List["_Node"] = []
        self.right: List["_Node"] = []


class ToyGrammar:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def word(self, upos: str) -> str:
        if upos == "PUNCT":
            return "."
        return f"{upos.lower()}{self.rng.randrange(LEXICON_SIZES[upos])}"

    def node(self, upos, deprel) -> _Node:
        return _Node(upos, deprel, self.word(upos))

    def noun_phrase(self, deprel: str, depth: int, with_case: bool = False, allow_pron=True) -> _Node:
        r = self.rng
        if allow_pron and not with_case and r.random() < 0.3:
            return self.node("PRON", deprel)
        n = self.node("NOUN", deprel)
        if with_case:
            n.left.append(self.node("ADP", "case"))
        if r.random() < 0.65:
            n.left.append(self.node("DET", "det"))
        if r.random() < 0.12:
            n.left.append(self.node("NUM", "nummod"))
        if r.random() < 0.4:
            adj = self.node("ADJ", "amod")
            if r.random() < 0.2:
                adj.left.append(self.node("ADV", "advmod"))
            n.left.append(adj)
        if depth < 2 and r.random() < 0.25:
            n.right.append(self.noun_phrase("nmod", depth + 1, with_case=True))
        return n

    def clause(self, deprel: str, depth: int) -> _Node:
        r = self.rng
        v = self.node("VERB", deprel)
        if deprel == "ccomp":
            v.left.append(self.node("SCONJ", "mark"))
        v.left.append(self.noun_phrase("nsubj", depth + 1))
        if r.random() < 0.3:
            v.left.append(self.node("AUX", "aux"))
        if r.random() < 0.25:
            v.left.append(self.node("ADV", "advmod"))
        if r.random() < 0.75:
            v.right.append(self.noun_phrase("obj", depth + 1))
        if r.random() < 0.45:
            v.right.append(self.noun_phrase("obl", depth + 1, with_case=True))
        if depth == 0 and r.random() < 0.2:
            v.right.append(self.clause("ccomp", depth + 1))
        if depth == 0:
            v.right.append(self.node("PUNCT", "punct"))
        return v

    def sentence(self, language: str) -> Sentence:
        root = self.clause("root", 0)
        order: List[Tuple[_Node, Optional[_Node]]] = []

        def walk(n: _Node, head: Optional[_Node]):
            for c in n.left:
                walk(c, n)
            order.append((n, head))
            for c in n.right:
                walk(c, n)

        walk(root, None)
        pos = {id(n): i for i, (n, _) in enumerate(order, start=1)}
        toks = tuple(
            Token(i, n.form, n.upos, pos[id(h)] if h is not None else 0, n.deprel)
            for i, (n, h) in enumerate(order, start=1)
        )
        return Sentence(toks, language)


def canonical_treebank(n: int, seed: int, language: str = "src") -> Treebank:
    g = ToyGrammar(seed)
    return Treebank(tuple(g.sentence(language) for _ in range(n)), language)


def source_rules() -> RuleSet:
    return RuleSet(dict(SOURCE_RULES))


def source_treebank(n: int, seed: int, language: str = "src") -> Treebank:
    """English-like treebank: canonical trees linearized by the source rules."""
    return reorder_treebank(canonical_treebank(n, seed, language), source_rules(), seed)


def flipped_rules(triples: Iterable[Tuple[str, str, str]], base: Optional[RuleSet] = None) -> RuleSet:
    """Copy of ``base`` with the left-probability p of each triple replaced by 1 - p."""
    base = base or source_rules()
    rules = dict(base.rules)
    for key in triples:
        rules[key] = 1.0 - rules.get(key, 0.5)
    return RuleSet(rules, base.default)


def head_final_rules() -> RuleSet:
    """Every dependent precedes its head, except sentence-final punctuation."""
    rules = {k: 1.0 for k in SOURCE_RULES}
    rules[("PUNCT", "VERB", "punct")] = 0.0
    rules[("ADP", "NOUN", "case")] = 0.0
    return RuleSet(rules)


def pair_deterministic_rules() -> RuleSet:
    """Clause dependents precede their head, nominal dependents follow it.

    Direction depends only on the (dependent, head) tag pair, so a model that
    sees tags but not positions can still recover it exactly.
    """
    rules = {k: (1.0 if k[1] in ("VERB", "ADJ") else 0.0) for k in SOURCE_RULES}
    return RuleSet(rules)


def target_treebank(n: int, seed: int, rules: RuleSet, language: str = "tgt") -> Treebank:
    return reorder_treebank(canonical_treebank(n, seed, language), rules, seed, language)
