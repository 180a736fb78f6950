"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that the conftest prints after the run.
Model sizes and learning rates are scaled down so the suite runs on one CPU;
the scaled settings are listed in ``TOY`` and ``TOY_TEACHER``.
"""

import json
import random
import time
import warnings

import numpy as np
import pytest

from conftest import record
from orderkd import autodiff as ad
from orderkd import cli
from orderkd import distill as D
from orderkd import parser as P
from orderkd import teacher as T
from orderkd import toygrammar as tg
from orderkd import typology as ty
from orderkd.autodiff import Tensor
from orderkd.layers import Biaffine, BiLSTMLayer, EmbeddingLayer, MLPHead, SelfAttentionLayer
from orderkd.treebank import RuleSet, Treebank, save_conllu

from test_treebank import random_tree

TOY = dict(word_dim=32, pos_dim=16, lstm_hidden=32, lstm_layers=1, edge_mlp=32, label_mlp=32,
           lr=2e-3, batch_size=16, epochs=20)
TOY_TEACHER = T.TeacherConfig(pos_dim=16, attn_head_dim=8, ffn_dim=32, mlp_dim=32, lr=2e-3, batch_size=16,
                              epochs=30)
SEEDS = (0, 1, 2)


def _cli_config(parser_kw, **extra):
    """Render parser settings in the flat config format (the CLI shares one MLP width)."""
    kw = {k: v for k, v in parser_kw.items() if k not in ("edge_mlp", "label_mlp")}
    kw["mlp_dim"] = parser_kw["edge_mlp"]
    kw.update(extra)
    return "".join(f"{k} = {v}\n" for k, v in kw.items())


def _elapsed(start):
    return time.perf_counter() - start


# ---------------------------------------------------------------------------
# 1. gradient integrity


def _to_loss(kind, out):
    flat = out.reshape(-1, out.shape[-1])
    rng = np.random.default_rng(11)
    if kind == "bce":  # edge loss form
        return ad.bce_with_logits(flat, (rng.random(flat.shape) < 0.3).astype(float))
    if kind == "ce":  # label loss form
        return ad.cross_entropy(flat, rng.integers(0, flat.shape[-1], flat.shape[0]))
    return ad.mse(ad.sigmoid(flat), rng.random(flat.shape))  # distillation loss form


def _layer_cases():
    rng = np.random.default_rng(0)
    words, tags = rng.integers(0, 12, (2, 5)), rng.integers(0, 7, (2, 5))
    x4 = Tensor(rng.normal(size=(2, 5, 4)))
    x6 = Tensor(rng.normal(size=(2, 5, 6)))
    emb = EmbeddingLayer(12, 7, 4, 3, seed=1)
    lstm = BiLSTMLayer(4, 3, layers=2, seed=1)
    mlp = MLPHead(6, 8, seed=1, prefix="mlp")
    edge = Biaffine(6, 6, None, seed=1, prefix="edge")
    label = Biaffine(6, 6, 3, seed=1, prefix="label")
    attn = SelfAttentionLayer(6, heads=2, head_dim=3, ffn_dim=8, seed=1)
    for layer in (edge, label):
        layer.b.data = rng.normal(size=layer.b.shape)
    lengths = [5, 3]
    return {
        "embedding": (emb, lambda: emb(words, tags)),
        "bilstm": (lstm, lambda: lstm(x4, lengths)),
        "mlp": (mlp, lambda: mlp(x6)),
        "biaffine-edge": (edge, lambda: edge(x6, x6)),
        "biaffine-label": (label, lambda: label(x6, x6)),
        "self-attention": (attn, lambda: attn(x6, lengths)),
    }


def test_criterion_01_gradient_integrity():
    start = time.perf_counter()
    worst, fewest, failures = 0.0, 10**9, []
    for name, (layer, forward) in _layer_cases().items():
        for kind in ("bce", "ce", "mse"):
            res = ad.gradcheck(lambda: _to_loss(kind, forward()), layer.params, n_coords=60, h=1e-4, seed=3)
            worst = max(worst, res["rel_error"])
            fewest = min(fewest, res["n_coords"])
            if res["rel_error"] >= 1e-4:
                failures.append(f"{name}/{kind}={res['rel_error']:.2e}")
    secs = _elapsed(start)
    ok = not failures and fewest >= 50 and secs < 60
    record(1, ok, f"18 checks, worst rel error {worst:.2e}, min coords {fewest}, {secs:.1f}s"
           + (f", failing {failures}" if failures else ""))
    assert ok


# ---------------------------------------------------------------------------
# 2. overfit capacity


def test_criterion_02_overfit():
    start = time.perf_counter()
    tb = tg.source_treebank(50, 7)
    cfg = P.ParserConfig(**{**TOY, "lstm_layers": 2, "lr": 5e-3, "batch_size": 10, "epochs": 100})
    m = P.evaluate(P.train_parser(tb, cfg, seed=0), tb)
    secs = _elapsed(start)
    ok = m.uas >= 0.95 and m.las >= 0.90 and secs < 300
    record(2, ok, f"train UAS {m.uas:.4f} LAS {m.las:.4f} after {cfg.epochs} epochs, {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. teacher learnability


def test_criterion_03_teacher_learnability():
    start = time.perf_counter()
    rules = tg.pair_deterministic_rules()
    train, held = tg.target_treebank(300, 21, rules), tg.target_treebank(100, 22, rules)
    model = T.train_teacher(train, TOY_TEACHER, seed=0, heldout=held)
    secs = _elapsed(start)
    ok = model.heldout_accuracy >= 0.99 and secs < 300
    record(3, ok, f"held-out order accuracy {model.heldout_accuracy:.4f} on {len(held)} sentences, {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. order-label convention


def test_criterion_04_label_convention():
    rng = random.Random(2024)
    trees = [random_tree(rng, rng.randint(1, 15)) for _ in range(1000)]
    checked = bad = 0
    for s in trees:
        for inst in T.extract_instances(Treebank((s,))):
            checked += 1
            bad += (inst.y == 0) != (inst.dep < inst.head)
    expected = sum(len(s) - 1 for s in trees)
    ok = bad == 0 and checked == expected
    record(4, ok, f"{checked} instances from 1000 random trees, {bad} violations")
    assert ok


# ---------------------------------------------------------------------------
# 5. typology metric


def test_criterion_05_typology_metric():
    rng = np.random.default_rng(5)
    keys = tuple(ty.TripleKey(f"T{i}", "H", "r") for i in range(52))
    vec = lambda: ty.TypologyVector(keys, rng.random(52), np.ones(52))
    violations = 0
    for _ in range(100):
        a, b, c = vec(), vec(), vec()
        d = ty.word_order_distance
        violations += d(a, b) != d(b, a)
        violations += d(a, c) > d(a, b) + d(b, c) + 1e-12
        violations += d(a, b) <= 0 or d(a, a) != 0.0
    rules = tg.flipped_rules(tg.FLIP_ORDER[:5])
    tb = tg.target_treebank(1500, 4, rules)
    rule_keys = [ty.TripleKey(*k) for k in sorted(rules.rules)]
    feat = ty.order_feature(tb, rule_keys)
    expected = np.array([rules.rules[tuple(k)] for k in rule_keys])
    linf = float(np.abs(feat.freqs - expected).max())
    ok = violations == 0 and linf < 0.05 and feat.support.sum() >= 1000
    record(5, ok, f"{violations} axiom violations over 100 triples; corpus of {int(feat.support.sum())} edges "
                  f"within L-inf {linf:.4f} of its rules")
    assert ok


# ---------------------------------------------------------------------------
# 6 and 7. distillation on a synthetic pair


@pytest.fixture(scope="module")
def transfer_runs():
    """Source S, target T with 5 flipped high-frequency triples, three student variants per seed."""
    start = time.perf_counter()
    src = tg.source_treebank(200, 1)
    rules_t = tg.flipped_rules(tg.FLIP_ORDER[:5])
    tgt_train, tgt_test = tg.target_treebank(200, 2, rules_t), tg.target_treebank(200, 3, rules_t)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        triples = ty.select_triples([src, tgt_train], 52)
    target_vec = ty.order_feature(tgt_test, triples)
    pcfg = P.ParserConfig(**TOY)
    runs = []
    for seed in SEEDS:
        backbone = P.train_parser(src, pcfg, seed)
        teacher = T.train_teacher(T.find_heads(backbone, tgt_train), TOY_TEACHER, seed)
        row = {"seed": seed, "teacher_acc": T.order_accuracy(teacher, tgt_test)}
        for variant in D.VARIANTS:
            cfg = D.DistillConfig(**TOY, order_mlp=32, lambda2=0.001, variant=variant)
            student = D.train_student(src, teacher, cfg, seed)
            m = P.evaluate(student.parser, tgt_test)
            dist = ty.word_order_distance(ty.predicted_order_frequency(student, src, triples), target_vec)
            row[variant] = {"uas": m.uas, "las": m.las, "distance": dist}
        runs.append(row)
    return runs, _elapsed(start)


def test_criterion_06_distillation_effect(transfer_runs):
    runs, secs = transfer_runs
    closer = [r["kd"]["distance"] < r["wol"]["distance"] for r in runs]
    uas_ok = [r["kd"]["uas"] >= r["wol"]["uas"] for r in runs]
    ok = all(closer) and sum(uas_ok) >= 2 and secs < 1200
    dist = ", ".join(f"{r['kd']['distance']:.3f}/{r['wol']['distance']:.3f}" for r in runs)
    uas = ", ".join(f"{r['kd']['uas']:.4f}/{r['wol']['uas']:.4f}" for r in runs)
    record(6, ok, f"distance kd/wol per seed [{dist}]; target UAS kd/wol [{uas}] "
                  f"(kd >= wol in {sum(uas_ok)}/3); {secs:.0f}s")
    assert ok


def test_criterion_07_soft_beats_hard(transfer_runs):
    runs, _ = transfer_runs
    kd = float(np.mean([r["kd"]["uas"] for r in runs]))
    pseudo = float(np.mean([r["pseudo"]["uas"] for r in runs]))
    ok = kd >= pseudo
    record(7, ok, f"mean target UAS kd {kd:.4f} vs pseudo {pseudo:.4f}, gap {kd - pseudo:+.4f} "
                  f"(within seed noise at this scale)")
    assert ok


# ---------------------------------------------------------------------------
# 8. lambda2 = 0 reduction


def test_criterion_08_lambda2_zero():
    src = tg.source_treebank(50, 3)
    teacher = T.TeacherVariant("rand", seed=ad.sub_seed(4, "rand-teacher"))
    cfg = D.DistillConfig(**{**TOY, "epochs": 5}, order_mlp=32, lambda2=0.0, variant="kd")
    student = D.train_student(src, teacher, cfg, seed=4)
    backbone = P.train_parser(src, cfg.parser_config(), seed=4)
    same_curve = student.loss_history == backbone.loss_history
    same_params = all(p.data.tobytes() == student.params[k].data.tobytes() for k, p in backbone.params.items())
    ok = same_curve and same_params
    record(8, ok, f"{len(student.loss_history)} epoch losses bit-identical: {same_curve}; "
                  f"shared parameters bit-identical: {same_params}")
    assert ok


# ---------------------------------------------------------------------------
# 9. determinism of every subcommand

SUBCOMMAND_CONFIG = """\
word_dim = 8
pos_dim = 8
lstm_hidden = 8
lstm_layers = 1
mlp_dim = 8
attn_heads = 2
attn_head_dim = 4
ffn_dim = 8
epochs = 2
lr = 0.003
batch_size = 8
seeds = 1,2
output_dir = out
"""


def _run_all_subcommands(root):
    save_conllu(tg.source_treebank(30, 1), root / "src.conllu")
    save_conllu(tg.target_treebank(30, 2, tg.flipped_rules(tg.FLIP_ORDER[:5])), root / "tgt.conllu")
    for n in (2, 8):
        save_conllu(tg.target_treebank(30, 2 + n, tg.flipped_rules(tg.FLIP_ORDER[:n])), root / f"flip{n}.conllu")
    tg.flipped_rules(tg.FLIP_ORDER[:3]).save(root / "flip.rules")
    (root / "exp.cfg").write_text(SUBCOMMAND_CONFIG)
    common = ["--config", "exp.cfg"]
    calls = [
        ["train-parser", *common, "--source", "src.conllu", "--target", "tgt.conllu,flip2.conllu,flip8.conllu"],
        ["train-teacher", *common, "--target", "tgt.conllu", "--parser-model", "out/parser.seed{seed}.bin"],
        ["train-student", *common, "--source", "src.conllu", "--target", "tgt.conllu",
         "--teacher", "out/teacher.seed{seed}.bin"],
        ["train-student", *common, "--source", "src.conllu", "--target", "tgt.conllu", "--variant", "wol"],
        ["evaluate", *common, "--model", "out/student-kd.seed1.bin", "--treebank", "tgt.conllu",
         "--output", "out/eval.json"],
        ["typology", *common, "src.conllu", "tgt.conllu"],
        ["synth", *common, "--treebank", "src.conllu", "--rules", "flip.rules", "--seed", "5",
         "--output", "out/synth.conllu"],
        ["analyze", *common, "out/train-parser.report.jsonl", "out/train-student-kd.report.jsonl"],
    ]
    return [cli.main(c) for c in calls]


def _comparable(path):
    if path.name.endswith(".jsonl"):
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        for line in lines:
            line.pop("wall_clock_s", None)
        return json.dumps(lines, sort_keys=True).encode()
    return path.read_bytes()


def test_criterion_09_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    codes = []
    for name in ("first", "second"):
        root = tmp_path / name
        root.mkdir()
        monkeypatch.chdir(root)
        codes.append(_run_all_subcommands(root))
    first = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*") if p.is_file())
    second = sorted(p.relative_to(tmp_path / "second") for p in (tmp_path / "second").rglob("*") if p.is_file())
    differing = [str(p) for p in first
                 if _comparable(tmp_path / "first" / p) != _comparable(tmp_path / "second" / p)]
    ok = codes[0] == codes[1] == [0] * 8 and first == second and not differing
    record(9, ok, f"8 subcommand runs twice, {len(first)} output files compared, "
                  f"{len(differing)} differ (wall-clock excluded), exit codes {codes[0]}"
                  + (f": {differing}" if differing else ""))
    assert ok


# ---------------------------------------------------------------------------
# 10. correlation tooling


def test_criterion_10_correlation(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    monkeypatch.chdir(tmp_path)
    lines = ["language,distance,uas,las"] + [f"d{i},{0.07 * i},{0.9 - 0.11 * i},0.5" for i in range(6)]
    (tmp_path / "neg.csv").write_text("\n".join(lines) + "\n")
    lines = ["language,distance,uas,las"] + [f"u{i},{0.05 * i},{0.3 + 0.02 * i},0.5" for i in range(6)]
    (tmp_path / "pos.csv").write_text("\n".join(lines) + "\n")
    assert cli.main(["analyze", "neg.csv", "--output-dir", "neg"]) == 0
    assert cli.main(["analyze", "pos.csv", "--output-dir", "pos"]) == 0
    r_neg = json.loads((tmp_path / "neg" / "analyze.json").read_text())["distance_vs_uas"]["r"]
    r_pos = json.loads((tmp_path / "pos" / "analyze.json").read_text())["distance_vs_uas"]["r"]

    save_conllu(tg.source_treebank(200, 1), tmp_path / "src.conllu")
    flips = (0, 2, 4, 6, 8)
    targets = []
    for n in flips:
        save_conllu(tg.target_treebank(200, 30 + n, tg.flipped_rules(tg.FLIP_ORDER[:n])), tmp_path / f"flip{n}.conllu")
        targets.append(f"flip{n}.conllu")
    (tmp_path / "exp.cfg").write_text(_cli_config(TOY, seeds="0,1,2"))
    assert cli.main(["train-parser", "--config", "exp.cfg", "--source", "src.conllu",
                     "--target", ",".join(targets), "--output-dir", "flips"]) == 0
    assert cli.main(["analyze", "flips/train-parser.report.jsonl", "--output-dir", "flips"]) == 0
    r_flip = json.loads((tmp_path / "flips" / "analyze.json").read_text())["distance_vs_uas"]["r"]
    points = (tmp_path / "flips" / "analyze.points.csv").read_text().splitlines()[1:]
    ok = abs(r_neg + 1) < 1e-9 and abs(r_pos - 1) < 1e-9 and r_flip < 0
    record(10, ok, f"collinear r = {r_neg:.12f} / {r_pos:.12f}; distance vs UAS over {len(points)} "
                   f"synthetic targets r = {r_flip:.4f}")
    assert ok
