"""Command-line experiment harness.

Subcommands: train-parser, train-teacher, train-student, evaluate, typology,
synth, analyze. Settings come from a flat ``key = value`` config file and
per-key flags (flag > environment > file > default for the output directory,
flag > file > default for everything else).

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import statistics
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import parser as P
from . import teacher as T
from . import typology as ty
from .distill import VARIANTS, DistillConfig, StudentModel, train_student
from .autodiff import load_tensors
from .treebank import ConlluError, RuleSet, Treebank, read_conllu, reorder_treebank, save_conllu

logger = logging.getLogger("orderkd")

OUTPUT_ENV = "ORDERKD_OUTPUT_DIR"


class UsageError(Exception):
    """Bad config, bad flags or unusable input files (exit code 2)."""


@dataclass
class ExperimentConfig:
    # paths
    source: str = ""
    target: str = ""  # comma-separated list; teachers use exactly one
    parser_model: str = ""  # may contain {seed}
    teacher: str = ""  # rand, heur, or a model path that may contain {seed}
    output_dir: str = "runs"
    # parser
    word_dim: int = 100
    pos_dim: int = 50
    lstm_hidden: int = 100
    lstm_layers: int = 2
    mlp_dim: int = 100
    dropout: float = 0.0
    batch_size: int = 32
    epochs: int = 50
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.9
    weight_decay: float = 1e-5
    lambda1: float = 1.0
    lambda2: float = 0.001
    # teacher
    attn_layers: int = 1
    attn_heads: int = 4
    attn_head_dim: int = 16
    ffn_dim: int = 100
    teacher_heads: str = "predicted"  # or gold
    heldout_fraction: float = 0.1
    # runs
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3])
    variant: str = "kd"
    # typology
    k: int = 52
    normalize: bool = True

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise UsageError("seeds must list at least one seed")
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {', '.join(VARIANTS)}")
        if self.teacher_heads not in ("predicted", "gold"):
            raise UsageError("teacher_heads must be 'predicted' or 'gold'")
        for name in ("word_dim", "pos_dim", "lstm_hidden", "lstm_layers", "mlp_dim", "batch_size",
                     "epochs", "attn_layers", "attn_heads", "attn_head_dim", "ffn_dim", "k"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        for name in ("lr", "lambda1", "lambda2", "weight_decay", "dropout"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        return self

    @property
    def targets(self) -> List[str]:
        return [t.strip() for t in self.target.split(",") if t.strip()]

    def parser_config(self) -> P.ParserConfig:
        return P.ParserConfig(word_dim=self.word_dim, pos_dim=self.pos_dim, lstm_hidden=self.lstm_hidden,
                              lstm_layers=self.lstm_layers, edge_mlp=self.mlp_dim, label_mlp=self.mlp_dim,
                              dropout=self.dropout, batch_size=self.batch_size, epochs=self.epochs,
                              lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                              weight_decay=self.weight_decay, lambda1=self.lambda1)

    def distill_config(self) -> DistillConfig:
        return DistillConfig(**asdict(self.parser_config()), order_mlp=self.mlp_dim,
                             lambda2=self.lambda2, variant=self.variant)

    def teacher_config(self) -> T.TeacherConfig:
        return T.TeacherConfig(pos_dim=self.pos_dim, attn_layers=self.attn_layers, attn_heads=self.attn_heads,
                               attn_head_dim=self.attn_head_dim, ffn_dim=self.ffn_dim, mlp_dim=self.mlp_dim,
                               batch_size=self.batch_size, epochs=self.epochs, lr=self.lr, beta1=self.beta1,
                               beta2=self.beta2, weight_decay=self.weight_decay, dropout=self.dropout,
                               heldout_fraction=self.heldout_fraction)


FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    default = getattr(ExperimentConfig(), name)
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [int(s) for s in raw.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"bad value for {name}: {raw!r}") from None
    return raw.strip()


def parse_config_text(text: str, origin: str = "<config>") -> Dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out: Dict[str, object] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{origin}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FIELDS:
            raise UsageError(f"{origin}:{n}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name, value in asdict(cfg).items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{name} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values: Dict[str, object] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(), str(path)))
    if os.environ.get(OUTPUT_ENV):
        values["output_dir"] = os.environ[OUTPUT_ENV]
    for name in FIELDS:
        flag = getattr(args, f"cfg_{name}", None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    return ExperimentConfig(**values).validate()


# ---------------------------------------------------------------------------
# input helpers


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} path not set")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _read_treebank(path: Path, keep_language: bool = False) -> Treebank:
    """Read CoNLL-U; reports name each treebank after its file stem."""
    try:
        tb = read_conllu(path)
    except ConlluError as err:
        raise UsageError(f"{path}: {err}") from None
    if keep_language:
        return tb
    return Treebank(tb.sentences, path.stem)


def _seeded(template: str, seed: int) -> str:
    return template.replace("{seed}", str(seed))


def _language_vectors(src: Treebank, tgt: Treebank, cfg: ExperimentConfig):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        triples = ty.select_triples([src, tgt], cfg.k)
    return triples, ty.order_feature(src, triples), ty.order_feature(tgt, triples)


# ---------------------------------------------------------------------------
# reports


def aggregate(entries: Sequence[dict]) -> Dict[str, Dict[str, float]]:
    """Mean and sample standard deviation of every numeric per-seed metric."""
    keys = sorted({k for e in entries for k in e["metrics"]})
    out = {}
    for key in keys:
        vals = [e["metrics"][key] for e in entries if key in e["metrics"]]
        out[key] = {"mean": statistics.fmean(vals), "std": statistics.stdev(vals) if len(vals) > 1 else 0.0,
                    "n": len(vals)}
    return out


def render_table(agg: Dict[str, Dict[str, float]]) -> str:
    """Language rows with UAS/LAS (and any other metric) as mean +- std percentages."""
    rows: Dict[str, Dict[str, str]] = {}
    cols: List[str] = []
    for key, stat in agg.items():
        lang, metric = key.split("/", 1) if "/" in key else ("-", key)
        scale = 100.0 if metric in ("uas", "las", "order_acc") else 1.0
        rows.setdefault(lang, {})[metric] = f"{stat['mean'] * scale:.2f}+-{stat['std'] * scale:.2f}"
        if metric not in cols:
            cols.append(metric)
    order = [c for c in ("uas", "las") if c in cols] + sorted(c for c in cols if c not in ("uas", "las"))
    width = max([len("language")] + [len(r) for r in rows])
    lines = ["language".ljust(width) + "".join(f"  {c.upper():>16}" for c in order)]
    for lang in sorted(rows):
        lines.append(lang.ljust(width) + "".join(f"  {rows[lang].get(c, '-'):>16}" for c in order))
    return "\n".join(lines) + "\n"


def write_report(out_dir: Path, name: str, cfg: ExperimentConfig, entries: List[dict]) -> dict:
    agg = aggregate(entries)
    lines = [{"type": "config", "command": name, "config": asdict(cfg)}]
    lines += [{"type": "seed", **e} for e in entries]
    lines.append({"type": "aggregate", "metrics": agg})
    text = "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)
    (out_dir / f"{name}.report.jsonl").write_text(text)
    (out_dir / f"{name}.report.txt").write_text(render_table(agg))
    return {"entries": entries, "aggregate": agg}


def read_report(path: Path) -> List[dict]:
    entries = []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}:{n}: not JSON ({err.msg})") from None
        if obj.get("type") == "seed":
            entries.append(obj)
    return entries


def _timed(fn):
    start = time.perf_counter()
    metrics = fn()
    return metrics, round(time.perf_counter() - start, 3)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_parser(cfg: ExperimentConfig, args) -> int:
    src = _read_treebank(_require_file(cfg.source, "source treebank"))
    targets = [_read_treebank(_require_file(t, "target treebank")) for t in cfg.targets]
    out = _prepare_out(cfg)
    entries = []
    for seed in cfg.seeds:
        def run():
            model = P.train_parser(src, cfg.parser_config(), seed)
            model.save(out / f"parser.seed{seed}.bin")
            m = P.evaluate(model, src)
            metrics = {f"{src.language}/uas": m.uas, f"{src.language}/las": m.las,
                       "final_loss": model.loss_history[-1]}
            for tgt in targets:
                m = P.evaluate(model, tgt)
                _, fs, ft = _language_vectors(src, tgt, cfg)
                metrics.update({f"{tgt.language}/uas": m.uas, f"{tgt.language}/las": m.las,
                                f"{tgt.language}/distance": ty.word_order_distance(fs, ft, cfg.normalize)})
            return metrics

        metrics, wall = _timed(run)
        entries.append({"seed": seed, "metrics": metrics, "wall_clock_s": wall})
    write_report(out, "train-parser", cfg, entries)
    return 0


def cmd_train_teacher(cfg: ExperimentConfig, args) -> int:
    if len(cfg.targets) != 1:
        raise UsageError("train-teacher needs exactly one target treebank")
    tgt = _read_treebank(_require_file(cfg.targets[0], "target treebank"))
    if cfg.teacher_heads == "predicted":
        for seed in cfg.seeds:
            _require_file(_seeded(cfg.parser_model, seed), "parser model")
    out = _prepare_out(cfg)
    entries = []
    for seed in cfg.seeds:
        def run():
            if cfg.teacher_heads == "predicted":
                parser = P.ParserModel.load(_seeded(cfg.parser_model, seed))
                train_tb = T.find_heads(parser, tgt)
            else:
                train_tb = tgt
            model = T.train_teacher(train_tb, cfg.teacher_config(), seed)
            model.save(out / f"teacher.seed{seed}.bin")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                triples = ty.select_triples([tgt], cfg.k)
            pred = ty.predicted_order_frequency(model, tgt, triples)
            gold = ty.order_feature(tgt, triples)
            return {"heldout_order_acc": model.heldout_accuracy,
                    f"{tgt.language}/order_acc": T.order_accuracy(model, tgt),
                    f"{tgt.language}/teacher_distance": ty.word_order_distance(pred, gold, cfg.normalize),
                    "final_loss": model.loss_history[-1]}

        metrics, wall = _timed(run)
        entries.append({"seed": seed, "metrics": metrics, "wall_clock_s": wall})
    write_report(out, "train-teacher", cfg, entries)
    return 0


def _teacher_for(cfg: ExperimentConfig, seed: int, target: Optional[Treebank], source: Treebank):
    if cfg.variant == "wol":
        return None
    if cfg.teacher == "rand":
        from .autodiff import sub_seed

        return T.TeacherVariant("rand", seed=sub_seed(seed, "rand-teacher"))
    if cfg.teacher == "heur":
        if target is None:
            raise UsageError("the heur teacher needs a target treebank")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            triples = ty.select_triples([source, target], cfg.k)
        return T.heur_teacher(target, triples)
    return T.load_teacher(_seeded(cfg.teacher, seed))


def cmd_train_student(cfg: ExperimentConfig, args) -> int:
    src = _read_treebank(_require_file(cfg.source, "source treebank"))
    targets = [_read_treebank(_require_file(t, "target treebank")) for t in cfg.targets]
    if cfg.variant != "wol":
        if not cfg.teacher:
            raise UsageError(f"variant {cfg.variant} needs a teacher (rand, heur or a model path)")
        if cfg.teacher not in ("rand", "heur"):
            for seed in cfg.seeds:
                _require_file(_seeded(cfg.teacher, seed), "teacher model")
        elif cfg.teacher == "heur" and not targets:
            raise UsageError("the heur teacher needs a target treebank")
    out = _prepare_out(cfg)
    entries = []
    for seed in cfg.seeds:
        def run():
            teacher = _teacher_for(cfg, seed, targets[0] if targets else None, src)
            model = train_student(src, teacher, cfg.distill_config(), seed)
            model.save(out / f"student-{cfg.variant}.seed{seed}.bin")
            m = P.evaluate(model.parser, src)
            metrics = {f"{src.language}/uas": m.uas, f"{src.language}/las": m.las,
                       "final_loss": model.loss_history[-1]}
            for tgt in targets:
                m = P.evaluate(model.parser, tgt)
                triples, fs, ft = _language_vectors(src, tgt, cfg)
                pred = ty.predicted_order_frequency(model, src, triples)
                metrics.update({f"{tgt.language}/uas": m.uas, f"{tgt.language}/las": m.las,
                                f"{tgt.language}/distance": ty.word_order_distance(fs, ft, cfg.normalize),
                                f"{tgt.language}/student_distance":
                                    ty.word_order_distance(pred, ft, cfg.normalize)})
            return metrics

        metrics, wall = _timed(run)
        entries.append({"seed": seed, "metrics": metrics, "wall_clock_s": wall})
    write_report(out, f"train-student-{cfg.variant}", cfg, entries)
    return 0


def _load_model(path: Path):
    try:
        _, meta = load_tensors(path)
    except ValueError as err:
        raise UsageError(str(err)) from None
    fmt = meta.get("format")
    if fmt == "orderkd-student":
        return StudentModel.load(path)
    if fmt == "orderkd-parser":
        return P.ParserModel.load(path)
    raise UsageError(f"{path}: cannot evaluate a model of format {fmt!r}")


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    model_path = _require_file(args.model, "model")
    tb = _read_treebank(_require_file(args.treebank, "treebank"))
    model = _load_model(model_path)
    parser = model.parser if isinstance(model, StudentModel) else model
    try:
        pred = P.predict(parser, tb)
    except IndexError as err:
        raise UsageError(f"model and treebank are incompatible: {err}") from None
    m = P.attachment_scores(tb, pred)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        triples = ty.select_triples([tb], cfg.k)
    if isinstance(model, StudentModel):
        vec = ty.predicted_order_frequency(model, tb, triples)
    else:
        vec = ty.order_feature(pred, triples)
    result = {
        "model": str(model_path), "treebank": str(args.treebank), "language": tb.language,
        "uas": m.uas, "las": m.las, "n_tokens": m.n_tokens,
        "typology": [{"dep_upos": k.dep_upos, "head_upos": k.head_upos, "deprel": k.deprel,
                      "left_freq": float(f), "support": int(n)}
                     for k, f, n in zip(vec.keys, vec.freqs, vec.support)],
    }
    text = json.dumps(result, sort_keys=True, indent=1) + "\n"
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_typology(cfg: ExperimentConfig, args) -> int:
    if len(args.treebanks) < 2:
        raise UsageError("typology needs at least two treebanks")
    tbs = [_read_treebank(_require_file(p, "treebank")) for p in args.treebanks]
    names: List[str] = []
    for tb in tbs:
        name, n = tb.language, 2
        while name in names:
            name, n = f"{tb.language}-{n}", n + 1
        names.append(name)
    out = _prepare_out(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        triples = ty.select_triples(tbs, cfg.k)
    vectors = {name: ty.order_feature(tb, triples) for name, tb in zip(names, tbs)}
    for name, vec in vectors.items():
        (out / f"typology.{name}.csv").write_text(vec.to_csv())
    langs, m = ty.distance_matrix(vectors, cfg.normalize)
    (out / "typology.matrix.csv").write_text(ty.matrix_to_csv(langs, m))
    return 0


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    tb = _read_treebank(_require_file(args.treebank, "treebank"), keep_language=True)
    rules_path = _require_file(args.rules, "rule set")
    try:
        rules = RuleSet.load(rules_path)
    except ValueError as err:
        raise UsageError(f"{rules_path}: {err}") from None
    out = reorder_treebank(tb, rules, args.seed, args.language or tb.language)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    save_conllu(out, args.output)
    return 0


def _points_from_reports(paths: Sequence[Path]) -> Dict[str, Dict[str, float]]:
    """Per-language seed means of every metric found in the reports."""
    sums: Dict[str, Dict[str, List[float]]] = {}
    for path in paths:
        for entry in read_report(path):
            for key, value in entry["metrics"].items():
                if "/" in key:
                    lang, metric = key.split("/", 1)
                    sums.setdefault(lang, {}).setdefault(metric, []).append(value)
    return {lang: {m: statistics.fmean(v) for m, v in ms.items()} for lang, ms in sums.items()}


def _points_from_csv(path: Path) -> Dict[str, Dict[str, float]]:
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    if not rows or not {"language", "distance", "uas"} <= set(rows[0]):
        raise UsageError(f"{path}: expected columns language, distance, uas[, las]")
    try:
        return {r["language"]: {k: float(v) for k, v in r.items() if k != "language" and v not in ("", None)}
                for r in rows}
    except ValueError as err:
        raise UsageError(f"{path}: {err}") from None


def _correlate(xs, ys) -> dict:
    r, p = ty.pearson(xs, ys)
    return {"r": r, "p_value": p, "n": len(xs)}


def cmd_analyze(cfg: ExperimentConfig, args) -> int:
    paths = [_require_file(p, "report") for p in args.reports]
    baseline_paths = [_require_file(p, "baseline report") for p in args.baseline]
    if not paths:
        raise UsageError("analyze needs at least one report or points file")
    points: Dict[str, Dict[str, float]] = {}
    for p in paths:
        points.update(_points_from_csv(p) if p.suffix == ".csv" else _points_from_reports([p]))
    langs = sorted(l for l, m in points.items() if "distance" in m and "uas" in m)
    if len(langs) < 3:
        raise UsageError(f"analyze needs at least 3 (distance, uas) points, found {len(langs)}")
    try:
        result = {"distance_vs_uas": _correlate([points[l]["distance"] for l in langs],
                                                [points[l]["uas"] for l in langs])}
    except ValueError as err:
        raise UsageError(str(err)) from None
    if baseline_paths:
        base = _points_from_reports(baseline_paths)
        paired = [l for l in langs if l in base and "student_distance" in points[l] and "uas" in base[l]]
        if len(paired) < 3:
            raise UsageError("reduction analysis needs at least 3 languages in both report sets")
        reduction = [base[l].get("distance", points[l]["distance"]) - points[l]["student_distance"]
                     for l in paired]
        improvement = [points[l]["uas"] - base[l]["uas"] for l in paired]
        try:
            result["reduction_vs_improvement"] = _correlate(reduction, improvement)
        except ValueError as err:
            raise UsageError(str(err)) from None
    out = _prepare_out(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["language", "distance", "uas", "las"])
    for l in langs:
        w.writerow([l, repr(points[l]["distance"]), repr(points[l]["uas"]),
                    repr(points[l]["las"]) if "las" in points[l] else ""])
    (out / "analyze.points.csv").write_text(buf.getvalue())
    (out / "analyze.json").write_text(json.dumps(result, sort_keys=True, indent=1) + "\n")
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "train-parser": cmd_train_parser,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "evaluate": cmd_evaluate,
    "typology": cmd_typology,
    "synth": cmd_synth,
    "analyze": cmd_analyze,
}


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="orderkd", description="Word-order distillation experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    for name in FIELDS:
        common.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", metavar="V",
                            help=argparse.SUPPRESS)
    for name in ("train-parser", "train-teacher", "train-student"):
        sub.add_parser(name, parents=[common], help=f"{name.replace('-', ' ')} for every seed")
    ev = sub.add_parser("evaluate", parents=[common], help="UAS/LAS and typology of one model")
    ev.add_argument("--model", required=True)
    ev.add_argument("--treebank", required=True)
    ev.add_argument("--output", help="also write the JSON here")
    tp = sub.add_parser("typology", parents=[common], help="pairwise word-order distances")
    tp.add_argument("treebanks", nargs="+")
    sy = sub.add_parser("synth", parents=[common], help="reorder a treebank with a rule set")
    sy.add_argument("--treebank", required=True)
    sy.add_argument("--rules", required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--language")
    sy.add_argument("--output", required=True)
    an = sub.add_parser("analyze", parents=[common], help="distance vs performance correlation")
    an.add_argument("reports", nargs="+", help="run reports (.jsonl) or points files (.csv)")
    an.add_argument("--baseline", nargs="*", default=[], help="baseline reports for the reduction analysis")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_arg_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as err:
        print(f"orderkd {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (P.TrainingDiverged, ValueError, OSError) as err:
        print(f"orderkd {args.command}: failed: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
