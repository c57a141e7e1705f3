"""Command-line entry point: generate, train, eval, transfer, ablate, analyze, sweep.

Every setting can come from a TOML config file (top-level keys or any
section, keys spelled like the long flags with ``_`` for ``-``); a flag on
the command line wins over the file. All outputs land in ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import (
    dataset_relation_similarity,
    gamma_sweep,
    graph_structure_stats,
    rule_frames,
    similarity_csv,
    similarity_json,
    sweep_csv,
    sweep_json,
)
from .evaluation import evaluate, reports_to_csv, run_transfer
from .pipeline import EXTRACTORS, SPATIAL_KINDS, TEMPORAL_KINDS, ModelBundle, ModelConfig, train
from .scene import domain_config, generate_synthetic, load_dataset, save_dataset, split
from .scene.objects import Dataset

log = logging.getLogger("rs2g")

COMMANDS = ("generate", "train", "eval", "transfer", "ablate", "analyze", "sweep")

# (flag, type, default, help). A default of None means "unset"; required
# fields are checked per command after config and flags are merged.
SETTINGS: list[tuple[str, Callable, object, str]] = [
    ("dataset", str, None, "dataset file (JSON lines)"),
    ("out", str, None, "output directory for this run"),
    ("seed", int, None, "seed for generation, splitting, initialization and shuffling"),
    ("extractor", str, "rs2g-2d", "graph extractor"),
    ("gamma", float, 0.5, "edge threshold for learned graphs"),
    ("pool-ratio", float, 0.5, "SAGPool keep ratio"),
    ("epochs", int, 50, "training epochs"),
    ("lr", float, 1e-3, "learning rate"),
    ("relations", int, 12, "learned relation count"),
    ("spatial", str, "mrgcn", "spatial model"),
    ("temporal", str, "lstm-attn", "temporal model"),
    ("readout", str, "mean", "graph readout: mean, sum or max"),
    ("optimizer", str, "adam", "adam or sgd"),
    ("reweight", bool, False, "inverse-frequency class weights in the loss"),
    ("train-fraction", float, 0.7, "share of sequences used for training"),
    ("domain", str, "A", "generator domain tag (A or B)"),
    ("n-sequences", int, 300, "sequences to generate"),
    ("risky-ratio", float, 0.25, "target share of risky sequences"),
    ("checkpoint", str, None, "model checkpoint file"),
    ("target-dataset", str, None, "shifted-domain dataset for transfer"),
    ("subset", str, "test", "which split to evaluate: test, train or all"),
    ("gammas", str, "0.25,0.5,0.75", "comma-separated thresholds for sweep"),
    ("grid-extractors", str, "rule,rs2g-2d", "ablation extractors"),
    ("grid-spatial", str, "mrgcn,mlp", "ablation spatial models"),
    ("grid-temporal", str, "lstm-attn,mean", "ablation temporal models"),
]
CHOICES = {
    "extractor": EXTRACTORS,
    "spatial": SPATIAL_KINDS,
    "temporal": TEMPORAL_KINDS,
    "readout": ("mean", "sum", "max"),
    "optimizer": ("adam", "sgd"),
    "subset": ("test", "train", "all"),
}
REQUIRED = {
    "generate": ("out", "seed"),
    "train": ("dataset", "out", "seed"),
    "eval": ("dataset", "checkpoint", "out", "seed"),
    "transfer": ("dataset", "target_dataset", "out", "seed"),
    "ablate": ("dataset", "out", "seed"),
    "analyze": ("dataset", "checkpoint", "out", "seed"),
    "sweep": ("dataset", "checkpoint", "out", "seed"),
}


class UsageError(Exception):
    pass


def _key(flag: str) -> str:
    return flag.replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rs2g", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="TOML file with default settings")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    for flag, typ, default, text in SETTINGS:
        help_text = f"{text} (default: {default})" if default is not None else text
        if typ is bool:
            parser.add_argument(f"--{flag}", dest=_key(flag), action=argparse.BooleanOptionalAction,
                                default=None, help=help_text)
        else:
            parser.add_argument(f"--{flag}", dest=_key(flag), type=typ, default=None,
                                choices=CHOICES.get(flag), help=help_text)
    return parser


def _read_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    flat: dict = {}
    for k, v in raw.items():
        items = v.items() if isinstance(v, dict) else [(k, v)]
        for kk, vv in items:
            flat[_key(kk)] = vv
    known = {_key(f): (typ, f) for f, typ, _, _ in SETTINGS}
    out = {}
    for k, v in flat.items():
        if k not in known:
            raise UsageError(f"config file {path}: unknown setting {k!r}")
        typ, flag = known[k]
        if typ is bool and not isinstance(v, bool):
            raise UsageError(f"config setting {k!r} must be true or false")
        try:
            v = typ(v)
        except (TypeError, ValueError):
            raise UsageError(f"config setting {k!r}: cannot read {v!r} as {typ.__name__}") from None
        if flag in CHOICES and v not in CHOICES[flag]:
            raise UsageError(f"config setting {k!r} must be one of {CHOICES[flag]}, got {v!r}")
        out[k] = v
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults < config file < command-line flags."""
    settings = {_key(f): d for f, _, d, _ in SETTINGS}
    if args.config:
        settings.update(_read_config(args.config))
    for f, *_ in SETTINGS:
        v = getattr(args, _key(f))
        if v is not None:
            settings[_key(f)] = v
    missing = [k for k in REQUIRED[args.command] if settings.get(k) is None]
    if missing:
        names = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"{args.command}: missing required field(s): {names}")
    return settings


# ------------------------------------------------------------------ helpers


def _model_config(s: dict, **overrides) -> ModelConfig:
    cfg = ModelConfig(extractor=s["extractor"], relations=s["relations"], gamma=s["gamma"],
                      pool_ratio=s["pool_ratio"], spatial=s["spatial"], readout=s["readout"],
                      temporal=s["temporal"], init_seed=s["seed"])
    return replace(cfg, **overrides) if overrides else cfg


def _load(path: str) -> Dataset:
    if not Path(path).is_file():
        raise UsageError(f"dataset not found: {path}")
    return load_dataset(path)


def _parts(s: dict, ds: Dataset):
    return split(ds, s["train_fraction"], seed=s["seed"])


def _subset(s: dict, ds: Dataset):
    if s["subset"] == "all":
        return list(ds)
    tr, te = _parts(s, ds)
    return list(tr if s["subset"] == "train" else te)


def _domain(seqs) -> str:
    return "+".join(sorted({q.domain_tag for q in seqs}))


def _fit(s: dict, cfg: ModelConfig, train_set) -> tuple[ModelBundle, list[float]]:
    model = ModelBundle(cfg)
    progress = (lambda e, l: log.info("%s epoch %d loss %.6f", cfg.extractor, e, l))
    result = train(model, train_set, epochs=s["epochs"], lr=s["lr"], seed=s["seed"],
                   adam=s["optimizer"] == "adam", reweight=s["reweight"], progress=progress)
    return result.model, result.loss_curve


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _loss_csv(curve: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(curve):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def _split_list(text: str, allowed: Sequence[str], name: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if bad or not items:
        raise UsageError(f"--{name} entries must come from {tuple(allowed)}, got {text!r}")
    return items


# ----------------------------------------------------------------- commands


def cmd_generate(s: dict, out: Path) -> None:
    cfg = domain_config(s["domain"])
    ds = generate_synthetic(cfg, s["n_sequences"], s["risky_ratio"], s["seed"])
    save_dataset(ds, out / "dataset.jsonl")
    log.info("generated %d sequences (%d risky)", len(ds), sum(ds.labels))


def cmd_train(s: dict, out: Path) -> None:
    ds = _load(s["dataset"])
    tr, te = _parts(s, ds)
    model, curve = _fit(s, _model_config(s), tr)
    model.save(out / "model.json")
    _write(out, "loss_curve.csv", _loss_csv(curve))
    report = evaluate(model, te, _domain(tr), _domain(te))
    _write(out, "report.json", report.to_json())
    _write(out, "report.csv", report.to_csv())


def cmd_eval(s: dict, out: Path) -> None:
    model = ModelBundle.load(s["checkpoint"])
    ds = _load(s["dataset"])
    train_domain = _domain(_parts(s, ds)[0]) if s["subset"] != "all" else ""
    seqs = _subset(s, ds)
    report = evaluate(model, seqs, train_domain, _domain(seqs))
    _write(out, "report.json", report.to_json())
    _write(out, "report.csv", report.to_csv())


def cmd_transfer(s: dict, out: Path) -> None:
    source, target = _load(s["dataset"]), _load(s["target_dataset"])
    tr, te = _parts(s, source)
    src_tag, tgt_tag = _domain(tr), _domain(target)
    reports, summary = [], {}
    extractors = ["rule"] + ([s["extractor"]] if s["extractor"] != "rule" else [])
    for ext in extractors:
        model, _ = _fit(s, _model_config(s, extractor=ext), tr)
        in_domain = evaluate(model, te, src_tag, _domain(te))
        shifted = run_transfer(model, target, src_tag)
        reports += [in_domain, shifted]
        summary[ext] = {"source_test": in_domain.to_dict(), "target": shifted.to_dict(),
                        "accuracy_degradation": in_domain.accuracy - shifted.accuracy}
    _write(out, "transfer.csv", reports_to_csv(reports))
    _write(out, "transfer.json", json.dumps({"source_domain": src_tag, "target_domain": tgt_tag,
                                             "extractors": summary}, sort_keys=True, indent=1))


def cmd_ablate(s: dict, out: Path) -> None:
    ds = _load(s["dataset"])
    tr, te = _parts(s, ds)
    grid = [(e, sp, tm)
            for e in _split_list(s["grid_extractors"], EXTRACTORS, "grid-extractors")
            for sp in _split_list(s["grid_spatial"], SPATIAL_KINDS, "grid-spatial")
            for tm in _split_list(s["grid_temporal"], TEMPORAL_KINDS, "grid-temporal")]
    reports = []
    for e, sp, tm in grid:
        model, _ = _fit(s, _model_config(s, extractor=e, spatial=sp, temporal=tm), tr)
        reports.append(evaluate(model, te, _domain(tr), _domain(te)))
    _write(out, "ablation.csv", reports_to_csv(reports))


def _learned_checkpoint(path: str) -> ModelBundle:
    model = ModelBundle.load(path)
    if not model.learned:
        raise UsageError(f"{path} holds a rule-based model; this command needs a learned extractor")
    return model


def cmd_analyze(s: dict, out: Path) -> None:
    model = _learned_checkpoint(s["checkpoint"])
    seqs = _subset(s, _load(s["dataset"]))
    names = model.rule_config.relation_names
    matrix = dataset_relation_similarity(model, seqs, model.rule_config)
    _write(out, "similarity.csv", similarity_csv(matrix, names))
    _write(out, "similarity.json", similarity_json(matrix, names))


def cmd_sweep(s: dict, out: Path) -> None:
    model = _learned_checkpoint(s["checkpoint"])
    seqs = _subset(s, _load(s["dataset"]))
    try:
        gammas = [float(g) for g in s["gammas"].split(",") if g.strip()]
    except ValueError:
        raise UsageError(f"--gammas must be comma-separated numbers, got {s['gammas']!r}") from None
    points = gamma_sweep(model, seqs, gammas)
    rule_stats = graph_structure_stats(rule_frames(seqs, model.rule_config))
    _write(out, "sweep.csv", sweep_csv(points, rule_stats, model.config.extractor))
    _write(out, "sweep.json", sweep_json(points, rule_stats))


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "transfer": cmd_transfer,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        settings = resolve_settings(args)
        out = Path(settings["out"])
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](settings, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rs2g: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any failure must surface as a nonzero exit
        log.debug("failure", exc_info=True)
        print(f"rs2g: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
