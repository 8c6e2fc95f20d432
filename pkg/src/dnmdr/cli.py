"""Command-line entry point: ``dnmdr <command> [flags]``.

Exit codes: 0 success, 2 input error, 3 integrity error, 4 domain error.
Every file a command writes lives under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import pipeline
from .config import ABLATIONS, VARIANT_NAMES, RunConfig
from .dynamic_graph import build_dynamic_network, dump_network
from .ehr import parse_visit_lines
from .errors import (
    ConfigError,
    DataError,
    DNMDRError,
    IngestionError,
    IntegrityError,
    MoleculeParseError,
    NumericsError,
    ShapeError,
    VocabularyError,
)

logger = logging.getLogger("dnmdr")

EXIT_OK, EXIT_INPUT, EXIT_INTEGRITY, EXIT_DOMAIN = 0, 2, 3, 4
DEFAULT_GRIDS = {"dim": [64, 128, 256, 512], "gamma": [0.0, 0.5, 2.0]}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, IntegrityError):
        return EXIT_INTEGRITY
    if isinstance(exc, (VocabularyError, DataError, NumericsError, ShapeError)):
        return EXIT_DOMAIN
    if isinstance(exc, (IngestionError, ConfigError, MoleculeParseError, OSError, json.JSONDecodeError)):
        return EXIT_INPUT
    return EXIT_DOMAIN


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_run_config(args) -> RunConfig:
    """Run config from ``--config``, else the one stored with the bundle, with flag overrides applied."""
    if args.config is not None:
        if not Path(args.config).is_file():
            raise IngestionError("config file not found", args.config)
        config = RunConfig.from_file(args.config)
    else:
        stored = Path(args.out) / "bundle" / "run_config.json"
        if not stored.is_file():
            raise ConfigError("no --config given and no prepared bundle under --out")
        config = RunConfig.from_dict(json.loads(stored.read_text(encoding="utf-8")))
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    overrides = {k: getattr(args, k) for k in ("threshold", "gamma", "dim", "ablation", "epochs", "lr")
                 if getattr(args, k, None) is not None}
    return config.with_model(**overrides) if overrides else config


def _train_and_report(bundle, config: RunConfig, out: Path, resume: bool = False):
    fit = pipeline.fit(bundle, config.model, config.seed, out, resume=resume,
                       on_epoch=lambda log: logger.info("epoch %d total %.4f val_jaccard %.4f",
                                                        log.epoch, log.total, log.extra["val_jaccard"]))
    report = pipeline.evaluate_split(fit.model, bundle, "test", config.rounds, config.seed,
                                     conventional_pr=config.conventional_pr)
    return fit, report


# -- commands ---------------------------------------------------------------

def cmd_prepare(args) -> int:
    config = load_run_config(args)
    config_dir = Path(args.config).parent if args.config else None
    manifest = pipeline.prepare_bundle(config, args.out, config_dir)
    print(f"bundle written to {Path(args.out) / 'bundle'} (vocab {manifest['vocab_hash'][:12]}, "
          f"patients {manifest['patients']})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args)
    bundle = pipeline.load_bundle(args.out)
    fit = pipeline.fit(bundle, config.model, config.seed, args.out, resume=args.resume,
                       on_epoch=lambda log: print(json.dumps(log.to_dict())))
    print(f"best epoch {fit.best_epoch} val jaccard {fit.best_val_jaccard:.4f} ({config.model.variant})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = load_run_config(args)
    bundle = pipeline.load_bundle(args.out)
    model, _ = pipeline.load_model(args.checkpoint or Path(args.out) / "checkpoint.pt", bundle)
    report = pipeline.evaluate_split(model, bundle, args.split, config.rounds, config.seed,
                                     threshold=args.threshold, conventional_pr=config.conventional_pr)
    out = Path(args.out)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.summary_line() + "\n", encoding="utf-8")
    print(report.summary_line())
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_run_config(args)
    bundle = pipeline.load_bundle(args.out)
    root = Path(args.out) / "ablation"
    rows = []
    for ablation in ABLATIONS:
        variant_cfg = config.with_model(ablation=ablation)
        fit, report = _train_and_report(bundle, variant_cfg, root / ablation)
        rows.append({"variant": VARIANT_NAMES[ablation], "ablation": ablation,
                     "architecture": pipeline.architecture_summary(fit.model), **report.to_dict()})
        print(f"{VARIANT_NAMES[ablation]:<18} {report.summary_line()}")
    _write_json(root / "report.json", rows)
    return EXIT_OK


def cmd_recommend(args) -> int:
    bundle = pipeline.load_bundle(args.out)
    model, _ = pipeline.load_model(args.checkpoint or Path(args.out) / "checkpoint.pt", bundle)
    if not Path(args.patient).is_file():
        raise IngestionError("patient file not found", args.patient)
    with open(args.patient, encoding="utf-8") as fh:
        rows = parse_visit_lines(fh, args.patient)
    items = pipeline.recommend(model, bundle, rows, args.threshold)
    _write_json(Path(args.out) / "recommendation.json",
                [{"drug": code, "probability": round(prob, 5)} for code, prob in items])
    print(pipeline.format_recommendation(items))
    return EXIT_OK


def _sweep_visits(bundle, config: RunConfig, out: Path) -> list[dict]:
    fit = pipeline.fit(bundle, config.model, config.seed, out / "model")
    patients = pipeline.prepared(bundle, "test", config.model)
    rows = []
    groups: dict[str, list] = {}
    for p in patients:
        groups.setdefault(str(len(p)) if len(p) < 5 else "5+", []).append(p)
    for key in sorted(groups):
        report = pipeline.evaluate(fit.model, groups[key], config.rounds, config.seed,
                                   conventional_pr=config.conventional_pr)
        rows.append({"visits": key, "patients": len(groups[key]), **report.to_dict()})
    return rows


def cmd_sweep(args) -> int:
    config = load_run_config(args)
    bundle = pipeline.load_bundle(args.out)
    root = Path(args.out) / "sweep" / args.axis
    if args.axis == "visits":
        rows = _sweep_visits(bundle, config, root)
    else:
        values = args.values or DEFAULT_GRIDS[args.axis]
        rows = []
        for value in values:
            value = int(value) if args.axis == "dim" else float(value)
            cfg = config.with_model(**{args.axis: value})
            _, report = _train_and_report(bundle, cfg, root / f"{args.axis}={value}")
            rows.append({args.axis: value, **report.to_dict()})
    _write_json(root / "report.json", rows)
    for row in rows:
        key = next(iter(row))
        print(f"{key}={row[key]}: jaccard {row['jaccard']['mean']:.4f} ddi_rate {row['ddi_rate']['mean']:.5f}")
    return EXIT_OK


def cmd_dump_graphs(args) -> int:
    config = load_run_config(args)
    bundle = pipeline.load_bundle(args.out)
    path = Path(args.out) / "graphs" / f"{args.split}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in bundle.splits[args.split].patients:
            network = build_dynamic_network(p, bundle.stats, all_ones=config.model.ablation == "prob",
                                            denominator=config.model.denominator)
            fh.write(dump_network(network, bundle.vocabularies))
    print(f"snapshots written to {path}")
    return EXIT_OK


def cmd_dump_drug_memory(args) -> int:
    bundle = pipeline.load_bundle(args.out)
    model, _ = pipeline.load_model(args.checkpoint or Path(args.out) / "checkpoint.pt", bundle)
    with torch.no_grad():
        memory = model.drug_memory()
    codes = bundle.vocabularies.medication.codes
    to_rows = lambda m: {c: [round(float(x), 8) for x in row] for c, row in zip(codes, m.double().numpy())}  # noqa: E731
    path = Path(args.out) / "drug_memory.json"
    _write_json(path, {"M_s": to_rows(memory.molecular), "M_ed": to_rows(memory.fused)})
    print(f"drug memory written to {path}")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "recommend": cmd_recommend,
    "sweep": cmd_sweep,
    "dump-graphs": cmd_dump_graphs,
    "dump-drug-memory": cmd_dump_drug_memory,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="dnmdr_out", help="output directory (default: dnmdr_out)")
    common.add_argument("--threshold", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--dim", type=int)
    common.add_argument("--ablation", choices=ABLATIONS)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dnmdr", description="Dynamic-network medication recommendation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="build the artifact bundle")
    p = sub.add_parser("train", parents=[common], help="train and keep the best-validation checkpoint")
    p.add_argument("--resume", action="store_true", help="continue from last.pt")
    for name, text in (("evaluate", "score a checkpoint on one split"),
                       ("recommend", "recommend drugs for one patient's latest visit"),
                       ("dump-drug-memory", "write the molecular and fused drug memories as JSON")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", help="default: OUT/checkpoint.pt")
        if name == "evaluate":
            p.add_argument("--split", choices=pipeline.SPLITS, default="test")
        if name == "recommend":
            p.add_argument("--patient", required=True, help="visit file holding one patient's history")
    sub.add_parser("ablate", parents=[common], help="train and evaluate every ablation variant")
    p = sub.add_parser("sweep", parents=[common], help="grid sweep over one axis")
    p.add_argument("axis", choices=("dim", "gamma", "visits"))
    p.add_argument("--values", nargs="+", type=float, help="grid values (dim/gamma axes)")
    p = sub.add_parser("dump-graphs", parents=[common], help="write snapshot graphs as JSON lines")
    p.add_argument("--split", choices=pipeline.SPLITS, default="test")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except (DNMDRError, OSError, json.JSONDecodeError) as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
