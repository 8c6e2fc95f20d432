"""Artifact bundles, checkpoints and the train/evaluate orchestration used by the CLI."""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import ModelConfig, RunConfig
from .drug_encoder import batch_molecules
from .dynamic_graph import CooccurrenceStats, collect_cooccurrence
from .ehr import (
    Cohort,
    DDITable,
    MoleculeGraph,
    SynthConfig,
    Vocabularies,
    apply_medication_mapping,
    build_cohort,
    build_ddi_adjacency,
    build_ehr_adjacency,
    build_vocabularies,
    cohort_rows,
    generate_synthetic_cohort,
    parse_molecule,
    read_code_mapping,
    read_ddi_file,
    read_smiles_file,
    read_visit_file,
    split_cohort,
    write_ddi_file,
    write_smiles_file,
    write_visit_file,
)
from .errors import DataError, IngestionError, IntegrityError, VocabularyError
from .metrics import MetricReport, VisitEval
from .predictor import (
    DNMDR,
    EpochLog,
    PreparedPatient,
    bootstrap_report,
    evaluate,
    prepare_patients,
    train_epoch,
)

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = 1
CHECKPOINT_FORMAT = 1
SPLITS = ("train", "val", "test")
STAT_FIELDS = ("single_diag", "single_proc", "single_med", "pair_diag", "pair_proc")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def vocabulary_hash(vocabs: Vocabularies) -> str:
    return sha256_bytes(json.dumps(vocabs.to_dict(), sort_keys=True).encode())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


@dataclass
class Bundle:
    """Everything derived from the inputs that training and evaluation need."""

    vocabularies: Vocabularies
    splits: dict[str, Cohort]
    a_ehr: np.ndarray
    a_ddi: np.ndarray
    stats: CooccurrenceStats
    molecules: list[MoleculeGraph | None]
    manifest: dict

    @property
    def vocab_hash(self) -> str:
        return self.manifest["vocab_hash"]


def _load_molecules(smiles: dict[str, str], med_codes) -> tuple[list[MoleculeGraph | None], list[str]]:
    molecules, missing = [], []
    for code in med_codes:
        if code in smiles:
            molecules.append(parse_molecule(smiles[code], code))
        else:
            molecules.append(None)
            missing.append(code)
    return molecules, missing


def prepare_bundle(config: RunConfig, out_dir: str | Path, config_dir: str | Path | None = None) -> dict:
    """Materialise vocabularies, splits, graphs, statistics and molecules under ``out_dir/bundle``.

    Returns the manifest. Identical inputs give identical file hashes.
    """
    bundle_dir = Path(out_dir) / "bundle"
    bundle_dir.mkdir(parents=True, exist_ok=True)
    extra: dict = {}

    if config.synthetic is not None:
        synth = config.synthetic
        if isinstance(synth, str):
            path = Path(synth)
            if config_dir is not None and not path.is_absolute():
                path = Path(config_dir) / path
            synth_cfg = SynthConfig.from_file(path)
        else:
            synth_cfg = SynthConfig.from_dict(synth)
        data = generate_synthetic_cohort(synth_cfg, config.seed)
        cohort, table, smiles = data.cohort, data.ddi_table, data.smiles
        _write_json(bundle_dir / "planted_report.json", data.report)
    else:
        for key in ("visits", "ddi", "smiles"):
            if not Path(getattr(config, key)).is_file():
                raise IngestionError(f"{key} file not found", getattr(config, key))
        rows = read_visit_file(config.visits)
        if config.mapping is not None:
            rows, dropped = apply_medication_mapping(rows, read_code_mapping(config.mapping))
            extra["unmapped_medications_dropped"] = dropped
        cohort = build_cohort(rows, build_vocabularies(rows))
        table = read_ddi_file(config.ddi)
        smiles = read_smiles_file(config.smiles)

    train, val, test = split_cohort(cohort, config.split, config.seed)
    return write_bundle(out_dir, {"train": train, "val": val, "test": test}, table, smiles,
                        config.top_k_severities, config, extra)


def write_bundle(out_dir: str | Path, splits: dict[str, Cohort], table: DDITable, smiles: dict[str, str],
                 top_k_severities: int = 40, config: RunConfig | None = None, extra: dict | None = None) -> dict:
    """Write a bundle for already-split cohorts sharing one vocabulary set."""
    bundle_dir = Path(out_dir) / "bundle"
    bundle_dir.mkdir(parents=True, exist_ok=True)
    train = splits["train"]
    vocabs = train.vocabularies
    stats = collect_cooccurrence(train)
    a_ehr = build_ehr_adjacency(train)
    ddi = build_ddi_adjacency(table, vocabs.medication, top_k_severities)
    molecules, missing = _load_molecules(smiles, vocabs.medication.codes)

    _write_json(bundle_dir / "vocab.json", vocabs.to_dict())
    for name in SPLITS:
        write_visit_file(bundle_dir / f"{name}.tsv", cohort_rows(splits[name]))
    write_ddi_file(bundle_dir / "ddi.tsv", table)
    write_smiles_file(bundle_dir / "smiles.tsv", smiles)
    (bundle_dir / "a_ehr.npy").write_bytes(_npy_bytes(a_ehr))
    (bundle_dir / "a_ddi.npy").write_bytes(_npy_bytes(ddi.matrix))
    for f, arr in stats.to_arrays().items():
        (bundle_dir / f"stats_{f}.npy").write_bytes(_npy_bytes(arr))
    _write_json(
        bundle_dir / "molecules.json",
        {c: None if g is None else {"atoms": list(g.atoms), "bonds": [list(b) for b in g.bonds]}
         for c, g in zip(vocabs.medication.codes, molecules)},
    )
    if config is not None:
        _write_json(bundle_dir / "run_config.json", config.to_dict())

    files = sorted(p.name for p in bundle_dir.iterdir() if p.name != "manifest.json")
    manifest = {
        "format": BUNDLE_FORMAT,
        "vocab_hash": vocabulary_hash(vocabs),
        "sizes": dict(zip(("diagnosis", "procedure", "medication"), vocabs.sizes)),
        "patients": {n: len(splits[n]) for n in SPLITS},
        "ddi_pairs": int(ddi.matrix.sum() // 2),
        "ddi_rows_skipped": ddi.skipped,
        "molecules_missing": missing,
        "files": {name: sha256_file(bundle_dir / name) for name in files},
        **(extra or {}),
    }
    _write_json(bundle_dir / "manifest.json", manifest)
    return manifest


def load_bundle(out_dir: str | Path) -> Bundle:
    bundle_dir = Path(out_dir) / "bundle"
    manifest_path = bundle_dir / "manifest.json"
    if not manifest_path.is_file():
        raise IngestionError("no prepared bundle; run 'prepare' first", bundle_dir)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != BUNDLE_FORMAT:
        raise IntegrityError(f"unsupported bundle format {manifest.get('format')!r}")
    for name, digest in manifest["files"].items():
        if sha256_file(bundle_dir / name) != digest:
            raise IntegrityError(f"bundle file {name} does not match its manifest hash")

    vocabs = Vocabularies.from_dict(json.loads((bundle_dir / "vocab.json").read_text(encoding="utf-8")))
    if vocabulary_hash(vocabs) != manifest["vocab_hash"]:
        raise IntegrityError("bundle vocabulary hash mismatch")
    splits = {n: build_cohort(read_visit_file(bundle_dir / f"{n}.tsv"), vocabs) for n in SPLITS}
    stats = CooccurrenceStats.from_arrays(
        vocabs, {f: np.load(bundle_dir / f"stats_{f}.npy") for f in STAT_FIELDS}
    )
    raw = json.loads((bundle_dir / "molecules.json").read_text(encoding="utf-8"))
    molecules = [
        None if raw[c] is None else MoleculeGraph(tuple(raw[c]["atoms"]), tuple(tuple(b) for b in raw[c]["bonds"]), c)
        for c in vocabs.medication.codes
    ]
    return Bundle(vocabs, splits, np.load(bundle_dir / "a_ehr.npy"), np.load(bundle_dir / "a_ddi.npy"),
                  stats, molecules, manifest)


def build_model(bundle: Bundle, config: ModelConfig, seed: int) -> DNMDR:
    torch.manual_seed(seed)
    return DNMDR(bundle.vocabularies.sizes, batch_molecules(bundle.molecules), bundle.a_ehr, bundle.a_ddi, config)


def architecture_summary(model: DNMDR) -> dict:
    enc, drugs = model.patient_encoder, model.drug_encoder
    return {
        "variant": model.config.variant,
        "dynamic_graph": enc.use_graph,
        "weight_evolution": enc.evolve and enc.use_graph,
        "conditional_probabilities": model.config.ablation != "prob",
        "internal_view": drugs.use_internal,
        "interactive_view": drugs.use_interactive,
    }


# -- checkpoints ------------------------------------------------------------

def _sections(model: DNMDR) -> dict:
    return {
        "patient_encoder": model.patient_encoder.state_dict(),
        "drug_encoder": model.drug_encoder.state_dict(),
        "predictor": model.output.state_dict(),
    }


def save_checkpoint(path: str | Path, model: DNMDR, vocab_hash: str, meta: dict, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "vocab_hash": vocab_hash,
        "model_config": model.config.to_dict(),
        "architecture": architecture_summary(model),
        "meta": meta,
        "sections": _sections(model),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def read_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise IngestionError("checkpoint not found", path)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"unsupported checkpoint format {payload.get('format')!r}")
    return payload


def load_model(path: str | Path, bundle: Bundle) -> tuple[DNMDR, dict]:
    payload = read_checkpoint(path)
    if payload["vocab_hash"] != bundle.vocab_hash:
        raise IntegrityError(
            f"checkpoint vocabulary hash {payload['vocab_hash'][:12]} does not match bundle {bundle.vocab_hash[:12]}"
        )
    config = ModelConfig.from_dict(payload["model_config"])
    model = build_model(bundle, config, seed=0)
    model.patient_encoder.load_state_dict(payload["sections"]["patient_encoder"])
    model.drug_encoder.load_state_dict(payload["sections"]["drug_encoder"])
    model.output.load_state_dict(payload["sections"]["predictor"])
    model.eval()
    return model, payload


# -- training ---------------------------------------------------------------

@dataclass
class FitResult:
    model: DNMDR
    logs: list[EpochLog]
    best_epoch: int
    best_val_jaccard: float


def fit(bundle: Bundle, config: ModelConfig, seed: int, out_dir: str | Path, resume: bool = False,
        on_epoch: Callable[[EpochLog], None] | None = None) -> FitResult:
    """Train with per-epoch validation Jaccard model selection and early stopping.

    Writes ``checkpoint.pt`` (best validation), ``last.pt`` (resumable state)
    and appends one JSON line per epoch to ``train_log.jsonl``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    model = build_model(bundle, config, seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(seed)
    train = prepare_patients(bundle.splits["train"], bundle.stats, config)
    val = prepare_patients(bundle.splits["val"], bundle.stats, config)

    start, best_epoch, best_score, stale = 1, 0, -1.0, 0
    if resume and (out_dir / "last.pt").is_file():
        state = read_checkpoint(out_dir / "last.pt")
        if state["vocab_hash"] != bundle.vocab_hash:
            raise IntegrityError("resume checkpoint belongs to a different bundle")
        model.patient_encoder.load_state_dict(state["sections"]["patient_encoder"])
        model.drug_encoder.load_state_dict(state["sections"]["drug_encoder"])
        model.output.load_state_dict(state["sections"]["predictor"])
        optimizer.load_state_dict(state["optimizer"])
        rng.bit_generator.state = state["numpy_rng"]
        torch.set_rng_state(state["torch_rng"])
        start = state["meta"]["epoch"] + 1
        best_epoch, best_score, stale = state["meta"]["best_epoch"], state["meta"]["best_val_jaccard"], state["meta"]["stale"]
    elif log_path.exists():
        log_path.unlink()

    logs = []
    if start == 1 and config.epochs == 0:
        best_score = evaluate(model, val, rounds=1).jaccard.mean
        save_checkpoint(out_dir / "checkpoint.pt", model, bundle.vocab_hash,
                        {"epoch": 0, "best_epoch": 0, "best_val_jaccard": best_score, "seed": seed})
    for epoch in range(start, config.epochs + 1):
        if stale >= config.patience:
            break
        log = train_epoch(model, train, optimizer, epoch, rng)
        score = evaluate(model, val, rounds=1).jaccard.mean
        log.extra["val_jaccard"] = score
        improved = score > best_score
        if improved:
            best_epoch, best_score, stale = epoch, score, 0
        else:
            stale += 1
        meta = {"epoch": epoch, "best_epoch": best_epoch, "best_val_jaccard": best_score, "stale": stale, "seed": seed}
        if improved:
            save_checkpoint(out_dir / "checkpoint.pt", model, bundle.vocab_hash, meta)
        save_checkpoint(out_dir / "last.pt", model, bundle.vocab_hash, meta, {
            "optimizer": optimizer.state_dict(),
            "numpy_rng": rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
        })
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(log.to_dict()) + "\n")
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log)

    best, _ = load_model(out_dir / "checkpoint.pt", bundle)
    return FitResult(best, logs, best_epoch, best_score)


def evaluate_split(model: DNMDR, bundle: Bundle, split: str = "test", rounds: int = 10, seed: int = 0,
                   threshold: float | None = None, conventional_pr: bool = False) -> MetricReport:
    patients = prepare_patients(bundle.splits[split], bundle.stats, model.config)
    return evaluate(model, patients, rounds, seed, threshold, conventional_pr)


def prepared(bundle: Bundle, split: str, config: ModelConfig) -> list[PreparedPatient]:
    return prepare_patients(bundle.splits[split], bundle.stats, config)


# -- baselines and single-patient inference --------------------------------

def frequency_baseline(train: Cohort, evaluated: Cohort, a_ddi: np.ndarray, rounds: int = 10,
                       seed: int = 0) -> tuple[MetricReport, int]:
    """Predict the ``k`` most frequent training drugs for every visit.

    ``k`` is the rounded mean training prescription size. Returns the report
    and ``k``.
    """
    vm = train.vocabularies.medication
    counts = np.zeros(len(vm))
    sizes = []
    for v in train.visits():
        counts[vm.indices(v.medications)] += 1
        sizes.append(len(v.medications))
    k = int(round(float(np.mean(sizes)))) if sizes else 0
    top = frozenset(np.argsort(-counts, kind="stable")[:k].tolist())
    probs = np.zeros(len(vm))
    probs[list(top)] = 1.0
    per_patient = [
        [VisitEval(frozenset(vm.indices(v.medications)), top, probs) for v in p.visits] for p in evaluated.patients
    ]
    return bootstrap_report(per_patient, a_ddi, rounds, seed), k


def unknown_codes(rows, vocabs: Vocabularies) -> list[str]:
    missing = set()
    for r in rows:
        missing |= {c for c in r.diagnoses if c not in vocabs.diagnosis}
        missing |= {c for c in r.procedures if c not in vocabs.procedure}
        missing |= {c for c in r.medications if c not in vocabs.medication}
    return sorted(missing)


def recommend(model: DNMDR, bundle: Bundle, rows, threshold: float | None = None) -> list[tuple[str, float]]:
    """Drugs for the last visit in ``rows`` (one patient) with probability at or above ``threshold``.

    Medications listed on the last visit are ignored; earlier visits supply
    the prescription history.
    """
    if not rows:
        raise DataError("patient history is empty")
    if len({r.patient_id for r in rows}) != 1:
        raise DataError("patient file must contain exactly one patient")
    missing = unknown_codes(rows, bundle.vocabularies)
    if missing:
        raise VocabularyError(f"codes not in vocabulary: {', '.join(missing)}", missing)
    cohort = build_cohort(rows, bundle.vocabularies)
    patient = prepare_patients(cohort, bundle.stats, model.config)[0]
    threshold = model.config.threshold if threshold is None else threshold
    model.eval()
    with torch.no_grad():
        probs = model(patient)[-1].double().numpy()
    order = np.argsort(-probs, kind="stable")
    vm = bundle.vocabularies.medication
    return [(vm.lookup(int(i)), float(probs[i])) for i in order if probs[i] >= threshold]


def format_recommendation(items: list[tuple[str, float]]) -> str:
    return ", ".join(f"{code}({prob:.5f})" for code, prob in items)
