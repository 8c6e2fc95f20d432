"""Medication prediction, training losses, the per-patient training loop and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .drug_encoder import DrugEncoder, DrugMemory, KeyValueMemory, MoleculeBatch
from .dynamic_graph import CooccurrenceStats, build_dynamic_network
from .ehr.records import Cohort
from .errors import NumericsError
from .metrics import MetricReport, VisitEval, score_visits
from .patient_encoder import EncoderTrace, PatientEncoder, SnapshotTensors, snapshot_tensors
from .layers import uniform_

logger = logging.getLogger(__name__)

PROB_EPS = 1e-8


@dataclass(frozen=True)
class ReadoutVectors:
    o_s: torch.Tensor
    o_ed: torch.Tensor
    o_kv: torch.Tensor


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    chosen: np.ndarray

    @classmethod
    def from_probs(cls, probs, threshold: float = 0.5) -> "Prediction":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs, (probs >= threshold).astype(np.int64))


def readout(q: torch.Tensor, m_s: torch.Tensor, m_ed: torch.Tensor, memory: KeyValueMemory,
            kv_score: str = "keys") -> ReadoutVectors:
    """Attention readouts of the three drug views for query ``q``.

    ``kv_score="concat"`` scores history rows against ``[key, value @ M_ed]``
    instead of the keys alone.
    """
    o_s = m_s.T @ torch.softmax(m_s @ q, dim=0)
    o_ed = m_ed.T @ torch.softmax(m_ed @ q, dim=0)
    if len(memory) == 0:
        o_kv = torch.zeros_like(q)
    else:
        keys, values = memory.keys, memory.values
        if kv_score == "concat":
            scores = keys @ q + (values @ m_ed) @ q
        else:
            scores = keys @ q
        o_kv = m_ed.T @ (values.T @ torch.softmax(scores, dim=0))
    return ReadoutVectors(o_s, o_ed, o_kv)


def bce_loss(probs: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    p = probs.clamp(PROB_EPS, 1 - PROB_EPS)
    return -(truth * torch.log(p) + (1 - truth) * torch.log(1 - p)).sum()


def hinge_loss(probs: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Pairwise margin loss over (positive, negative) drug pairs, divided by ``|M|``."""
    pos = truth > 0.5
    if not bool(pos.any()) or bool(pos.all()):
        return probs.sum() * 0.0
    gaps = probs[pos][:, None] - probs[~pos][None, :]
    return torch.clamp(1 - gaps, min=0).sum() / probs.shape[0]


def ddi_loss(probs: torch.Tensor, a_ddi: torch.Tensor) -> torch.Tensor:
    return probs @ a_ddi.to(probs.dtype) @ probs


@dataclass
class LossBreakdown:
    l_bce: torch.Tensor
    l_multi: torch.Tensor
    l_ddi: torch.Tensor
    total: torch.Tensor
    weights: tuple[float, float, float]

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_bce", "l_multi", "l_ddi", "total")}


def total_loss(l_bce, l_multi, l_ddi, alpha: float, beta: float, gamma: float) -> LossBreakdown:
    if min(alpha, beta, gamma) < 0:
        raise ValueError("loss weights must be non-negative")
    total = alpha * l_bce + beta * l_multi + gamma * l_ddi
    return LossBreakdown(l_bce, l_multi, l_ddi, total, (alpha, beta, gamma))


def visit_losses(probs, truth, a_ddi, config: ModelConfig) -> LossBreakdown:
    return total_loss(bce_loss(probs, truth), hinge_loss(probs, truth), ddi_loss(probs, a_ddi),
                      config.alpha, config.beta, config.gamma)


@dataclass(frozen=True)
class PreparedPatient:
    """Snapshot tensors and per-visit target multi-hots for one patient."""

    patient_id: str
    snapshots: list[SnapshotTensors]
    targets: torch.Tensor  # (T, |M|)

    def __len__(self):
        return len(self.snapshots)


def prepare_patients(cohort: Cohort, stats: CooccurrenceStats, config: ModelConfig) -> list[PreparedPatient]:
    vm = cohort.vocabularies.medication
    out = []
    for p in cohort.patients:
        network = build_dynamic_network(p, stats, all_ones=config.ablation == "prob", denominator=config.denominator)
        targets = torch.zeros(len(p), len(vm), dtype=torch.float64)
        for t, v in enumerate(p.visits):
            targets[t, vm.indices(v.medications)] = 1.0
        out.append(PreparedPatient(p.patient_id, snapshot_tensors(network), targets))
    return out


class DNMDR(nn.Module):
    def __init__(self, sizes: tuple[int, int, int], molecules: MoleculeBatch, a_ehr: np.ndarray,
                 a_ddi: np.ndarray, config: ModelConfig):
        super().__init__()
        n_diag, n_proc, n_med = sizes
        self.config = config
        dim = config.dim
        ablation = config.ablation
        self.patient_encoder = PatientEncoder(
            n_diag, n_proc, n_med, dim,
            gat_layers=config.gat_layers, heads=config.heads, activation=config.activation,
            dropout=config.dropout, gat_dropout=config.gat_dropout,
            evolve=ablation != "lstm", use_graph=ablation != "dynn",
        )
        self.drug_encoder = DrugEncoder(
            dim, molecules, a_ehr, a_ddi, mpnn_depth=config.mpnn_depth, heads=config.heads,
            activation=config.activation, use_internal=ablation != "internal",
            use_interactive=ablation != "interactive",
        )
        self.output = nn.Linear(4 * dim, n_med)
        uniform_(self.output.weight, 4 * dim)
        uniform_(self.output.bias, 4 * dim)

    @property
    def a_ddi(self) -> torch.Tensor:
        return self.drug_encoder.a_ddi

    def drug_memory(self) -> DrugMemory:
        return self.drug_encoder(self.patient_encoder.tables.med)

    def predict_logits(self, q: torch.Tensor, r: ReadoutVectors) -> torch.Tensor:
        return self.output(torch.cat([q, r.o_s, r.o_ed, r.o_kv]))

    def forward(self, patient: PreparedPatient, trace: EncoderTrace | None = None,
                memory_log: list | None = None) -> torch.Tensor:
        """``(T, |M|)`` medication probabilities, visit ``t`` using only visits ``< t`` as history."""
        dtype = self.output.weight.dtype
        queries = self.patient_encoder(patient.snapshots, trace)
        drugs = self.drug_memory()
        memory = KeyValueMemory()
        probs = []
        for t in range(len(patient)):
            q = queries[t]
            r = readout(q, drugs.molecular, drugs.fused, memory, self.config.kv_score)
            probs.append(torch.sigmoid(self.predict_logits(q, r)))
            if memory_log is not None:
                memory_log.append(r)
            memory.append(q, patient.targets[t].to(dtype))
        return torch.stack(probs)

    def patient_loss(self, patient: PreparedPatient) -> tuple[torch.Tensor, list[LossBreakdown]]:
        probs = self.forward(patient)
        targets = patient.targets.to(probs.dtype)
        parts = [visit_losses(probs[t], targets[t], self.a_ddi, self.config) for t in range(len(patient))]
        return torch.stack([b.total for b in parts]).sum(), parts


def predict(model: DNMDR, q: torch.Tensor, readouts: ReadoutVectors, threshold: float = 0.5) -> Prediction:
    with torch.no_grad():
        probs = torch.sigmoid(model.predict_logits(q, readouts))
    return Prediction.from_probs(probs.numpy(), threshold)


@dataclass
class EpochLog:
    epoch: int
    l_bce: float
    l_multi: float
    l_ddi: float
    total: float
    seconds: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"epoch": self.epoch, "l_bce": self.l_bce, "l_multi": self.l_multi, "l_ddi": self.l_ddi,
             "total": self.total, "seconds": self.seconds}
        d.update(self.extra)
        return d


def train_epoch(model: DNMDR, patients: Sequence[PreparedPatient], optimizer: torch.optim.Optimizer,
                epoch: int, rng: np.random.Generator | None = None) -> EpochLog:
    """One pass over the patients with one optimiser step per patient.

    Patients are visited in a seeded random order when ``rng`` is given.
    """
    start = time.perf_counter()
    model.train()
    order = rng.permutation(len(patients)) if rng is not None else np.arange(len(patients))
    sums = np.zeros(4)
    n_visits = 0
    for i in order:
        patient = patients[int(i)]
        optimizer.zero_grad()
        loss, parts = model.patient_loss(patient)
        if not torch.isfinite(loss):
            raise NumericsError("non-finite training loss", patient.patient_id)
        loss.backward()
        optimizer.step()
        for b in parts:
            f = b.as_floats()
            sums += (f["l_bce"], f["l_multi"], f["l_ddi"], f["total"])
        n_visits += len(parts)
    means = sums / max(n_visits, 1)
    return EpochLog(epoch, *map(float, means), seconds=time.perf_counter() - start)


def predict_patients(model: DNMDR, patients: Sequence[PreparedPatient]) -> list[np.ndarray]:
    model.eval()
    with torch.no_grad():
        return [model(p).double().numpy() for p in patients]


def visit_evals(model: DNMDR, patients: Sequence[PreparedPatient], threshold: float) -> list[list[VisitEval]]:
    """Per-patient lists of visit evaluations."""
    out = []
    for p, probs in zip(patients, predict_patients(model, patients)):
        truth = p.targets.numpy()
        out.append([VisitEval.from_probs(np.flatnonzero(truth[t] > 0.5), probs[t], threshold) for t in range(len(p))])
    return out


def bootstrap_report(per_patient: Sequence[Sequence[VisitEval]], a_ddi: np.ndarray, rounds: int = 10,
                     seed: int = 0, conventional_pr: bool = False) -> MetricReport:
    """Mean and std of metrics over bootstrap resamples of patients.

    ``rounds == 1`` scores the full set once.
    """
    if rounds == 1:
        flat = [v for visits in per_patient for v in visits]
        return MetricReport.from_rounds([score_visits(flat, a_ddi, conventional_pr)])
    rng = np.random.default_rng(seed)
    n = len(per_patient)
    results = []
    for _ in range(rounds):
        idx = rng.integers(0, n, size=n)
        flat = [v for i in idx for v in per_patient[int(i)]]
        results.append(score_visits(flat, a_ddi, conventional_pr))
    return MetricReport.from_rounds(results)


def evaluate(model: DNMDR, patients: Sequence[PreparedPatient], rounds: int = 10, seed: int = 0,
             threshold: float | None = None, conventional_pr: bool = False) -> MetricReport:
    threshold = model.config.threshold if threshold is None else threshold
    evals = visit_evals(model, patients, threshold)
    return bootstrap_report(evals, model.a_ddi.numpy(), rounds, seed, conventional_pr)
