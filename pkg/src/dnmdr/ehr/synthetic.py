"""Seeded synthetic cohorts with planted, measurable structure.

Each patient belongs to a latent disease cluster (sometimes two). A visit
draws diagnoses and procedures from its clusters' pools; medications come
from three sources:

* cluster drugs, prescribed when one of their indication diagnoses is present;
* planted drugs, each tied to exactly one planted diagnosis ``g`` and emitted
  in exactly ``ceil(strength * n_g)`` of the visits containing ``g``;
* popular drugs with a home cluster. The planted interacting pairs are the
  most prescribed popular pairs; a visit that would contain both members of
  such a pair loses one of them at random.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import ConfigError
from .knowledge import DDITable
from .records import CodeVocabulary, Cohort, VisitRow, Vocabularies, build_cohort

_FRAGMENTS = (
    "C", "CC", "CCC", "O", "N", "CO", "CN", "C(=O)O", "C(=O)N", "c1ccccc1", "c1ccncc1",
    "C1CCNCC1", "C1CCOC1", "Cl", "F", "Br", "S(=O)(=O)N", "C#N", "OC", "C=C", "P(=O)(O)O", "c1ccsc1",
)


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 500
    visits_mean: float = 2.4
    max_visits: int = 6
    n_diagnoses: int = 60
    n_procedures: int = 30
    n_medications: int = 40
    n_clusters: int = 4
    diagnoses_per_visit: int = 4
    procedures_per_visit: int = 2
    noise_diagnosis_rate: float = 0.1
    comorbidity_rate: float = 0.3
    cluster_drug_rate: float = 0.9
    n_associations: int = 8
    association_strength: float = 0.9
    n_popular_drugs: int = 8
    popular_home_rate: float = 0.9
    popular_away_rate: float = 0.35
    n_ddi_pairs: int = 4

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown synthetic config key(s): {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.n_patients < 1 or self.max_visits < 1 or self.visits_mean < 1:
            raise ConfigError("need n_patients >= 1, max_visits >= 1, visits_mean >= 1")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1")
        if self.n_diagnoses < self.n_clusters or self.n_procedures < self.n_clusters:
            raise ConfigError("every cluster needs at least one diagnosis and one procedure code")
        if not 0 < self.association_strength <= 1:
            raise ConfigError("association_strength must lie in (0, 1]")
        if self.n_associations > self.n_diagnoses:
            raise ConfigError("more planted associations than diagnosis codes")
        n_cluster_drugs = self.n_medications - self.n_associations - self.n_popular_drugs
        if n_cluster_drugs < self.n_clusters:
            raise ConfigError(
                f"{self.n_medications} medications cannot host {self.n_associations} planted drugs, "
                f"{self.n_popular_drugs} popular drugs and one drug per cluster"
            )
        if self.n_ddi_pairs > math.comb(self.n_popular_drugs, 2):
            raise ConfigError(
                f"{self.n_ddi_pairs} planted DDI pairs exceed the "
                f"{math.comb(self.n_popular_drugs, 2)} available popular-drug pairs"
            )
        for name in ("noise_diagnosis_rate", "comorbidity_rate", "cluster_drug_rate",
                     "popular_home_rate", "popular_away_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.diagnoses_per_visit < 1 or self.procedures_per_visit < 0:
            raise ConfigError("diagnoses_per_visit must be >= 1 and procedures_per_visit >= 0")


@dataclass(frozen=True)
class SyntheticData:
    cohort: Cohort
    ddi_table: DDITable
    smiles: dict[str, str]
    report: dict


def _random_smiles(rng: np.random.Generator) -> str:
    k = int(rng.integers(2, 6))
    return "".join(_FRAGMENTS[i] for i in rng.integers(0, len(_FRAGMENTS), size=k))


def _weights(n: int, hot: int) -> np.ndarray:
    # Zipf-like popularity; the first ``hot`` codes are the planted diagnoses.
    w = 1.0 / np.arange(1, n + 1) ** 0.8
    w[:hot] = w[0]
    return w / w.sum()


def generate_synthetic_cohort(config: SynthConfig, seed: int) -> SyntheticData:
    config.validate()
    rng = np.random.default_rng(seed)
    k = config.n_clusters
    diag_codes = [f"D{i:03d}" for i in range(config.n_diagnoses)]
    proc_codes = [f"P{i:03d}" for i in range(config.n_procedures)]
    med_codes = [f"M{i:03d}" for i in range(config.n_medications)]

    diag_pools = [list(p) for p in np.array_split(rng.permutation(config.n_diagnoses), k)]
    proc_pools = [list(p) for p in np.array_split(rng.permutation(config.n_procedures), k)]

    meds = rng.permutation(config.n_medications)
    planted_meds = list(meds[: config.n_associations])
    popular = list(meds[config.n_associations : config.n_associations + config.n_popular_drugs])
    cluster_meds = [list(p) for p in np.array_split(meds[config.n_associations + config.n_popular_drugs :], k)]
    popular_home = {int(m): i % k for i, m in enumerate(popular)}

    # planted diagnoses: round-robin over clusters, placed first so they are frequent
    planted_diags = []
    cursor = [0] * k
    while len(planted_diags) < config.n_associations:
        c = len(planted_diags) % k
        if cursor[c] < len(diag_pools[c]):
            planted_diags.append(int(diag_pools[c][cursor[c]]))
        cursor[c] += 1
    hot = [sum(1 for g in planted_diags if g in set(pool)) for pool in diag_pools]
    diag_weights = [_weights(len(pool), h) for pool, h in zip(diag_pools, hot)]

    indications = {}
    for c in range(k):
        pool = diag_pools[c]
        for m in cluster_meds[c]:
            size = max(1, len(pool) // 2)
            indications[int(m)] = set(int(d) for d in rng.choice(pool, size=size, replace=False))

    # pass 1: diagnoses, procedures, cluster and popular drugs
    visits = []  # (pid, ordinal, diags, procs, meds)
    for p in range(config.n_patients):
        pid = f"S{p:05d}"
        clusters = [int(rng.integers(k))]
        if k > 1 and rng.random() < config.comorbidity_rate:
            clusters.append(int(rng.choice([c for c in range(k) if c != clusters[0]])))
        n_visits = int(min(config.max_visits, 1 + rng.poisson(config.visits_mean - 1)))
        for t in range(1, n_visits + 1):
            diags = set()
            n_d = max(1, config.diagnoses_per_visit + int(rng.integers(-1, 2)))
            for _ in range(n_d):
                if rng.random() < config.noise_diagnosis_rate:
                    diags.add(int(rng.integers(config.n_diagnoses)))
                else:
                    c = clusters[int(rng.integers(len(clusters)))]
                    diags.add(int(rng.choice(diag_pools[c], p=diag_weights[c])))
            procs = set()
            for _ in range(int(rng.integers(0, config.procedures_per_visit + 1))):
                c = clusters[int(rng.integers(len(clusters)))]
                procs.add(int(rng.choice(proc_pools[c])))
            med_set = set()
            for c in range(k):
                for m in cluster_meds[c]:
                    if indications[int(m)] & diags and rng.random() < config.cluster_drug_rate:
                        med_set.add(int(m))
            for m in popular:
                rate = config.popular_home_rate if popular_home[int(m)] in clusters else config.popular_away_rate
                if rng.random() < rate:
                    med_set.add(int(m))
            visits.append((pid, t, diags, procs, med_set))

    # interacting pairs: the most prescribed popular pairs, cross-cluster first,
    # so that frequency-driven recommenders run into them
    freq = {int(m): sum(int(m) in v[4] for v in visits) for m in popular}
    pairs = list(combinations(sorted(freq), 2))
    pairs.sort(key=lambda p: (popular_home[p[0]] == popular_home[p[1]], -min(freq[p[0]], freq[p[1]]), p))
    ddi_pairs = pairs[: config.n_ddi_pairs]
    for v in visits:
        for a, b in ddi_pairs:
            if a in v[4] and b in v[4]:
                v[4].discard(a if rng.random() < 0.5 else b)

    # pass 2: planted drugs by exact quota over the visits containing their diagnosis
    associations = []
    for g, m in zip(planted_diags, planted_meds):
        holders = [i for i, v in enumerate(visits) if g in v[2]]
        quota = math.ceil(config.association_strength * len(holders))
        for i in rng.permutation(holders)[:quota] if holders else []:
            visits[int(i)][4].add(int(m))
        associations.append((diag_codes[g], med_codes[int(m)], config.association_strength, len(holders)))

    rows = [
        VisitRow(
            pid,
            t,
            frozenset(diag_codes[d] for d in diags),
            frozenset(proc_codes[x] for x in procs),
            frozenset(med_codes[m] for m in meds_),
        )
        for pid, t, diags, procs, meds_ in visits
    ]
    # vocabularies span the whole configured code space, not just observed codes
    vocabs = Vocabularies(
        CodeVocabulary.from_codes("diagnosis", diag_codes),
        CodeVocabulary.from_codes("procedure", proc_codes),
        CodeVocabulary.from_codes("medication", med_codes),
    )
    cohort = build_cohort(rows, vocabs)

    ddi_table = DDITable.from_rows(
        (med_codes[a], med_codes[b], int(rng.integers(1, 4))) for a, b in ddi_pairs
    )
    smiles = {code: _random_smiles(rng) for code in med_codes}
    report = {
        "seed": seed,
        "config": config.to_dict(),
        "associations": [
            {"diagnosis": g, "medication": m, "strength": s, "visits_with_diagnosis": n}
            for g, m, s, n in associations
        ],
        "ddi_pairs": [[med_codes[a], med_codes[b]] for a, b in ddi_pairs],
        "n_visits": len(rows),
    }
    return SyntheticData(cohort, ddi_table, smiles, report)
