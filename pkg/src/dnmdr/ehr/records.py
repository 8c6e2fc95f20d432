"""Coded EHR records: vocabularies, visits, patients, cohorts and their file formats."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, IngestionError, VocabularyError

logger = logging.getLogger(__name__)

KINDS = ("diagnosis", "procedure", "medication")


@dataclass(frozen=True)
class CodeVocabulary:
    """Dense, lexicographically ordered code space for one code kind."""

    kind: str
    codes: tuple[str, ...]
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown vocabulary kind {self.kind!r}")
        codes = tuple(self.codes)
        index = {c: i for i, c in enumerate(codes)}
        if len(index) != len(codes):
            raise IngestionError(f"duplicate codes in {self.kind} vocabulary")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_codes(cls, kind: str, codes: Iterable[str]) -> "CodeVocabulary":
        return cls(kind, tuple(sorted(set(codes))))

    def __len__(self):
        return len(self.codes)

    def __contains__(self, code):
        return code in self._index

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise VocabularyError(f"{code!r} not in {self.kind} vocabulary", [code]) from None

    def lookup(self, i: int) -> str:
        return self.codes[i]

    def indices(self, codes: Iterable[str]) -> list[int]:
        """Sorted positions of ``codes``; every unknown code is reported at once."""
        codes = list(codes)
        missing = sorted(c for c in codes if c not in self._index)
        if missing:
            raise VocabularyError(
                f"{len(missing)} code(s) not in {self.kind} vocabulary: {', '.join(missing)}",
                missing,
            )
        return sorted(self._index[c] for c in codes)


@dataclass(frozen=True)
class Vocabularies:
    diagnosis: CodeVocabulary
    procedure: CodeVocabulary
    medication: CodeVocabulary

    def __iter__(self):
        return iter((self.diagnosis, self.procedure, self.medication))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.diagnosis), len(self.procedure), len(self.medication)

    def to_dict(self) -> dict:
        return {v.kind: list(v.codes) for v in self}

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[str]]) -> "Vocabularies":
        return cls(*(CodeVocabulary(k, tuple(d[k])) for k in KINDS))


@dataclass(frozen=True)
class VisitRow:
    """One raw line of a visit file, before vocabulary checks."""

    patient_id: str
    ordinal: int
    diagnoses: frozenset[str]
    procedures: frozenset[str]
    medications: frozenset[str]


@dataclass(frozen=True)
class VisitRecord:
    diagnoses: frozenset[str]
    procedures: frozenset[str]
    medications: frozenset[str]
    ordinal: int

    def __post_init__(self):
        if not self.diagnoses:
            raise IngestionError(f"visit {self.ordinal} has no diagnosis codes")
        if self.ordinal < 1:
            raise IngestionError(f"visit ordinal must be >= 1, got {self.ordinal}")
        for name in ("diagnoses", "procedures", "medications"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))


@dataclass(frozen=True)
class PatientHistory:
    patient_id: str
    visits: tuple[VisitRecord, ...]

    def __post_init__(self):
        visits = tuple(sorted(self.visits, key=lambda v: v.ordinal))
        if not visits:
            raise IngestionError(f"patient {self.patient_id} has no visits")
        ordinals = [v.ordinal for v in visits]
        if ordinals != list(range(1, len(visits) + 1)):
            raise IngestionError(
                f"patient {self.patient_id}: visit ordinals must be consecutive from 1, got {ordinals}"
            )
        object.__setattr__(self, "visits", visits)

    def __len__(self):
        return len(self.visits)


@dataclass(frozen=True)
class Cohort:
    patients: tuple[PatientHistory, ...]
    vocabularies: Vocabularies

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        vd, vp, vm = self.vocabularies
        for p in self.patients:
            for v in p.visits:
                vd.indices(v.diagnoses)
                vp.indices(v.procedures)
                vm.indices(v.medications)

    def __len__(self):
        return len(self.patients)

    def visits(self) -> Iterable[VisitRecord]:
        for p in self.patients:
            yield from p.visits

    def subset(self, patients: Iterable[PatientHistory]) -> "Cohort":
        return Cohort(tuple(patients), self.vocabularies)


def build_vocabularies(rows: Sequence[VisitRow]) -> Vocabularies:
    """Vocabularies covering every code in ``rows``, each in lexicographic order."""
    if not rows:
        raise IngestionError("no visit rows to build vocabularies from")
    diag, proc, med = set(), set(), set()
    for r in rows:
        diag |= r.diagnoses
        proc |= r.procedures
        med |= r.medications
    return Vocabularies(
        CodeVocabulary.from_codes("diagnosis", diag),
        CodeVocabulary.from_codes("procedure", proc),
        CodeVocabulary.from_codes("medication", med),
    )


def build_cohort(rows: Sequence[VisitRow], vocabularies: Vocabularies | None = None) -> Cohort:
    """Group rows into patient histories. Patients keep first-appearance order."""
    if vocabularies is None:
        vocabularies = build_vocabularies(rows)
    by_patient: dict[str, list[VisitRecord]] = {}
    for r in rows:
        by_patient.setdefault(r.patient_id, []).append(
            VisitRecord(r.diagnoses, r.procedures, r.medications, r.ordinal)
        )
    patients = tuple(PatientHistory(pid, tuple(v)) for pid, v in by_patient.items())
    return Cohort(patients, vocabularies)


def cohort_rows(cohort: Cohort) -> list[VisitRow]:
    return [
        VisitRow(p.patient_id, v.ordinal, v.diagnoses, v.procedures, v.medications)
        for p in cohort.patients
        for v in p.visits
    ]


def encode_multihot(codes: Iterable[str], vocab: CodeVocabulary) -> np.ndarray:
    vec = np.zeros(len(vocab), dtype=np.float64)
    vec[vocab.indices(codes)] = 1.0
    return vec


def decode_multihot(vec: np.ndarray, vocab: CodeVocabulary) -> frozenset[str]:
    return frozenset(vocab.lookup(int(i)) for i in np.flatnonzero(np.asarray(vec) > 0.5))


# -- file formats -----------------------------------------------------------

def _split_codes(field_text: str) -> frozenset[str]:
    return frozenset(c.strip() for c in field_text.split(",") if c.strip())


def parse_visit_lines(lines: Iterable[str], path: str | Path = "<visits>") -> list[VisitRow]:
    """Parse ``patient_id \\t ordinal \\t diags \\t procs \\t meds`` lines.

    Blank lines and lines starting with ``#`` are skipped.
    """
    rows = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 5:
            parts += [""] * (5 - len(parts))
        if len(parts) != 5:
            raise IngestionError(f"expected 5 tab-separated fields, got {len(parts)}", path, lineno)
        pid, ordinal, diags, procs, meds = parts
        try:
            ordinal = int(ordinal)
        except ValueError:
            raise IngestionError(f"visit ordinal {ordinal!r} is not an integer", path, lineno) from None
        diagnoses = _split_codes(diags)
        if not diagnoses:
            raise IngestionError("visit has no diagnosis codes", path, lineno)
        if not pid.strip():
            raise IngestionError("empty patient id", path, lineno)
        rows.append(VisitRow(pid.strip(), ordinal, diagnoses, _split_codes(procs), _split_codes(meds)))
    return rows


def read_visit_file(path: str | Path) -> list[VisitRow]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        rows = parse_visit_lines(fh, path)
    if not rows:
        raise IngestionError("no visit rows", path)
    return rows


def format_visit_row(row: VisitRow) -> str:
    return "\t".join(
        [
            row.patient_id,
            str(row.ordinal),
            ",".join(sorted(row.diagnoses)),
            ",".join(sorted(row.procedures)),
            ",".join(sorted(row.medications)),
        ]
    )


def write_visit_file(path: str | Path, rows: Iterable[VisitRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(format_visit_row(r) + "\n")


def read_code_mapping(path: str | Path) -> dict[str, str]:
    """Two-column ``source \\t target`` mapping, e.g. NDC to ATC level 3."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise IngestionError("expected 2 tab-separated fields", path, lineno)
            mapping[parts[0].strip()] = parts[1].strip()
    return mapping


def apply_medication_mapping(rows: Sequence[VisitRow], mapping: Mapping[str, str]) -> tuple[list[VisitRow], int]:
    """Translate medication codes; unmapped codes are dropped and counted."""
    dropped = 0
    out = []
    for r in rows:
        meds = set()
        for m in r.medications:
            if m in mapping:
                meds.add(mapping[m])
            else:
                dropped += 1
        out.append(VisitRow(r.patient_id, r.ordinal, r.diagnoses, r.procedures, frozenset(meds)))
    if dropped:
        logger.warning("dropped %d medication code(s) with no mapping", dropped)
    return out, dropped


def split_cohort(
    cohort: Cohort, ratios: Sequence[float] = (4 / 6, 1 / 6, 1 / 6), seed: int = 0
) -> tuple[Cohort, Cohort, Cohort]:
    """Patient-level train/validation/test partition."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(cohort)
    if n < 3:
        raise ConfigError(f"need at least 3 patients to split, got {n}")

    # largest-remainder apportionment, each split non-empty
    raw = [r * n for r in ratios]
    sizes = [int(np.floor(x)) for x in raw]
    order = sorted(range(3), key=lambda k: raw[k] - sizes[k], reverse=True)
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    for k in range(3):
        while sizes[k] == 0:
            donor = max(range(3), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[k] += 1

    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.cumsum(sizes)[:2]
    parts = np.split(perm, cuts)
    return tuple(cohort.subset(cohort.patients[i] for i in sorted(part)) for part in parts)
