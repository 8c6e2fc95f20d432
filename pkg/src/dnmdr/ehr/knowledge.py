"""Static drug knowledge: co-prescription graph, interaction graph, SMILES tables."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from ..errors import IngestionError
from .records import CodeVocabulary, Cohort


@dataclass(frozen=True)
class DDITable:
    """Unordered drug pairs with a severity rank (1 = most severe).

    Pairs are canonicalised as ``(min, max)``; a pair listed more than once
    keeps its most severe rank.
    """

    rows: tuple[tuple[str, str, int], ...]

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, int]]) -> "DDITable":
        best: dict[tuple[str, str], int] = {}
        for a, b, sev in rows:
            if a == b:
                raise IngestionError(f"self-interaction pair ({a}, {a}) in DDI table")
            key = (a, b) if a < b else (b, a)
            best[key] = min(int(sev), best.get(key, int(sev)))
        return cls(tuple(sorted((a, b, s) for (a, b), s in best.items())))

    def __len__(self):
        return len(self.rows)

    def severities(self) -> list[int]:
        return sorted({s for _, _, s in self.rows})

    def interacts(self, a: str, b: str) -> bool:
        key = (a, b) if a < b else (b, a)
        return any((x, y) == key for x, y, _ in self.rows)


class DDIAdjacency(NamedTuple):
    matrix: np.ndarray
    skipped: int


def read_ddi_file(path: str | Path) -> DDITable:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split("\t")]
            if len(parts) != 3:
                raise IngestionError(f"expected 3 tab-separated fields, got {len(parts)}", path, lineno)
            try:
                rank = int(parts[2])
            except ValueError:
                raise IngestionError(f"severity rank {parts[2]!r} is not an integer", path, lineno) from None
            if rank < 1:
                raise IngestionError("severity rank must be >= 1", path, lineno)
            if parts[0] == parts[1]:
                raise IngestionError("self-interaction pair", path, lineno)
            rows.append((parts[0], parts[1], rank))
    return DDITable.from_rows(rows)


def write_ddi_file(path: str | Path, table: DDITable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, s in table.rows:
            fh.write(f"{a}\t{b}\t{s}\n")


def read_smiles_file(path: str | Path) -> dict[str, str]:
    smiles = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise IngestionError("expected 'med_code <TAB> smiles'", path, lineno)
            smiles[parts[0].strip()] = parts[1].strip()
    return smiles


def write_smiles_file(path: str | Path, smiles: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for code in sorted(smiles):
            fh.write(f"{code}\t{smiles[code]}\n")


def _check_adjacency(a: np.ndarray) -> np.ndarray:
    assert np.array_equal(a, a.T), "adjacency must be symmetric"
    assert not np.any(np.diag(a)), "adjacency must have a zero diagonal"
    return a


def build_ehr_adjacency(train_cohort: Cohort) -> np.ndarray:
    """Binary co-prescription graph: 1 where two drugs share a training visit."""
    vm = train_cohort.vocabularies.medication
    a = np.zeros((len(vm), len(vm)), dtype=np.float64)
    for visit in train_cohort.visits():
        idx = vm.indices(visit.medications)
        a[np.ix_(idx, idx)] = 1.0
    np.fill_diagonal(a, 0.0)
    return _check_adjacency(a)


def build_ddi_adjacency(table: DDITable, med_vocab: CodeVocabulary, top_k_severities: int = 40) -> DDIAdjacency:
    """Binary interaction graph restricted to severity ranks ``<= top_k_severities``.

    Pairs naming a drug outside ``med_vocab`` are skipped and counted.
    """
    if top_k_severities < 1:
        raise ValueError("top_k_severities must be >= 1")
    n = len(med_vocab)
    a = np.zeros((n, n), dtype=np.float64)
    skipped = 0
    for x, y, sev in table.rows:
        if sev > top_k_severities:
            continue
        if x not in med_vocab or y not in med_vocab:
            skipped += 1
            continue
        i, j = med_vocab.index(x), med_vocab.index(y)
        a[i, j] = a[j, i] = 1.0
    return DDIAdjacency(_check_adjacency(a), skipped)
