from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import settings

from dnmdr.config import ModelConfig
from dnmdr.drug_encoder import batch_molecules
from dnmdr.dynamic_graph import collect_cooccurrence
from dnmdr.ehr import (
    DDITable,
    VisitRow,
    build_cohort,
    build_ddi_adjacency,
    build_ehr_adjacency,
    parse_molecule,
)
from dnmdr.predictor import DNMDR, prepare_patients

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

torch.set_num_threads(1)


def row(pid, ordinal, diags, procs=(), meds=()):
    return VisitRow(pid, ordinal, frozenset(diags), frozenset(procs), frozenset(meds))


TOY_ROWS = [
    row("A", 1, ["D0", "D1"], ["P0"], ["M0", "M1", "M2"]),
    row("A", 2, ["D1", "D2"], ["P1", "P2"], ["M2", "M3", "M4"]),
    row("B", 1, ["D3"], ["P0"], ["M5", "M0"]),
    row("B", 2, ["D0", "D3"], [], ["M1", "M5"]),
]

# every bond type appears; M5 has no molecule so the fallback row is exercised
TOY_SMILES = {
    "M0": "CC(=O)O",
    "M1": "c1ccccc1",
    "M2": "C#N",
    "M3": "CCl",
    "M4": "OC(=O)c1ccccc1",
}


class Toy:
    def __init__(self, dim=8, dtype=torch.float64, seed=0, **config):
        self.cohort = build_cohort(TOY_ROWS)
        self.vocabs = self.cohort.vocabularies
        self.stats = collect_cooccurrence(self.cohort)
        meds = self.vocabs.medication.codes
        self.molecules = [parse_molecule(TOY_SMILES[c], c) if c in TOY_SMILES else None for c in meds]
        self.a_ehr = build_ehr_adjacency(self.cohort)
        self.a_ddi = build_ddi_adjacency(DDITable.from_rows([("M0", "M3", 1), ("M2", "M4", 1)]), self.vocabs.medication).matrix
        config.setdefault("dropout", 0.0)
        self.config = ModelConfig(dim=dim, **config)
        torch.manual_seed(seed)
        self.model = DNMDR(self.vocabs.sizes, batch_molecules(self.molecules), self.a_ehr, self.a_ddi, self.config)
        self.model.to(dtype)
        self.patients = prepare_patients(self.cohort, self.stats, self.config)


@pytest.fixture
def toy():
    return Toy()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
