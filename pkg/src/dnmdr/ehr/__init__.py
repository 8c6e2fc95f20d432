"""EHR ingestion, synthetic cohorts and static drug knowledge."""

from .knowledge import (
    DDIAdjacency,
    DDITable,
    build_ddi_adjacency,
    build_ehr_adjacency,
    read_ddi_file,
    read_smiles_file,
    write_ddi_file,
    write_smiles_file,
)
from .records import (
    CodeVocabulary,
    Cohort,
    PatientHistory,
    VisitRecord,
    VisitRow,
    Vocabularies,
    apply_medication_mapping,
    build_cohort,
    build_vocabularies,
    cohort_rows,
    decode_multihot,
    encode_multihot,
    parse_visit_lines,
    read_code_mapping,
    read_visit_file,
    split_cohort,
    write_visit_file,
)
from .smiles import ATOM_TYPES, BOND_TYPES, MoleculeGraph, parse_molecule
from .synthetic import SynthConfig, SyntheticData, generate_synthetic_cohort
