"""Medication recommendation over dynamic per-visit EHR graphs."""

from .config import ABLATIONS, VARIANT_NAMES, ModelConfig, RunConfig
from .drug_encoder import DrugEncoder, KeyValueMemory, MPNN
from .dynamic_graph import build_dynamic_network, collect_cooccurrence
from .errors import DNMDRError
from .metrics import MetricReport
from .patient_encoder import PatientEncoder
from .predictor import DNMDR, evaluate, train_epoch

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "DNMDR",
    "DNMDRError",
    "DrugEncoder",
    "KeyValueMemory",
    "MPNN",
    "MetricReport",
    "ModelConfig",
    "PatientEncoder",
    "RunConfig",
    "VARIANT_NAMES",
    "build_dynamic_network",
    "collect_cooccurrence",
    "evaluate",
    "train_epoch",
]
