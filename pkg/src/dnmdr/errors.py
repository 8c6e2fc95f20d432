"""Exception hierarchy shared by every stage of the pipeline."""


class DNMDRError(Exception):
    """Base class for all package errors."""


class IngestionError(DNMDRError):
    """Malformed or empty input rows."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        if path is not None:
            loc = f"{path}:{line}" if line is not None else str(path)
            message = f"{loc}: {message}"
        super().__init__(message)


class VocabularyError(DNMDRError):
    """A code is not present in the vocabulary it is looked up in."""

    def __init__(self, message, codes=()):
        self.codes = tuple(codes)
        super().__init__(message)


class MoleculeParseError(DNMDRError):
    """A SMILES string uses syntax outside the supported subset."""

    def __init__(self, message, smiles, position):
        self.smiles = smiles
        self.position = position
        super().__init__(f"{message} at position {position} in {smiles!r}")


class ConfigError(DNMDRError):
    """Invalid or infeasible configuration."""


class DataError(DNMDRError):
    """Structurally valid input that cannot be turned into a graph or visit."""


class ShapeError(DNMDRError):
    """Tensor shapes do not line up."""


class NumericsError(DNMDRError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, patient_id=None):
        self.patient_id = patient_id
        if patient_id is not None:
            message = f"{message} (patient {patient_id})"
        super().__init__(message)


class IntegrityError(DNMDRError):
    """Checkpoint and data bundle do not belong together."""
