class LexgradError(Exception):
    """Base class for every error raised by the training engine"""


class ShapeError(LexgradError, ValueError):
    """Tensor or layer-chain dimensions do not line up"""


class ContractError(LexgradError, ValueError):
    """A caller broke a precondition such as p > n or an empty pool"""


class LabelError(ContractError):
    """A class label outside [0, num_classes)"""


class NonFiniteError(LexgradError, ArithmeticError):
    """A NaN or infinity showed up where finite numbers are required"""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class FormatError(LexgradError, ValueError):
    """
    A data or checkpoint file could not be parsed.

    Carries the file path and the byte offset where parsing failed.
    """
    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        location = ""
        if path is not None:
            location += f" in {path}"
        if offset is not None:
            location += f" at byte {offset}"
        super().__init__(f"{message}{location}")


class ConfigError(LexgradError, ValueError):
    """Invalid configuration key or value"""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class TrainingAborted(LexgradError):
    """A candidate diverged during mutation and the run was stopped"""

    def __init__(self, message, candidate_id=None, generation=None):
        super().__init__(message)
        self.candidate_id = candidate_id
        self.generation = generation
