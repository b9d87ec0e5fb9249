"""Exception hierarchy.

Every error carries a short ``code`` used by the CLI as a machine-parseable
prefix (``error[<code>]: <message>``).
"""


class ScbnetError(Exception):
    code = "error"


class ShapeError(ScbnetError, ValueError):
    code = "shape"


class ConfigError(ScbnetError, ValueError):
    code = "config"


class SpecError(ConfigError):
    code = "spec"


class ArchitectureLookupError(ScbnetError, KeyError):
    code = "lookup"

    def __str__(self) -> str:
        # KeyError quotes its message; keep it plain
        return str(self.args[0]) if self.args else ""


class ResolutionError(ShapeError):
    code = "resolution"


class IngestionError(ScbnetError, OSError):
    code = "ingest"


class DecodeError(ScbnetError, OSError):
    code = "decode"


class ProtocolError(ScbnetError):
    code = "protocol"


class DivergenceError(ScbnetError, FloatingPointError):
    code = "divergence"


class GradcheckError(ScbnetError):
    code = "gradcheck"


class CheckpointError(ScbnetError):
    code = "checkpoint"


class CheckpointMagicError(CheckpointError):
    code = "checkpoint-magic"


class CheckpointVersionError(CheckpointError):
    code = "checkpoint-version"


class CheckpointTruncatedError(CheckpointError):
    code = "checkpoint-truncated"


class CheckpointShapeError(CheckpointError, ShapeError):
    code = "checkpoint-shape"
