"""Exception hierarchy. Every error carries a stable machine-readable ``code``."""


class PipelineError(Exception):
    code = "pipeline_error"

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self)}


class MalformedRow(PipelineError):
    code = "malformed_row"


class UnknownLabel(PipelineError):
    code = "unknown_label"


class EmptyFile(PipelineError):
    code = "empty_file"


class SchemeMismatch(PipelineError):
    code = "scheme_mismatch"


class ClassTooSmall(PipelineError):
    code = "class_too_small"


class IdOutOfRange(PipelineError):
    code = "id_out_of_range"


class ShapeMismatch(PipelineError):
    code = "shape_mismatch"


class MissingTensor(PipelineError):
    code = "missing_tensor"


class InvalidConfig(PipelineError):
    code = "invalid_config"


class NonFiniteLoss(PipelineError):
    code = "non_finite_loss"


class IoFailure(PipelineError):
    code = "io_failure"


class VersionMismatch(PipelineError):
    code = "version_mismatch"


class LengthMismatch(PipelineError):
    code = "length_mismatch"


class EmptyInput(PipelineError):
    code = "empty_input"
