class ValidationError(ValueError):
    """Bad input: shapes, ranges, malformed files or configs."""


class CheckpointError(ValidationError):
    pass


class TrainingDiverged(RuntimeError):
    pass
