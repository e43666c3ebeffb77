class GridTreeError(ValueError):
    """Base class for all errors raised by gridtree."""


class TopologyError(GridTreeError):
    pass


class EstimationError(GridTreeError):
    pass


class WhiteningError(GridTreeError):
    pass


class StageError(GridTreeError):
    """Wraps an error raised inside a pipeline stage, keeping the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
