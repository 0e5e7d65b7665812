"""Exception taxonomy shared across the toolkit."""


class DlvError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatchError(DlvError):
    """Tensor shape incompatible with a layer; carries the layer index."""

    def __init__(self, layer_index, message):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class NonFiniteError(DlvError):
    """A non-finite value appeared at the given layer."""

    def __init__(self, layer_index, message="non-finite activation"):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class CombinatorialBlowupError(DlvError):
    """Direction enumeration over too many dimensions was requested."""


class DisconnectedDimensionError(DlvError):
    """An upstream dimension has no connected dimension in the next layer."""

    def __init__(self, dim):
        self.dim = dim
        super().__init__(
            f"dimension {dim} has no downstream dimension with nonzero connectivity"
        )


class CoverageFailureError(DlvError):
    """Region growth hit its doubling cap before covering the image of the
    previous region; carries the worst uncovered sample."""

    def __init__(self, residual, sample):
        self.residual = residual
        self.sample = sample
        super().__init__(f"coverage cap reached, worst residual {residual:.6g}")


class RefinementFailureError(DlvError):
    """Span/horizon escalation caps exhausted; carries the worst residual."""

    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"refinement caps exhausted, worst residual {residual:.6g}")


class SearchBudgetExceededError(DlvError):
    """Exhaustive search ran out of its point budget. The verdict is
    inconclusive; callers must never report Safe from this state."""

    def __init__(self, explored, budget):
        self.explored = explored
        self.budget = budget
        super().__init__(
            f"inconclusive: explored {explored} points, budget {budget} exhausted"
        )


class UnsupportedLayerError(DlvError):
    """Operation asked for on a layer kind it cannot handle."""


class WeightFormatError(DlvError):
    """Weight file failed parsing or validation; offset/layer in message."""


class ImageFormatError(DlvError):
    """Image file failed parsing or validation."""
