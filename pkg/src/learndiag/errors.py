"""Exception types shared across the package.

Each loader/estimator raises the most specific class available so callers
can branch on failure mode instead of parsing messages.
"""


class LearnDiagError(Exception):
    """Base class for all package errors."""


# --- data loading / validation ---


class MalformedRow(LearnDiagError):
    """A file row could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NonBinaryScore(LearnDiagError):
    """A response score outside {0, 1}."""


class NonBinaryCell(LearnDiagError):
    """A Q-matrix cell outside {0, 1}."""


class EmptyLearnerOrExercise(LearnDiagError):
    """A learner row or exercise column with no observed responses."""


class DuplicateRecord(LearnDiagError):
    """The same (learner, exercise) pair appears more than once."""


class AllZeroExerciseRow(LearnDiagError):
    """A Q-matrix row with no required knowledge points."""


class TooFewObservations(LearnDiagError):
    """Not enough observed cells to build the requested folds."""


class InvalidRange(LearnDiagError):
    """A slip/guess interval outside the generator's admissible box."""


# --- shape / arity contracts ---


class LengthMismatch(LearnDiagError):
    """Two vectors that must align have different lengths."""


class DimensionMismatch(LearnDiagError):
    """An ability vector does not match the item's loading dimension."""


class ShapeMismatch(LearnDiagError):
    """Tensor shapes incompatible for the requested primitive."""


class ArityMismatch(LearnDiagError):
    """A parameter row does not match the encoding plan's column count."""


# --- estimation ---


class TooManyKnowledgePoints(LearnDiagError):
    """2^K latent classes would not be enumerable."""


class DimensionTooLarge(LearnDiagError):
    """Product quadrature grid would not be enumerable."""


class ChainDiverged(LearnDiagError):
    """MCMC acceptance collapsed; carries the diagnostics window."""


class MissingChannel(LearnDiagError):
    """A parameter-set variant requested without all of its fitted channels."""


# --- autodiff / training ---


class NonScalarLoss(LearnDiagError):
    """backward() called on a non-scalar tensor."""


class MissingGrad(LearnDiagError):
    """An optimizer step found a parameter without a populated gradient."""


class EmptyInput(LearnDiagError):
    """An operation that needs at least one element received none."""


class EmptyTrainingSet(LearnDiagError):
    """No training cells supplied to the trainer."""


class NoValidationCells(LearnDiagError):
    """Early stopping requested without validation cells."""


class UnknownLearner(LearnDiagError):
    """Learner id absent from the fitted parameter sets."""


class UnknownExercise(LearnDiagError):
    """Exercise id absent from the fitted parameter sets."""


# --- metrics ---


class SingleClassLabels(LearnDiagError):
    """AUC needs both a positive and a negative label."""


class BatchTooSmall(LearnDiagError):
    """Correlation requires at least three paired rows."""
