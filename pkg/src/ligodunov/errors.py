"""Exception types shared across the package.

The solver never clamps or silently repairs bad states: every violated
precondition surfaces as one of these errors so that diagnostic output
cannot be contaminated by hidden fixes.
"""


class SolverError(Exception):
    """Base class for runtime failures of the solver or its diagnostics."""


class InadmissibleStateError(SolverError):
    """A conserved state or metric state left the model's admissible set."""


class NonHyperbolicError(SolverError):
    """Characteristic speeds are not real at the given state."""


class VacuumError(SolverError):
    """Wave curves of a Riemann problem fail to intersect in the admissible region."""


class NonConvergenceError(SolverError):
    """An iterative solve exceeded its iteration budget."""


class FanValidationError(SolverError):
    """A constructed Riemann fan violates one of its invariants."""


class CflViolationError(SolverError):
    """A wave left its averaging interval before the end of the time step."""


class SupportCoverageError(SolverError):
    """A trajectory does not cover the support of a test function."""


class QuadratureBudgetError(SolverError):
    """A residual evaluation would exceed the configured quadrature budget."""


class InvalidBoxError(ValueError):
    """A test-function support box is malformed or not interior to the domain."""


class ConfigError(ValueError):
    """A run configuration failed to parse or validate."""


class SnapshotFormatError(SolverError):
    """A persisted artifact is corrupt, truncated, or not in the expected format."""


class MeshMismatchError(SolverError):
    """A persisted artifact was produced on a different mesh than expected."""


class VersionMismatchError(SolverError):
    """A persisted artifact has an incompatible format version or model id."""
