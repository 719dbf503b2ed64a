"""Balance-law models: flux, source, and metric coupling.

A model supplies the pieces of the 1D system

    u_t + f(A, u)_x = g(A, u, x),        dA/dx = h(A, u, x),

where ``u`` is the vector of conserved quantities in one cell and ``A``
the vector of metric components frozen over that cell.  Two concrete
models ship with the package:

* :class:`SyntheticScalarModel`: scalar flux ``f = A u^2 / 2`` with the
  quadratic couplings ``h = kappa A u^2`` and ``g = -u h``.  Every term
  of the method (flux jump across cells, gradient correction, metric
  growth) is active, yet with ``A == 1`` and ``kappa == 0`` the model
  reduces exactly to the inviscid Burgers equation.
* :class:`IsothermalEulerModel`: the 2x2 isothermal Euler system with
  pressure ``p = sigma^2 rho``, scaled by the metric factor
  ``a(A) = A``.  Exercises genuine two-wave Riemann fans.

All operations are pure functions of their arguments, vectorised over
leading axes (the last axis is the component axis), and safe to call
concurrently.  Gradients with respect to the metric are analytic, not
numeric; finite differences appear only in the test oracles.
"""

from __future__ import annotations

import abc

import numpy as np

from .errors import ConfigError, InadmissibleStateError

__all__ = [
    "BalanceLawModel",
    "SyntheticScalarModel",
    "IsothermalEulerModel",
    "make_model",
    "MODEL_IDS",
]


def _component_array(value, ncomp: int, name: str) -> np.ndarray:
    """Coerce to float64 with ``ncomp`` trailing components."""
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        if ncomp != 1:
            raise ValueError(f"{name} must have {ncomp} components, got a scalar")
        a = a.reshape(1)
    if a.shape[-1] != ncomp:
        raise ValueError(f"{name} must have {ncomp} trailing components, got shape {a.shape}")
    return a


class BalanceLawModel(abc.ABC):
    """Interface every model implements.

    Attributes
    ----------
    model_id : str
        Stable identifier used by configuration files and persisted artifacts.
    state_dim : int
        Number of conserved components d.
    metric_dim : int
        Number of metric components m.
    riemann_kind : str
        Selects the exact Riemann solver ("convex_scalar" or "isothermal_euler").
    max_waves : int
        Upper bound on the number of waves in one Riemann fan.
    """

    model_id: str
    state_dim: int
    metric_dim: int
    riemann_kind: str
    max_waves: int

    # -- admissibility -------------------------------------------------

    @abc.abstractmethod
    def admissible_state(self, u: np.ndarray) -> np.ndarray:
        """Boolean mask over leading axes: True where u is admissible."""

    @abc.abstractmethod
    def admissible_metric(self, A: np.ndarray) -> np.ndarray:
        """Boolean mask over leading axes: True where A is admissible."""

    def require_admissible(self, A=None, u=None, where: str = "") -> None:
        """Raise :class:`InadmissibleStateError` if any entry is inadmissible."""
        ctx = f" ({where})" if where else ""
        if A is not None:
            A = _component_array(A, self.metric_dim, "A")
            ok = self.admissible_metric(A)
            if not np.all(ok):
                bad = np.argwhere(~np.atleast_1d(ok))
                raise InadmissibleStateError(
                    f"inadmissible metric state at index {bad[0]}{ctx}: A={A[tuple(bad[0])]}"
                )
        if u is not None:
            u = _component_array(u, self.state_dim, "u")
            ok = self.admissible_state(u)
            if not np.all(ok):
                bad = np.argwhere(~np.atleast_1d(ok))
                raise InadmissibleStateError(
                    f"inadmissible conserved state at index {bad[0]}{ctx}: u={u[tuple(bad[0])]}"
                )

    # -- model functions ----------------------------------------------

    @abc.abstractmethod
    def flux(self, A, u, *, validate: bool = True) -> np.ndarray:
        """Flux f(A, u); shape (..., d)."""

    @abc.abstractmethod
    def flux_grad_A(self, A, u, *, validate: bool = True) -> np.ndarray:
        """Analytic gradient of the flux in the metric components; shape (..., d, m)."""

    @abc.abstractmethod
    def source(self, A, u, x, *, validate: bool = True) -> np.ndarray:
        """Source g(A, u, x); shape (..., d)."""

    @abc.abstractmethod
    def metric_rhs(self, A, u, x, *, validate: bool = True) -> np.ndarray:
        """Right-hand side h(A, u, x) of the spatial metric equation; shape (..., m)."""

    @abc.abstractmethod
    def wave_speeds(self, A, u, *, validate: bool = True) -> np.ndarray:
        """Eigenvalues of du f(A, u), sorted ascending; shape (..., d)."""

    # -- capabilities ---------------------------------------------------

    @property
    def static_metric(self) -> bool:
        """True when h vanishes identically for the configured parameters."""
        return False

    def params_dict(self) -> dict:
        """Parameters as a plain dict (for configs and artifact metadata)."""
        return {}


class SyntheticScalarModel(BalanceLawModel):
    """Scalar model f = A u^2 / 2, h = kappa A u^2, g = -u h.

    Admissible set: finite u, finite A with A > 0.  Characteristic speed
    is A u, so the flux is uniformly convex in u on the admissible set.
    """

    model_id = "synthetic"
    state_dim = 1
    metric_dim = 1
    riemann_kind = "convex_scalar"
    max_waves = 1

    def __init__(self, kappa: float = 0.1):
        kappa = float(kappa)
        if not np.isfinite(kappa):
            raise ConfigError("kappa must be finite")
        self.kappa = kappa

    def params_dict(self) -> dict:
        return {"kappa": self.kappa}

    @property
    def static_metric(self) -> bool:
        return self.kappa == 0.0

    def admissible_state(self, u):
        u = _component_array(u, 1, "u")
        return np.isfinite(u[..., 0])

    def admissible_metric(self, A):
        A = _component_array(A, 1, "A")
        return np.isfinite(A[..., 0]) & (A[..., 0] > 0.0)

    def flux(self, A, u, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 1, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="flux")
        return 0.5 * A * u * u

    def flux_grad_A(self, A, u, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 1, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="flux_grad_A")
        return (0.5 * u * u)[..., None]

    def source(self, A, u, x, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 1, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="source")
        return -(self.kappa * A * u * u * u)

    def metric_rhs(self, A, u, x, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 1, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="metric_rhs")
        return self.kappa * A * u * u

    def wave_speeds(self, A, u, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 1, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="wave_speeds")
        return A * u


class IsothermalEulerModel(BalanceLawModel):
    """Isothermal Euler with a metric factor.

    Conserved state u = (rho, mom) with rho > 0.  The flux is

        f(A, u) = a(A) * (mom, mom^2 / rho + sigma^2 rho),    a(A) = A,

    so the characteristic speeds are a(A) (v -+ sigma) with v = mom/rho.
    Optional couplings: a geometric momentum sink g = beta (0, -rho/x)
    and a density-sourced metric law h = metric_kappa * A * rho.
    """

    model_id = "isothermal_euler"
    state_dim = 2
    metric_dim = 1
    riemann_kind = "isothermal_euler"
    max_waves = 2

    def __init__(self, sigma: float = 1.0, source_beta: float = 0.0, metric_kappa: float = 0.0):
        sigma = float(sigma)
        if not (np.isfinite(sigma) and sigma > 0.0):
            raise ConfigError("sigma must be positive and finite")
        self.sigma = sigma
        self.source_beta = float(source_beta)
        self.metric_kappa = float(metric_kappa)

    def params_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "source_beta": self.source_beta,
            "metric_kappa": self.metric_kappa,
        }

    @property
    def static_metric(self) -> bool:
        return self.metric_kappa == 0.0

    def admissible_state(self, u):
        u = _component_array(u, 2, "u")
        return np.isfinite(u).all(axis=-1) & (u[..., 0] > 0.0)

    def admissible_metric(self, A):
        # a(A) = A must stay positive for hyperbolicity.
        A = _component_array(A, 1, "A")
        return np.isfinite(A[..., 0]) & (A[..., 0] > 0.0)

    def flux(self, A, u, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 2, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="flux")
        a = A[..., 0]
        rho = u[..., 0]
        mom = u[..., 1]
        s2 = self.sigma * self.sigma
        return np.stack([a * mom, a * (mom * mom / rho + s2 * rho)], axis=-1)

    def flux_grad_A(self, A, u, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 2, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="flux_grad_A")
        rho = u[..., 0]
        mom = u[..., 1]
        s2 = self.sigma * self.sigma
        return np.stack([mom, mom * mom / rho + s2 * rho], axis=-1)[..., None]

    def source(self, A, u, x, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 2, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="source")
        rho = u[..., 0]
        if self.source_beta == 0.0:
            return np.zeros_like(u)
        x = np.asarray(x, dtype=np.float64)
        return np.stack([np.zeros_like(rho), -self.source_beta * rho / x], axis=-1)

    def metric_rhs(self, A, u, x, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 2, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="metric_rhs")
        if self.metric_kappa == 0.0:
            return np.zeros_like(A)
        return self.metric_kappa * A * u[..., :1]

    def wave_speeds(self, A, u, *, validate: bool = True):
        A = _component_array(A, 1, "A")
        u = _component_array(u, 2, "u")
        if validate:
            self.require_admissible(A=A, u=u, where="wave_speeds")
        a = A[..., 0]
        v = u[..., 1] / u[..., 0]
        return np.stack([a * (v - self.sigma), a * (v + self.sigma)], axis=-1)


_MODEL_CLASSES = {
    SyntheticScalarModel.model_id: SyntheticScalarModel,
    IsothermalEulerModel.model_id: IsothermalEulerModel,
}

MODEL_IDS = tuple(sorted(_MODEL_CLASSES))


def make_model(model_id: str, params: dict | None = None) -> BalanceLawModel:
    """Instantiate a model by id, validating parameter names."""
    if model_id not in _MODEL_CLASSES:
        raise ConfigError(f"unknown model id {model_id!r}; known: {', '.join(MODEL_IDS)}")
    cls = _MODEL_CLASSES[model_id]
    params = dict(params or {})
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {model_id!r}: {exc}") from None
