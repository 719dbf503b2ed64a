"""Exact Riemann solutions for the frozen-coefficient homogeneous systems.

Within one cell the metric is frozen to a constant vector ``A``, so the
hyperbolic part reduces to ``u_t + f(A, u)_x = 0`` with constant
coefficients.  This module constructs the exact self-similar solution of
that problem for the two shipped model families, provides pointwise
sampling in the similarity variable ``xi = (x - x0) / (t - t0)``, and
integrates the fan in closed form for exact cell averaging.

Wave structure
--------------
convex_scalar
    Flux ``A u^2 / 2`` is uniformly convex in ``u`` (A > 0), so the fan
    is a single shock (u_L > u_R, speed ``A (u_L + u_R) / 2``) or a
    single rarefaction with interior value ``u(xi) = xi / A``.

isothermal_euler
    Flux ``a (mom, mom^2/rho + sigma^2 rho)`` with constant ``a > 0``.
    Since the flux is a positive multiple of the flat isothermal flux,
    the wave curves coincide with the flat ones and all speeds scale by
    ``a``.  In (rho, v) variables the velocity change along a wave of
    either family is

        phi(rho; rho0) = sigma * log(rho / rho0)                 rho <= rho0
                       = sigma * (rho - rho0) / sqrt(rho rho0)   rho >  rho0

    (rarefaction and entropic shock branch respectively).  The middle
    state solves  phi(rho; rho_L) + phi(rho; rho_R) + v_R - v_L = 0,
    which is strictly increasing in rho and always has a unique positive
    root, so no vacuum forms for admissible data.  Rarefaction interiors
    and their integrals have closed forms (exponential in xi).

Shocks are validated against the Rankine-Hugoniot condition and the Lax
entropy inequalities at construction time; waves of zero strength
(componentwise |u_R - u_L| <= 1e-14) are dropped from the fan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CflViolationError,
    FanValidationError,
    NonConvergenceError,
    VacuumError,
)
from .models import BalanceLawModel

__all__ = ["Wave", "RiemannFan", "FanBatch", "solve_riemann", "sample_fan", "fan_average"]

ZERO_STRENGTH = 1e-14
MIDDLE_STATE_TOL = 1e-12
MIDDLE_STATE_MAX_ITER = 200
RH_TOL = 1e-8


# ---------------------------------------------------------------------------
# rarefaction interiors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ScalarInterior:
    """u(xi) = xi / a inside a convex-scalar rarefaction."""

    a: float  # frozen A > 0

    def values(self, xi: np.ndarray) -> np.ndarray:
        return (np.asarray(xi, dtype=np.float64) / self.a)[..., None]

    def integral(self, xi_lo: float, xi_hi: float) -> np.ndarray:
        return np.array([(xi_hi * xi_hi - xi_lo * xi_lo) / (2.0 * self.a)])


@dataclass(frozen=True)
class _IsothermalInterior:
    """Closed-form interior of an isothermal rarefaction.

    Written in the flat similarity variable ``xi' = xi / a``.  For the
    1-family the density decays away from the left edge speed
    ``lam_edge = v_L - sigma``; for the 2-family it grows toward the
    right edge speed ``lam_edge = v_R + sigma``:

        family 1:  rho = rho_edge exp((lam_edge - xi') / sigma),  v = xi' + sigma
        family 2:  rho = rho_edge exp((xi' - lam_edge) / sigma),  v = xi' - sigma

    Antiderivatives in xi' (used for exact averaging):

        family 1:  I_rho = -sigma rho,  I_mom = -sigma (xi' + 2 sigma) rho
        family 2:  I_rho = +sigma rho,  I_mom = +sigma (xi' - 2 sigma) rho
    """

    family: int  # 1 or 2
    a: float
    sigma: float
    rho_edge: float
    lam_edge: float  # flat-frame edge characteristic speed

    def _rho(self, xi_flat):
        s = self.sigma
        if self.family == 1:
            return self.rho_edge * np.exp((self.lam_edge - xi_flat) / s)
        return self.rho_edge * np.exp((xi_flat - self.lam_edge) / s)

    def values(self, xi: np.ndarray) -> np.ndarray:
        xi_flat = np.asarray(xi, dtype=np.float64) / self.a
        rho = self._rho(xi_flat)
        v = xi_flat + self.sigma if self.family == 1 else xi_flat - self.sigma
        return np.stack([rho, rho * v], axis=-1)

    def integral(self, xi_lo: float, xi_hi: float) -> np.ndarray:
        s = self.sigma
        p, q = xi_lo / self.a, xi_hi / self.a
        rp, rq = self._rho(p), self._rho(q)
        if self.family == 1:
            i_rho = -s * rq + s * rp
            i_mom = -s * (q + 2.0 * s) * rq + s * (p + 2.0 * s) * rp
        else:
            i_rho = s * rq - s * rp
            i_mom = s * (q - 2.0 * s) * rq - s * (p - 2.0 * s) * rp
        return self.a * np.array([i_rho, i_mom])


# ---------------------------------------------------------------------------
# fan containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Wave:
    """One wave of a fan: a shock (left_speed == right_speed) or a rarefaction."""

    kind: str  # "shock" | "rarefaction"
    left_speed: float
    right_speed: float
    left_state: np.ndarray  # state adjacent on the left, shape (d,)
    right_state: np.ndarray  # state adjacent on the right, shape (d,)
    interior: object = None  # rarefaction interior evaluator, None for shocks


@dataclass(frozen=True)
class RiemannFan:
    """Exact self-similar solution of one frozen-coefficient Riemann problem."""

    model: BalanceLawModel
    frozen_metric: np.ndarray  # (m,)
    left_state: np.ndarray  # (d,)
    right_state: np.ndarray  # (d,)
    waves: tuple[Wave, ...]
    origin: tuple[float, float] = (0.0, 0.0)  # (t0, x0)

    @property
    def leftmost_speed(self) -> float:
        return self.waves[0].left_speed if self.waves else 0.0

    @property
    def rightmost_speed(self) -> float:
        return self.waves[-1].right_speed if self.waves else 0.0

    @property
    def max_abs_speed(self) -> float:
        return max(abs(self.leftmost_speed), abs(self.rightmost_speed))

    def sample_many(self, xi) -> np.ndarray:
        """Fan values at an array of similarity slopes; shape (N, d).

        Convention at a jump: xi == shock speed samples the right state;
        rarefaction edges are continuous so the convention is invisible.
        """
        xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
        out = np.broadcast_to(self.left_state, xi.shape + self.left_state.shape).copy()
        for w in self.waves:
            past = xi >= w.left_speed
            out[past] = w.right_state
            if w.interior is not None:
                inside = past & (xi < w.right_speed)
                if np.any(inside):
                    out[inside] = w.interior.values(xi[inside])
        return out

    def sample(self, xi: float) -> np.ndarray:
        return self.sample_many(np.array([xi]))[0]

    def value_at(self, t: float, x: float) -> np.ndarray:
        """Sample in physical coordinates, t strictly after the origin time."""
        t0, x0 = self.origin
        return self.sample((x - x0) / (t - t0))

    def average(self, x_lo: float, x_hi: float, t: float) -> np.ndarray:
        """Exact mean of the fan over [x_lo, x_hi] at time ``t`` past the origin.

        Requires every wave to still be inside the interval at time t
        (the containment the CFL step guarantees); integrates constant
        regions and rarefaction interiors in closed form.
        """
        if not t > 0.0:
            raise ValueError("fan average requires t > 0")
        if x_hi <= x_lo:
            raise ValueError("empty averaging interval")
        x0 = self.origin[1]
        geom_tol = 1e-12 * max(1.0, abs(x_lo), abs(x_hi))
        if self.waves:
            x_left = x0 + self.leftmost_speed * t
            x_right = x0 + self.rightmost_speed * t
            if x_left < x_lo - geom_tol or x_right > x_hi + geom_tol:
                raise CflViolationError(
                    f"wave left the averaging interval: fan spans "
                    f"[{x_left}, {x_right}], interval [{x_lo}, {x_hi}]"
                )
        xi_lo = (x_lo - x0) / t
        xi_hi = (x_hi - x0) / t
        total = np.zeros_like(self.left_state)
        cursor = xi_lo
        state = self.left_state
        for w in self.waves:
            total = total + state * (w.left_speed - cursor)
            if w.interior is not None:
                total = total + w.interior.integral(w.left_speed, w.right_speed)
            cursor = w.right_speed
            state = w.right_state
        total = total + state * (xi_hi - cursor)
        return total * (t / (x_hi - x_lo))


def sample_fan(fan: RiemannFan, xi: float) -> np.ndarray:
    """Module-level alias for :meth:`RiemannFan.sample`."""
    return fan.sample(xi)


def fan_average(fan: RiemannFan, interval, t: float) -> np.ndarray:
    """Module-level alias for :meth:`RiemannFan.average`."""
    x_lo, x_hi = interval
    return fan.average(float(x_lo), float(x_hi), float(t))


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


def solve_riemann(
    model: BalanceLawModel,
    A_frozen,
    u_left,
    u_right,
    *,
    origin: tuple[float, float] = (0.0, 0.0),
    validate: bool = True,
) -> RiemannFan:
    """Exact fan for ``u_t + f(A_frozen, u)_x = 0`` with data (u_left, u_right)."""
    A = np.asarray(A_frozen, dtype=np.float64).reshape(model.metric_dim)
    uL = np.asarray(u_left, dtype=np.float64).reshape(model.state_dim)
    uR = np.asarray(u_right, dtype=np.float64).reshape(model.state_dim)
    if validate:
        model.require_admissible(A=A, u=np.stack([uL, uR]), where="solve_riemann")

    if np.all(np.abs(uR - uL) <= ZERO_STRENGTH):
        return RiemannFan(model, A, uL, uL.copy(), (), origin)

    if model.riemann_kind == "convex_scalar":
        fan = _solve_convex_scalar(model, A, uL, uR, origin)
    elif model.riemann_kind == "isothermal_euler":
        fan = _solve_isothermal(model, A, uL, uR, origin)
    else:
        raise NotImplementedError(f"no exact solver for riemann_kind={model.riemann_kind!r}")

    if validate:
        _validate_fan(fan)
    return fan


def _solve_convex_scalar(model, A, uL, uR, origin) -> RiemannFan:
    a = float(A[0])
    ul, ur = float(uL[0]), float(uR[0])
    if ul > ur:
        s = 0.5 * a * (ul + ur)
        wave = Wave("shock", s, s, uL, uR)
    else:
        wave = Wave("rarefaction", a * ul, a * ur, uL, uR, _ScalarInterior(a))
    return RiemannFan(model, A, uL, uR, (wave,), origin)


def _phi_isothermal(rho: float, rho0: float, sigma: float) -> float:
    """Velocity change along a wave curve, positive for rho > rho0."""
    if rho <= rho0:
        return sigma * math.log(rho / rho0)
    return sigma * (rho - rho0) / math.sqrt(rho * rho0)


def _phi_isothermal_deriv(rho: float, rho0: float, sigma: float) -> float:
    if rho <= rho0:
        return sigma / rho
    return sigma * (rho + rho0) / (2.0 * rho * math.sqrt(rho * rho0))


def _isothermal_middle(
    rho_l: float, v_l: float, rho_r: float, v_r: float, sigma: float
) -> tuple[float, float]:
    """Middle state (rho_m, v_m) by damped Newton with a bisection fallback."""

    def residual(rho):
        return _phi_isothermal(rho, rho_l, sigma) + _phi_isothermal(rho, rho_r, sigma) + v_r - v_l

    # Bracket the (unique) root of the increasing residual.
    lo = min(rho_l, rho_r)
    hi = max(rho_l, rho_r)
    it = 0
    while residual(lo) > 0.0:
        lo *= 0.25
        it += 1
        if it > MIDDLE_STATE_MAX_ITER or lo <= 0.0 or not math.isfinite(lo):
            raise VacuumError(
                f"wave curves do not intersect at positive density "
                f"(rho_l={rho_l}, v_l={v_l}, rho_r={rho_r}, v_r={v_r})"
            )
    it = 0
    while residual(hi) < 0.0:
        hi *= 4.0
        it += 1
        if it > MIDDLE_STATE_MAX_ITER or not math.isfinite(hi):
            raise VacuumError("wave-curve intersection ran away to infinite density")

    # Two-rarefaction closed form is an excellent starting point.
    rho = math.sqrt(rho_l * rho_r) * math.exp(-(v_r - v_l) / (2.0 * sigma))
    rho = min(max(rho, lo), hi)
    fr = residual(rho)
    for _ in range(MIDDLE_STATE_MAX_ITER):
        if abs(fr) <= MIDDLE_STATE_TOL:
            break
        if fr < 0.0:
            lo = rho
        else:
            hi = rho
        drho = fr / (
            _phi_isothermal_deriv(rho, rho_l, sigma) + _phi_isothermal_deriv(rho, rho_r, sigma)
        )
        nxt = rho - drho
        if not (lo < nxt < hi) or not math.isfinite(nxt):
            nxt = 0.5 * (lo + hi)
        rho = nxt
        fr = residual(rho)
    else:
        raise NonConvergenceError(
            f"middle-state iteration exceeded {MIDDLE_STATE_MAX_ITER} iterations "
            f"(residual {fr:.3e})"
        )
    if rho <= 0.0 or not math.isfinite(rho):
        raise VacuumError("middle-state density is not positive")
    v_m = 0.5 * (
        (v_l - _phi_isothermal(rho, rho_l, sigma)) + (v_r + _phi_isothermal(rho, rho_r, sigma))
    )
    return rho, v_m


def _solve_isothermal(model, A, uL, uR, origin) -> RiemannFan:
    sigma = model.sigma
    a = float(A[0])
    rho_l, mom_l = float(uL[0]), float(uL[1])
    rho_r, mom_r = float(uR[0]), float(uR[1])
    v_l, v_r = mom_l / rho_l, mom_r / rho_r

    rho_m, v_m = _isothermal_middle(rho_l, v_l, rho_r, v_r, sigma)
    u_m = np.array([rho_m, rho_m * v_m])

    waves = []
    if np.any(np.abs(u_m - uL) > ZERO_STRENGTH):
        if rho_m > rho_l:  # compressive: 1-shock, speed from the mass jump condition
            s = a * (v_l - sigma * math.sqrt(rho_m / rho_l))
            waves.append(Wave("shock", s, s, uL, u_m))
        else:
            sl = a * (v_l - sigma)
            sr = a * (v_m - sigma)
            interior = _IsothermalInterior(1, a, sigma, rho_l, v_l - sigma)
            waves.append(Wave("rarefaction", sl, sr, uL, u_m, interior))
    u_mid_left = waves[-1].right_state if waves else uL
    if np.any(np.abs(uR - u_mid_left) > ZERO_STRENGTH):
        if rho_m > rho_r:  # compressive: 2-shock
            s = a * (v_r + sigma * math.sqrt(rho_m / rho_r))
            waves.append(Wave("shock", s, s, u_mid_left, uR))
        else:
            sl = a * (v_m + sigma)
            sr = a * (v_r + sigma)
            interior = _IsothermalInterior(2, a, sigma, rho_r, v_r + sigma)
            waves.append(Wave("rarefaction", sl, sr, u_mid_left, uR, interior))
    return RiemannFan(model, A, uL, uR, tuple(waves), origin)


def _validate_fan(fan: RiemannFan) -> None:
    """Invariant checks on a freshly built fan; violations signal solver bugs."""
    model = fan.model
    prev_right = -math.inf
    for w in fan.waves:
        if w.left_speed > w.right_speed:
            raise FanValidationError(f"wave speeds out of order: {w}")
        if w.left_speed < prev_right - 1e-12:
            raise FanValidationError("overlapping waves in fan")
        prev_right = w.right_speed
        scale = max(
            1.0,
            float(np.max(np.abs(w.left_state))),
            float(np.max(np.abs(w.right_state))),
            abs(w.left_speed),
            abs(w.right_speed),
        )
        if w.kind == "shock":
            fl = model.flux(fan.frozen_metric, w.left_state, validate=False)
            fr = model.flux(fan.frozen_metric, w.right_state, validate=False)
            resid = w.left_speed * (w.right_state - w.left_state) - (fr - fl)
            if np.max(np.abs(resid)) > RH_TOL * scale:
                raise FanValidationError(
                    f"Rankine-Hugoniot residual {np.max(np.abs(resid)):.3e} on shock"
                )
            lam_l = model.wave_speeds(fan.frozen_metric, w.left_state, validate=False)
            lam_r = model.wave_speeds(fan.frozen_metric, w.right_state, validate=False)
            # Lax admissibility: the shock speed is overtaken by some family
            # from the left and outruns it on the right.
            lax = np.any(
                (lam_l >= w.left_speed - 1e-9 * scale) & (lam_r <= w.left_speed + 1e-9 * scale)
            )
            if not lax:
                raise FanValidationError("shock violates the Lax entropy condition")
        else:
            lam_l = model.wave_speeds(fan.frozen_metric, w.left_state, validate=False)
            lam_r = model.wave_speeds(fan.frozen_metric, w.right_state, validate=False)
            edge_tol = 1e-8 * scale
            if not (
                np.min(np.abs(lam_l - w.left_speed)) <= edge_tol
                and np.min(np.abs(lam_r - w.right_speed)) <= edge_tol
            ):
                raise FanValidationError("rarefaction edges do not match characteristic speeds")


# ---------------------------------------------------------------------------
# vectorised sampling over many fans
# ---------------------------------------------------------------------------


class FanBatch:
    """Struct-of-arrays view of a list of fans for vectorised sampling.

    Sampling many (fan index, xi) pairs at once is the hot path of the
    residual quadrature; building the batch is a single cheap pass over
    the fan list.
    """

    def __init__(self, fans: list[RiemannFan], model: BalanceLawModel):
        self.model = model
        nf = len(fans)
        d = model.state_dim
        K = model.max_waves
        self.n_fans = nf
        self.kind = np.zeros((nf, K), dtype=np.int8)  # 0 none, 1 shock, 2 rarefaction
        self.s_left = np.full((nf, K), np.inf)
        self.s_right = np.full((nf, K), np.inf)
        # region_states[:, 0] is the left state; region_states[:, k+1] the
        # state right of wave k (replicated for unused slots).
        self.region_states = np.empty((nf, K + 1, d))
        self.edge_speeds = np.zeros((nf, 2 * K))  # zero-padded, for breakpoint building
        if model.riemann_kind == "isothermal_euler":
            self.r_family = np.zeros((nf, K), dtype=np.int8)
            self.r_a = np.ones((nf, K))
            self.r_rho_edge = np.ones((nf, K))
            self.r_lam_edge = np.zeros((nf, K))
        else:
            self.r_a = np.ones((nf, K))
        for i, fan in enumerate(fans):
            self.region_states[i, :] = fan.left_state
            for k, w in enumerate(fan.waves):
                self.kind[i, k] = 1 if w.kind == "shock" else 2
                self.s_left[i, k] = w.left_speed
                self.s_right[i, k] = w.right_speed
                self.region_states[i, k + 1 :] = w.right_state
                self.edge_speeds[i, 2 * k] = w.left_speed
                self.edge_speeds[i, 2 * k + 1] = w.right_speed
                if w.interior is not None:
                    if model.riemann_kind == "isothermal_euler":
                        self.r_family[i, k] = w.interior.family
                        self.r_a[i, k] = w.interior.a
                        self.r_rho_edge[i, k] = w.interior.rho_edge
                        self.r_lam_edge[i, k] = w.interior.lam_edge
                    else:
                        self.r_a[i, k] = w.interior.a

    def sample(self, fan_idx: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Values u(xi) for paired arrays of fan indices and slopes; (N, d)."""
        fan_idx = np.asarray(fan_idx)
        xi = np.asarray(xi, dtype=np.float64)
        out = self.region_states[fan_idx, 0].copy()
        K = self.kind.shape[1]
        for k in range(K):
            sl = self.s_left[fan_idx, k]
            past = xi >= sl
            if not np.any(past):
                continue
            out[past] = self.region_states[fan_idx[past], k + 1]
            inside = past & (xi < self.s_right[fan_idx, k]) & (self.kind[fan_idx, k] == 2)
            if np.any(inside):
                out[inside] = self._interior_values(fan_idx[inside], k, xi[inside])
        return out

    def _interior_values(self, idx, k, xi):
        if self.model.riemann_kind == "isothermal_euler":
            sigma = self.model.sigma
            a = self.r_a[idx, k]
            xi_flat = xi / a
            lam = self.r_lam_edge[idx, k]
            fam1 = self.r_family[idx, k] == 1
            expo = np.where(fam1, (lam - xi_flat) / sigma, (xi_flat - lam) / sigma)
            rho = self.r_rho_edge[idx, k] * np.exp(expo)
            v = np.where(fam1, xi_flat + sigma, xi_flat - sigma)
            return np.stack([rho, rho * v], axis=-1)
        return (xi / self.r_a[idx, k])[..., None]
