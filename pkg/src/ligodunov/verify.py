"""Convergence diagnostics: weak-form residuals, total variation, studies.

The central quantity is the weak-form residual of an approximate
solution against a smooth compactly supported test function phi,

    eps = int int { -u phi_t - f(A_i, u) phi_x - g(A_i, u, x) phi } dx dt
          - I1 - I2,

evaluated cell by cell with the per-cell frozen metric, where

    I1 = int u(t0+, x) phi(t0, x) dx                     (initial term)
    I2 = int { f(u(t, r_min+)) phi(t, r_min)
             - f(u(t, r_max+)) phi(t, r_max) } dt        (boundary term)

and u is the fractional-step field: inside a step [t_j, t_j + dt_j] it
is the juxtaposed interface fan solution pushed through the cell's
source/correction ODE for the elapsed time, u(t, x) =
uhat(t - t_j; u_fan(t, x), x).  The jump residual

    eps1 = sum_{j>=1} int phi(t_j, x) { u(t_j+, x) - u(t_j-, x) } dx

isolates the jumps the averaging plus ODE step introduce across time
levels.  A first-order method drives both to zero linearly in dx, which
is what :func:`convergence_study` measures.

Quadrature is tensor Gauss-Legendre of order 4 per space-time cell,
with every cell subdivided at the recorded wave rays (and clipped to the
support box) so that integrand kinks never masquerade as scheme error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidBoxError,
    QuadratureBudgetError,
    SupportCoverageError,
)
from .models import BalanceLawModel
from .riemann import FanBatch, RiemannFan
from .scheme import Mesh, StepRecord, Trajectory, ode_step

__all__ = [
    "TestFunction",
    "make_test_functions",
    "default_boxes",
    "total_variation",
    "residual",
    "jump_residual",
    "weak_form_residuals",
    "WeakFormResult",
    "lemma_average_bound_check",
    "lemma_average_bound_batch",
    "AverageBoundCheck",
    "lemma_ode_average_check",
    "project_cell_averages",
    "l1_difference",
    "fit_loglog_slope",
    "convergence_study",
    "LevelResult",
    "StudyReport",
    "gradient_oracle_check",
    "eigen_oracle_check",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
DEFAULT_QUADRATURE_BUDGET = 500_000_000


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported phi with evaluable phi, phi_t, phi_x.

    The evaluators are vectorised over (t, x) arrays and vanish
    identically (with their first derivatives) outside the support box.
    """

    t_lo: float
    t_hi: float
    x_lo: float
    x_hi: float
    phi: object  # callable (t, x) -> array
    phi_t: object
    phi_x: object
    sup_norm: float = 1.0
    label: str = ""


def _bump_evaluators(t_lo, t_hi, x_lo, x_hi, power):
    """Polynomial bump [(t-ta)(tb-t)(x-xa)(xb-x)]^p, normalised to sup 1."""
    p = int(power)
    if p < 3:
        raise InvalidBoxError("bump power must be >= 3 for C^2 smoothness")
    p_max = ((t_hi - t_lo) / 2.0) ** 2
    q_max = ((x_hi - x_lo) / 2.0) ** 2
    norm = (p_max * q_max) ** p

    def _pq(t, x):
        t = np.asarray(t, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        inside = (t >= t_lo) & (t <= t_hi) & (x >= x_lo) & (x <= x_hi)
        pt = (t - t_lo) * (t_hi - t)
        qx = (x - x_lo) * (x_hi - x)
        return inside, pt, qx

    def phi(t, x):
        inside, pt, qx = _pq(t, x)
        return np.where(inside, (pt**p) * (qx**p) / norm, 0.0)

    def phi_t(t, x):
        inside, pt, qx = _pq(t, x)
        t = np.asarray(t, dtype=np.float64)
        dpt = t_lo + t_hi - 2.0 * t
        return np.where(inside, p * (pt ** (p - 1)) * dpt * (qx**p) / norm, 0.0)

    def phi_x(t, x):
        inside, pt, qx = _pq(t, x)
        x = np.asarray(x, dtype=np.float64)
        dqx = x_lo + x_hi - 2.0 * x
        return np.where(inside, (pt**p) * p * (qx ** (p - 1)) * dqx / norm, 0.0)

    return phi, phi_t, phi_x


def make_test_functions(boxes, domain=None, power: int = 3) -> list[TestFunction]:
    """Build normalised polynomial bumps on the given support boxes.

    Each box is (t_lo, t_hi, x_lo, x_hi).  When ``domain`` is given as
    (t_start, t_end, r_min, r_max), boxes must sit strictly inside it in
    space and end strictly before t_end.
    """
    out = []
    for k, box in enumerate(boxes):
        t_lo, t_hi, x_lo, x_hi = (float(v) for v in box)
        if not (t_lo < t_hi and x_lo < x_hi):
            raise InvalidBoxError(f"degenerate support box {box}")
        if domain is not None:
            t0, t_end, r_min, r_max = domain
            if not (t0 <= t_lo and t_hi < t_end):
                raise InvalidBoxError(
                    f"box {box} must satisfy {t0} <= t_lo and t_hi < {t_end}"
                )
            if not (r_min < x_lo and x_hi < r_max):
                raise InvalidBoxError(f"box {box} must be strictly inside ({r_min}, {r_max})")
        f, ft, fx = _bump_evaluators(t_lo, t_hi, x_lo, x_hi, power)
        out.append(TestFunction(t_lo, t_hi, x_lo, x_hi, f, ft, fx, 1.0, label=f"phi{k}"))
    return out


def default_boxes(t_start, t_end, r_min, r_max):
    """Three interior boxes: mid-domain, downstream, near the left boundary."""
    T = t_end - t_start
    L = r_max - r_min
    return [
        (t_start + 0.10 * T, t_start + 0.70 * T, r_min + 0.30 * L, r_min + 0.65 * L),
        (t_start + 0.20 * T, t_start + 0.80 * T, r_min + 0.55 * L, r_min + 0.90 * L),
        (t_start + 0.10 * T, t_start + 0.55 * T, r_min + 0.06 * L, r_min + 0.30 * L),
    ]


# ---------------------------------------------------------------------------
# total variation
# ---------------------------------------------------------------------------


def total_variation(samples) -> float:
    """Sum of absolute jumps of an ordered sample sequence.

    Vector-valued samples contribute the 1-norm of each jump.
    """
    u = np.asarray(samples, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] == 0:
        raise ValueError("total_variation requires at least one sample")
    return float(np.sum(np.abs(np.diff(u, axis=0))))


# ---------------------------------------------------------------------------
# weak-form residual machinery
# ---------------------------------------------------------------------------


def _gauss(a, b):
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return mid + half * _GL_NODES, half * _GL_WEIGHTS


@dataclass
class WeakFormResult:
    phi: TestFunction
    eps: np.ndarray  # (d,) signed residual
    eps1: np.ndarray  # (d,) signed jump residual
    I1: np.ndarray
    I2: np.ndarray

    @property
    def eps_norm(self) -> float:
        return float(np.sum(np.abs(self.eps)))

    @property
    def eps1_norm(self) -> float:
        return float(np.sum(np.abs(self.eps1)))


class _PointBudget:
    def __init__(self, budget):
        self.remaining = budget

    def spend(self, n):
        self.remaining -= n
        if self.remaining < 0:
            raise QuadratureBudgetError("residual quadrature exceeded its point budget")


def _cells_overlapping(mesh: Mesh, x_lo: float, x_hi: float, lo_cell: int, hi_cell: int):
    """Indices of cells in [lo_cell, hi_cell] whose interior meets (x_lo, x_hi)."""
    edges = mesh.edges()
    first = int(np.searchsorted(edges, x_lo, side="right")) - 1
    last = int(np.searchsorted(edges, x_hi, side="left")) - 1
    first = max(first, lo_cell)
    last = min(last, hi_cell)
    if last < first:
        return None
    return np.arange(first, last + 1)


def _interior_cloud(mesh, step, batch, idx, x_lo, x_hi, tau):
    """Subdivided Gauss points for interior cells at elapsed time tau.

    Returns flat arrays (x, w, fan_idx, xi, cell_of_point).  Breakpoints
    are the cell edges (clipped to the support) plus every wave ray from
    the two interface fans; zero-width pieces get zero weight and are
    harmless.
    """
    edges = mesh.edges()
    centers = mesh.cell_centers()
    xl = edges[idx]
    xr = edges[idx + 1]
    cl = np.maximum(xl, x_lo)
    cr = np.minimum(xr, x_hi)
    left_f = idx - 1
    right_f = idx
    rays_l = xl[:, None] + tau * batch.edge_speeds[left_f]
    rays_r = xr[:, None] + tau * batch.edge_speeds[right_f]
    rays = np.clip(np.concatenate([rays_l, rays_r], axis=1), cl[:, None], cr[:, None])
    breaks = np.sort(np.concatenate([cl[:, None], rays, cr[:, None]], axis=1), axis=1)
    mid = 0.5 * (breaks[:, 1:] + breaks[:, :-1])
    half = 0.5 * (breaks[:, 1:] - breaks[:, :-1])
    X = mid[:, :, None] + half[:, :, None] * _GL_NODES
    W = half[:, :, None] * _GL_WEIGHTS
    use_left = X <= centers[idx][:, None, None]
    fan_idx = np.where(use_left, left_f[:, None, None], right_f[:, None, None])
    x_origin = np.where(use_left, xl[:, None, None], xr[:, None, None])
    n_pieces = X.shape[1]
    cell_of_point = np.broadcast_to(np.arange(len(idx))[:, None, None], X.shape)
    xf = X.reshape(-1)
    return (
        xf,
        W.reshape(-1),
        fan_idx.reshape(-1),
        (xf - x_origin.reshape(-1)) / tau,
        cell_of_point.reshape(-1),
        n_pieces,
    )


def _step_contributions(
    model: BalanceLawModel,
    mesh: Mesh,
    step: StepRecord,
    batch: FanBatch,
    phis: list[TestFunction],
    results: list[WeakFormResult],
    correction: bool,
    n_sub: int,
    budget: _PointBudget,
    include_final_jump: bool,
):
    """Accumulate one step's bulk, boundary-flux, and jump terms for every phi."""
    n = mesh.n
    edges = mesh.edges()
    centers = mesh.cell_centers()
    t0s, t1s = step.t_start, step.t_end
    for phi, res in zip(phis, results):
        ta = max(t0s, phi.t_lo)
        tb = min(t1s, phi.t_hi)
        if tb > ta:
            t_nodes, t_weights = _gauss(ta, tb)
            idx = _cells_overlapping(mesh, phi.x_lo, phi.x_hi, 1, n - 1)
            for tq, wq in zip(t_nodes, t_weights):
                tau = tq - t0s
                if idx is not None:
                    xf, wf, ff, xi, cop, _ = _interior_cloud(
                        mesh, step, batch, idx, phi.x_lo, phi.x_hi, tau
                    )
                    budget.spend(xf.size)
                    u_rp = batch.sample(ff, xi)
                    a_pt = step.A[idx][cop]
                    ap_pt = step.A_prime[idx][cop]
                    u_now = ode_step(
                        model, u_rp, a_pt, ap_pt, xf, tau,
                        correction=correction, n_sub=n_sub, validate=False,
                    )
                    pv = phi.phi(tq, xf)
                    pt = phi.phi_t(tq, xf)
                    px = phi.phi_x(tq, xf)
                    fv = model.flux(a_pt, u_now, validate=False)
                    gv = model.source(a_pt, u_now, xf, validate=False)
                    integrand = (
                        -u_now * pt[:, None] - fv * px[:, None] - gv * pv[:, None]
                    )
                    res.eps += wq * np.sum(wf[:, None] * integrand, axis=0)
                # pinned boundary cells contribute with constant u, no fans
                for cell in (0, n):
                    blo = max(edges[cell], phi.x_lo)
                    bhi = min(edges[cell + 1], phi.x_hi)
                    if bhi <= blo:
                        continue
                    xn, xw = _gauss(blo, bhi)
                    u_c = np.broadcast_to(step.u_start[cell], (xn.size, model.state_dim))
                    a_c = np.broadcast_to(step.A[cell], (xn.size, model.metric_dim))
                    fv = model.flux(a_c, u_c, validate=False)
                    gv = model.source(a_c, u_c, xn, validate=False)
                    integrand = (
                        -u_c * phi.phi_t(tq, xn)[:, None]
                        - fv * phi.phi_x(tq, xn)[:, None]
                        - gv * phi.phi(tq, xn)[:, None]
                    )
                    res.eps += wq * np.sum(xw[:, None] * integrand, axis=0)
            # boundary flux term I2 (zero for interior-supported phi)
            phi_at_min = phi.phi(np.array(t_nodes), np.full(4, mesh.r_min))
            phi_at_max = phi.phi(np.array(t_nodes), np.full(4, mesh.r_max))
            if np.any(phi_at_min != 0.0) or np.any(phi_at_max != 0.0):
                f_min = model.flux(step.A[0], step.u_start[0], validate=False)
                f_max = model.flux(step.A[n], step.u_start[n], validate=False)
                res.I2 += np.sum(
                    t_weights[:, None]
                    * (phi_at_min[:, None] * f_min - phi_at_max[:, None] * f_max),
                    axis=0,
                )
        # jump across the level at the top of this step
        t_lv = step.t_end
        if include_final_jump and phi.t_lo <= t_lv <= phi.t_hi:
            idx = _cells_overlapping(mesh, phi.x_lo, phi.x_hi, 1, n - 1)
            if idx is not None:
                xf, wf, ff, xi, cop, _ = _interior_cloud(
                    mesh, step, batch, idx, phi.x_lo, phi.x_hi, step.dt
                )
                budget.spend(xf.size)
                u_minus = ode_step(
                    model,
                    batch.sample(ff, xi),
                    step.A[idx][cop],
                    step.A_prime[idx][cop],
                    xf,
                    step.dt,
                    correction=correction,
                    n_sub=n_sub,
                    validate=False,
                )
                u_plus = step.u_end[idx][cop]
                pv = phi.phi(t_lv, xf)
                res.eps1 += np.sum(wf[:, None] * (u_plus - u_minus) * pv[:, None], axis=0)


def weak_form_residuals(
    trajectory: Trajectory,
    phis,
    *,
    correction: bool | None = None,
    n_sub: int | None = None,
    budget: int = DEFAULT_QUADRATURE_BUDGET,
) -> list[WeakFormResult]:
    """Residual eps and jump residual eps1 for every test function, in one pass.

    The ODE map uses the same correction mode and substep count as the
    run that produced the trajectory unless overridden.
    """
    if isinstance(phis, TestFunction):
        phis = [phis]
    model = trajectory.model
    mesh = trajectory.mesh
    if correction is None:
        correction = trajectory.correction
    if n_sub is None:
        n_sub = trajectory.n_sub
    tol = 1e-12 * max(1.0, abs(trajectory.t_start), abs(trajectory.t_final))
    for phi in phis:
        if phi.t_lo < trajectory.t_start - tol or phi.t_hi > trajectory.t_final + tol:
            raise SupportCoverageError(
                f"trajectory [{trajectory.t_start}, {trajectory.t_final}] does not "
                f"cover the support [{phi.t_lo}, {phi.t_hi}] of {phi.label or 'phi'}"
            )
    d = model.state_dim
    results = [
        WeakFormResult(phi, np.zeros(d), np.zeros(d), np.zeros(d), np.zeros(d))
        for phi in phis
    ]
    # I1: initial term, nonzero only for test functions alive at t_start.
    u0 = trajectory.initial.u
    edges = mesh.edges()
    for phi, res in zip(phis, results):
        if phi.t_lo <= trajectory.t_start <= phi.t_hi:
            idx = _cells_overlapping(mesh, phi.x_lo, phi.x_hi, 0, mesh.n)
            if idx is not None:
                for i in idx:
                    blo = max(edges[i], phi.x_lo)
                    bhi = min(edges[i + 1], phi.x_hi)
                    if bhi <= blo:
                        continue
                    xn, xw = _gauss(blo, bhi)
                    res.I1 += np.sum(
                        xw[:, None] * u0[i] * phi.phi(trajectory.t_start, xn)[:, None],
                        axis=0,
                    )
    pb = _PointBudget(budget)
    for step in trajectory.steps:
        batch = step.fan_batch(model, mesh)
        _step_contributions(
            model, mesh, step, batch, phis, results, correction, n_sub, pb, True
        )
    for res in results:
        res.eps = res.eps - res.I1 - res.I2
    return results


def residual(trajectory: Trajectory, phi: TestFunction, **kw) -> np.ndarray:
    """Weak-form residual eps for one test function; shape (d,)."""
    return weak_form_residuals(trajectory, [phi], **kw)[0].eps


def jump_residual(trajectory: Trajectory, phi: TestFunction, **kw) -> np.ndarray:
    """Jump residual eps1 for one test function; shape (d,)."""
    return weak_form_residuals(trajectory, [phi], **kw)[0].eps1


# ---------------------------------------------------------------------------
# lemma checks
# ---------------------------------------------------------------------------


@dataclass
class AverageBoundCheck:
    ok: bool
    max_deviation: float
    sup_pair_diff: float
    tv: float
    witness: int | None = None


def lemma_average_bound_check(samples) -> AverageBoundCheck:
    """Exact chain |ubar - u(x_k)| <= sup |u(a) - u(b)| <= TV for one sample set.

    Deviations and pair differences use the Euclidean norm; TV uses the
    1-norm of the jumps, which upper-bounds the Euclidean version, so
    the chain is exact up to floating-point roundoff.
    """
    u = np.asarray(samples, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    ubar = u.mean(axis=0)
    dev = np.sqrt(np.sum((u - ubar) ** 2, axis=1))
    k_max = int(np.argmax(dev))
    diff = u[:, None, :] - u[None, :, :]
    sup = float(np.max(np.sqrt(np.sum(diff**2, axis=2))))
    tv = total_variation(u)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(u))))
    ok = dev[k_max] <= sup + tol and sup <= tv + tol
    return AverageBoundCheck(bool(ok), float(dev[k_max]), sup, tv, None if ok else k_max)


def lemma_average_bound_batch(batch) -> tuple[int, AverageBoundCheck | None]:
    """Vectorised version over a batch of sample sets, shape (B, K) or (B, K, d).

    Returns (violations, first_failing_check_or_None).
    """
    u = np.asarray(batch, dtype=np.float64)
    if u.ndim == 2:
        u = u[:, :, None]
    ubar = u.mean(axis=1, keepdims=True)
    dev = np.sqrt(np.sum((u - ubar) ** 2, axis=2)).max(axis=1)
    diff = u[:, :, None, :] - u[:, None, :, :]
    sup = np.sqrt(np.sum(diff**2, axis=3)).max(axis=(1, 2))
    tv = np.abs(np.diff(u, axis=1)).sum(axis=(1, 2))
    tol = 1e-12 * np.maximum(1.0, np.max(np.abs(u), axis=(1, 2)))
    bad = ~((dev <= sup + tol) & (sup <= tv + tol))
    n_bad = int(np.count_nonzero(bad))
    if n_bad == 0:
        return 0, None
    first = int(np.argmax(bad))
    return n_bad, lemma_average_bound_check(u[first])


def lemma_ode_average_check(
    model: BalanceLawModel,
    fan: RiemannFan,
    interval,
    dt: float,
    phi_x,
    *,
    A_prime,
    correction: bool = True,
    n_sub: int = 4,
    sup_norm: float = 1.0,
    n_dense: int = 4097,
) -> float:
    """Measured constant of the averaged-versus-pointwise ODE bound.

    Computes C = |int { uhat(dt, ubar, x) - uhat(dt, u_fan(x), x) } phi dx|
    / (sup|phi| dx dt TV), where ubar is the exact fan average over the
    interval and TV the total variation of the fan trace at the top of
    the cell.  Returns 0 for constant data.
    """
    x_lo, x_hi = (float(v) for v in interval)
    x0 = fan.origin[1]
    A = fan.frozen_metric
    A_prime = np.asarray(A_prime, dtype=np.float64).reshape(model.metric_dim)
    ubar = fan.average(x_lo, x_hi, dt)

    # subdivide at wave rays, then Gauss per piece
    rays = []
    for w in fan.waves:
        for s in (w.left_speed, w.right_speed):
            pos = x0 + s * dt
            if x_lo < pos < x_hi:
                rays.append(pos)
    breaks = np.array(sorted([x_lo, *rays, x_hi]))
    mids = 0.5 * (breaks[1:] + breaks[:-1])
    halfs = 0.5 * (breaks[1:] - breaks[:-1])
    xs = (mids[:, None] + halfs[:, None] * _GL_NODES).reshape(-1)
    ws = (halfs[:, None] * _GL_WEIGHTS).reshape(-1)

    u_rp = fan.sample_many((xs - x0) / dt)
    a_pt = np.broadcast_to(A, (xs.size, model.metric_dim))
    ap_pt = np.broadcast_to(A_prime, (xs.size, model.metric_dim))
    u_hat_rp = ode_step(
        model, u_rp, a_pt, ap_pt, xs, dt, correction=correction, n_sub=n_sub, validate=False
    )
    u_hat_bar = ode_step(
        model,
        np.broadcast_to(ubar, u_rp.shape),
        a_pt,
        ap_pt,
        xs,
        dt,
        correction=correction,
        n_sub=n_sub,
        validate=False,
    )
    pv = np.asarray(phi_x(xs), dtype=np.float64)
    lhs = np.abs(np.sum(ws[:, None] * (u_hat_bar - u_hat_rp) * pv[:, None], axis=0)).sum()

    dense = np.linspace(x_lo, x_hi, n_dense)
    tv = total_variation(fan.sample_many((dense - x0) / dt))
    if tv == 0.0 or lhs == 0.0:
        return 0.0
    return float(lhs / (sup_norm * (x_hi - x_lo) * dt * tv))


# ---------------------------------------------------------------------------
# mesh transfer and slope fitting
# ---------------------------------------------------------------------------


def project_cell_averages(u_fine: np.ndarray, mesh_fine: Mesh, mesh_coarse: Mesh) -> np.ndarray:
    """Exact cell averages of a piecewise-constant fine field on a coarser mesh.

    Works for any pair of meshes covering the same interval: the
    cumulative integral of the fine field is piecewise linear, so
    evaluating it at the coarse edges by linear interpolation is exact.
    """
    ef = mesh_fine.edges()
    ec = mesh_coarse.edges()
    d = u_fine.shape[1]
    out = np.empty((mesh_coarse.n_cells, d))
    widths = np.diff(ef)
    for c in range(d):
        cum = np.concatenate([[0.0], np.cumsum(u_fine[:, c] * widths)])
        at_coarse = np.interp(ec, ef, cum)
        out[:, c] = np.diff(at_coarse) / np.diff(ec)
    return out


def l1_difference(u_coarse: np.ndarray, mesh_coarse: Mesh, u_fine: np.ndarray, mesh_fine: Mesh) -> float:
    """L1 distance after projecting the finer field onto the coarser mesh."""
    proj = project_cell_averages(u_fine, mesh_fine, mesh_coarse)
    return float(np.sum(np.abs(u_coarse - proj) * np.diff(mesh_coarse.edges())[:, None]))


def fit_loglog_slope(dx, values, n_finest: int = 4):
    """Least-squares slope of log2(values) against log2(dx).

    Uses the finest ``n_finest`` levels.  Returns (slope, stderr); the
    stderr is the usual regression standard error of the slope (it is
    rough for four points but flags bad fits).
    """
    dx = np.asarray(dx, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(dx)
    dx, values = dx[order], values[order]
    k = min(n_finest, dx.size)
    dx, values = dx[:k], values[:k]
    if np.any(values <= 0.0):
        return math.nan, math.nan
    lx = np.log2(dx)
    ly = np.log2(values)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope = float(coef[0])
    if k > 2 and res.size:
        s2 = float(res[0]) / (k - 2)
        se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    else:
        se = 0.0
    return slope, se


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------


@dataclass
class LevelResult:
    n: int
    dx: float
    n_steps: int
    dt_min: float
    dt_min_dynamical: float
    step_ratio: float
    tv_levels: np.ndarray
    eps: np.ndarray  # (n_phi,) 1-norms
    eps1: np.ndarray
    I1: np.ndarray  # (n_phi,)
    I2: np.ndarray
    wall_time: float
    mesh: Mesh = None
    u_final: np.ndarray = None

    @property
    def tv_max(self) -> float:
        return float(np.max(self.tv_levels))


@dataclass
class StudyReport:
    levels: list[LevelResult]
    eps_slopes: np.ndarray  # (n_phi,)
    eps_slope_se: np.ndarray
    eps1_slopes: np.ndarray
    eps1_slope_se: np.ndarray
    l1_cauchy: np.ndarray  # (n_levels - 1,)
    l1_slope: float
    l1_slope_se: float
    correction: bool
    boxes: list
    phi_labels: list[str] = field(default_factory=list)

    @property
    def dxs(self) -> np.ndarray:
        return np.array([lv.dx for lv in self.levels])

    @property
    def l1_ratios(self) -> np.ndarray:
        c = self.l1_cauchy
        return c[:-1] / c[1:] if c.size >= 2 else np.array([])

    @property
    def tv_spread(self) -> float:
        """Relative spread of max TV across levels (small means TV is stable)."""
        tvs = np.array([lv.tv_max for lv in self.levels])
        if np.max(tvs) == 0.0:
            return 0.0
        return float((np.max(tvs) - np.min(tvs)) / np.max(tvs))

    @property
    def dt_over_dx(self) -> np.ndarray:
        return np.array([lv.dt_min_dynamical / lv.dx for lv in self.levels])

    @property
    def dt_over_dx_spread(self) -> float:
        r = self.dt_over_dx
        return float((np.max(r) - np.min(r)) / np.max(r)) if np.max(r) > 0 else 0.0

    def min_slope(self) -> float:
        vals = [*self.eps_slopes, *self.eps1_slopes, self.l1_slope]
        vals = [v for v in vals if not math.isnan(v)]
        return min(vals) if vals else math.nan


def convergence_study(
    run_level,
    levels,
    phis,
    *,
    correction: bool = True,
    n_finest: int = 4,
) -> StudyReport:
    """Run the scheme on each mesh level and fit convergence orders.

    ``run_level(n)`` must return a :class:`~ligodunov.scheme.RunResult`
    for a mesh with n interior gridpoints and identical physics; levels
    must roughly halve dx (ratio within [1.8, 2.2]).  Per level this
    computes TV at every time level, eps and eps1 per test function, and
    L1 Cauchy differences between successive refinements at the final
    time; slopes are least-squares fits of log2(value) against log2(dx)
    over the finest ``n_finest`` levels.
    """
    levels = list(levels)
    if len(levels) < 4:
        raise ValueError("a convergence study needs at least 4 mesh levels")
    dxs_planned = []
    results: list[LevelResult] = []
    finals = []
    for n in levels:
        rr = run_level(n)
        traj = rr.trajectory
        dx = traj.mesh.dx
        dxs_planned.append(dx)
        tvs = np.array([total_variation(traj.level_u(j)) for j in range(traj.n_levels)])
        wf = weak_form_residuals(traj, phis, correction=correction)
        results.append(
            LevelResult(
                n=n,
                dx=dx,
                n_steps=rr.steps_taken,
                dt_min=rr.timeplan.dt_min,
                dt_min_dynamical=rr.timeplan.dt_min_dynamical,
                step_ratio=rr.timeplan.step_ratio,
                tv_levels=tvs,
                eps=np.array([r.eps_norm for r in wf]),
                eps1=np.array([r.eps1_norm for r in wf]),
                I1=np.array([float(np.sum(np.abs(r.I1))) for r in wf]),
                I2=np.array([float(np.sum(np.abs(r.I2))) for r in wf]),
                wall_time=rr.wall_time,
                mesh=traj.mesh,
                u_final=rr.final_state.u.copy(),
            )
        )
        finals.append((traj.mesh, rr.final_state.u))
    ratios = np.array(dxs_planned[:-1]) / np.array(dxs_planned[1:])
    if np.any((ratios < 1.8) | (ratios > 2.2)):
        raise ValueError(f"levels must roughly halve dx; got ratios {ratios}")

    dxs = np.array(dxs_planned)
    n_phi = len(phis)
    eps_slopes = np.empty(n_phi)
    eps_se = np.empty(n_phi)
    eps1_slopes = np.empty(n_phi)
    eps1_se = np.empty(n_phi)
    for p in range(n_phi):
        eps_slopes[p], eps_se[p] = fit_loglog_slope(
            dxs, [lv.eps[p] for lv in results], n_finest
        )
        eps1_slopes[p], eps1_se[p] = fit_loglog_slope(
            dxs, [lv.eps1[p] for lv in results], n_finest
        )
    l1 = np.array(
        [
            l1_difference(finals[k][1], finals[k][0], finals[k + 1][1], finals[k + 1][0])
            for k in range(len(finals) - 1)
        ]
    )
    l1_slope, l1_se = fit_loglog_slope(dxs[:-1], l1, n_finest)
    return StudyReport(
        levels=results,
        eps_slopes=eps_slopes,
        eps_slope_se=eps_se,
        eps1_slopes=eps1_slopes,
        eps1_slope_se=eps1_se,
        l1_cauchy=l1,
        l1_slope=l1_slope,
        l1_slope_se=l1_se,
        correction=correction,
        boxes=[(p.t_lo, p.t_hi, p.x_lo, p.x_hi) for p in phis],
        phi_labels=[p.label for p in phis],
    )


# ---------------------------------------------------------------------------
# randomized model oracles (used by the check command)
# ---------------------------------------------------------------------------


def _random_admissible(model: BalanceLawModel, rng: np.random.Generator, count: int):
    A = rng.uniform(0.2, 3.0, size=(count, model.metric_dim))
    if model.state_dim == 1:
        u = rng.uniform(-3.0, 3.0, size=(count, 1))
    else:
        rho = rng.uniform(0.1, 5.0, size=count)
        v = rng.uniform(-2.0, 2.0, size=count)
        u = np.stack([rho, rho * v], axis=-1)
    return A, u


def gradient_oracle_check(
    model: BalanceLawModel, rng: np.random.Generator, count: int, *, h: float = 1e-6,
    rtol: float = 1e-6,
):
    """Central finite differences of the flux against the analytic metric gradient."""
    A, u = _random_admissible(model, rng, count)
    grad = model.flux_grad_A(A, u, validate=False)
    worst = 0.0
    witness = None
    for k in range(model.metric_dim):
        e = np.zeros(model.metric_dim)
        e[k] = h
        fd = (model.flux(A + e, u, validate=False) - model.flux(A - e, u, validate=False)) / (
            2.0 * h
        )
        scale = np.maximum(1.0, np.abs(grad[..., k]))
        err = np.abs(fd - grad[..., k]) / scale
        m = float(np.max(err))
        if m > worst:
            worst = m
            witness = (int(np.argmax(np.max(err, axis=-1))), k)
    return worst <= rtol, worst, witness


def eigen_oracle_check(
    model: BalanceLawModel, rng: np.random.Generator, count: int, *, h: float = 1e-7,
    resid_tol: float = 1e-10, speed_rtol: float = 1e-5,
):
    """Numeric eigen-decomposition of the finite-difference flux Jacobian.

    Checks the eigenvector residual of the decomposition itself and
    compares the sorted eigenvalues with the model's wave speeds.
    """
    A, u = _random_admissible(model, rng, count)
    d = model.state_dim
    speeds = model.wave_speeds(A, u, validate=False)
    worst_resid = 0.0
    worst_speed = 0.0
    for i in range(count):
        J = np.empty((d, d))
        for c in range(d):
            e = np.zeros(d)
            e[c] = h * max(1.0, abs(u[i, c]))
            J[:, c] = (
                model.flux(A[i], u[i] + e, validate=False)
                - model.flux(A[i], u[i] - e, validate=False)
            ) / (2.0 * e[c])
        lam, vec = np.linalg.eig(J)
        if np.any(np.abs(lam.imag) > 1e-9 * max(1.0, float(np.max(np.abs(lam))))):
            return False, math.inf, i
        lam = lam.real
        scale = max(1.0, float(np.max(np.abs(J))))
        for c in range(d):
            r = float(np.linalg.norm(J @ vec[:, c].real - lam[c] * vec[:, c].real))
            worst_resid = max(worst_resid, r / scale)
        err = np.max(np.abs(np.sort(lam) - speeds[i]) / np.maximum(1.0, np.abs(speeds[i])))
        worst_speed = max(worst_speed, float(err))
    ok = worst_resid <= resid_tol and worst_speed <= speed_rtol
    return ok, max(worst_resid, worst_speed), None
