"""The locally inertial Godunov method with dynamical time dilation.

One step from t_j to t_{j+1} = t_j + dt_j:

1. ``cfl_time_step``   picks dt_j from the current maximum characteristic
   speed (dt proportional to dx), capped by the remaining time.
2. ``riemann_sweep``   solves an exact Riemann problem at every interior
   interface with the metric frozen to the interface mean
   0.5 (A_i + A_{i+1}).
3. ``godunov_average`` replaces each interior cell value by the
   conservative flux-difference average, evaluating *both* interface
   fluxes with the cell's own frozen A_i.  Flux jumps across interfaces
   therefore arise only through the metric jump, which is exactly what
   the gradient correction in the ODE step removes.
4. ``ode_step``        integrates  du/dt = g(A, u, x) - (df/dA) A'  over
   dt_j per cell (classical RK4, 4 substeps).
5. ``metric_update``   re-integrates dA/dx = h(A, u, x) left to right
   across the grid from the boundary value and rebuilds the piecewise
   linear (Lipschitz) reconstruction and its per-cell slope A'.

Boundary cells at both ends hold fixed Dirichlet data from the initial
condition.  Everything is deterministic: identical inputs produce
bitwise identical trajectories.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import CflViolationError, InadmissibleStateError
from .models import BalanceLawModel
from .riemann import FanBatch, RiemannFan, solve_riemann

__all__ = [
    "Mesh",
    "TimePlan",
    "GridState",
    "StepRecord",
    "Snapshot",
    "Trajectory",
    "RunResult",
    "cfl_time_step",
    "riemann_sweep",
    "godunov_average",
    "ode_step",
    "metric_update",
    "advance",
    "run",
]

# Relative guard below which a remaining time interval is considered zero.
_TINY_REMAINDER = 4.0 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class Mesh:
    """Uniform 1D mesh: n interior gridpoints, n + 1 cells covering [r_min, r_max]."""

    r_min: float
    r_max: float
    n: int

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ValueError("mesh requires r_min < r_max")
        if self.n < 2:
            raise ValueError("mesh requires n >= 2")

    @property
    def dx(self) -> float:
        return (self.r_max - self.r_min) / (self.n + 1)

    @property
    def n_cells(self) -> int:
        return self.n + 1

    def edges(self) -> np.ndarray:
        """Cell edges, shape (n + 2,); edges[0] == r_min, edges[-1] == r_max."""
        e = self.r_min + self.dx * np.arange(self.n + 2, dtype=np.float64)
        e[-1] = self.r_max
        return e

    def cell_centers(self) -> np.ndarray:
        return self.r_min + self.dx * (np.arange(self.n + 1, dtype=np.float64) + 0.5)


@dataclass
class GridState:
    """Solution and metric data at one time level."""

    mesh: Mesh
    t: float
    u: np.ndarray  # (n+1, d) per-cell conserved states
    A: np.ndarray  # (n+1, m) per-cell frozen metric
    A_edges: np.ndarray  # (n+2, m) continuous reconstruction knots
    A_prime: np.ndarray  # (n+1, m) per-cell slope of the reconstruction

    def copy(self) -> "GridState":
        return GridState(
            self.mesh,
            self.t,
            self.u.copy(),
            self.A.copy(),
            self.A_edges.copy(),
            self.A_prime.copy(),
        )


@dataclass
class StepRecord:
    """Everything needed to reconstruct one step's in-cell solution.

    Interface fans are not stored; they are re-solved on demand from
    (u_start, A), which is bitwise reproducible because the Riemann
    solver is deterministic.
    """

    t_start: float
    dt: float
    u_start: np.ndarray  # (n+1, d) cell values at t_start (post previous step)
    A: np.ndarray  # (n+1, m) frozen metric during the step
    A_edges: np.ndarray  # (n+2, m) reconstruction knots during the step
    A_prime: np.ndarray  # (n+1, m) metric slope during the step
    ubar: np.ndarray  # (n+1, d) Godunov averages at the top of the step
    traces: np.ndarray  # (n, d) interface trace states u*(xi = 0)
    u_end: np.ndarray  # (n+1, d) cell values at t_end (post ODE, boundaries pinned)
    capped: bool  # True when dt was set by the remaining time, not the CFL rule

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt

    def interface_metrics(self) -> np.ndarray:
        return 0.5 * (self.A[:-1] + self.A[1:])

    def solve_fans(self, model: BalanceLawModel, mesh: Mesh, *, validate: bool = False):
        """Re-solve the step's interface fans (list of n fans, left to right)."""
        A_half = self.interface_metrics()
        edges = mesh.edges()
        return [
            solve_riemann(
                model,
                A_half[k],
                self.u_start[k],
                self.u_start[k + 1],
                origin=(self.t_start, edges[k + 1]),
                validate=validate,
            )
            for k in range(mesh.n)
        ]

    def fan_batch(self, model: BalanceLawModel, mesh: Mesh) -> FanBatch:
        return FanBatch(self.solve_fans(model, mesh), model)


@dataclass
class Snapshot:
    """One time level of a trajectory, with the step data that produced it."""

    mesh: Mesh
    model_id: str
    level: int
    t: float
    u: np.ndarray
    A: np.ndarray
    A_edges: np.ndarray
    A_prime: np.ndarray
    ubar: np.ndarray  # Godunov averages feeding the ODE step at this level
    traces: np.ndarray  # (n, d) interface traces of the producing step; empty at level 0
    u_prev: np.ndarray  # cell values at the start of the producing step
    t_prev: float
    dt_prev: float


@dataclass
class TimePlan:
    """Realized time levels and step lengths of one run."""

    t_start: float
    t_end: float
    cfl: float
    dts: list[float] = field(default_factory=list)
    capped: list[bool] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.dts)

    def levels(self) -> np.ndarray:
        return self.t_start + np.concatenate([[0.0], np.cumsum(self.dts)])

    def _dyn(self) -> np.ndarray:
        d = np.asarray(self.dts)[~np.asarray(self.capped, dtype=bool)]
        return d

    @property
    def dt_min(self) -> float:
        """Smallest realized step, end cap included."""
        return float(np.min(self.dts)) if self.dts else 0.0

    @property
    def dt_min_dynamical(self) -> float:
        """Smallest CFL-chosen step; the final remainder cap is plumbing, not
        dynamics, so it is excluded from the proportionality statistics."""
        d = self._dyn()
        return float(np.min(d)) if d.size else self.dt_min

    @property
    def step_ratio(self) -> float:
        """C = max_j dt_j / min_j dt_j over the dynamical steps."""
        d = self._dyn()
        if d.size == 0:
            return 1.0
        return float(np.max(d) / np.min(d))


@dataclass
class Trajectory:
    """Initial state plus the ordered step records of one run."""

    mesh: Mesh
    model: BalanceLawModel
    initial: GridState
    steps: list[StepRecord] = field(default_factory=list)
    final_state: GridState | None = None

    @property
    def t_start(self) -> float:
        return self.initial.t

    @property
    def t_final(self) -> float:
        return self.steps[-1].t_end if self.steps else self.initial.t

    @property
    def n_levels(self) -> int:
        return len(self.steps) + 1

    def level_time(self, j: int) -> float:
        return self.initial.t if j == 0 else self.steps[j - 1].t_end

    def level_u(self, j: int) -> np.ndarray:
        return self.initial.u if j == 0 else self.steps[j - 1].u_end

    def u_at_time(self, t: float) -> np.ndarray:
        """Cell values at time t, linearly interpolated between levels."""
        times = np.array([self.level_time(j) for j in range(self.n_levels)])
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise ValueError(f"time {t} outside trajectory [{times[0]}, {times[-1]}]")
        if self.n_levels == 1:
            return self.level_u(0).copy()
        j = int(np.searchsorted(times, t, side="right")) - 1
        j = max(0, min(j, self.n_levels - 2))
        if times[j + 1] == times[j]:
            return self.level_u(j).copy()
        w = (t - times[j]) / (times[j + 1] - times[j])
        if w <= 0.0:
            return self.level_u(j).copy()
        if w >= 1.0:
            return self.level_u(j + 1).copy()
        return (1.0 - w) * self.level_u(j) + w * self.level_u(j + 1)

    def state_at_level(self, j: int) -> GridState:
        if j == 0:
            return self.initial
        if j == len(self.steps):
            if self.final_state is None:
                raise ValueError("trajectory has no final state (aborted run)")
            return self.final_state
        # Metric data at level j is the frozen data of the following step.
        nxt = self.steps[j]
        return GridState(self.mesh, nxt.t_start, nxt.u_start, nxt.A, nxt.A_edges, nxt.A_prime)

    def snapshot(self, j: int) -> Snapshot:
        d = self.model.state_dim
        if j == 0:
            s = self.initial
            return Snapshot(
                self.mesh, self.model.model_id, 0, s.t, s.u.copy(), s.A.copy(),
                s.A_edges.copy(), s.A_prime.copy(), s.u.copy(),
                np.zeros((0, d)), s.u.copy(), s.t, 0.0,
            )
        step = self.steps[j - 1]
        state = self.state_at_level(j)
        return Snapshot(
            self.mesh, self.model.model_id, j, step.t_end, step.u_end.copy(),
            state.A.copy(), state.A_edges.copy(), state.A_prime.copy(),
            step.ubar.copy(), step.traces.copy(), step.u_start.copy(),
            step.t_start, step.dt,
        )


@dataclass
class RunResult:
    trajectory: Trajectory
    timeplan: TimePlan
    final_state: GridState
    wall_time: float
    steps_taken: int


# ---------------------------------------------------------------------------
# the five operations
# ---------------------------------------------------------------------------


def cfl_time_step(model: BalanceLawModel, state: GridState, cfl: float, t_end: float):
    """dt_j = min(cfl dx / max |speed|, t_end - t_j); returns (dt, capped)."""
    remaining = t_end - state.t
    speeds = model.wave_speeds(state.A, state.u, validate=False)
    s_max = float(np.max(np.abs(speeds)))
    if s_max > 0.0:
        dt = cfl * state.mesh.dx / s_max
        if remaining <= dt:
            return remaining, True
        return dt, False
    return remaining, True


def riemann_sweep(model: BalanceLawModel, state: GridState, *, validate: bool = True):
    """Interface fans with frozen interface metric, plus the trace states u*(0)."""
    mesh = state.mesh
    A_half = 0.5 * (state.A[:-1] + state.A[1:])
    edges = mesh.edges()
    fans: list[RiemannFan] = []
    traces = np.empty((mesh.n, model.state_dim))
    for k in range(mesh.n):
        try:
            fan = solve_riemann(
                model,
                A_half[k],
                state.u[k],
                state.u[k + 1],
                origin=(state.t, edges[k + 1]),
                validate=validate,
            )
        except Exception as exc:
            raise type(exc)(f"interface {k} (x={edges[k + 1]:.6g}, t={state.t:.6g}): {exc}") from exc
        fans.append(fan)
        traces[k] = fan.sample(0.0)
    return fans, traces


def godunov_average(
    model: BalanceLawModel, state: GridState, traces: np.ndarray, dt: float
) -> np.ndarray:
    """Conservative averages at the top of the step.

    Interior cells:  ubar_i = u_i - (dt/dx) (f(A_i, u*_{i+1/2}) - f(A_i, u*_{i-1/2})).
    Both fluxes use the cell's own frozen A_i.  Boundary cells are pinned.
    """
    mesh = state.mesh
    n = mesh.n
    ubar = state.u.copy()
    if n >= 2:
        A_int = state.A[1:n]
        f_right = model.flux(A_int, traces[1:n], validate=False)
        f_left = model.flux(A_int, traces[0 : n - 1], validate=False)
        ubar[1:n] = state.u[1:n] - (dt / mesh.dx) * (f_right - f_left)
    ok = model.admissible_state(ubar)
    if not np.all(ok):
        bad = int(np.argwhere(~ok)[0][0])
        raise InadmissibleStateError(
            f"Godunov average left the admissible set in cell {bad} "
            f"at t={state.t:.6g} (dt={dt:.3e}): ubar={ubar[bad]}"
        )
    return ubar


def ode_step(
    model: BalanceLawModel,
    u0: np.ndarray,
    A: np.ndarray,
    A_prime: np.ndarray,
    x,
    dt: float,
    *,
    correction: bool = True,
    n_sub: int = 4,
    validate: bool = True,
) -> np.ndarray:
    """Integrate du/dt = g(A, u, x) - (df/dA) A' over dt (RK4, n_sub substeps).

    A, A_prime and x are held fixed; the one-step integration error is
    O((dt/n_sub)^5) per substep, far below the first-order signal the
    diagnostics measure.  With ``correction=False`` only the plain source
    g is integrated (the ablation mode).
    """

    def rhs(u):
        g = model.source(A, u, x, validate=False)
        if not correction:
            return g
        grad = model.flux_grad_A(A, u, validate=False)
        return g - (grad @ A_prime[..., None])[..., 0]

    u = np.asarray(u0, dtype=np.float64)
    h = dt / n_sub
    for k in range(n_sub):
        k1 = rhs(u)
        k2 = rhs(u + (0.5 * h) * k1)
        k3 = rhs(u + (0.5 * h) * k2)
        k4 = rhs(u + h * k3)
        u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if validate:
            ok = model.admissible_state(u)
            if not np.all(ok):
                bad = np.argwhere(~np.atleast_1d(ok))[0]
                raise InadmissibleStateError(
                    f"ODE step left the admissible set at substep {k + 1}/{n_sub}, "
                    f"index {bad}: u={u[tuple(bad)]}"
                )
    return u


def _rk4_metric(model, a, u, x, h):
    k1 = model.metric_rhs(a, u, x, validate=False)
    k2 = model.metric_rhs(a + (0.5 * h) * k1, u, x + 0.5 * h, validate=False)
    k3 = model.metric_rhs(a + (0.5 * h) * k2, u, x + 0.5 * h, validate=False)
    k4 = model.metric_rhs(a + h * k3, u, x + h, validate=False)
    return a + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def metric_update(
    model: BalanceLawModel, u_new: np.ndarray, mesh: Mesh, A_boundary: np.ndarray
):
    """Integrate dA/dx = h left to right; rebuild the Lipschitz reconstruction.

    Within each cell u is held at the cell value and the scan takes two
    RK4 half-steps (edge, center, edge), so the cell-center frozen value
    comes from the same integration as the edge knots.  Returns
    (A_cells, A_edges, A_prime) with A_prime the per-cell slope of the
    piecewise linear reconstruction through the edge values.
    """
    m = model.metric_dim
    n_cells = mesh.n_cells
    A_boundary = np.asarray(A_boundary, dtype=np.float64).reshape(m)
    model.require_admissible(A=A_boundary, where="metric boundary value")
    A_edges = np.empty((n_cells + 1, m))
    A_cells = np.empty((n_cells, m))
    if model.static_metric:
        A_edges[:] = A_boundary
        A_cells[:] = A_boundary
        A_prime = np.zeros((n_cells, m))
        return A_cells, A_edges, A_prime
    dx = mesh.dx
    half = 0.5 * dx
    edges = mesh.edges()
    a = A_boundary.copy()
    A_edges[0] = a
    for k in range(n_cells):
        u_k = u_new[k]
        a_mid = _rk4_metric(model, a, u_k, edges[k], half)
        a = _rk4_metric(model, a_mid, u_k, edges[k] + half, half)
        A_cells[k] = a_mid
        A_edges[k + 1] = a
    ok = model.admissible_metric(A_edges)
    if not np.all(ok):
        bad = int(np.argwhere(~ok)[0][0])
        raise InadmissibleStateError(
            f"metric integration left the admissible set at edge {bad}: A={A_edges[bad]}"
        )
    A_prime = (A_edges[1:] - A_edges[:-1]) / dx
    return A_cells, A_edges, A_prime


def advance(
    model: BalanceLawModel,
    state: GridState,
    *,
    t_end: float,
    cfl: float,
    A_boundary: np.ndarray,
    u_pinned: np.ndarray,
    correction: bool = True,
    n_sub: int = 4,
):
    """One full step; returns (new_state, StepRecord)."""
    mesh = state.mesh
    n = mesh.n
    dt, capped = cfl_time_step(model, state, cfl, t_end)
    fans, traces = riemann_sweep(model, state, validate=True)

    # Containment: every fan must stay within half a cell on each side for
    # the whole step, which is what makes the Godunov average exact.
    if fans:
        s_ext = max(f.max_abs_speed for f in fans)
        if s_ext * dt > 0.5 * mesh.dx * (1.0 + 1e-9):
            raise CflViolationError(
                f"fan containment violated at t={state.t:.6g}: extreme speed "
                f"{s_ext:.6g} over dt={dt:.3e} exceeds half a cell ({mesh.dx / 2:.3e})"
            )

    ubar = godunov_average(model, state, traces, dt)
    u_new = ubar.copy()
    if n >= 2:
        centers = mesh.cell_centers()
        u_new[1:n] = ode_step(
            model,
            ubar[1:n],
            state.A[1:n],
            state.A_prime[1:n],
            centers[1:n],
            dt,
            correction=correction,
            n_sub=n_sub,
        )
    u_new[0] = u_pinned[0]
    u_new[n] = u_pinned[1]

    A_cells, A_edges, A_prime = metric_update(model, u_new, mesh, A_boundary)
    t_new = t_end if capped else state.t + dt
    new_state = GridState(mesh, t_new, u_new, A_cells, A_edges, A_prime)
    record = StepRecord(
        t_start=state.t,
        dt=dt,
        u_start=state.u,
        A=state.A,
        A_edges=state.A_edges,
        A_prime=state.A_prime,
        ubar=ubar,
        traces=traces,
        u_end=u_new,
        capped=capped,
    )
    return new_state, record


class RunAbort(RuntimeError):
    """Wraps a failure mid-run; carries the partial trajectory for post-mortem."""

    def __init__(self, cause: BaseException, trajectory: Trajectory, timeplan: TimePlan):
        super().__init__(str(cause))
        self.cause = cause
        self.trajectory = trajectory
        self.timeplan = timeplan


def initial_grid_state(
    model: BalanceLawModel, mesh: Mesh, t0: float, u0: np.ndarray, A_boundary
) -> GridState:
    """Grid state at t0: given cell data plus the induced metric."""
    u0 = np.asarray(u0, dtype=np.float64).reshape(mesh.n_cells, model.state_dim)
    model.require_admissible(u=u0, where="initial data")
    A_cells, A_edges, A_prime = metric_update(model, u0, mesh, A_boundary)
    return GridState(mesh, t0, u0.copy(), A_cells, A_edges, A_prime)


def run(
    model: BalanceLawModel,
    mesh: Mesh,
    *,
    t_start: float,
    t_end: float,
    u0: np.ndarray,
    A_boundary,
    cfl: float = 0.45,
    correction: bool = True,
    max_steps: int | None = None,
    n_sub: int = 4,
    initial_state: GridState | None = None,
) -> RunResult:
    """March from t_start to t_end; returns the trajectory and time plan.

    ``initial_state`` continues a checkpointed run; it must have been
    produced by the same configuration for the continuation to be
    bitwise faithful.
    """
    if t_end < t_start:
        raise ValueError("t_end must not precede t_start")
    wall0 = _time.perf_counter()
    if initial_state is None:
        state = initial_grid_state(model, mesh, t_start, u0, A_boundary)
    else:
        state = initial_state
    # Pinned Dirichlet boundary data always comes from the original initial condition.
    u0_arr = np.asarray(u0, dtype=np.float64).reshape(mesh.n_cells, model.state_dim)
    u_pinned = np.stack([u0_arr[0], u0_arr[mesh.n]])
    trajectory = Trajectory(mesh, model, state.copy())
    plan = TimePlan(t_start=state.t, t_end=t_end, cfl=cfl)
    scale = max(abs(t_start), abs(t_end), 1.0)
    while state.t < t_end:
        if t_end - state.t <= _TINY_REMAINDER * scale:
            state.t = t_end
            break
        if max_steps is not None and len(trajectory.steps) >= max_steps:
            break
        try:
            state, record = advance(
                model,
                state,
                t_end=t_end,
                cfl=cfl,
                A_boundary=A_boundary,
                u_pinned=u_pinned,
                correction=correction,
                n_sub=n_sub,
            )
        except Exception as exc:
            raise RunAbort(exc, trajectory, plan) from exc
        trajectory.steps.append(record)
        plan.dts.append(record.dt)
        plan.capped.append(record.capped)
    trajectory.final_state = state
    return RunResult(
        trajectory=trajectory,
        timeplan=plan,
        final_state=state,
        wall_time=_time.perf_counter() - wall0,
        steps_taken=len(trajectory.steps),
    )
