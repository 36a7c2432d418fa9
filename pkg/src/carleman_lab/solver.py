"""Explicit time stepping for the linear stochastic wave equation.

The drift is du_t = (lap u + a1 u_t + a2 . grad u + a3 u + g) dt and the
diffusion (b1 u_t + b2 u + f) dW with one scalar Brownian motion; the update
order is semi-implicit Euler-Maruyama (u_t first, then u with the new u_t),
which reduces to plain leapfrog when all lower-order coefficients vanish.
Boundaries are a homogeneous Dirichlet ring that the support must never
reach; reaching it is an error, not a reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .fields import (
    AnalyticFn,
    BrownianPath,
    ConfigurationError,
    Grid,
    T_SYM,
    X_SYMS,
    gradient_array,
    laplacian_array,
    normal_stream,
)


class BlowUpError(FloatingPointError):
    """Non-finite field value during stepping; carries the step index."""


class PropagationError(RuntimeError):
    """Field support reached the boundary ring during a run."""


# dt is additionally capped at this multiple of 1/|b1|^2 for multiplicative noise
NOISE_DT_SAFETY = 0.1


def _coeff_sampler(coeff, grid: Grid):
    """Turn a scalar / AnalyticFn / None coefficient into t -> array-or-scalar."""
    if coeff is None:
        return lambda t: 0.0, 0.0
    if isinstance(coeff, AnalyticFn):
        mesh = list(grid.meshgrid())
        alpha = (0,) * (grid.n + 1)
        if coeff.expr.has(T_SYM):
            return lambda t: coeff.d(np.full(grid.shape, t), mesh, alpha), None
        frozen = coeff.d(np.zeros(grid.shape), mesh, alpha)
        bound = float(np.max(np.abs(frozen)))
        return lambda t: frozen, bound
    value = float(coeff)
    return lambda t: value, abs(value)


@dataclass(frozen=True)
class Coefficients:
    """Equation coefficients; scalars, AnalyticFns, or None (= 0).

    ``a2`` is a tuple with one entry per axis.  ``g`` is a deterministic drift
    source used by manufactured-solution runs.  ``b1_bound`` records the
    magnitude bound used for the noise step-size guard (required when b1 is
    time dependent).
    """

    a1: object = None
    a2: tuple = ()
    a3: object = None
    b1: object = None
    b2: object = None
    f: object = None
    g: object = None
    b1_bound: float | None = None


@dataclass
class WaveState:
    u: np.ndarray
    ut: np.ndarray
    time: float


class FieldPath:
    """Snapshots of one solved path plus the noise that drove it."""

    def __init__(self, grid: Grid, brownian: BrownianPath, stride: int):
        self.grid = grid
        self.brownian = brownian
        self.stride = stride
        self.times: list[float] = []
        self.snapshots: list[tuple[np.ndarray, np.ndarray]] = []
        self.diffusion: list[np.ndarray] = []

    def record(self, state: WaveState):
        if self.times and state.time <= self.times[-1]:
            raise ConfigurationError("snapshot times must be strictly increasing")
        self.times.append(state.time)
        self.snapshots.append((state.u.copy(), state.ut.copy()))


def _zero_ring(arr: np.ndarray):
    if arr.ndim == 1:
        arr[0] = arr[-1] = 0.0
    else:
        arr[0, :] = arr[-1, :] = 0.0
        arr[:, 0] = arr[:, -1] = 0.0


def _ring_max(arr: np.ndarray, rings: int = 2) -> float:
    worst = 0.0
    for r in range(rings):
        if arr.ndim == 1:
            worst = max(worst, abs(float(arr[r])), abs(float(arr[-1 - r])))
        else:
            worst = max(
                worst,
                float(np.max(np.abs(arr[r, :]))),
                float(np.max(np.abs(arr[-1 - r, :]))),
                float(np.max(np.abs(arr[:, r]))),
                float(np.max(np.abs(arr[:, -1 - r]))),
            )
    return worst


def initial_state(
    grid: Grid,
    u0_fn: AnalyticFn | None,
    u1_fn: AnalyticFn | None,
    coeffs: Coefficients | None = None,
    stagger: bool = True,
) -> WaveState:
    """Sample (u0, u1) on the grid.

    With ``stagger`` the velocity is advanced half a step along the drift,
    matching the staggered structure of the update (u_t lives at half steps);
    without it the two-level scheme is only first-order accurate in space-time
    refinement at fixed CFL ratio.
    """
    mesh = list(grid.meshgrid())
    alpha = (0,) * (grid.n + 1)
    zt = np.zeros(grid.shape)
    u = u0_fn.d(zt, mesh, alpha) if u0_fn is not None else np.zeros(grid.shape)
    ut = u1_fn.d(zt, mesh, alpha) if u1_fn is not None else np.zeros(grid.shape)
    u = np.asarray(u, dtype=float).reshape(grid.shape).copy()
    ut = np.asarray(ut, dtype=float).reshape(grid.shape).copy()
    _zero_ring(u)
    _zero_ring(ut)
    if stagger:
        samplers = _make_samplers(coeffs if coeffs is not None else Coefficients(), grid)
        ut = ut - 0.5 * grid.dt * _drift_arrays(u, ut, 0.0, samplers, grid)
        _zero_ring(ut)
    return WaveState(u=u, ut=ut, time=0.0)


def step(state: WaveState, coeffs: Coefficients, dw: float, grid: Grid) -> WaveState:
    """One semi-implicit Euler-Maruyama step.

    ut' = ut + dt (lap u + a1 ut + a2 . grad u + a3 u + g) + (b1 ut + b2 u + f) dW
    u'  = u + dt ut'
    """
    samplers = _make_samplers(coeffs, grid)
    u, ut = step_arrays(state.u, state.ut, state.time, samplers, dw, grid)
    return WaveState(u=u, ut=ut, time=state.time + grid.dt)


def _make_samplers(coeffs: Coefficients, grid: Grid):
    a2 = tuple(coeffs.a2) + (None,) * (grid.n - len(coeffs.a2))
    s = {
        "a1": _coeff_sampler(coeffs.a1, grid)[0],
        "a2": [_coeff_sampler(c, grid)[0] for c in a2],
        "a3": _coeff_sampler(coeffs.a3, grid)[0],
        "b1": _coeff_sampler(coeffs.b1, grid)[0],
        "b2": _coeff_sampler(coeffs.b2, grid)[0],
        "f": _coeff_sampler(coeffs.f, grid)[0],
        "g": _coeff_sampler(coeffs.g, grid)[0],
    }
    bound = _coeff_sampler(coeffs.b1, grid)[1]
    if coeffs.b1_bound is not None:
        bound = float(coeffs.b1_bound)
    if bound is None:
        raise ConfigurationError("time-dependent b1 requires an explicit b1_bound")
    if bound > 0.0 and grid.dt > NOISE_DT_SAFETY / bound**2:
        raise ConfigurationError(
            f"dt={grid.dt} exceeds the multiplicative-noise guard {NOISE_DT_SAFETY}/|b1|^2 = {NOISE_DT_SAFETY / bound**2}"
        )
    return s


def _drift_arrays(u, ut, t, samplers, grid: Grid):
    drift = laplacian_array(u, grid.dx)
    a1 = samplers["a1"](t)
    if not np.isscalar(a1) or a1 != 0.0:
        drift = drift + a1 * ut
    for j, sampler in enumerate(samplers["a2"]):
        a2j = sampler(t)
        if not np.isscalar(a2j) or a2j != 0.0:
            drift = drift + a2j * gradient_array(u, grid.dx, j)
    a3 = samplers["a3"](t)
    if not np.isscalar(a3) or a3 != 0.0:
        drift = drift + a3 * u
    gsrc = samplers["g"](t)
    if not np.isscalar(gsrc) or gsrc != 0.0:
        drift = drift + gsrc
    return drift


def step_arrays(u, ut, t, samplers, dw, grid: Grid, diffusion_out: list | None = None):
    dt = grid.dt
    drift = _drift_arrays(u, ut, t, samplers, grid)
    diff = samplers["b1"](t) * ut + samplers["b2"](t) * u + samplers["f"](t)
    if diffusion_out is not None:
        diffusion_out.append(np.broadcast_to(np.asarray(diff, dtype=float), u.shape).copy())
    ut_new = ut + dt * drift + diff * dw
    u_new = u + dt * ut_new
    _zero_ring(u_new)
    _zero_ring(ut_new)
    return u_new, ut_new


def solve(
    init: WaveState,
    coeffs: Coefficients,
    grid: Grid,
    path: BrownianPath,
    stride: int = 1,
    keep_diffusion: bool = False,
    support_guard: bool = True,
    support_tol: float = 1e-12,
) -> FieldPath:
    """March the full horizon, recording every ``stride``-th state."""
    if path.num_steps != grid.num_steps or abs(path.dt - grid.dt) > 1e-12 * grid.dt:
        raise ConfigurationError("Brownian path discretization does not match the grid")
    samplers = _make_samplers(coeffs, grid)
    out = FieldPath(grid, path, stride)
    u, ut = init.u.copy(), init.ut.copy()
    if _ring_max(u, 1) > 0.0 or _ring_max(ut, 1) > 0.0:
        raise ConfigurationError("initial data must vanish on the boundary ring")
    out.record(WaveState(u=u, ut=ut, time=0.0))
    diffusion_sink = out.diffusion if keep_diffusion else None
    t = 0.0
    for k in range(grid.num_steps):
        u, ut = step_arrays(u, ut, t, samplers, float(path.increments[k]), grid, diffusion_sink)
        t = (k + 1) * grid.dt
        if not (np.isfinite(u).all() and np.isfinite(ut).all()):
            raise BlowUpError(f"non-finite field at step {k + 1} (t = {t})")
        if (k + 1) % stride == 0 or k + 1 == grid.num_steps:
            if support_guard:
                scale = max(1.0, float(np.max(np.abs(u))), float(np.max(np.abs(ut))))
                if _ring_max(u, 3) > support_tol * scale or _ring_max(ut, 3) > support_tol * scale:
                    raise PropagationError(
                        f"support reached the boundary ring at t = {t} (step {k + 1})"
                    )
            if (k + 1) % stride == 0:
                out.record(WaveState(u=u, ut=ut, time=t))
    if out.times[-1] < grid.t_max:
        out.record(WaveState(u=u, ut=ut, time=grid.t_max))
    return out


def leapfrog_reference(init: WaveState, grid: Grid) -> FieldPath:
    """Three-level leapfrog for the free wave, first step matched to the
    semi-implicit ordering: u^1 = u^0 + dt u_t^0 + dt^2 lap u^0."""
    dt, dx = grid.dt, grid.dx
    u_prev = init.u.copy()
    u_curr = u_prev + dt * init.ut + dt**2 * laplacian_array(u_prev, dx)
    _zero_ring(u_curr)
    out = FieldPath(grid, BrownianPath(0, dt, grid.t_max, np.zeros(grid.num_steps)), 1)
    out.record(WaveState(u=u_prev, ut=init.ut.copy(), time=0.0))
    ut = (u_curr - u_prev) / dt
    out.record(WaveState(u=u_curr.copy(), ut=ut, time=dt))
    for k in range(1, grid.num_steps):
        u_next = 2.0 * u_curr - u_prev + dt**2 * laplacian_array(u_curr, dx)
        _zero_ring(u_next)
        ut = (u_next - u_curr) / dt
        out.record(WaveState(u=u_next.copy(), ut=ut, time=(k + 1) * dt))
        u_prev, u_curr = u_curr, u_next
    return out


def manufactured_forcing(u_exact: AnalyticFn, coeffs: Coefficients) -> AnalyticFn:
    """Drift source g = u_tt - lap u - a1 u_t - a2 . grad u - a3 u for u_exact.

    Only scalar (or None) lower-order coefficients are supported; the source
    is returned as an AnalyticFn sharing u_exact's parameters.
    """
    for name, c in (("a1", coeffs.a1), ("a3", coeffs.a3)):
        if c is not None and not np.isscalar(c):
            raise ConfigurationError(f"manufactured forcing needs scalar {name}")
    for c in coeffs.a2:
        if c is not None and not np.isscalar(c):
            raise ConfigurationError("manufactured forcing needs scalar a2 entries")
    n = u_exact.n
    expr = sp.diff(u_exact.expr, T_SYM, 2)
    for j in range(n):
        expr -= sp.diff(u_exact.expr, X_SYMS[j], 2)
    if coeffs.a1 is not None:
        expr -= float(coeffs.a1) * sp.diff(u_exact.expr, T_SYM)
    for j, c in enumerate(coeffs.a2):
        if c is not None:
            expr -= float(c) * sp.diff(u_exact.expr, X_SYMS[j])
    if coeffs.a3 is not None:
        expr -= float(coeffs.a3) * u_exact.expr
    return AnalyticFn(
        f"forcing[{u_exact.name}]",
        sp.expand(expr),
        n,
        dict(zip(u_exact.param_syms, u_exact.param_values)),
    )


def total_energy(state: WaveState, grid: Grid) -> float:
    """(1/2) sum cell_volume (|grad u|^2 + u_t^2 + u^2)."""
    g2 = np.zeros(grid.shape)
    for j in range(grid.n):
        g2 += gradient_array(state.u, grid.dx, j) ** 2
    dens = g2 + state.ut**2 + state.u**2
    return 0.5 * float(np.sum(dens)) * grid.cell_volume


def scalar_noise_second_moment(
    b1: float, ut0: float, t_max: float, dt: float, paths: int, seed: int
) -> tuple[float, float]:
    """Spatially constant mode with the Laplacian suppressed: du_t = b1 u_t dW.

    Returns (Monte Carlo mean of u_t(T)^2, exact e^{b1^2 T} u_t(0)^2), using
    the same Euler-Maruyama update as the field solver.
    """
    steps = int(round(t_max / dt))
    ut = np.full(paths, float(ut0))
    dw = math.sqrt(dt) * normal_stream(seed, steps * paths).reshape(steps, paths)
    for k in range(steps):
        ut = ut + b1 * ut * dw[k]
    return float(np.mean(ut**2)), math.exp(b1**2 * t_max) * ut0**2
