"""Reduction pipeline and time integration of the parabolic flow

    du/dt = beta log(lambda) - log(eta),
    lambda = 1 + u_zzb / g,   eta = 1 - u_wwb / h,

with classical four-stage explicit stepping under an adaptive stability
limit.  The admissibility cone (lambda > 0, eta > 0) is enforced at every
stage; a violated stage rejects the step, halves dt and retries, so that
persistent failure is loud rather than silently degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityLost, ConfigurationError, NumericalFailure
from .geometry import KAHLER_PRODUCT, Background
from .grid_field import (
    RealField,
    TorusGrid,
    deriv_data,
    exponential_filter,
    factor_laplacians,
    poisson_solve_factor,
)

MAX_STEP_RETRIES = 8


@dataclass
class FlowParams:
    beta: float
    t_end: float
    cfl: float = 0.5
    dt_max: float = 1.0
    steady_tol: float = 1e-9
    admissibility_floor: float = 1e-10
    snapshot_stride: int = 1
    steady_criterion: str = "osc"   # "osc" pre-gauge, "norm" for gauged runs
    spectral_filter: bool = False   # exponential damping of top modes

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if not (0.0 < self.cfl <= 1.0):
            raise ConfigurationError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.t_end < 0.0 or self.dt_max <= 0.0 or self.steady_tol <= 0.0:
            raise ConfigurationError("t_end, dt_max, steady_tol must be positive")
        if self.admissibility_floor <= 0.0:
            raise ConfigurationError("admissibility_floor must be positive")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot_stride must be >= 1")
        if self.steady_criterion not in ("osc", "norm"):
            raise ConfigurationError("steady_criterion must be 'osc' or 'norm'")


@dataclass
class FlowState:
    """One snapshot of the flow: potential, time, cached traces and speed."""

    u: RealField
    t: float
    lam: RealField
    eta: RealField
    du_dt: RealField


@dataclass
class Trajectory:
    grid: TorusGrid
    beta: float
    params: FlowParams
    snapshots: list[FlowState] = field(default_factory=list)
    dts: list[float] = field(default_factory=list)
    termination: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.snapshots]


# ---------------------------------------------------------------------------
# reductions


def normalize_exponents(alpha: float, beta: float, f: RealField | None):
    """Rescale a two-exponent problem to the unit-second-exponent form.

    Returns (beta/alpha, f/alpha, alpha); integrating the rescaled flow to
    time alpha*T reproduces the original solution at time T.
    """
    if alpha <= 0.0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    if not (0.0 < beta <= alpha):
        raise ConfigurationError(
            f"flow form requires 0 < beta <= alpha, got beta={beta}, alpha={alpha}"
        )
    f_scaled = None if f is None else RealField(f.grid, f.data / alpha)
    return beta / alpha, f_scaled, alpha


def shift_min_zero(u: RealField) -> RealField:
    return RealField(u.grid, u.data - float(u.data.min()))


def lambda_eta(
    u: RealField, bg: Background, floor: float = 1e-10, t: float | None = None
):
    """Pointwise trace factors; raises AdmissibilityLost at the floor."""
    lam, eta = _lambda_eta_data(u.data, bg, floor, t)
    return RealField(u.grid, lam), RealField(u.grid, eta)


def _lambda_eta_data(u_data: np.ndarray, bg: Background, floor: float, t=None):
    u_zzb, u_wwb = factor_laplacians(bg.grid, u_data)
    lam = 1.0 + u_zzb / bg.g.data
    eta = 1.0 - u_wwb / bg.h.data
    lam_min = float(lam.min())
    eta_min = float(eta.min())
    if not (lam_min > floor):
        raise AdmissibilityLost(
            f"lambda reached {lam_min:.3e} (floor {floor:.1e})",
            t=t, which="lambda", value=lam_min,
        )
    if not (eta_min > floor):
        raise AdmissibilityLost(
            f"eta reached {eta_min:.3e} (floor {floor:.1e})",
            t=t, which="eta", value=eta_min,
        )
    return lam, eta


def flow_speed(
    lam: np.ndarray, eta: np.ndarray, beta: float, forcing: np.ndarray | None = None
) -> np.ndarray:
    """beta log(lambda) - log(eta), minus the forcing when present."""
    s = beta * np.log(lam) - np.log(eta)
    if forcing is not None:
        s = s - forcing
    return s


def rhs(state: FlowState, bg: Background, beta: float,
        forcing: RealField | None = None) -> RealField:
    f = None if forcing is None else forcing.data
    return RealField(
        state.u.grid, flow_speed(state.lam.data, state.eta.data, beta, f)
    )


def make_state(
    u: RealField, bg: Background, beta: float, t: float,
    floor: float = 1e-10, forcing: RealField | None = None,
) -> FlowState:
    lam, eta = lambda_eta(u, bg, floor, t)
    f = None if forcing is None else forcing.data
    speed = flow_speed(lam.data, eta.data, beta, f)
    return FlowState(u=u, t=t, lam=lam, eta=eta, du_dt=RealField(u.grid, speed))


# ---------------------------------------------------------------------------
# stepping


def spectral_radius_bounds(grid: TorusGrid) -> tuple[float, float]:
    """Spectral radii of the two factor quarter-Laplacians."""
    n1, n2, n3, n4 = grid.shape
    L1, L2, L3, L4 = grid.periods
    kz = 0.25 * ((math.pi * n1 / L1) ** 2 + (math.pi * n2 / L2) ** 2)
    kw = 0.25 * ((math.pi * n3 / L3) ** 2 + (math.pi * n4 / L4) ** 2)
    return kz, kw


def dt_adaptive(
    state: FlowState, bg: Background, beta: float, cfl: float, dt_max: float
) -> float:
    """Stability-limited step: cfl / rho with rho the sup of the linearised
    operator's coefficient times the factor Laplacian spectral radius."""
    kz, kw = spectral_radius_bounds(state.u.grid)
    rho = (
        float(np.max(beta / (bg.g.data * state.lam.data))) * kz
        + float(np.max(1.0 / (bg.h.data * state.eta.data))) * kw
    )
    return min(dt_max, cfl / rho)


def _speed_of(u_data, bg, beta, floor, forcing, t):
    lam, eta = _lambda_eta_data(u_data, bg, floor, t)
    return flow_speed(lam, eta, beta, forcing)


def _step_rk4_full(u_data, bg, beta, dt, floor, forcing, t, k1=None):
    """One classical four-stage step; every stage is admissibility-checked.

    Returns (u_new, lam_new, eta_new, speed_new): the trailing
    admissibility check of the accepted state doubles as the first stage
    of the next step, so nothing is evaluated twice across the run loop.
    """
    if k1 is None:
        k1 = _speed_of(u_data, bg, beta, floor, forcing, t)
    k2 = _speed_of(u_data + 0.5 * dt * k1, bg, beta, floor, forcing, t)
    k3 = _speed_of(u_data + 0.5 * dt * k2, bg, beta, floor, forcing, t)
    k4 = _speed_of(u_data + dt * k3, bg, beta, floor, forcing, t)
    u_new = u_data + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    lam_new, eta_new = _lambda_eta_data(u_new, bg, floor, t)
    return u_new, lam_new, eta_new, flow_speed(lam_new, eta_new, beta, forcing)


def step_rk4(
    u_data: np.ndarray,
    bg: Background,
    beta: float,
    dt: float,
    floor: float = 1e-10,
    forcing: np.ndarray | None = None,
    t: float = 0.0,
) -> np.ndarray:
    return _step_rk4_full(u_data, bg, beta, dt, floor, forcing, t)[0]


def step_with_rejection(
    u_data, bg, beta, dt, floor, forcing, t, k1=None
):
    """Step, halving dt on admissibility loss up to MAX_STEP_RETRIES."""
    trial = dt
    last = None
    for _ in range(MAX_STEP_RETRIES + 1):
        try:
            out = _step_rk4_full(u_data, bg, beta, trial, floor, forcing, t, k1)
            return out, trial
        except AdmissibilityLost as exc:
            last = exc
            trial *= 0.5
    raise NumericalFailure(
        f"step rejected {MAX_STEP_RETRIES} times at t = {t:.6g}: {last}"
    )


def run(
    bg: Background,
    u0: RealField,
    params: FlowParams,
    forcing: RealField | None = None,
    checkpoint_times: list[float] | None = None,
) -> Trajectory:
    """Integrate until t_end, steadiness, or failure.

    Snapshots are taken every snapshot_stride accepted steps plus at every
    checkpoint time and at termination.  Steadiness is judged on the speed
    field: oscillation below steady_tol ("osc", the right notion before
    gauging, where the flow may drift at a constant rate) or sup-norm
    below steady_tol ("norm", for gauged problems).
    """
    beta = params.beta
    floor = params.admissibility_floor
    f = None if forcing is None else forcing.data
    grid = u0.grid
    traj = Trajectory(grid=grid, beta=beta, params=params)
    traj.meta["forcing"] = f
    traj.meta["reduced"] = forcing is None and abs(float(u0.data.min())) < 1e-12
    u_zw0 = float(np.max(np.abs(deriv_data(grid, u0.data, "z w"))))
    traj.meta["split_initial"] = bool(
        u_zw0 < 1e-10 * (1.0 + float(np.max(np.abs(u0.data))))
    )

    state = make_state(u0.copy(), bg, beta, 0.0, floor, forcing)
    traj.snapshots.append(state)
    traj.dts.append(0.0)

    cps = sorted(t for t in (checkpoint_times or []) if 0.0 < t <= params.t_end)

    def is_steady(speed: np.ndarray) -> tuple[bool, float]:
        if params.steady_criterion == "osc":
            r = float(speed.max() - speed.min())
        else:
            r = float(np.max(np.abs(speed)))
        return r < params.steady_tol, r

    steady0, _ = is_steady(state.du_dt.data)
    if steady0 or params.t_end == 0.0:
        traj.termination = "steady" if steady0 else "t_end"
        return traj

    u = u0.data.copy()
    lam, eta, speed = state.lam.data, state.eta.data, state.du_dt.data
    kz, kw = spectral_radius_bounds(grid)
    t = 0.0
    step_i = 0
    cp_idx = 0
    eps = 1e-12
    while t < params.t_end - eps:
        rho = (
            float(np.max(beta / (bg.g.data * lam))) * kz
            + float(np.max(1.0 / (bg.h.data * eta))) * kw
        )
        dt = min(params.dt_max, params.cfl / rho, params.t_end - t)
        hit_cp = False
        if cp_idx < len(cps):
            remaining = cps[cp_idx] - t
            if remaining <= dt + eps:
                dt = remaining
                hit_cp = True
        try:
            (u, lam, eta, speed), dt_used = step_with_rejection(
                u, bg, beta, dt, floor, f, t, k1=speed
            )
            if params.spectral_filter:
                u = exponential_filter(grid, u)
                lam, eta = _lambda_eta_data(u, bg, floor, t)
                speed = flow_speed(lam, eta, beta, f)
        except (NumericalFailure, AdmissibilityLost) as exc:
            traj.termination = "failed"
            traj.meta["failed_at"] = t
            # surface the failing time and the partial trajectory so the
            # caller can dump the last admissible state
            exc.trajectory = traj
            raise
        t += dt_used
        step_i += 1
        if hit_cp and dt_used == dt:
            cp_idx += 1
        at_snapshot = (
            step_i % params.snapshot_stride == 0
            or t >= params.t_end - eps
            or (hit_cp and dt_used == dt)
        )
        if at_snapshot:
            snap = FlowState(
                u=RealField(grid, u.copy()), t=t,
                lam=RealField(grid, lam.copy()), eta=RealField(grid, eta.copy()),
                du_dt=RealField(grid, speed.copy()),
            )
            traj.snapshots.append(snap)
            traj.dts.append(dt_used)
            steady, res = is_steady(speed)
            if steady:
                traj.termination = "steady"
                traj.meta["steady_residual"] = res
                return traj
    traj.termination = "t_end"
    return traj


# ---------------------------------------------------------------------------
# gauge step on product backgrounds


@dataclass
class GaugeResult:
    u_inf: RealField
    b_plus: float
    b_minus: float
    g_new: np.ndarray          # coefficient of the gauged background
    h_new: np.ndarray


def gauge_out_f(
    bg: Background, f_plus: RealField, f_minus: RealField, beta: float
) -> GaugeResult:
    """Absorb split forcing into the background on a product.

    Solves the two factor Poisson problems for the steady potential
    u_inf = u_inf_plus + u_inf_minus with

        (u_inf_plus)_zzb  = g (exp((f_plus + b_plus)/beta) - 1),
        (u_inf_minus)_wwb = h (1 - exp(-(f_minus + b_minus))),

    where b_plus, b_minus are the unique constants making each right-hand
    side integrable on its factor (closed-form roots of monotone mean
    equations).  When the forcing satisfies the compatibility condition,
    both constants vanish to rounding.
    """
    if bg.kind != KAHLER_PRODUCT:
        raise ConfigurationError("gauge step is supported on product backgrounds only")
    grid = bg.grid
    _require_factor_pure(f_plus, axes=(2, 3), name="f_plus")
    _require_factor_pure(f_minus, axes=(0, 1), name="f_minus")
    g = bg.g.data
    h = bg.h.data

    mean_g = float(g.mean())
    mean_ge = float((g * np.exp(f_plus.data / beta)).mean())
    b_plus = beta * math.log(mean_g / mean_ge)

    mean_h = float(h.mean())
    mean_he = float((h * np.exp(-f_minus.data)).mean())
    b_minus = math.log(mean_he / mean_h)

    rhs_plus = g * (np.exp((f_plus.data + b_plus) / beta) - 1.0)
    rhs_minus = h * (1.0 - np.exp(-(f_minus.data + b_minus)))
    u_plus = poisson_solve_factor(RealField(grid, rhs_plus), "z")
    u_minus = poisson_solve_factor(RealField(grid, rhs_minus), "w")
    g_new = g * np.exp((f_plus.data + b_plus) / beta)
    h_new = h * np.exp(-(f_minus.data + b_minus))
    return GaugeResult(
        u_inf=RealField(grid, u_plus.data + u_minus.data),
        b_plus=b_plus,
        b_minus=b_minus,
        g_new=g_new,
        h_new=h_new,
    )


def normalize_compat(
    bg: Background, f_plus: RealField, f_minus: RealField, beta: float
):
    """Shift split forcing by constants so the compatibility condition
    holds exactly: the factor means of g exp(f_plus/beta) and
    h exp(-f_minus) match those of g and h."""
    g, h = bg.g.data, bg.h.data
    shift_p = beta * math.log(
        float(g.mean()) / float((g * np.exp(f_plus.data / beta)).mean())
    )
    shift_m = math.log(float((h * np.exp(-f_minus.data)).mean()) / float(h.mean()))
    return (
        RealField(f_plus.grid, f_plus.data + shift_p),
        RealField(f_minus.grid, f_minus.data + shift_m),
    )


def _require_factor_pure(f: RealField, axes, name: str, tol: float = 1e-10):
    dep = np.max(np.abs(f.data - f.data.mean(axis=axes, keepdims=True)))
    if dep > tol * max(1.0, float(np.max(np.abs(f.data)))):
        raise ConfigurationError(
            f"{name} must depend only on its own factor (residual {dep:.3e})"
        )
