"""Experiment recipes: monitored flow runs, steady-state convergence on
product backgrounds, the exponent sweep, the decoupled-factor oracle, and
the slice identity suite.  Each recipe returns (exit_code, report)."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    build_background,
    build_forcing,
    build_grid,
    build_initial,
)
from .errors import AdmissibilityLost, ConfigurationError, NumericalFailure
from .flow import (
    FlowParams,
    Trajectory,
    gauge_out_f,
    normalize_compat,
    normalize_exponents,
    run,
    shift_min_zero,
)
from .geometry import (
    BETA_MIN,
    Background,
    curvature,
    make_background,
)
from .grid_field import RealField, deriv_data, write_field
from .identities import random_test_field, verify_A, verify_B, verify_C, ManifoldSlice
from .monitors import (
    DEFAULT_CHECKS,
    OPTIONAL_CHECKS,
    CheckResult,
    c0_series,
    corrupt_trajectory,
    evaluate,
    mixed_norm,
)
from .oracle2d import run_factor_flow

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_MONITOR = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _flow_params(cfg: ExperimentConfig, beta: float, stride=None) -> FlowParams:
    return FlowParams(
        beta=beta,
        t_end=cfg.t_end * cfg.alpha,
        cfl=cfg.cfl,
        dt_max=cfg.dt_max,
        steady_tol=cfg.steady_tol,
        admissibility_floor=cfg.admissibility_floor,
        snapshot_stride=stride if stride is not None else cfg.snapshot_stride,
        steady_criterion=cfg.steady_criterion,
        spectral_filter=cfg.spectral_filter,
    )


def _enabled_checks(cfg: ExperimentConfig):
    sel = cfg.monitors_enabled.strip()
    if sel == "default":
        return list(DEFAULT_CHECKS)
    if sel == "all":
        return list(DEFAULT_CHECKS) + list(OPTIONAL_CHECKS)
    if sel == "none":
        return []
    names = sel.replace(",", " ").split()
    pool = set(DEFAULT_CHECKS) | set(OPTIONAL_CHECKS)
    for n in names:
        if n not in pool:
            raise ConfigurationError(f"unknown monitor {n!r}")
    return names


def _write_timeseries(path, traj: Trajectory, bg: Background,
                      results: dict[str, CheckResult]) -> None:
    beta = traj.beta
    series_c0, _ = c0_series(traj)
    names = list(results)
    margin_maps = []
    for name in names:
        m = {}
        for e in results[name].entries:
            m[round(e.t, 12)] = e
        margin_maps.append(m)
    cols = [
        "t", "dt", "max_du_dt", "min_du_dt", "osc_u", "min_lambda",
        "max_lambda", "min_eta", "max_eta", "c0", "sup_mixed_norm",
        "steady_residual",
    ]
    for n in names:
        cols += [f"{n}_pass", f"{n}_margin"]
    lines = [",".join(cols)]
    for i, s in enumerate(traj.snapshots):
        osc = float(s.u.data.max() - s.u.data.min())
        mix = float(np.max(mixed_norm(s, bg, beta).data))
        if traj.params.steady_criterion == "osc":
            steady_res = float(s.du_dt.data.max() - s.du_dt.data.min())
        else:
            steady_res = float(np.max(np.abs(s.du_dt.data)))
        row = [
            f"{s.t:.17g}", f"{traj.dts[i]:.17g}",
            f"{float(s.du_dt.data.max()):.17g}",
            f"{float(s.du_dt.data.min()):.17g}",
            f"{osc:.17g}",
            f"{float(s.lam.data.min()):.17g}",
            f"{float(s.lam.data.max()):.17g}",
            f"{float(s.eta.data.min()):.17g}",
            f"{float(s.eta.data.max()):.17g}",
            f"{series_c0[i]:.17g}",
            f"{mix:.17g}",
            f"{steady_res:.17g}",
        ]
        for name, m in zip(names, margin_maps):
            e = m.get(round(s.t, 12))
            if results[name].skipped is not None:
                row += ["skip", "nan"]
            elif e is None:
                row += ["", "nan"]
            else:
                row += ["1" if e.passed else "0", f"{e.margin:.17g}"]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def _summary(traj: Trajectory, results: dict[str, CheckResult]) -> dict:
    final = traj.snapshots[-1]
    checks = {}
    for name, res in results.items():
        checks[name] = {
            "passed": bool(res.passed),
            "skipped": res.skipped,
            "worst_margin": None if not res.entries else float(res.worst_margin),
            "first_failure_t": res.first_failure_t,
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "termination": traj.termination,
        "t_final": final.t,
        "steps_recorded": len(traj.snapshots),
        "final_stats": {
            "min_lambda": float(final.lam.data.min()),
            "max_lambda": float(final.lam.data.max()),
            "min_eta": float(final.eta.data.min()),
            "max_eta": float(final.eta.data.max()),
            "min_u": float(final.u.data.min()),
            "max_u": float(final.u.data.max()),
        },
        "checks": checks,
    }


def _dump_fields(out: Path, traj: Trajectory, stride: int) -> None:
    if stride > 0:
        for i, s in enumerate(traj.snapshots):
            if i % stride == 0:
                write_field(s.u, out / f"u_{i:06d}.field")
    write_field(traj.snapshots[-1].u, out / "u_final.field")


def _prepare_problem(cfg: ExperimentConfig, seed=None):
    """Grid, background, reduced initial data and forcing for a run.

    Exponent normalisation divides out alpha; split forcing on a product
    background is (optionally) gauged away into the background, leaving a
    zero-forcing reduced problem.  Returns (grid, bg, u0, forcing, info).
    """
    grid = build_grid(cfg)
    bg = build_background(cfg, grid)
    beta, _, _ = normalize_exponents(cfg.alpha, cfg.beta, None)
    u0 = build_initial(cfg, grid, bg, seed_override=seed)
    fp, fm = build_forcing(cfg, grid, beta)
    info = {"beta": beta, "gauged": False, "b_plus": 0.0, "b_minus": 0.0}
    if fp is None:
        return grid, bg, shift_min_zero(u0), None, info
    fp = RealField(grid, fp.data / cfg.alpha)
    fm = RealField(grid, fm.data / cfg.alpha)
    if bg.kind != "kahler_product":
        raise ConfigurationError(
            "forcing is supported on product backgrounds only"
        )
    if cfg.normalize_compat6:
        fp, fm = normalize_compat(bg, fp, fm, beta)
    if not cfg.gauge:
        forcing = RealField(grid, fp.data + fm.data)
        return grid, bg, u0, forcing, info
    res = gauge_out_f(bg, fp, fm, beta)
    bg2 = make_background(grid, res.g_new, res.h_new, "kahler_product",
                          params={"recipe": "gauged"})
    u0_reduced = RealField(grid, u0.data - res.u_inf.data)
    info.update(gauged=True, b_plus=res.b_plus, b_minus=res.b_minus)
    return grid, bg2, shift_min_zero(u0_reduced), None, info


# ---------------------------------------------------------------------------
# recipes


def cmd_flow_run(cfg: ExperimentConfig, out_dir, seed=None,
                 negative_control: str | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid, bg, u0, forcing, info = _prepare_problem(cfg, seed=seed)
    params = _flow_params(cfg, info["beta"])
    try:
        traj = run(bg, u0, params, forcing=forcing)
    except (NumericalFailure, AdmissibilityLost) as exc:
        report = {"schema_version": SCHEMA_VERSION, "termination": "failed",
                  "error": str(exc)}
        partial = getattr(exc, "trajectory", None)
        if partial is not None and partial.snapshots:
            report["failed_at"] = partial.meta.get("failed_at")
            write_field(partial.snapshots[-1].u, out / "failure_u.field")
        (out / "summary.json").write_text(json.dumps(report, indent=2))
        return EXIT_NUMERICAL, report
    if negative_control is not None:
        traj = corrupt_trajectory(traj, negative_control)
    enabled = _enabled_checks(cfg)
    if negative_control is not None and negative_control not in enabled:
        enabled.append(negative_control)
    results = evaluate(traj, bg, enabled=enabled, safety=cfg.monitors_safety)
    _write_timeseries(out / "timeseries.csv", traj, bg, results)
    report = _summary(traj, results)
    report["reduction"] = info
    (out / "summary.json").write_text(json.dumps(report, indent=2))
    _dump_fields(out, traj, cfg.field_dump_stride)
    ok = all(r.passed for r in results.values())
    return (EXIT_OK if ok else EXIT_MONITOR), report


def _fit_log_decay(times, residuals, floor=1e-11):
    """Least-squares slope of log(residual) vs t over the decaying tail."""
    ts, ys = [], []
    for t, r in zip(times, residuals):
        if r > floor:
            ts.append(t)
            ys.append(math.log(r))
    # use the second half of the usable window (the asymptotic regime)
    k = len(ts) // 2
    ts, ys = ts[k:], ys[k:]
    if len(ts) < 3:
        return 0.0, 0.0
    t_arr = np.array(ts)
    y_arr = np.array(ys)
    A = np.vstack([t_arr, np.ones_like(t_arr)]).T
    coef, res_, _, _ = np.linalg.lstsq(A, y_arr, rcond=None)
    slope = coef[0]
    y_hat = A @ coef
    ss_res = float(np.sum((y_arr - y_hat) ** 2))
    ss_tot = float(np.sum((y_arr - y_arr.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(slope), r2


def cmd_kahler_converge(cfg: ExperimentConfig, out_dir, seed=None):
    """Run the forced flow on a product background toward its steady form
    and measure the exponential approach rate.

    The target coefficients (g exp((f+ + b+)/beta), h exp(-(f- + b-)))
    are constructed by factor Poisson inversion, i.e. by the same discrete
    operators the flow uses, so the discrete steady state is exact."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = build_grid(cfg)
    bg = build_background(cfg, grid)
    if bg.kind != "kahler_product":
        raise ConfigurationError("steady-convergence run needs a product background")
    beta = cfg.beta / cfg.alpha
    fp, fm = build_forcing(cfg, grid, beta)
    if fp is None:
        fp = RealField.zeros(grid)
        fm = RealField.zeros(grid)
    else:
        fp = RealField(grid, fp.data / cfg.alpha)
        fm = RealField(grid, fm.data / cfg.alpha)
    if not cfg.normalize_compat6:
        raise ConfigurationError("steady-convergence run requires compatibility "
                                 "normalisation")
    fp, fm = normalize_compat(bg, fp, fm, beta)
    gauge = gauge_out_f(bg, fp, fm, beta)
    mu_plus = gauge.g_new
    mu_minus = gauge.h_new
    u0 = build_initial(cfg, grid, bg, seed_override=seed)
    forcing = RealField(grid, fp.data + fm.data)
    params = _flow_params(cfg, beta)
    if params.steady_criterion != "norm":
        params.steady_criterion = "norm"
    traj = run(bg, u0, params, forcing=forcing)

    times, residuals, split_res = [], [], []
    for s in traj.snapshots:
        rz = float(np.max(np.abs(bg.g.data * s.lam.data - mu_plus)))
        rw = float(np.max(np.abs(bg.h.data * s.eta.data - mu_minus)))
        times.append(s.t)
        residuals.append(max(rz, rw))
        split_res.append(float(np.max(np.abs(deriv_data(grid, s.u.data, "z w")))))
    rate, r2 = _fit_log_decay(times, residuals)
    final = residuals[-1]
    ok = final <= 1e-6 and r2 >= 0.99
    report = {
        "schema_version": SCHEMA_VERSION,
        "termination": traj.termination,
        "final_residual": final,
        "rate": rate,
        "fit_r2": r2,
        "b_plus": gauge.b_plus,
        "b_minus": gauge.b_minus,
        "times": times,
        "residuals": residuals,
        "mixed_sup": split_res,
        "passed": bool(ok),
    }
    (out / "converge.json").write_text(json.dumps(report, indent=2))
    return (EXIT_OK if ok else EXIT_MONITOR), report


def cmd_beta_sweep(cfg: ExperimentConfig, beta_list, out_dir, seed=None,
                   n_checkpoints: int = 8):
    """Integrate the same problem for several exponent ratios and compare
    against the unit-ratio reference at matched times."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    betas = sorted(set(float(b) for b in beta_list))
    for b in betas:
        if not (BETA_MIN < b <= 1.0):
            raise ConfigurationError(
                f"sweep ratio {b} outside the admissible range "
                f"({BETA_MIN:.6f}, 1]"
            )
    if 1.0 not in betas:
        betas.append(1.0)
    grid = build_grid(cfg)
    bg = build_background(cfg, grid)
    u0 = shift_min_zero(build_initial(cfg, grid, bg, seed_override=seed))
    t_end = cfg.t_end
    cps = [t_end * (i + 1) / n_checkpoints for i in range(n_checkpoints)]
    runs = {}
    for b in betas:
        params = FlowParams(
            beta=b, t_end=t_end, cfl=cfg.cfl, dt_max=cfg.dt_max,
            steady_tol=1e-30, admissibility_floor=cfg.admissibility_floor,
            snapshot_stride=10**9, steady_criterion=cfg.steady_criterion,
        )
        runs[b] = run(bg, u0, params, checkpoint_times=cps)

    def state_at(traj, t):
        i = min(range(len(traj.snapshots)),
                key=lambda k: abs(traj.snapshots[k].t - t))
        if abs(traj.snapshots[i].t - t) > 1e-9:
            raise NumericalFailure(f"missed checkpoint {t}")
        return traj.snapshots[i]

    ref = runs[1.0]
    per_beta = {}
    curv_ok = curvature(bg).mixed_curvature_nonneg
    for b in betas:
        series, running = c0_series(runs[b])
        dists = [
            float(np.max(np.abs(state_at(runs[b], t).u.data
                                - state_at(ref, t).u.data)))
            for t in cps
        ]
        per_beta[b] = {
            "c0_initial": series[0],
            "c0_max": running[-1],
            "distances": dists,
            "final_distance": dists[-1],
        }
    sweep = [b for b in betas if b < 1.0]
    monotone_ok = True
    for lo, hi in zip(sweep, sweep[1:]):
        if per_beta[hi]["final_distance"] > 1.05 * per_beta[lo]["final_distance"]:
            monotone_ok = False
    c0_ok = all(
        per_beta[b]["c0_max"] <= per_beta[b]["c0_initial"] + 1e-6 for b in betas
    ) if curv_ok else True
    ok = monotone_ok and c0_ok
    report = {
        "schema_version": SCHEMA_VERSION,
        "betas": betas,
        "checkpoints": cps,
        "per_beta": {str(b): per_beta[b] for b in betas},
        "distance_monotone": monotone_ok,
        "c0_bounded": c0_ok,
        "curvature_sign_ok": bool(curv_ok),
        "passed": bool(ok),
        "horizon_note": "hypotheses checked on the computed horizon only",
    }
    (out / "beta_sweep.json").write_text(json.dumps(report, indent=2))
    return (EXIT_OK if ok else EXIT_MONITOR), report


def cmd_oracle_2d(cfg: ExperimentConfig, out_dir, seed=None,
                  n_checkpoints: int = 5, tol: float = 1e-6):
    """Cross-check the 4D integrator against the two decoupled factor
    flows on split data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = build_grid(cfg)
    bg = build_background(cfg, grid)
    if bg.kind != "kahler_product":
        raise ConfigurationError("factor-oracle run needs a product background")
    u0 = build_initial(cfg, grid, bg, seed_override=seed)
    u_zw = float(np.max(np.abs(deriv_data(grid, u0.data, "z w"))))
    if u_zw > 1e-10 * (1.0 + float(np.max(np.abs(u0.data)))):
        raise ConfigurationError("factor-oracle run needs split initial data")
    beta = cfg.beta / cfg.alpha
    t_end = cfg.t_end
    cps = [t_end * (i + 1) / n_checkpoints for i in range(n_checkpoints)]
    params = FlowParams(
        beta=beta, t_end=t_end, cfl=cfg.cfl, dt_max=cfg.dt_max,
        steady_tol=1e-30, admissibility_floor=cfg.admissibility_floor,
        snapshot_stride=10**9,
    )
    traj = run(bg, u0, params, checkpoint_times=cps)

    a0 = u0.data.mean(axis=(2, 3))
    b0 = u0.data.mean(axis=(0, 1)) - float(u0.data.mean())
    g2d = bg.g.data[:, :, 0, 0]
    h2d = bg.h.data[0, 0, :, :]
    pz = (grid.periods[0], grid.periods[1])
    pw = (grid.periods[2], grid.periods[3])
    fa = run_factor_flow(a0, g2d, pz, beta, "plus", t_end, cps, cfl=cfg.cfl)
    fb = run_factor_flow(b0, h2d, pw, 1.0, "minus", t_end, cps, cfl=cfg.cfl)

    def nearest(times, t):
        i = min(range(len(times)), key=lambda k: abs(times[k] - t))
        if abs(times[i] - t) > 1e-9:
            raise NumericalFailure(f"factor flow missed checkpoint {t}")
        return i

    errors = []
    for t in cps:
        i4 = nearest([s.t for s in traj.snapshots], t)
        ia = nearest(fa.times, t)
        ib = nearest(fb.times, t)
        combo = (
            fa.states[ia][:, :, None, None] + fb.states[ib][None, None, :, :]
        )
        errors.append(float(np.max(np.abs(traj.snapshots[i4].u.data - combo))))
    ok = max(errors) <= tol
    report = {
        "schema_version": SCHEMA_VERSION,
        "checkpoints": cps,
        "errors": errors,
        "max_error": max(errors),
        "tolerance": tol,
        "passed": bool(ok),
    }
    (out / "oracle_2d.json").write_text(json.dumps(report, indent=2))
    return (EXIT_OK if ok else EXIT_MONITOR), report


def cmd_check_identities(cfg: ExperimentConfig, out_dir,
                         tamper: bool = False):
    """Run the slice identity suite at two resolutions and each requested
    exponent ratio; every equality must pass at the fine grid and shrink
    at least tenfold from the coarse one (down to the rounding floor)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fine_dims = cfg.dims
    if min(fine_dims) < 16:
        raise ConfigurationError(
            "identity suite needs dims >= 16 so a half-resolution "
            "comparison grid exists"
        )
    coarse_dims = tuple(n // 2 for n in fine_dims)
    tol = cfg.id_tolerance
    floor = 1e-11
    rows = []
    all_ok = True
    for beta in cfg.id_betas:
        per_grid = {}
        for dims in (coarse_dims, fine_dims):
            grid = build_grid(
                ExperimentConfig(dims=dims, periods=cfg.periods)
            )
            bgp = _identity_background(cfg, grid)
            u = random_test_field(grid, cfg.id_seed, cfg.id_amplitude,
                                  cfg.id_band, bg=bgp, beta=beta)
            ws = ManifoldSlice(u, bgp, beta)
            from .geometry import constants as mk_constants

            c0 = float(np.max(1.0 / ws.lam + 1.0 / ws.eta))
            cr = mk_constants(bgp, beta, c0=c0)
            res = verify_A(u, bgp, beta, tol=tol, ws=ws)
            res += verify_B(u, bgp, beta, tol=tol, constants_report=cr, ws=ws)
            x1, _, x3, _ = grid.mesh()
            phi = RealField(
                grid,
                cfg.id_amplitude
                * np.sin(2 * np.pi * x1 / grid.periods[0])
                * np.sin(2 * np.pi * x3 / grid.periods[2])
                * np.ones(grid.shape),
            )
            res += verify_C(phi, 1.0, 1.0, beta, tol=tol)
            per_grid[dims] = {r.name: r for r in res}
        for name, fine in per_grid[fine_dims].items():
            coarse = per_grid[coarse_dims][name]
            if tamper and name == "A4":
                fine.residual += 1.0
                fine.passed = False
            if fine.kind == "equality":
                ratio_ok = (
                    fine.residual <= coarse.residual / 10.0
                    or fine.residual <= floor
                )
                passed = fine.residual <= tol and ratio_ok
                status = "pass" if passed else (
                    "under_resolved"
                    if (fine.residual > tol and ratio_ok) else "fail"
                )
            else:
                passed = fine.passed
                ratio_ok = True
                status = "pass" if passed else "fail"
            all_ok = all_ok and passed
            rows.append({
                "identity": name,
                "kind": fine.kind,
                "beta": beta,
                "grid": list(fine_dims),
                "seed": cfg.id_seed,
                "residual": fine.residual,
                "residual_coarse": coarse.residual,
                "tolerance": fine.tolerance,
                "convergent": bool(ratio_ok),
                "pass": bool(passed),
                "status": status,
            })
    report = {
        "schema_version": SCHEMA_VERSION,
        "results": rows,
        "passed": bool(all_ok),
    }
    (out / "identities.json").write_text(json.dumps(report, indent=2))
    return (EXIT_OK if all_ok else EXIT_MONITOR), report


def _identity_background(cfg: ExperimentConfig, grid):
    from .geometry import pluriclosed_background

    modes = cfg.bg_params.get("modes") or [(1, 1, 1.0)]
    return pluriclosed_background(
        grid, cfg.bg_params.get("c_g", 1.0), cfg.bg_params.get("c_h", 1.0), modes
    )
