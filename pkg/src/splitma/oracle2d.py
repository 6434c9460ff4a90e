"""Independent 2D factor flows used as an oracle for the 4D integrator.

On a product background with split initial data the 4D flow decouples
into one flow per factor:

    da/dt = beta log(1 + a_zzb / g)     on the z-torus,
    db/dt = -log(1 - b_wwb / h)         on the w-torus,

and u(t) = a(t) + b(t) exactly.  This module integrates the factor flows
with its own small spectral kernel and RK4 loop, sharing no code with the
4D path, so agreement between the two is a genuine cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityLost, NumericalFailure


@dataclass
class FactorFlowResult:
    times: list[float]
    states: list[np.ndarray]


def _quarter_laplacian_2d(u: np.ndarray, periods) -> np.ndarray:
    n1, n2 = u.shape
    k1 = 2 * np.pi * np.fft.fftfreq(n1, d=periods[0] / n1)
    k2 = 2 * np.pi * np.fft.fftfreq(n2, d=periods[1] / n2)
    k1[n1 // 2] = 0.0
    k2[n2 // 2] = 0.0
    m = -0.25 * (k1[:, None] ** 2 + k2[None, :] ** 2)
    return np.fft.ifft2(np.fft.fft2(u) * m).real


def run_factor_flow(
    u0: np.ndarray,
    coeff: np.ndarray | float,
    periods,
    beta: float,
    sign: str,
    t_end: float,
    checkpoints,
    cfl: float = 0.8,
    floor: float = 1e-10,
) -> FactorFlowResult:
    """Integrate one factor flow, snapshotting at the checkpoint times.

    sign "plus" integrates da/dt = beta log(1 + lap a / g); sign "minus"
    integrates db/dt = -log(1 - lap b / h).
    """
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), u0.shape)
    n1, n2 = u0.shape
    kz = 0.25 * ((math.pi * n1 / periods[0]) ** 2 + (math.pi * n2 / periods[1]) ** 2)

    def speed(u):
        trace = _quarter_laplacian_2d(u, periods)
        if sign == "plus":
            lam = 1.0 + trace / coeff
            if float(lam.min()) <= floor:
                raise AdmissibilityLost("factor trace collapsed")
            return beta * np.log(lam), lam
        lam = 1.0 - trace / coeff
        if float(lam.min()) <= floor:
            raise AdmissibilityLost("factor trace collapsed")
        return -np.log(lam), lam

    u = np.array(u0, dtype=float)
    t = 0.0
    cps = sorted(c for c in checkpoints if 0.0 < c <= t_end)
    out = FactorFlowResult(times=[0.0], states=[u.copy()])
    cp_idx = 0
    eps = 1e-12
    scale = beta if sign == "plus" else 1.0
    while t < t_end - eps:
        _, lam = speed(u)
        dt = cfl / (scale / float((coeff * lam).min()) * kz)
        dt = min(dt, t_end - t)
        hit = False
        if cp_idx < len(cps) and cps[cp_idx] - t <= dt + eps:
            dt = cps[cp_idx] - t
            hit = True
        for attempt in range(9):
            try:
                k1 = speed(u)[0]
                k2 = speed(u + 0.5 * dt * k1)[0]
                k3 = speed(u + 0.5 * dt * k2)[0]
                k4 = speed(u + dt * k3)[0]
                u_new = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                speed(u_new)
                break
            except AdmissibilityLost:
                dt *= 0.5
                hit = False
        else:
            raise NumericalFailure("factor flow step rejected repeatedly")
        u = u_new
        t += dt
        if hit:
            cp_idx += 1
            out.times.append(t)
            out.states.append(u.copy())
    if not out.times or out.times[-1] < t_end - eps:
        out.times.append(t)
        out.states.append(u.copy())
    return out
