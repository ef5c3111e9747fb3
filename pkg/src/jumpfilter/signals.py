"""Ground-truth simulation of the hidden jump process and its label readout.

Jump times are sampled by thinning against the global rate bound; the
control at a proposal time is evaluated from the label history strictly
before it, so only observation-measurable information can influence the
dynamics.  Costs are integrated exactly between events.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from .model import MASS_TOL, ModelSpec
from .paths import SignalPath, YPath
from .rngs import stream

MC_CHUNK = 20_000


class McCostResult(NamedTuple):
    mean: float
    stderr: float
    truncation_bias: float


class ConstantControl:
    """Batch controller that always applies one control."""

    def __init__(self, u: int):
        self.u = int(u)

    def reset(self, n: int, y0: np.ndarray) -> dict:
        return {"u": np.full(n, self.u, dtype=np.int64)}

    def controls(self, state: dict) -> np.ndarray:
        return state["u"]

    def on_jumps(self, state, idx, t, y_new) -> None:
        pass


def _as_controller(control):
    if isinstance(control, (int, np.integer)):
        return ConstantControl(int(control))
    if hasattr(control, "reset") and hasattr(control, "controls"):
        return control
    raise TypeError("control must be a control index or a batch controller")


def _draw_start(model: ModelSpec, mu0: np.ndarray, rng, n: int) -> np.ndarray:
    cum = np.cumsum(mu0)
    r = rng.random(n) * cum[-1]
    return np.minimum(np.searchsorted(cum, r, side="right"), model.n_states - 1)


def simulate_signal(model: ModelSpec, mu0: np.ndarray, control, horizon: float,
                    rng) -> SignalPath:
    """One trajectory of the hidden process under a label-history control.

    ``control`` is a control index or a callable ``(y0, jumps, t) -> u``
    whose ``jumps`` argument holds the label jumps strictly before ``t``.
    """
    mu0 = np.asarray(mu0, dtype=np.float64)
    if abs(float(mu0.sum()) - 1.0) > MASS_TOL:
        raise ValueError("initial law must be normalized")
    x0 = int(_draw_start(model, mu0, rng, 1)[0])
    y0 = int(model.h[x0])
    ctrl = control if callable(control) else (lambda _y, _j, _t, _u=int(control): _u)
    jumps: list[tuple[float, int]] = []
    y_record: list[tuple[float, int]] = []
    C = model.C_lambda
    t = 0.0
    x = x0
    y = y0
    while C > 0:
        t += rng.exponential(1.0 / C)
        if t >= horizon:
            break
        u = int(ctrl(y0, tuple(y_record), t))
        if rng.random() < model.lam_tot[x, u] / C:
            cum = np.cumsum(model.lam[x, u, :])
            z = int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"),
                        model.n_states - 1))
            jumps.append((t, z))
            if model.h[z] != y:
                y = int(model.h[z])
                y_record.append((t, y))
            x = z
    return SignalPath(x0=x0, jumps=jumps, horizon=horizon)


def derive_y(model: ModelSpec, x_path: SignalPath) -> YPath:
    """Project a signal path to its label path; within-face jumps are invisible."""
    y0 = int(model.h[x_path.x0])
    y = y0
    jumps = []
    for t, x in x_path.jumps:
        if model.h[x] != y:
            y = int(model.h[x])
            jumps.append((t, y))
    return YPath(y0=y0, jumps=jumps, horizon=x_path.horizon)


def _mc_chunk(model: ModelSpec, mu0: np.ndarray, controller, horizon: float,
              n: int, rng) -> tuple[float, float]:
    """Simulate n paths, return (sum of costs, sum of squared costs)."""
    beta = model.beta
    C = model.C_lambda
    x = _draw_start(model, mu0, rng, n)
    y = model.h[x].copy()
    state = controller.reset(n, y)
    u = controller.controls(state).copy()
    t = np.zeros(n)
    cost = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    if C <= 0:
        cost = model.f[x, u] * (1.0 - math.exp(-beta * horizon)) / beta
        return float(cost.sum()), float((cost ** 2).sum())
    while np.any(alive):
        delta = rng.exponential(1.0 / C, size=n)
        accept_u = rng.random(n)
        target_u = rng.random(n)
        t_new = np.where(alive, np.minimum(t + delta, horizon), t)
        seg = np.exp(-beta * t) - np.exp(-beta * t_new)
        cost += np.where(alive, model.f[x, u] * seg / beta, 0.0)
        done = alive & (t + delta >= horizon)
        live = alive & ~done
        t = t_new
        pidx = np.flatnonzero(live)
        if len(pidx):
            acc = accept_u[pidx] < model.lam_tot[x[pidx], u[pidx]] / C
            jidx = pidx[acc]
            if len(jidx):
                rates = model.lam[x[jidx], u[jidx], :]
                cum = np.cumsum(rates, axis=1)
                z = (cum > (target_u[jidx] * cum[:, -1])[:, None]).argmax(axis=1)
                y_new = model.h[z]
                moved = y_new != y[jidx]
                midx = jidx[moved]
                if len(midx):
                    controller.on_jumps(state, midx, t[midx], y_new[moved])
                    y[midx] = y_new[moved]
                    u_all = controller.controls(state)
                    u[midx] = u_all[midx]
                x[jidx] = z
        alive[done] = False
    return float(cost.sum()), float((cost ** 2).sum())


def mc_cost(model: ModelSpec, mu0: np.ndarray, control, horizon: float,
            n_paths: int, seed: int, threads: int = 1,
            chunk: int = MC_CHUNK) -> McCostResult:
    """Monte-Carlo estimate of the discounted cost under a label-history control.

    Deterministic for fixed (seed, n_paths): paths are split into fixed-size
    chunks with independent counter-based streams keyed by (seed, chunk
    index), so the result does not depend on the thread count.  The horizon
    truncation bias bound C_f exp(-beta T)/beta is reported alongside.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    mu0 = np.asarray(mu0, dtype=np.float64)
    if abs(float(mu0.sum()) - 1.0) > MASS_TOL:
        raise ValueError("initial law must be normalized")
    controller = _as_controller(control)
    sizes = [chunk] * (n_paths // chunk)
    if n_paths % chunk:
        sizes.append(n_paths % chunk)

    def run(i_size):
        i, size = i_size
        return _mc_chunk(model, mu0, controller, horizon, size, stream(seed, i))

    jobs = list(enumerate(sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    s1 = sum(r[0] for r in results)
    s2 = sum(r[1] for r in results)
    mean = s1 / n_paths
    var = max(s2 - n_paths * mean * mean, 0.0) / (n_paths - 1)
    stderr = math.sqrt(var / n_paths)
    bias = model.C_f * math.exp(-model.beta * horizon) / model.beta
    return McCostResult(mean=mean, stderr=stderr, truncation_bias=bias)


def first_y_sojourns(model: ModelSpec, mu0: np.ndarray, control, n: int, seed: int,
                     t_max: float = 50.0) -> tuple[np.ndarray, np.ndarray]:
    """First label-change times and new labels over n signal paths (vectorized).

    Censored paths (no label change before t_max) report inf and label -1.
    ``control`` must be a constant control index or batch controller whose
    control is constant until the first label jump.
    """
    controller = _as_controller(control)
    rng = stream(seed, 0)
    C = model.C_lambda
    x = _draw_start(model, np.asarray(mu0, dtype=np.float64), rng, n)
    y = model.h[x].copy()
    state = controller.reset(n, y)
    u = controller.controls(state)
    t = np.zeros(n)
    sojourn = np.full(n, math.inf)
    label = np.full(n, -1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    while np.any(alive) and C > 0:
        delta = rng.exponential(1.0 / C, size=n)
        accept_u = rng.random(n)
        target_u = rng.random(n)
        t = np.where(alive, t + delta, t)
        over = alive & (t > t_max)
        live = alive & ~over
        pidx = np.flatnonzero(live)
        if len(pidx):
            acc = accept_u[pidx] < model.lam_tot[x[pidx], u[pidx]] / C
            jidx = pidx[acc]
            if len(jidx):
                rates = model.lam[x[jidx], u[jidx], :]
                cum = np.cumsum(rates, axis=1)
                z = (cum > (target_u[jidx] * cum[:, -1])[:, None]).argmax(axis=1)
                y_new = model.h[z]
                moved = y_new != y[jidx]
                midx = jidx[moved]
                sojourn[midx] = t[midx]
                label[midx] = y_new[moved]
                alive[midx] = False
                x[jidx] = z
        alive[over] = False
    return sojourn, label
