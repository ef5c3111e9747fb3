"""The exact filter: conditional state law given the observed label path.

Between label changes the belief follows the nonlinear ODE
``dw/dt = B w - w (B w . 1)`` on its face, where ``B`` is the drift matrix
of the active (face, control) pair.  At a label change the belief is
rebuilt from the off-face outflow measure and renormalized on the new face.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import LEAK_TOL, MASS_TOL, NEG_TOL, Belief, ModelSpec, make_belief, uniform_on_face
from .paths import FilterPath, YPath


class FlowError(RuntimeError):
    pass


class NegativeDuration(FlowError):
    pass


class StepUnderflow(FlowError):
    pass


class ProjectionError(FlowError):
    """Belief left its face (or went negative) beyond tolerance during integration."""


class SameFace(ValueError):
    pass


_STATUS_MSG = {
    _kernels.STATUS_NEGATIVE: "negative belief weight beyond tolerance",
    _kernels.STATUS_LEAK: "off-face leakage beyond tolerance",
    _kernels.STATUS_MASS: "belief mass collapsed to zero",
}


@dataclass
class FlowStats:
    """Worst-case invariant deviations over all RK4 nodes of one integration."""

    max_mass_dev: float = 0.0
    min_entry: float = 0.0
    max_leak: float = 0.0

    def merge(self, dev: float, mn: float, leak: float) -> None:
        self.max_mass_dev = max(self.max_mass_dev, dev)
        self.min_entry = min(self.min_entry, mn)
        self.max_leak = max(self.max_leak, leak)


def default_step(model: ModelSpec, scale: float = 1e-3) -> float:
    return scale / model.C_lambda if model.C_lambda > 0 else math.inf


def h_update(model: ModelSpec, mu: np.ndarray, y: int) -> Belief:
    """Normalize a nonnegative measure onto the face of label ``y``.

    Zero mass on the face falls back to the uniform distribution there
    (deterministic choice for the otherwise-arbitrary case).
    """
    belief, _ = h_update_flag(model, mu, y)
    return belief


def h_update_flag(model: ModelSpec, mu: np.ndarray, y: int) -> tuple[Belief, bool]:
    mu = np.asarray(mu, dtype=np.float64)
    assert float(mu.min(initial=0.0)) >= -NEG_TOL, "h_update expects a nonnegative measure"
    mask = model.onface[y]
    mass = float(mu[mask].sum())
    if mass <= 0.0:
        return uniform_on_face(model, y), True
    w = np.where(mask, mu, 0.0) / mass
    return make_belief(model, y, w), False


def big_lambda(model: ModelSpec, nu: Belief, u: int) -> np.ndarray:
    """Off-face outflow measure of a face belief under control ``u``."""
    out = nu.weights @ model.lam[:, u, :]
    out[model.onface[nu.face]] = 0.0
    return out


def b_op(model: ModelSpec, nu, y: int, u: int) -> np.ndarray:
    """Drift operator of face ``y``: on-face inflow minus total outflow (signed)."""
    w = nu.weights if isinstance(nu, Belief) else np.asarray(nu, dtype=np.float64)
    return model.b_matrices[y, u] @ w


def vector_field(model: ModelSpec, nu: Belief, u: int) -> np.ndarray:
    """Belief ODE right-hand side; zero total mass, supported on the face."""
    q = model.b_matrices[nu.face, u] @ nu.weights
    return q - nu.weights * q.sum()


def _control_segments(control, t: float) -> list[tuple[float, int]]:
    """Normalize a piecewise-constant control path to (duration, u) segments on [0, t]."""
    if isinstance(control, (int, np.integer)):
        return [(t, int(control))]
    segs = list(control)
    if not segs or segs[0][0] != 0.0:
        raise ValueError("control path must start at time 0")
    out = []
    for i, (start, u) in enumerate(segs):
        end = segs[i + 1][0] if i + 1 < len(segs) else t
        if end < start:
            raise ValueError("control path breakpoints must be nondecreasing")
        if start >= t:
            break
        out.append((min(end, t) - start, int(u)))
    return out


def _advance_const(model: ModelSpec, face: int, W: np.ndarray, u: int,
                   durations: np.ndarray, step: float, t0: np.ndarray | None = None,
                   f_vec: np.ndarray | None = None, stats: FlowStats | None = None,
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Advance a batch of same-face beliefs in place under constant control.

    Every row advances by its own duration, split into a shared number of
    RK4 steps so jump times land exactly on integration nodes.  Returns
    (survival exponents, discounted cost integrals); the latter is zero
    unless ``f_vec`` is given.
    """
    durations = np.asarray(durations, dtype=np.float64)
    d_max = float(durations.max(initial=0.0))
    if d_max <= 0.0:
        return np.zeros(len(W)), np.zeros(len(W))
    if step <= 0:
        raise ValueError("step must be positive")
    if math.ceil(d_max / step) > 10**9:
        raise StepUnderflow(f"step {step} too small for duration {d_max}")
    n_steps = np.ceil(np.maximum(durations, 0.0) / step).astype(np.int64)
    h = np.where(n_steps > 0, durations / np.maximum(n_steps, 1), 0.0)
    want_cost = f_vec is not None
    if t0 is None:
        t0 = np.zeros(len(W))
    if f_vec is None:
        f_vec = np.zeros(model.n_states)
    ell, zc, status, dev, mn, leak = _kernels.rk4_flow_batch(
        W, model.b_matrices[face, u], model.r_vecs[face, u],
        np.ascontiguousarray(h), np.ascontiguousarray(n_steps), model.onface[face],
        NEG_TOL, LEAK_TOL, np.ascontiguousarray(f_vec), model.beta,
        np.ascontiguousarray(np.asarray(t0, dtype=np.float64)), want_cost)
    if status != _kernels.STATUS_OK:
        raise ProjectionError(_STATUS_MSG[status])
    if stats is not None:
        stats.merge(dev, mn, leak)
    return ell, zc


def flow(model: ModelSpec, nu0: Belief, control, t: float, step: float | None = None) -> Belief:
    belief, _ = flow_with_stats(model, nu0, control, t, step)
    return belief


def flow_with_stats(model: ModelSpec, nu0: Belief, control, t: float,
                    step: float | None = None) -> tuple[Belief, FlowStats]:
    """Integrate the belief ODE for duration ``t``; also report node invariants.

    ``control`` is a control index or a piecewise-constant path
    ``[(t_start, u), ...]`` with breakpoints relative to the flow start.
    """
    if t < 0:
        raise NegativeDuration(f"duration must be nonnegative, got {t}")
    stats = FlowStats()
    if t == 0:
        return nu0, stats
    if step is None:
        step = default_step(model)
    if step < 1e-14 * max(t, 1.0):
        raise StepUnderflow(f"step {step} below machine-meaningful size")
    W = nu0.weights[None, :].copy()
    for dur, u in _control_segments(control, t):
        if dur <= 0:
            continue
        _advance_const(model, nu0.face, W, u, np.array([dur]), step, stats=stats)
    return make_belief(model, nu0.face, W[0]), stats


def jump_update(model: ModelSpec, nu_minus: Belief, u_minus: int, y_new: int) -> Belief:
    """Belief right after an observed label change, from the left-limit belief."""
    belief, _ = jump_update_flag(model, nu_minus, u_minus, y_new)
    return belief


def jump_update_flag(model: ModelSpec, nu_minus: Belief, u_minus: int,
                     y_new: int) -> tuple[Belief, bool]:
    if y_new == nu_minus.face:
        raise SameFace("observed label must change at a jump")
    return h_update_flag(model, big_lambda(model, nu_minus, u_minus), y_new)


def run_filter(model: ModelSpec, mu0: np.ndarray, y_path: YPath, control,
               sample_dt: float | None = None, step: float | None = None) -> FilterPath:
    """Replay the filter along an observed trajectory.

    ``control`` is a control index, or a label-history-predictable callable
    ``control(y0, jumps_so_far, t) -> u`` receiving only the jump record
    strictly before ``t``; it is frozen over each sample interval.
    Output beliefs are sampled every ``sample_dt`` plus exactly at jumps
    (post-jump values).
    """
    mu0 = np.asarray(mu0, dtype=np.float64)
    if abs(float(mu0.sum()) - 1.0) > MASS_TOL:
        raise ValueError("initial law must be normalized")
    if sample_dt is None:
        sample_dt = y_path.horizon / 100 if y_path.horizon > 0 else 1.0
    if step is None:
        step = default_step(model)

    belief, _ = h_update_flag(model, mu0, y_path.y0)
    times = [0.0]
    faces = [belief.face]
    weights = [belief.weights.copy()]
    jump_times = []
    jump_degenerate = []

    controller = control if callable(control) else (lambda y0, jumps, t, _u=int(control): _u)
    record: list[tuple[float, int]] = []

    events = list(y_path.jumps) + [(y_path.horizon, None)]
    t_cur = 0.0
    next_sample = sample_dt
    for t_event, y_new in events:
        u_last = None
        while t_cur < t_event:
            t_next = min(next_sample, t_event)
            u = int(controller(y_path.y0, tuple(record), t_cur))
            u_last = u
            W = belief.weights[None, :].copy()
            _advance_const(model, belief.face, W, u, np.array([t_next - t_cur]), step)
            belief = make_belief(model, belief.face, W[0])
            t_cur = t_next
            if t_cur == next_sample and t_cur <= y_path.horizon:
                times.append(t_cur)
                faces.append(belief.face)
                weights.append(belief.weights.copy())
                next_sample += sample_dt
        if y_new is None:
            break
        if u_last is None:  # zero-length sojourn guard; controller left limit
            u_last = int(controller(y_path.y0, tuple(record), t_cur))
        belief, degenerate = jump_update_flag(model, belief, u_last, y_new)
        record.append((t_event, y_new))
        jump_times.append(t_event)
        jump_degenerate.append(degenerate)
        times.append(t_event)
        faces.append(belief.face)
        weights.append(belief.weights.copy())

    return FilterPath(
        times=np.array(times),
        faces=np.array(faces, dtype=np.int64),
        weights=np.array(weights),
        jump_times=np.array(jump_times),
        jump_degenerate=np.array(jump_degenerate, dtype=bool),
        horizon=y_path.horizon,
    )
