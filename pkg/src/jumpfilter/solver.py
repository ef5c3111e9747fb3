"""Belief-space solver for the discounted control problem.

The jump-to-jump Bellman operator is discretized two ways:

* mode A restricts the control to a constant between jumps and integrates
  the one-jump functional along the flow.  The time quadrature freezes the
  integrand at interval midpoints but keeps the survival/discount factor
  piecewise exponential, so the operator's jump weights telescope to at
  most C_lambda / (beta + C_lambda) for any step size: the discrete
  operator provably contracts at the same modulus as the continuous one.
* mode B is a semi-Lagrangian one-step scheme with time step dt that
  re-decides the control every dt, recovering time-varying controls as
  dt -> 0.  Its one-step running cost uses the exact discount weight
  (1 - exp(-beta dt)) / beta, which makes constant-cost models an exact
  fixed point at any dt.

Value iteration runs either operator to its fixed point and extracts the
per-vertex minimizing control as a stationary policy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .filtering import _advance_const, default_step, h_update
from .grids import BeliefGrid, build_grid
from .model import LEAK_TOL, NEG_TOL, Belief, ModelSpec

KAPPA_EPS = 1e-9


class StepTooLarge(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


@dataclass(eq=False)
class ValueField:
    """Converged values on the grid vertices."""

    grid: BeliefGrid
    values: np.ndarray
    k: int
    mode: str
    residual: float
    iterations: int


@dataclass(eq=False)
class StationaryPolicy:
    """One control per grid vertex, applied constantly until the next jump.

    Off-vertex beliefs use the control of the containing-simplex vertex
    with the largest barycentric weight.
    """

    grid: BeliefGrid
    controls: np.ndarray

    def control_at(self, belief: Belief) -> int:
        ids, wts = self.grid.locate(belief)
        return int(self.controls[ids[int(np.argmax(wts))]])

    def control_batch(self, faces: np.ndarray, W: np.ndarray) -> np.ndarray:
        out = np.empty(len(W), dtype=np.int64)
        for y in np.unique(faces):
            sel = faces == y
            out[sel] = self.controls[self.grid.nearest_vertex_batch(int(y), W[sel])]
        return out


def kappa_hat(model: ModelSpec) -> float:
    """Derived contraction modulus of the jump-to-jump operator."""
    return model.C_lambda / (model.beta + model.C_lambda)


def truncation_budget(model: ModelSpec, t_max: float) -> float:
    return model.C_f * math.exp(-model.beta * t_max) / model.beta


def default_t_max(model: ModelSpec, tol: float) -> float:
    """Horizon at which the tail of the one-jump integral is below 0.01 tol."""
    c = max(model.C_f, 1e-300)
    return max(math.log(c / (model.beta * 0.01 * tol)) / model.beta, 1.0 / model.beta)


def one_stage_cost(model: ModelSpec, nu: Belief, u: int,
                   t_max: float | None = None, quad_step: float | None = None) -> float:
    """Expected discounted running cost until the first jump, constant control.

    Composite-trapezoid quadrature of exp(-beta t) chi(t) (w(t) . f_u) with
    flow and survival advanced jointly on the quadrature grid.
    """
    if t_max is None:
        t_max = default_t_max(model, 1e-4)
    if quad_step is None:
        quad_step = default_step(model)
        if not math.isfinite(quad_step):
            quad_step = t_max / 2000
    n_steps = int(math.ceil(t_max / quad_step))
    g, status = _kernels.rk4_g_trapezoid(
        np.ascontiguousarray(nu.weights), model.b_matrices[nu.face, u],
        model.r_vecs[nu.face, u], np.ascontiguousarray(model.f[:, u]),
        model.beta, t_max / n_steps, n_steps, model.onface[nu.face],
        NEG_TOL, LEAK_TOL)
    if status != _kernels.STATUS_OK:
        raise RuntimeError("belief projection failed during quadrature")
    return float(g)


def _solver_step(model: ModelSpec) -> float:
    return 4e-3 / model.C_lambda if model.C_lambda > 0 else math.inf


def _mode_a_tableau(model: ModelSpec, grid: BeliefGrid, face: int, W0: np.ndarray,
                    u: int, t_max: float, h: float, chunk_steps: int = 4096,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Cost vector g and jump-weight matrix K of the constant-control operator.

    For starts W0 on one face: (G w)(row) = g[row] + K[row] @ w.  Midpoint
    freezing of rate, cost and jump targets; per-interval exact exponential
    survival/discount, so K rows sum below kappa_hat regardless of h.
    """
    B, n = W0.shape
    beta = model.beta
    M = model.b_matrices[face, u]
    r_vec = model.r_vecs[face, u]
    f_u = model.f[:, u]
    onface = model.onface[face]
    other = [y for y in range(model.n_obs) if y != face]

    if not math.isfinite(h):  # no dynamics at all: closed-form discounted cost
        g = (W0 @ f_u) * (1 - math.exp(-beta * t_max)) / beta
        return g, np.zeros((B, grid.n_vertices))

    n_int = int(math.ceil(t_max / h))
    h = t_max / n_int
    W = W0.copy()
    g = np.zeros(B)
    K = np.zeros((B, grid.n_vertices))
    a = np.ones(B)                      # exp(-beta t) chi(t) at the interval start
    rows = np.arange(B)
    done = 0
    while done < n_int:
        S = min(chunk_steps, n_int - done)
        rec_w = np.empty((2 * S, B, n))
        rec_r = np.empty((2 * S, B))
        status = _kernels.rk4_record(W, M, r_vec, h / 2, 2 * S, onface,
                                     NEG_TOL, LEAK_TOL, rec_w, rec_r)
        if status != _kernels.STATUS_OK:
            raise RuntimeError("belief projection failed during operator assembly")
        mid_w = rec_w[0::2]             # (S, B, n)
        mid_r = rec_r[0::2]             # (S, B)
        denom = beta + mid_r
        decay = np.exp(-denom * h)
        # A[i] = a * prod_{j<i} decay[j]
        A = np.empty((S, B))
        A[0] = a
        if S > 1:
            np.cumprod(decay[:-1], axis=0, out=A[1:])
            A[1:] *= a
        coef = A * (1.0 - decay) / denom
        g += np.einsum("sb,sbn,n->b", coef, mid_w, f_u)

        lam_u = model.lam[:, u, :]
        lam_out = mid_w.reshape(S * B, n) @ lam_u          # outflow measure per node
        for y2 in other:
            mass = lam_out[:, model.onface[y2]].sum(axis=1)
            pos = mass > 0.0
            if not np.any(pos):
                continue
            tgt = lam_out[pos][:, :] * model.onface[y2]
            tgt /= mass[pos, None]
            ids, wts = grid.locate_batch(y2, tgt)
            contrib = (coef.reshape(S * B)[pos] * mass[pos])[:, None] * wts
            np.add.at(K, (np.tile(rows, S)[pos][:, None], ids), contrib)
        a = A[-1] * decay[-1]
        done += S
    return g, K


def _mode_b_tableau(model: ModelSpec, grid: BeliefGrid, face: int, W0: np.ndarray,
                    u: int, dt: float, step: float | None = None,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-start pieces of the one-step semi-Lagrangian operator.

    Returns (stage_cost, p_jump, jump_ids, jump_wts_scaled, flow_interp)
    where the operator value under control u is
    stage_cost + exp(-beta dt) [ sum(jump_wts_scaled * w[jump_ids]) +
    (1 - p_jump) * sum(flow_interp * w[flow_ids]) ] -- the jump weights
    already include p * rho(y').
    """
    if dt * model.C_lambda >= 1.0:
        raise StepTooLarge(f"dt C_lambda = {dt * model.C_lambda} must be below 1")
    B, n = W0.shape
    cost0 = (W0 @ model.f[:, u]) * (1.0 - math.exp(-model.beta * dt)) / model.beta
    r = W0 @ model.r_vecs[face, u]
    p = 1.0 - np.exp(-r * dt)

    d_max = max(len(m) for m in grid.face_members)
    jump_ids = np.zeros((B, model.n_obs, d_max), dtype=np.int64)
    jump_wts = np.zeros((B, model.n_obs, d_max))
    lam_out = W0 @ model.lam[:, u, :]
    for y2 in range(model.n_obs):
        if y2 == face:
            continue
        mass = lam_out[:, model.onface[y2]].sum(axis=1)
        pos = (mass > 0.0) & (r > 0.0)
        if not np.any(pos):
            continue
        tgt = lam_out[pos] * model.onface[y2]
        tgt /= mass[pos, None]
        ids, wts = grid.locate_batch(y2, tgt)
        d = ids.shape[1]
        jump_ids[pos, y2, :d] = ids
        jump_wts[pos, y2, :d] = (p[pos] * mass[pos] / r[pos])[:, None] * wts

    Wf = W0.copy()
    if step is None:
        step = default_step(model)
    if math.isfinite(step):
        _advance_const(model, face, Wf, u, np.full(B, dt), min(step, dt))
    flow_ids, flow_wts = grid.locate_batch(face, Wf)
    return cost0, p, jump_ids.reshape(B, -1), jump_wts.reshape(B, -1), (flow_ids, flow_wts)


class _ModeAOperator:
    def __init__(self, model, grid, t_max, h, starts=None):
        self.model = model
        self.grid = grid
        self.pieces = []            # per control: list of (row_idx, g, K)
        if starts is None:
            faces = grid.vertex_face
            W = grid.vertex_weights
        else:
            faces = np.array([b.face for b in starts])
            W = np.array([b.weights for b in starts])
        self.n_rows = len(W)
        for u in range(model.n_controls):
            per_face = []
            for y in np.unique(faces):
                sel = np.flatnonzero(faces == y)
                g, K = _mode_a_tableau(model, grid, int(y),
                                       np.ascontiguousarray(W[sel]), u, t_max, h)
                per_face.append((sel, g, K))
            self.pieces.append(per_face)

    def apply(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals = np.empty((self.model.n_controls, self.n_rows))
        for u, per_face in enumerate(self.pieces):
            for sel, g, K in per_face:
                vals[u, sel] = g + K @ w
        return vals.min(axis=0), vals.argmin(axis=0)

    def max_jump_weight(self) -> float:
        return max(float(K.sum(axis=1).max(initial=0.0))
                   for per_face in self.pieces for _, _, K in per_face)


class _ModeBOperator:
    def __init__(self, model, grid, dt, starts=None):
        self.model = model
        self.grid = grid
        self.dt = dt
        self.disc = math.exp(-model.beta * dt)
        self.pieces = []
        if starts is None:
            faces = grid.vertex_face
            W = grid.vertex_weights
        else:
            faces = np.array([b.face for b in starts])
            W = np.array([b.weights for b in starts])
        self.n_rows = len(W)
        for u in range(model.n_controls):
            per_face = []
            for y in np.unique(faces):
                sel = np.flatnonzero(faces == y)
                per_face.append((sel,) + _mode_b_tableau(
                    model, grid, int(y), np.ascontiguousarray(W[sel]), u, dt))
            self.pieces.append(per_face)

    def apply(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals = np.empty((self.model.n_controls, self.n_rows))
        for u, per_face in enumerate(self.pieces):
            for sel, cost0, p, jids, jwts, (fids, fwts) in per_face:
                jump_part = np.einsum("rd,rd->r", w[jids], jwts)
                flow_part = np.einsum("rd,rd->r", w[fids], fwts)
                vals[u, sel] = cost0 + self.disc * (jump_part + (1.0 - p) * flow_part)
        return vals.min(axis=0), vals.argmin(axis=0)


def bellman_const(model: ModelSpec, grid: BeliefGrid, w: np.ndarray, nu: Belief,
                  t_max: float | None = None, h: float | None = None) -> tuple[float, int]:
    """Constant-control Bellman value and minimizer at one belief (mode A)."""
    if t_max is None:
        t_max = default_t_max(model, 1e-4)
    if h is None:
        h = _solver_step(model)
    op = _ModeAOperator(model, grid, t_max, h, starts=[nu])
    vals, arg = op.apply(np.asarray(w, dtype=np.float64))
    return float(vals[0]), int(arg[0])


def bellman_sl(model: ModelSpec, grid: BeliefGrid, w: np.ndarray, nu: Belief,
               dt: float) -> tuple[float, int]:
    """Semi-Lagrangian one-step Bellman value and minimizer at one belief (mode B)."""
    op = _ModeBOperator(model, grid, dt, starts=[nu])
    vals, arg = op.apply(np.asarray(w, dtype=np.float64))
    return float(vals[0]), int(arg[0])


def value_iteration(model: ModelSpec, grid: BeliefGrid, mode: str = "A",
                    tol: float = 1e-4, t_max: float | None = None,
                    dt: float = 1e-2, h: float | None = None,
                    max_iter: int = 200_000, on_sweep=None,
                    ) -> tuple[ValueField, StationaryPolicy]:
    """Fixed-point iteration of the chosen Bellman operator from w = 0.

    Stops when the sweep difference guarantees a fixed-point error below
    tol under the operator's contraction modulus; mode B's one-step
    operator contracts like exp(-beta dt), so its stopping modulus is the
    larger of that and the jump-operator modulus.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mode = mode.upper()
    if mode == "A":
        if t_max is None:
            t_max = default_t_max(model, tol)
        if h is None:
            h = _solver_step(model)
        op = _ModeAOperator(model, grid, t_max, h)
        kappa = kappa_hat(model)
    elif mode == "B":
        op = _ModeBOperator(model, grid, dt)
        kappa = max(kappa_hat(model), math.exp(-model.beta * dt))
    else:
        raise ValueError(f"unknown mode {mode!r}")

    stop = tol * (1.0 - kappa) / kappa if kappa > 0 else tol
    w = np.zeros(grid.n_vertices)
    policy = np.zeros(grid.n_vertices, dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        w_new, policy = op.apply(w)
        diff = float(np.abs(w_new - w).max())
        w = w_new
        if on_sweep is not None:
            on_sweep(w)
        if diff <= stop:
            break
    else:
        raise NoConvergence(f"no convergence within {max_iter} sweeps (last diff {diff})")

    residual = float(np.abs(op.apply(w)[0] - w).max())
    vf = ValueField(grid=grid, values=w, k=grid.k, mode=mode,
                    residual=residual, iterations=iterations)
    return vf, StationaryPolicy(grid=grid, controls=policy)


def lift_value(model: ModelSpec, vf: ValueField, mu: np.ndarray) -> float:
    """Value of an initial law: label-mass-weighted values of its conditionals."""
    mu = np.asarray(mu, dtype=np.float64)
    total = 0.0
    for y in range(model.n_obs):
        mass = float(mu[model.onface[y]].sum())
        if mass <= 0.0:
            continue
        total += mass * vf.grid.interpolate(vf.values, h_update(model, mu, y))
    return total


@dataclass(eq=False)
class SolveResult:
    value_field: ValueField
    policy: StationaryPolicy
    coarse_field: ValueField | None
    report: dict


def solve(model: ModelSpec, k: int, mode: str = "A", tol: float = 1e-4,
          t_max: float | None = None, dt: float = 1e-2,
          with_coarse: bool = True) -> SolveResult:
    """Convenience pipeline: grid, value iteration, and a coarse-grid rerun
    for the grid-bias estimate."""
    grid = build_grid(model, k)
    vf, policy = value_iteration(model, grid, mode=mode, tol=tol, t_max=t_max, dt=dt)
    coarse = None
    bias = None
    if with_coarse and k >= 2:
        cgrid = build_grid(model, max(k // 2, 1))
        coarse, _ = value_iteration(model, cgrid, mode=mode, tol=tol, t_max=t_max, dt=dt)
        fine_at_coarse = np.array([
            grid.interpolate(vf.values, coarse.grid.vertex_belief(i))
            for i in range(coarse.grid.n_vertices)])
        bias = float(np.abs(fine_at_coarse - coarse.values).max())
    used_t_max = t_max if t_max is not None else default_t_max(model, tol)
    report = {
        "iterations": vf.iterations,
        "residual": vf.residual,
        "kappa_hat": kappa_hat(model) if mode.upper() == "A"
                     else max(kappa_hat(model), math.exp(-model.beta * dt)),
        "grid_bias_estimate": bias,
        "truncation_budget": truncation_budget(model, used_t_max) if mode.upper() == "A" else 0.0,
        "mode": mode.upper(),
        "k": k,
        "tol": tol,
    }
    return SolveResult(value_field=vf, policy=policy, coarse_field=coarse, report=report)


def save_solution_csv(model: ModelSpec, vf: ValueField, policy: StationaryPolicy,
                      path) -> None:
    grid = vf.grid
    cols = ["face"] + [f"n_{i}" for i in range(model.n_states)] + ["value", "control"]
    lines = [",".join(cols)]
    for i in range(grid.n_vertices):
        y = int(grid.vertex_face[i])
        comp = np.zeros(model.n_states, dtype=np.int64)
        local = i - int(grid.face_offsets[y])
        comp[grid.face_members[y]] = grid.compositions[y][local]
        lines.append(",".join(
            [model.obs[y]] + [str(int(c)) for c in comp]
            + [repr(float(vf.values[i])), model.controls[int(policy.controls[i])]]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_solution_csv(model: ModelSpec, path) -> tuple[ValueField, StationaryPolicy]:
    """Rebuild a value field and policy from the CSV export."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    n = model.n_states
    comp_cols = [header.index(f"n_{i}") for i in range(n)]
    k = sum(int(rows[0][c]) for c in comp_cols)
    grid = build_grid(model, k)
    values = np.empty(grid.n_vertices)
    controls = np.empty(grid.n_vertices, dtype=np.int64)
    val_col, ctl_col = header.index("value"), header.index("control")
    seen = 0
    by_key = {}
    for y in range(model.n_obs):
        off = int(grid.face_offsets[y])
        for local, comp in enumerate(grid.compositions[y]):
            full = np.zeros(n, dtype=np.int64)
            full[grid.face_members[y]] = comp
            by_key[(y, tuple(full))] = off + local
    for row in rows:
        y = model.obs_index(row[header.index("face")])
        full = tuple(int(row[c]) for c in comp_cols)
        idx = by_key[(y, full)]
        values[idx] = float(row[val_col])
        controls[idx] = model.control_index(row[ctl_col])
        seen += 1
    if seen != grid.n_vertices:
        raise ValueError("solution file does not cover the grid")
    vf = ValueField(grid=grid, values=values, k=k, mode="file", residual=math.nan,
                    iterations=0)
    return vf, StationaryPolicy(grid=grid, controls=controls)


class FilterPolicyControl:
    """Label-history control that replays the filter online and applies a
    stationary policy at each post-jump belief.

    Implements the batch-controller interface of the signal simulator:
    the belief of every path is tracked from its label history alone, so
    the induced control process is predictable for the observation
    filtration by construction.
    """

    def __init__(self, model: ModelSpec, policy: StationaryPolicy, mu0: np.ndarray,
                 step: float | None = None):
        self.model = model
        self.policy = policy
        self.mu0 = np.asarray(mu0, dtype=np.float64)
        self.step = step if step is not None else 0.2 / max(model.C_lambda, 1e-12)

    def reset(self, n: int, y0: np.ndarray) -> dict:
        model = self.model
        W = np.empty((n, model.n_states))
        faces = np.asarray(y0, dtype=np.int64).copy()
        for y in np.unique(faces):
            b = h_update(model, self.mu0, int(y))
            W[faces == y] = b.weights
        state = {
            "W": W,
            "face": faces,
            "last_t": np.zeros(n),
            "u": self.policy.control_batch(faces, W),
        }
        return state

    def controls(self, state: dict) -> np.ndarray:
        return state["u"]

    def on_jumps(self, state: dict, idx: np.ndarray, t: np.ndarray,
                 y_new: np.ndarray) -> None:
        model = self.model
        W, face, last_t, u = state["W"], state["face"], state["last_t"], state["u"]
        dur = t - last_t[idx]
        for y in np.unique(face[idx]):
            sel_y = idx[face[idx] == y]
            for uu in np.unique(u[sel_y]):
                sel = sel_y[u[sel_y] == uu]
                Wv = np.ascontiguousarray(W[sel])
                _advance_const(model, int(y), Wv, int(uu),
                               dur[np.searchsorted(idx, sel)], self.step)
                W[sel] = Wv
        # left-limit beliefs reached; apply the jump update onto the new faces
        lam_full = np.empty((len(idx), model.n_states))
        for uu in np.unique(u[idx]):
            s = u[idx] == uu
            lam_full[s] = W[idx][s] @ model.lam[:, int(uu), :]
        tgt = lam_full * model.onface[y_new]
        mass = tgt.sum(axis=1)
        degenerate = mass <= 0.0
        if np.any(degenerate):
            faces_d = y_new[degenerate]
            uni = model.onface[faces_d] / model.onface[faces_d].sum(axis=1)[:, None]
            tgt[degenerate] = uni
            mass[degenerate] = 1.0
        tgt /= mass[:, None]
        W[idx] = tgt
        face[idx] = y_new
        last_t[idx] = t
        u[idx] = self.policy.control_batch(y_new, tgt)
