"""The belief process as a piecewise-deterministic process.

Characteristics: the belief vector field between label changes, the
state-dependent jump rate r (total off-face outflow), and the post-jump
kernel obtained by drawing the next label from the outflow split and
renormalizing the outflow measure on the drawn face.  Sojourn times are
sampled exactly by thinning against the global rate bound.
"""
from __future__ import annotations

import math

import numpy as np

from . import filtering
from .filtering import NegativeDuration, _advance_const, default_step, jump_update
from .model import Belief, ModelSpec, make_belief
from .paths import PdmpPath

INFINITE_SOJOURN = math.inf


class ZeroRate(ValueError):
    pass


def jump_rate(model: ModelSpec, nu: Belief, u: int) -> float:
    """Total rate of leaving the current face; between 0 and C_lambda."""
    return float(model.r_vecs[nu.face, u] @ nu.weights)


def obs_kernel(model: ModelSpec, nu: Belief, u: int) -> np.ndarray:
    """Distribution of the next observed label given a pre-jump belief.

    Proportional to the outflow mass landing on each other face; puts no
    mass on the current label.  With zero jump rate the kernel is never
    sampled; it is fixed to a point mass at the current label so it stays
    a probability vector.
    """
    r = jump_rate(model, nu, u)
    out = np.zeros(model.n_obs)
    if r <= 0.0:
        out[nu.face] = 1.0
        return out
    out = nu.weights @ model.lam_to_face[:, u, :]
    out[nu.face] = 0.0
    return out / r


def survival(model: ModelSpec, nu: Belief, control, t: float,
             step: float | None = None) -> float:
    """Probability of no label change within ``t``: exp of minus the
    integrated jump rate along the flow, advanced on the same RK4 grid."""
    if t < 0:
        raise NegativeDuration(f"duration must be nonnegative, got {t}")
    if t == 0:
        return 1.0
    if step is None:
        step = default_step(model)
    W = nu.weights[None, :].copy()
    total = 0.0
    for dur, u in filtering._control_segments(control, t):
        if dur <= 0:
            continue
        ell, _ = _advance_const(model, nu.face, W, u, np.array([dur]), step)
        total += float(ell[0])
    return math.exp(-total)


def _face_can_jump(model: ModelSpec, face: int) -> bool:
    return bool(np.any(model.r_vecs[face, :, model.onface[face]] > 0))


def sample_sojourn(model: ModelSpec, nu: Belief, control: int, rng,
                   step: float | None = None, t_max: float = math.inf,
                   ) -> tuple[float, Belief]:
    """Exact sojourn sample by thinning, with the left-limit belief.

    Proposes exponential(C_lambda) increments and accepts each proposal
    with probability r(flow)/C_lambda.  Returns (inf, belief) when no
    label change can occur from this face, or when the accepted time
    would exceed ``t_max`` (belief then advanced to ``t_max``).
    """
    if step is None:
        step = default_step(model)
    if model.C_lambda <= 0 or not _face_can_jump(model, nu.face):
        return INFINITE_SOJOURN, nu
    u = int(control)
    W = nu.weights[None, :].copy()
    s = 0.0
    while True:
        delta = rng.exponential(1.0 / model.C_lambda)
        if s + delta > t_max:
            if math.isfinite(t_max):
                _advance_const(model, nu.face, W, u, np.array([t_max - s]), step)
            return INFINITE_SOJOURN, make_belief(model, nu.face, W[0])
        _advance_const(model, nu.face, W, u, np.array([delta]), step)
        s += delta
        r = float(model.r_vecs[nu.face, u] @ W[0])
        if rng.random() < r / model.C_lambda:
            return s, make_belief(model, nu.face, W[0])


def sample_transition(model: ModelSpec, nu_minus: Belief, u: int, rng,
                      ) -> tuple[int, Belief]:
    """Draw the next label from the observation kernel and rebuild the belief."""
    r = jump_rate(model, nu_minus, u)
    if r <= 0.0:
        raise ZeroRate("no transition possible from a zero-rate belief")
    probs = obs_kernel(model, nu_minus, u)
    y_new = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    y_new = min(y_new, model.n_obs - 1)
    return y_new, jump_update(model, nu_minus, u, y_new)


def _control_of(policy, belief: Belief) -> int:
    if isinstance(policy, (int, np.integer)):
        return int(policy)
    return int(policy.control_at(belief))


def simulate_pdmp(model: ModelSpec, nu0: Belief, policy, horizon: float, rng,
                  step: float | None = None) -> tuple[PdmpPath, float]:
    """Simulate the belief process under a stationary policy.

    ``policy`` is a control index or any object with ``control_at(belief)``;
    its control is applied constantly from each post-jump belief until the
    next label change.  Also returns one sample of the discounted running
    cost integrated along the belief path up to the horizon.
    """
    if horizon < 0:
        raise NegativeDuration(f"horizon must be nonnegative, got {horizon}")
    if step is None:
        step = default_step(model)
    jumps: list[tuple[float, Belief, int]] = []
    cost = 0.0
    t = 0.0
    belief = nu0
    while t < horizon:
        u = _control_of(policy, belief)
        f_vec = np.ascontiguousarray(model.f[:, u])
        if model.C_lambda <= 0 or not _face_can_jump(model, belief.face):
            W = belief.weights[None, :].copy()
            _, zc = _advance_const(model, belief.face, W, u,
                                   np.array([horizon - t]), step,
                                   t0=np.array([t]), f_vec=f_vec)
            cost += float(zc[0])
            break
        s = 0.0
        W = belief.weights[None, :].copy()
        jumped = False
        while t + s < horizon:
            delta = rng.exponential(1.0 / model.C_lambda)
            adv = min(delta, horizon - t - s)
            _, zc = _advance_const(model, belief.face, W, u, np.array([adv]), step,
                                   t0=np.array([t + s]), f_vec=f_vec)
            cost += float(zc[0])
            s += adv
            if adv < delta:
                break
            r = float(model.r_vecs[belief.face, u] @ W[0])
            if rng.random() < r / model.C_lambda:
                left = make_belief(model, belief.face, W[0])
                y_new, belief = sample_transition(model, left, u, rng)
                t += s
                jumps.append((t, belief, y_new))
                jumped = True
                break
        if not jumped:
            t = horizon
    return PdmpPath(start=nu0, jumps=jumps, horizon=horizon), cost


def _draw_categorical(rng, probs: np.ndarray) -> np.ndarray:
    """Row-wise categorical draw; probs rows need not be normalized."""
    cum = np.cumsum(probs, axis=1)
    total = cum[:, -1]
    r = rng.random(len(probs)) * total
    return (cum > r[:, None]).argmax(axis=1)


def mc_cost(model: ModelSpec, nu0: Belief, policy, horizon: float,
            n_paths: int, rng, step_scale: float = 0.1,
            ) -> tuple[float, float]:
    """Mean and standard error of the discounted cost over many belief paths.

    Vectorized across paths: thinning proposals are capped at 1/C_lambda
    (exact by memorylessness of the exponential) so flows advance in
    bounded batched strides.
    """
    if model.C_lambda <= 0:
        u = _control_of(policy, nu0)
        g = float(nu0.weights @ model.f[:, u]) * (1 - math.exp(-model.beta * horizon)) / model.beta
        return g, 0.0
    n = model.n_states
    C = model.C_lambda
    step = step_scale / C
    cap = 1.0 / C
    W = np.tile(nu0.weights, (n_paths, 1))
    face = np.full(n_paths, nu0.face, dtype=np.int64)
    u_arr = np.empty(n_paths, dtype=np.int64)
    fixed_u = isinstance(policy, (int, np.integer))
    u_arr[:] = int(policy) if fixed_u else policy.control_at(nu0)
    t = np.zeros(n_paths)
    cost = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)

    while np.any(alive):
        delta = rng.exponential(1.0 / C, size=n_paths)
        accept_u = rng.random(n_paths)
        remaining = horizon - t
        stride = np.minimum(delta, cap)
        done = alive & (stride >= remaining)
        adv = np.where(alive, np.minimum(stride, remaining), 0.0)
        propose = alive & ~done & (delta <= cap)

        act = np.flatnonzero(alive)
        for y in np.unique(face[act]):
            sel_y = act[face[act] == y]
            for u in np.unique(u_arr[sel_y]):
                sel = sel_y[u_arr[sel_y] == u]
                Wv = np.ascontiguousarray(W[sel])
                _, zc = _advance_const(model, int(y), Wv, int(u), adv[sel], step,
                                       t0=t[sel], f_vec=np.ascontiguousarray(model.f[:, int(u)]))
                W[sel] = Wv
                cost[sel] += zc
        t += adv

        pidx = np.flatnonzero(propose)
        if len(pidx):
            r = np.einsum("ij,ij->i", W[pidx], model.r_vecs[face[pidx], u_arr[pidx], :])
            jidx = pidx[accept_u[pidx] < r / C]
            if len(jidx):
                outflow = np.empty((len(jidx), model.n_obs))
                lam_full = np.empty((len(jidx), n))
                for u in np.unique(u_arr[jidx]):
                    s = u_arr[jidx] == u
                    outflow[s] = W[jidx][s] @ model.lam_to_face[:, int(u), :]
                    lam_full[s] = W[jidx][s] @ model.lam[:, int(u), :]
                outflow[np.arange(len(jidx)), face[jidx]] = 0.0
                y_new = _draw_categorical(rng, outflow)
                tgt = lam_full * model.onface[y_new]
                tgt /= tgt.sum(axis=1)[:, None]
                W[jidx] = tgt
                face[jidx] = y_new
                if not fixed_u:
                    u_arr[jidx] = policy.control_batch(y_new, tgt)
        alive[done] = False

    mean = float(cost.mean())
    stderr = float(cost.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return mean, stderr


def first_jump_samples(model: ModelSpec, nu0: Belief, u: int, n: int, rng,
                       step_scale: float = 0.01, t_max: float = 50.0,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Batched (sojourn, post-jump label) samples of the first jump.

    Paths whose first jump exceeds ``t_max`` get an infinite sojourn and
    label -1.
    """
    C = model.C_lambda
    if C <= 0 or not _face_can_jump(model, nu0.face):
        return np.full(n, math.inf), np.full(n, -1, dtype=np.int64)
    step = step_scale / C
    cap = 1.0 / C
    W = np.tile(nu0.weights, (n, 1))
    t = np.zeros(n)
    sojourn = np.full(n, math.inf)
    label = np.full(n, -1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    r_vec = model.r_vecs[nu0.face, u]
    while np.any(alive):
        idx = np.flatnonzero(alive)
        delta = rng.exponential(1.0 / C, size=n)[idx]
        accept_u = rng.random(n)[idx]
        is_prop = delta <= cap
        adv = np.where(is_prop, delta, cap)
        Wv = np.ascontiguousarray(W[idx])
        _advance_const(model, nu0.face, Wv, u, adv, step)
        W[idx] = Wv
        t[idx] += adv
        over = t[idx] > t_max
        propose = is_prop & ~over
        pidx = idx[propose]
        if len(pidx):
            r = W[pidx] @ r_vec
            acc = accept_u[propose] < r / C
            jidx = pidx[acc]
            if len(jidx):
                outflow = W[jidx] @ model.lam_to_face[:, u, :]
                outflow[np.arange(len(jidx)), nu0.face] = 0.0
                y_new = _draw_categorical(rng, outflow)
                sojourn[jidx] = t[jidx]
                label[jidx] = y_new
                alive[jidx] = False
        alive[idx[over]] = False
    return sojourn, label
