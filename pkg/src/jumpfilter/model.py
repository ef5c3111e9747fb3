"""Problem data: a controlled finite jump process observed through a state label.

A model is a finite state set, an observation label per state, a finite
control set, a controlled rate tensor ``lam[x, u, z]`` with zero diagonal,
a bounded running cost ``f[x, u]`` and a positive discount rate ``beta``.
Beliefs live on faces of the probability simplex: the face of label ``y``
is the set of distributions supported on ``{x : h(x) = y}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Numerical contract shared by the whole package: beliefs carry unit mass
# up to MASS_TOL and at most LEAK_TOL of mass off their face.
MASS_TOL = 1e-10
LEAK_TOL = 1e-12
NEG_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model data."""


class NegativeRate(ModelError):
    pass


class DiagonalRate(ModelError):
    pass


class NonPositiveBeta(ModelError):
    pass


class NonSurjectiveH(ModelError):
    pass


class DegenerateH(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Validated model data plus cached derived arrays.

    Construct through :func:`validate_model` or :func:`load_model`; the
    derived fields (rate bounds, per-face operator matrices) are filled
    there and the instance is immutable afterwards.
    """

    states: tuple[str, ...]
    obs: tuple[str, ...]
    h: np.ndarray                # (n,) int, observation index of each state
    controls: tuple[str, ...]
    lam: np.ndarray              # (n, m, n) float, lam[x, u, z]
    f: np.ndarray                # (n, m) float
    beta: float
    C_lambda: float              # max over (x, u) of total rate
    C_f: float                   # max over (x, u) of |f|
    lam_tot: np.ndarray          # (n, m) total rate per (state, control)
    lam_to_face: np.ndarray      # (n, m, n_obs): mass sent into each label's face
    onface: np.ndarray           # (n_obs, n) bool: state belongs to the face
    b_matrices: np.ndarray       # (n_obs, m, n, n): matrix of the drift operator per (face, control)
    r_vecs: np.ndarray           # (n_obs, m, n): off-face exit rate per state

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_obs(self) -> int:
        return len(self.obs)

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def face_mask(self, y: int) -> np.ndarray:
        return self.onface[y]

    def state_index(self, name: str) -> int:
        return self.states.index(name)

    def obs_index(self, name: str) -> int:
        return self.obs.index(name)

    def control_index(self, name: str) -> int:
        return self.controls.index(name)


@dataclass(frozen=True, eq=False)
class Belief:
    """A probability vector over all states, confined to one face.

    ``weights`` has full length ``n_states``; entries off the face are
    (numerically) zero.  Construction asserts the mass and sign contract
    in debug mode; face confinement is asserted where the model is in
    scope (see :func:`make_belief`).
    """

    face: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        assert abs(float(w.sum()) - 1.0) <= MASS_TOL, "belief mass off unit"
        assert float(w.min(initial=0.0)) >= -NEG_TOL, "negative belief weight"


def make_belief(model: ModelSpec, face: int, weights: np.ndarray) -> Belief:
    """Belief constructor that also asserts face confinement."""
    b = Belief(face, weights)
    assert float(b.weights[~model.onface[face]].sum(initial=0.0)) <= LEAK_TOL, (
        "belief mass leaked off its face"
    )
    return b


def validate_model(raw: dict, allow_degenerate_h: bool = False) -> ModelSpec:
    """Check a parsed model document and return the validated spec.

    ``raw`` follows the model file schema: keys ``states``, ``obs``, ``h``
    (one observation label per state), ``controls``, ``lambda`` (rate
    array indexed [x][u][z]), ``f`` ([x][u]) and ``beta``.

    ``allow_degenerate_h`` skips the injective/constant exclusion on the
    observation map.  That exclusion is modelling hygiene (an injective h
    reveals the state, a constant one reveals nothing); the escape hatch
    exists for testing only.
    """
    try:
        states = tuple(str(s) for s in raw["states"])
        obs = tuple(str(o) for o in raw["obs"])
        controls = tuple(str(c) for c in raw["controls"])
        h_labels = list(raw["h"])
        lam = np.asarray(raw["lambda"], dtype=np.float64)
        f = np.asarray(raw["f"], dtype=np.float64)
        beta = float(raw["beta"])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model document: {exc}") from exc

    n, n_o, m = len(states), len(obs), len(controls)
    if len(set(states)) != n or len(set(obs)) != n_o or len(set(controls)) != m:
        raise ModelError("duplicate identifiers")
    if n == 0 or n_o == 0 or m == 0:
        raise ModelError("empty state, observation or control set")
    if len(h_labels) != n:
        raise ModelError("h must assign one observation label per state")
    obs_idx = {o: i for i, o in enumerate(obs)}
    try:
        h = np.array([obs_idx[str(lbl)] for lbl in h_labels], dtype=np.int64)
    except KeyError as exc:
        raise ModelError(f"h uses unknown observation label {exc}") from exc

    if lam.shape != (n, m, n):
        raise ModelError(f"lambda must have shape ({n},{m},{n}), got {lam.shape}")
    if f.shape != (n, m):
        raise ModelError(f"f must have shape ({n},{m}), got {f.shape}")
    if not np.all(np.isfinite(lam)):
        raise ModelError("non-finite rate")
    if not np.all(np.isfinite(f)):
        raise ModelError("non-finite cost")
    if np.any(lam < 0):
        raise NegativeRate("rates must be nonnegative")
    diag = lam[np.arange(n), :, np.arange(n)]
    if np.any(diag != 0):
        raise DiagonalRate("self-rates lam[x, u, x] must be zero")
    if not beta > 0:
        raise NonPositiveBeta("discount rate must be positive")

    counts = np.bincount(h, minlength=n_o)
    if np.any(counts == 0):
        missing = [obs[i] for i in np.flatnonzero(counts == 0)]
        raise NonSurjectiveH(f"observation labels never produced: {missing}")
    if not allow_degenerate_h:
        if n_o == n:
            raise DegenerateH("observation map is injective")
        if n_o == 1:
            raise DegenerateH("observation map is constant")

    lam_tot = lam.sum(axis=2)
    onface = np.zeros((n_o, n), dtype=bool)
    onface[h, np.arange(n)] = True
    lam_to_face = np.zeros((n, m, n_o))
    for y in range(n_o):
        lam_to_face[:, :, y] = lam[:, :, onface[y]].sum(axis=2)

    b_matrices = np.zeros((n_o, m, n, n))
    r_vecs = np.zeros((n_o, m, n))
    for y in range(n_o):
        for u in range(m):
            mat = lam[:, u, :].T.copy()        # mat[z, x] = lam[x, u, z]
            mat[~onface[y], :] = 0.0
            mat[np.arange(n), np.arange(n)] -= lam_tot[:, u]
            b_matrices[y, u] = mat
            r_vecs[y, u] = lam_tot[:, u] - lam_to_face[:, u, y]

    return ModelSpec(
        states=states,
        obs=obs,
        h=h,
        controls=controls,
        lam=np.ascontiguousarray(lam),
        f=np.ascontiguousarray(f),
        beta=beta,
        C_lambda=float(lam_tot.max()),
        C_f=float(np.abs(f).max()),
        lam_tot=np.ascontiguousarray(lam_tot),
        lam_to_face=lam_to_face,
        onface=onface,
        b_matrices=np.ascontiguousarray(b_matrices),
        r_vecs=np.ascontiguousarray(r_vecs),
    )


def load_model(path, allow_degenerate_h: bool = False) -> ModelSpec:
    with open(path) as fh:
        return validate_model(json.load(fh), allow_degenerate_h=allow_degenerate_h)


def model_to_dict(model: ModelSpec) -> dict:
    return {
        "states": list(model.states),
        "obs": list(model.obs),
        "h": [model.obs[y] for y in model.h],
        "controls": list(model.controls),
        "lambda": model.lam.tolist(),
        "f": model.f.tolist(),
        "beta": model.beta,
    }


def dirac(model: ModelSpec, x: int) -> Belief:
    """Point mass at state ``x``, tagged with its face."""
    n = model.n_states
    if not 0 <= x < n:
        raise IndexError(f"state index {x} out of range [0, {n})")
    w = np.zeros(n)
    w[x] = 1.0
    return make_belief(model, int(model.h[x]), w)


def face_states(model: ModelSpec, y: int) -> np.ndarray:
    """Indices of the states carrying observation label ``y``."""
    if not 0 <= y < model.n_obs:
        raise IndexError(f"observation index {y} out of range [0, {model.n_obs})")
    return np.flatnonzero(model.onface[y])


def uniform_on_face(model: ModelSpec, y: int) -> Belief:
    members = face_states(model, y)
    w = np.zeros(model.n_states)
    w[members] = 1.0 / len(members)
    return make_belief(model, y, w)
