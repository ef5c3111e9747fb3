"""Regular discretization of the effective simplex with barycentric interpolation.

Each face of label y is discretized by the compositions of k into
|face| parts.  Interpolation uses the Freudenthal (Kuhn) triangulation in
cumulative coordinates: weights are nonnegative, sum to one, reproduce
vertex values exactly and affine functions within each cell.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .model import Belief, ModelSpec, make_belief


class GridTooLarge(ValueError):
    pass


def _compositions(k: int, d: int) -> np.ndarray:
    if d == 1:
        return np.array([[k]], dtype=np.int64)
    rows = []
    for bars in itertools.combinations(range(k + d - 1), d - 1):
        comp = []
        prev = -1
        for b in bars:
            comp.append(b - prev - 1)
            prev = b
        comp.append(k + d - 2 - prev)
        rows.append(comp)
    return np.array(rows, dtype=np.int64)


def _comp_to_cum(comp: np.ndarray) -> np.ndarray:
    """Cumulative tail sums c_j = sum_{i >= j} comp_i for j = 1..d-1."""
    return comp[..., ::-1].cumsum(axis=-1)[..., ::-1][..., 1:]


@dataclass(eq=False)
class BeliefGrid:
    """Vertices of all faces at resolution k plus the interpolation tables."""

    model: ModelSpec
    k: int
    face_members: list[np.ndarray]        # state indices of each face
    compositions: list[np.ndarray]        # per face, (V_y, d_y) ints summing to k
    face_offsets: np.ndarray              # global vertex id range per face
    vertex_weights: np.ndarray            # (V, n_states) belief of each vertex
    vertex_face: np.ndarray               # (V,)
    _lookup: list[np.ndarray | None] = field(default_factory=list)
    _radix: list[np.ndarray | None] = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_weights)

    def vertex_belief(self, i: int) -> Belief:
        return make_belief(self.model, int(self.vertex_face[i]), self.vertex_weights[i].copy())

    def locate_batch(self, face: int, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Containing-simplex vertices and barycentric weights, rows of W on one face.

        W holds full-width belief vectors; returns (ids, wts) with shape
        (rows, d) where d is the face size.  Zero-weight slots are filled
        with the base vertex so every id is valid.
        """
        members = self.face_members[face]
        d = len(members)
        R = len(W)
        off = int(self.face_offsets[face])
        if d == 1:
            return (np.full((R, 1), off, dtype=np.int64), np.ones((R, 1)))
        q = d - 1
        k = self.k
        wf = W[:, members]
        c = k * _comp_to_cum(wf)
        c = np.clip(c, 0.0, float(k))
        c = np.minimum.accumulate(c, axis=1)
        base = np.floor(c)
        frac = c - base
        order = np.argsort(-frac, axis=1, kind="stable")
        fsort = np.take_along_axis(frac, order, axis=1)

        verts = np.empty((R, d, q), dtype=np.int64)
        verts[:, 0, :] = base.astype(np.int64)
        rows = np.arange(R)
        for m in range(1, d):
            verts[:, m, :] = verts[:, m - 1, :]
            verts[rows, m, order[:, m - 1]] += 1

        wts = np.empty((R, d))
        wts[:, 0] = 1.0 - fsort[:, 0]
        for m in range(1, q):
            wts[:, m] = fsort[:, m - 1] - fsort[:, m]
        wts[:, q] = fsort[:, q - 1]
        np.clip(wts, 0.0, None, out=wts)

        # zero-weight simplex corners may step outside the face; park them
        # on the base vertex, which is always valid
        invalid = wts <= 0.0
        verts[invalid] = verts[np.nonzero(invalid)[0], 0]

        radix = self._radix[face]
        codes = verts @ radix
        local = self._lookup[face][codes]
        assert local.min() >= 0, "interpolation cell outside the face grid"
        ids = local + off
        wts = wts / wts.sum(axis=1)[:, None]
        return ids, wts

    def locate(self, belief: Belief) -> tuple[np.ndarray, np.ndarray]:
        ids, wts = self.locate_batch(belief.face, belief.weights[None, :])
        return ids[0], wts[0]

    def interpolate(self, values: np.ndarray, belief: Belief) -> float:
        ids, wts = self.locate(belief)
        return float(values[ids] @ wts)

    def interpolate_batch(self, values: np.ndarray, face: int, W: np.ndarray) -> np.ndarray:
        ids, wts = self.locate_batch(face, W)
        return np.einsum("rd,rd->r", values[ids], wts)

    def nearest_vertex_batch(self, face: int, W: np.ndarray) -> np.ndarray:
        """Vertex with the largest barycentric weight per row (first on ties)."""
        ids, wts = self.locate_batch(face, W)
        return ids[np.arange(len(ids)), wts.argmax(axis=1)]


def build_grid(model: ModelSpec, k: int, max_vertices: int = 2_000_000) -> BeliefGrid:
    """Discretize every face at resolution k (k subdivisions per edge)."""
    if k < 1:
        raise ValueError("resolution k must be at least 1")
    face_members = [np.flatnonzero(model.onface[y]) for y in range(model.n_obs)]
    compositions = []
    offsets = [0]
    total = 0
    for members in face_members:
        comps = _compositions(k, len(members))
        total += len(comps)
        if total > max_vertices:
            raise GridTooLarge(f"grid exceeds {max_vertices} vertices")
        compositions.append(comps)
        offsets.append(total)

    n = model.n_states
    vw = np.zeros((total, n))
    vface = np.empty(total, dtype=np.int64)
    lookup: list[np.ndarray | None] = []
    radix: list[np.ndarray | None] = []
    for y, (members, comps) in enumerate(zip(face_members, compositions)):
        off = offsets[y]
        vw[np.arange(off, off + len(comps))[:, None], members[None, :]] = comps / k
        vface[off:off + len(comps)] = y
        d = len(members)
        if d == 1:
            lookup.append(None)
            radix.append(None)
            continue
        q = d - 1
        rad = (k + 1) ** np.arange(q, dtype=np.int64)
        table_size = (k + 1) ** q
        if table_size > 50_000_000:
            raise GridTooLarge(f"interpolation table for a {d}-state face too large at k={k}")
        table = np.full(table_size, -1, dtype=np.int64)
        codes = _comp_to_cum(comps) @ rad
        table[codes] = np.arange(len(comps))
        lookup.append(table)
        radix.append(rad)

    return BeliefGrid(
        model=model,
        k=k,
        face_members=face_members,
        compositions=compositions,
        face_offsets=np.array(offsets, dtype=np.int64),
        vertex_weights=vw,
        vertex_face=vface,
        _lookup=lookup,
        _radix=radix,
    )
