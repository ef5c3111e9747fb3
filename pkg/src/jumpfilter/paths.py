"""Jump-time/mark path records and their file formats."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import Belief, ModelSpec


class PathError(ValueError):
    pass


class NonincreasingTimes(PathError):
    pass


class RepeatedLabel(PathError):
    pass


def _check_times(times) -> None:
    prev = 0.0
    for t in times:
        if not t > prev:
            raise NonincreasingTimes(f"jump times must be strictly increasing, got {t} after {prev}")
        prev = t


@dataclass
class SignalPath:
    """Trajectory of the hidden jump process: start state and (time, state) jumps."""

    x0: int
    jumps: list[tuple[float, int]]
    horizon: float

    def __post_init__(self):
        _check_times(t for t, _ in self.jumps)
        prev = self.x0
        for _, x in self.jumps:
            if x == prev:
                raise PathError("self-jump in signal path")
            prev = x

    def state_at(self, t: float) -> int:
        x = self.x0
        for tj, xj in self.jumps:
            if tj > t:
                break
            x = xj
        return x


@dataclass
class YPath:
    """Observed label trajectory: start label and (time, label) jumps."""

    y0: int
    jumps: list[tuple[float, int]]
    horizon: float

    def __post_init__(self):
        _check_times(t for t, _ in self.jumps)
        prev = self.y0
        for _, y in self.jumps:
            if y == prev:
                raise RepeatedLabel("consecutive observation labels must differ")
            prev = y


@dataclass
class PdmpPath:
    """Belief-process trajectory: start belief and (time, post-jump belief, drawn label)."""

    start: Belief
    jumps: list[tuple[float, Belief, int]]
    horizon: float

    def __post_init__(self):
        _check_times(t for t, _, _ in self.jumps)
        prev = self.start.face
        for _, b, y in self.jumps:
            if b.face != y:
                raise PathError("post-jump belief face disagrees with drawn label")
            if y == prev:
                raise RepeatedLabel("consecutive faces must differ")
            prev = y


@dataclass
class FilterPath:
    """Filter replay output: grid samples plus exact post-jump beliefs."""

    times: np.ndarray          # sample times, jump times included
    faces: np.ndarray          # face index at each sample
    weights: np.ndarray        # (len(times), n_states)
    jump_times: np.ndarray
    jump_degenerate: np.ndarray  # True where the jump hit a zero-mass label and fell back
    horizon: float

    def belief_at_end(self) -> tuple[int, np.ndarray]:
        return int(self.faces[-1]), self.weights[-1]


def _fmt(x: float) -> str:
    return repr(float(x))


def filter_path_to_csv(model: ModelSpec, fp: FilterPath, path) -> None:
    cols = ["t", "face"] + [f"w_{i}" for i in range(model.n_states)]
    lines = [",".join(cols)]
    for t, y, w in zip(fp.times, fp.faces, fp.weights):
        lines.append(",".join([_fmt(t), model.obs[int(y)]] + [_fmt(v) for v in w]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def y_path_to_dict(model: ModelSpec, yp: YPath) -> dict:
    return {
        "y0": model.obs[yp.y0],
        "jumps": [{"t": t, "y": model.obs[y]} for t, y in yp.jumps],
        "horizon": yp.horizon,
    }


def y_path_from_dict(model: ModelSpec, doc: dict) -> YPath:
    y0 = model.obs_index(str(doc["y0"]))
    jumps = [(float(j["t"]), model.obs_index(str(j["y"]))) for j in doc["jumps"]]
    horizon = float(doc.get("horizon", jumps[-1][0] if jumps else 0.0))
    return YPath(y0=y0, jumps=jumps, horizon=horizon)


def signal_path_to_dict(model: ModelSpec, sp: SignalPath) -> dict:
    return {
        "x0": model.states[sp.x0],
        "jumps": [{"t": t, "state": model.states[x]} for t, x in sp.jumps],
        "horizon": sp.horizon,
    }


def signal_path_from_dict(model: ModelSpec, doc: dict) -> SignalPath:
    x0 = model.state_index(str(doc["x0"]))
    jumps = [(float(j["t"]), model.state_index(str(j["state"]))) for j in doc["jumps"]]
    horizon = float(doc.get("horizon", jumps[-1][0] if jumps else 0.0))
    return SignalPath(x0=x0, jumps=jumps, horizon=horizon)


def pdmp_path_to_dict(model: ModelSpec, pp: PdmpPath, cost_sample: float | None = None) -> dict:
    doc = {
        "start": {"y": model.obs[pp.start.face], "weights": pp.start.weights.tolist()},
        "jumps": [
            {"t": t, "y": model.obs[y], "weights": b.weights.tolist()}
            for t, b, y in pp.jumps
        ],
        "horizon": pp.horizon,
    }
    if cost_sample is not None:
        doc["cost_sample"] = cost_sample
    return doc


def write_json(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
