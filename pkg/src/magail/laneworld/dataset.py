"""Expert trajectories and the line-delimited JSON demo file.

File layout: the first line is a header object; every following line holds
one trajectory with its feature rows, action rows, per-step raw world
quantities and per-step event lists. Floats are written with 17 significant
digits so a load/save round trip is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics import derive_seed
from . import world as lw
from .expert import PERSONAS, ExpertState, Persona, expert_action
from .track import TrackSpec

FORMAT_VERSION = 1


class DimensionError(ValueError):
    """The file's feature or action width differs from the simulator's."""


@dataclass
class Trajectory:
    """Records ``t = 0..T-1``: features of state ``w_t``, action taken there,
    raw quantities of ``w_t`` and the events of the transition into ``w_t``
    (empty at ``t = 0``)."""

    features: np.ndarray
    actions: np.ndarray
    persona: str
    seed: int
    raw: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    dt: float = lw.DT

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, lw.FEATURE_DIM)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, lw.ACTION_DIM)
        if len(self.features) < 1 or len(self.features) != len(self.actions):
            raise ValueError("trajectory needs >= 1 record and matching state/action counts")
        self.raw = {k: np.asarray(v, dtype=np.float64) for k, v in self.raw.items()}

    def __len__(self) -> int:
        return len(self.features)

    def count(self, event: str) -> int:
        return sum(1 for ev in self.events if event in ev)


@dataclass
class Dataset:
    header: dict
    trajectories: list

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_records(self) -> int:
        return sum(len(t) for t in self.trajectories)


def make_header(spec: TrackSpec, personas, dt: float = lw.DT) -> dict:
    return {"format_version": FORMAT_VERSION, "feature_dim": lw.FEATURE_DIM,
            "action_dim": lw.ACTION_DIM, "dt": dt, "track": spec.to_dict(),
            "personas": [p.to_dict() for p in personas]}


def run_expert(spec: TrackSpec, persona: Persona, T: int, seed: int) -> Trajectory:
    """Drive one closed-loop expert episode of ``T`` records."""
    if T < 1:
        raise ValueError("episode length must be >= 1")
    w = lw.reset(spec, seed)
    ctrl = ExpertState()
    feats, acts, raws, events = [], [], [], []
    ev = frozenset()
    for _ in range(T):
        f = lw.features(w)
        a, ctrl = expert_action(persona, f, ctrl, w)
        feats.append(f)
        acts.append(a.to_array())
        raws.append(lw.raw_record(w))
        events.append(sorted(ev))
        w, ev = lw.step(w, a)
    raw = dict(zip(lw.RAW_FIELDS, np.array(raws).T))
    return Trajectory(np.array(feats), np.array(acts), persona.name, seed, raw, events, w.dt)


def record_demos(spec: TrackSpec, personas, episodes_per_persona: int, T: int, seed: int,
                 path=None) -> Dataset:
    if T < 1:
        raise ValueError("episode length T must be >= 1")
    personas = [PERSONAS[p] if isinstance(p, str) else p for p in personas]
    trajs = []
    for pi, persona in enumerate(personas):
        for ep in range(episodes_per_persona):
            ep_seed = derive_seed(seed, "demo", persona.name, ep)
            trajs.append(run_expert(spec, persona, T, ep_seed))
    ds = Dataset(make_header(spec, personas), trajs)
    if path is not None:
        save_dataset(ds, path)
    return ds


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _rows(a: np.ndarray) -> str:
    if a.ndim == 1:
        return "[" + ",".join(_num(x) for x in a) + "]"
    return "[" + ",".join(_rows(r) for r in a) + "]"


def _trajectory_line(t: Trajectory) -> str:
    parts = [f'"persona":{json.dumps(t.persona)}', f'"seed":{int(t.seed)}',
             f'"states":{_rows(t.features)}', f'"actions":{_rows(t.actions)}']
    if t.raw:
        raw = ",".join(f"{json.dumps(k)}:{_rows(v)}" for k, v in t.raw.items())
        parts.append(f'"raw":{{{raw}}}')
    if t.events:
        parts.append(f'"events":{json.dumps(t.events)}')
    return "{" + ",".join(parts) + "}"


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(ds.header, sort_keys=True) + "\n")
            for t in ds.trajectories:
                fh.write(_trajectory_line(t) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    if not lines:
        raise ValueError(f"{path}: empty dataset file (missing header)")
    header = json.loads(lines[0])
    if header.get("feature_dim") != lw.FEATURE_DIM or header.get("action_dim") != lw.ACTION_DIM:
        raise DimensionError(f"{path}: header declares feature_dim={header.get('feature_dim')}, "
                             f"action_dim={header.get('action_dim')}; expected "
                             f"{lw.FEATURE_DIM}, {lw.ACTION_DIM}")
    dt = float(header.get("dt", lw.DT))
    trajs = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        trajs.append(Trajectory(rec["states"], rec["actions"], rec["persona"], rec["seed"],
                                rec.get("raw", {}), rec.get("events", []), dt))
    return Dataset(header, trajs)


def track_from_header(header: dict) -> TrackSpec:
    return TrackSpec.from_dict(header["track"])
