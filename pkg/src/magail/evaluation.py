"""Distribution-level and emergent driving metrics for simulated trajectories."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

KL_METRICS = ("speed", "acceleration", "turn_rate", "jerk", "ittc")
EMERGENT_METRICS = ("lane_change_rate", "offroad_duration", "hard_brake_rate", "traverse_km")
ITTC_RANGE = 200.0
MIN_GAP = 1e-3
DEFAULT_BINS = 32
DEFAULT_WIDEN = 0.1
DEFAULT_EPS = 1e-6


@dataclass
class DerivedSeries:
    speed: np.ndarray
    acceleration: np.ndarray
    turn_rate: np.ndarray
    jerk: np.ndarray
    ittc: np.ndarray

    def get(self, name: str) -> np.ndarray:
        return getattr(self, name)


def derive(traj) -> DerivedSeries:
    """Finite-difference kinematics of one trajectory from its raw records.

    Acceleration and turn rate are forward differences (length ``T - 1``),
    jerk the difference of acceleration (``T - 2``). iTTC is the closing speed
    over the gap to the car ahead, 0 when opening or when nothing is within
    200 m.
    """
    raw = traj.raw
    v = np.asarray(raw["v_x"], dtype=np.float64)
    T = len(v)
    if T < 3:
        raise ValueError(f"derive needs at least 3 records, got {T}")
    dt = float(traj.dt)
    acc = np.diff(v) / dt
    turn = np.diff(np.unwrap(np.asarray(raw["psi"], dtype=np.float64))) / dt
    jerk = np.diff(acc) / dt
    gap = np.asarray(raw["front_gap"], dtype=np.float64)
    closing = np.maximum(0.0, v - np.asarray(raw["front_speed"], dtype=np.float64))
    ahead = gap <= ITTC_RANGE
    ittc = np.where(ahead, closing / np.maximum(gap, MIN_GAP), 0.0)
    out = DerivedSeries(v.copy(), acc, turn, jerk, ittc)
    for name in KL_METRICS:
        if not np.all(np.isfinite(out.get(name))):
            raise ValueError(f"derive: non-finite {name} series")
    return out


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.edges.ndim != 1 or len(self.edges) != len(self.probs) + 1:
            raise ValueError("histogram needs len(edges) == len(probs) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("histogram edges must be strictly ascending")


def histogram(values, edges) -> Histogram:
    """Normalised counts; values beyond the outer edges land in the end bins."""
    values = np.asarray(values, dtype=np.float64).ravel()
    edges = np.asarray(edges, dtype=np.float64)
    if values.size == 0:
        raise ValueError("histogram of an empty sample")
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    return Histogram(edges, counts / counts.sum())


def kl_divergence(p: Histogram, q: Histogram, eps: float = DEFAULT_EPS) -> float:
    """``KL(p || q)`` after adding ``eps`` to every bin and renormalising."""
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise ValueError("kl_divergence: histograms have different bin edges")
    ps = (p.probs + eps) / np.sum(p.probs + eps)
    qs = (q.probs + eps) / np.sum(q.probs + eps)
    return float(max(0.0, np.sum(ps * np.log(ps / qs))))


def fit_edges(values, bins: int = DEFAULT_BINS, widen: float = DEFAULT_WIDEN) -> np.ndarray:
    """``bins`` uniform bins spanning the sample range, widened by ``widen`` of the span per side."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot fit bin edges to an empty sample")
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    if span <= 0:
        span = max(abs(lo), 1.0)
    return np.linspace(lo - widen * span, hi + widen * span, bins + 1)


def emergent(trajs) -> dict:
    """Lane changes, off-road steps and hard brakes per trajectory; mean distance in km."""
    trajs = list(trajs)
    if not trajs:
        raise ValueError("emergent metrics need at least one trajectory")
    n = len(trajs)
    dist = [float(np.sum(t.raw["v_x"] * np.cos(t.raw["psi"]) * t.dt)) for t in trajs]
    return {
        "lane_change_rate": sum(t.count("lane_change") for t in trajs) / n,
        "offroad_duration": sum(t.count("offroad") for t in trajs) / n,
        "hard_brake_rate": sum(t.count("hard_brake") for t in trajs) / n,
        "traverse_km": sum(dist) / n / 1000.0,
    }


def pooled(trajs, name: str) -> np.ndarray:
    return np.concatenate([derive(t).get(name) for t in trajs])


@dataclass
class MetricsReport:
    kl: dict
    emergent: dict
    meta: dict = field(default_factory=dict)

    def rows(self):
        return ([("kl", k, self.kl[k]) for k in KL_METRICS]
                + [("emergent", k, self.emergent[k]) for k in EMERGENT_METRICS])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "name", "value"))
        for kind, name, value in self.rows():
            w.writerow((kind, name, repr(float(value))))
        return buf.getvalue()

    def to_table(self, label: str = "model") -> str:
        kl_head = " | ".join(f"{k:>12}" for k in KL_METRICS)
        kl_vals = " | ".join(f"{self.kl[k]:12.4f}" for k in KL_METRICS)
        em_head = " | ".join(f"{k:>16}" for k in EMERGENT_METRICS)
        em_vals = " | ".join(f"{self.emergent[k]:16.4f}" for k in EMERGENT_METRICS)
        return (f"KL divergence (expert || {label})\n{'':10} | {kl_head}\n{label:10} | {kl_vals}\n\n"
                f"Emergent behaviour\n{'':10} | {em_head}\n{label:10} | {em_vals}\n")

    def to_json(self) -> str:
        return json.dumps({"kl": self.kl, "emergent": self.emergent, "meta": self.meta},
                          indent=2, sort_keys=True) + "\n"


def report(model_trajs, expert_trajs, bins: int = DEFAULT_BINS, widen: float = DEFAULT_WIDEN,
           eps: float = DEFAULT_EPS) -> MetricsReport:
    """KL of each kinematic distribution plus the emergent metrics of the model runs."""
    model_trajs, expert_trajs = list(model_trajs), list(expert_trajs)
    if not model_trajs or not expert_trajs:
        raise ValueError("report needs non-empty model and expert trajectory sets")
    kl, edges = {}, {}
    for name in KL_METRICS:
        ev = pooled(expert_trajs, name)
        e = fit_edges(ev, bins, widen)
        kl[name] = kl_divergence(histogram(ev, e), histogram(pooled(model_trajs, name), e), eps)
        edges[name] = [float(e[0]), float(e[-1])]
    meta = {"n_model": len(model_trajs), "n_expert": len(expert_trajs), "bins": bins,
            "widen": widen, "eps": eps, "edge_range": edges,
            "model_steps": sorted({len(t) for t in model_trajs})}
    return MetricsReport(kl, emergent(model_trajs), meta)


def combined_table(results: dict) -> str:
    """CSV with one row per variant and the four emergent metrics as columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("variant",) + EMERGENT_METRICS)
    for variant, rep in results.items():
        w.writerow((variant,) + tuple(repr(float(rep.emergent[k])) for k in EMERGENT_METRICS))
    return buf.getvalue()

