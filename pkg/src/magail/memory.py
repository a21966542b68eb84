"""Neural memory stack with LSTM read/write controllers and soft attention.

All functions are pure: a :class:`MemoryState` goes in, a new one comes out.
They work on plain arrays or on tape nodes, and on a single memory
(``M`` of shape ``[k, l]``) or a batch of memories (``[B, k, l]``).
Controller weights live in a :class:`~magail.numerics.ParamStore` under a
prefix such as ``"memL"``::

    memL/read/w_f  memL/read/b_f  ...  memL/write/w_o  memL/write/b_o

Each ``w_*`` maps the concatenation ``[h; x]`` (size ``2l``) to ``R^l``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numerics import ad

GATES = ("f", "i", "c", "o")
ALPHA_TOL = 1e-9


@dataclass(frozen=True)
class MemoryConfig:
    slots: int
    embed_dim: int

    def __post_init__(self):
        if self.slots < 1 or self.embed_dim < 1:
            raise ValueError(f"invalid memory config {self}")


@dataclass
class MemoryState:
    M: object
    h_r: object
    c_r: object
    h_w: object
    c_w: object
    config: MemoryConfig

    def snapshot(self, prefix: str) -> dict:
        return {f"{prefix}/{k}": np.array(ad.value(getattr(self, k)))
                for k in ("M", "h_r", "c_r", "h_w", "c_w")}

    @classmethod
    def from_snapshot(cls, tensors: dict, prefix: str) -> "MemoryState":
        M = tensors[f"{prefix}/M"]
        cfg = MemoryConfig(M.shape[-2], M.shape[-1])
        return cls(M.copy(), *(tensors[f"{prefix}/{k}"].copy()
                                for k in ("h_r", "c_r", "h_w", "c_w")), cfg)


@dataclass
class MemoryReadout:
    q: object
    alpha: object
    m: object


def init_params(store, prefix: str, embed_dim: int, rng, scale: float | None = None) -> None:
    l = embed_dim
    scale = 1.0 / np.sqrt(2 * l) if scale is None else scale
    for ctrl in ("read", "write"):
        for g in GATES:
            store.add(f"{prefix}/{ctrl}/w_{g}", rng.uniform(-scale, scale, size=(2 * l, l)))
            store.add(f"{prefix}/{ctrl}/b_{g}", np.zeros(l))


def zero_state(config: MemoryConfig, batch: int | None = None) -> MemoryState:
    lead = () if batch is None else (batch,)
    k, l = config.slots, config.embed_dim
    z = lambda: np.zeros(lead + (l,))  # noqa: E731
    return MemoryState(np.zeros(lead + (k, l)), z(), z(), z(), z(), config)


def reset(state: MemoryState) -> MemoryState:
    batch = None if np.ndim(ad.value(state.M)) == 2 else np.shape(ad.value(state.M))[0]
    return zero_state(state.config, batch)


def lstm_cell(p, prefix: str, h, c, x):
    """One LSTM step; ``prefix`` is e.g. ``"memL/read"``. Returns ``(h', c')``."""
    l = np.shape(ad.value(h))[-1]
    if np.shape(ad.value(x))[-1] != l or np.shape(ad.value(c))[-1] != l:
        raise ad.ShapeError(
            f"lstm_cell: shapes h={np.shape(ad.value(h))} c={np.shape(ad.value(c))} "
            f"x={np.shape(ad.value(x))} do not match")
    if f"{prefix}/W" in p:
        W, b = p[f"{prefix}/W"], p[f"{prefix}/B"]
    else:
        W = ad.concat([p[f"{prefix}/w_{g}"] for g in GATES], axis=1)
        b = ad.concat([p[f"{prefix}/b_{g}"] for g in GATES], axis=0)
    hc = ad.lstm(h, c, x, W, b)
    return ad.getitem(hc, (Ellipsis, slice(0, l))), ad.getitem(hc, (Ellipsis, slice(l, 2 * l)))


def with_fused_gates(p, prefixes):
    """Copy of ``p`` holding pre-concatenated gate weights for each controller prefix.

    Saves re-concatenating the four gate blocks at every step of a long sequence.
    """
    out = dict(p)
    for prefix in prefixes:
        for ctrl in ("read", "write"):
            base = f"{prefix}/{ctrl}"
            if f"{base}/w_f" in p:
                out[f"{base}/W"] = ad.concat([p[f"{base}/w_{g}"] for g in GATES], axis=1)
                out[f"{base}/B"] = ad.concat([p[f"{base}/b_{g}"] for g in GATES], axis=0)
    return out


def scores(M, q):
    """``a_j = q . M_j`` for every slot; supports a shared ``[k, l]`` memory with batched queries."""
    qv = ad.value(q)
    if np.ndim(qv) == 1:
        return ad.matmul(M, q)
    col = ad.matmul(M, ad.expand_dims(q, -1))
    return ad.reshape(col, np.shape(ad.value(col))[:-1])


def attend(M, q):
    """Softmax attention weights over memory slots."""
    return ad.attention(M, q)


def output(M, alpha):
    """Convex combination ``sum_j alpha_j M_j``."""
    return ad.weighted_rows(alpha, M)


def read(state: MemoryState, s, p, prefix: str):
    """Query the memory with state embedding ``s``; advances the read controller."""
    q, c_r = lstm_cell(p, f"{prefix}/read", state.h_r, state.c_r, s)
    alpha = attend(state.M, q)
    m = output(state.M, alpha)
    return MemoryReadout(q, alpha, m), replace(state, h_r=q, c_r=c_r)


def convex_update(M, alpha, m_write):
    """Per-slot erase/add: ``M'_j = (1 - alpha_j) M_j + alpha_j m_write``."""
    return ad.convex_write(M, alpha, m_write)


def write(state: MemoryState, readout: MemoryReadout, p, prefix: str) -> MemoryState:
    total = np.sum(ad.value(readout.alpha), axis=-1)
    if np.any(np.abs(total - 1.0) > ALPHA_TOL):
        raise ValueError(f"write: attention weights not normalised (sum={total})")
    m_write, c_w = lstm_cell(p, f"{prefix}/write", state.h_w, state.c_w, readout.m)
    M = convex_update(state.M, readout.alpha, m_write)
    return replace(state, M=M, h_w=m_write, c_w=c_w)


def step(state: MemoryState, s, p, prefix: str):
    """Read then write. Returns the pre-write readout and the post-write state."""
    readout, state = read(state, s, p, prefix)
    return readout, write(state, readout, p, prefix)


def dispersion(m_prev, m_curr, tiny: float = 1e-12):
    """Cosine distance ``1 - cos(m_prev, m_curr)`` in ``[0, 2]``; 0 if either vector is ~0.

    Works row-wise on batched inputs.
    """
    a = np.asarray(ad.value(m_prev), dtype=np.float64)
    b = np.asarray(ad.value(m_curr), dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na >= tiny) & (nb >= tiny)
    cos = np.sum(a * b, axis=-1) / np.where(ok, na * nb, 1.0)
    out = np.where(ok, 1.0 - np.clip(cos, -1.0, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def entropy(alpha) -> np.ndarray:
    a = np.asarray(ad.value(alpha))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a > 0, a * np.log(a), 0.0)
    return -terms.sum(axis=-1)
