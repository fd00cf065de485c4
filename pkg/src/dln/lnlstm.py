"""Layer-normalised LSTM cell.

Every gate's summed pre-activation ``W_e e + W_h h`` goes through its own
layer norm before the nonlinearity; the gain/shift vectors are the only
per-domain parameters. The cell state is not normalised.

Arrays are batch-major: ``e`` is (B, E), ``h``/``c`` are (B, H). Single
examples can be passed as 1-D vectors and come back 1-D.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, ParamStore, StateError, Tensor, sigmoid

GATES = ("i", "f", "o", "u")
LN_EPS = 1e-5


@dataclass
class LNParams:
    g: dict  # gate -> Tensor[H]
    b: dict  # gate -> Tensor[H]

    @property
    def hidden(self) -> int:
        return self.g["i"].shape[0]

    @classmethod
    def init(cls, hidden: int, dtype=np.float32) -> "LNParams":
        return cls(
            g={k: Tensor(np.ones(hidden, dtype=dtype)) for k in GATES},
            b={k: Tensor(np.zeros(hidden, dtype=dtype)) for k in GATES},
        )

    @classmethod
    def from_store(cls, store: ParamStore, domain: str) -> "LNParams":
        return cls(
            g={k: store[f"ln.{domain}.{k}.g"] for k in GATES},
            b={k: store[f"ln.{domain}.{k}.b"] for k in GATES},
        )

    def register(self, store: ParamStore, domain: str, trainable: bool = True):
        for k in GATES:
            store.add(f"ln.{domain}.{k}.g", self.g[k], trainable)
            store.add(f"ln.{domain}.{k}.b", self.b[k], trainable)

    def stacked(self):
        return (np.stack([self.g[k].value for k in GATES]),
                np.stack([self.b[k].value for k in GATES]))


@dataclass
class LSTMWeights:
    ie: dict  # gate -> Tensor[H, E]
    ih: dict  # gate -> Tensor[H, H]

    @property
    def hidden(self) -> int:
        return self.ih["i"].shape[0]

    @property
    def embed(self) -> int:
        return self.ie["i"].shape[1]

    @classmethod
    def from_store(cls, store: ParamStore) -> "LSTMWeights":
        return cls(ie={k: store[f"lstm.{k}.ie"] for k in GATES},
                   ih={k: store[f"lstm.{k}.ih"] for k in GATES})

    def stacked(self):
        """(4H, E) and (4H, H) matrices with gates in GATES order."""
        return (np.concatenate([self.ie[k].value for k in GATES]),
                np.concatenate([self.ih[k].value for k in GATES]))


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, batch: int, hidden: int, dtype=np.float32) -> "CellState":
        return cls(np.zeros((batch, hidden), dtype=dtype), np.zeros((batch, hidden), dtype=dtype))


def layer_norm(a, g, b, eps: float = LN_EPS):
    """g / (sigma + eps) * (a - mu) + b over the last axis (population sigma)."""
    out, _ = layer_norm_forward(np.asarray(a), np.asarray(g), np.asarray(b), eps)
    return out


def layer_norm_forward(a, g, b, eps: float = LN_EPS):
    if a.shape[-1] == 0:
        raise ValueError("layer_norm needs a non-empty vector")
    if g.shape[-1] != a.shape[-1] or b.shape[-1] != a.shape[-1]:
        raise DimensionError(f"layer_norm: a{a.shape} g{g.shape} b{b.shape}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    mu = a.mean(axis=-1, keepdims=True)
    cen = a - mu
    sigma = np.sqrt((cen * cen).mean(axis=-1, keepdims=True))
    d = sigma + eps
    xhat = cen / d
    return g * xhat + b, (xhat, sigma, d)


def layer_norm_backward(dout, g, cache):
    """Returns (da, dxhat-weighted dg, db) with dg/db still carrying batch axes."""
    xhat, sigma, d = cache
    dxhat = dout * g
    safe = np.where(sigma > 0, sigma, 1.0)
    da = (dxhat - dxhat.mean(axis=-1, keepdims=True)) / d \
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True) / safe
    return da, dout * xhat, dout


def _check(e, state, Wie, Wih):
    if e.shape[-1] != Wie.shape[1]:
        raise DimensionError(f"embedding dim {e.shape[-1]} does not match W_ie {Wie.shape}")
    if state.h.shape[-1] != Wih.shape[1] or state.c.shape != state.h.shape:
        raise DimensionError(f"state h{state.h.shape} c{state.c.shape} vs W_ih {Wih.shape}")


def _step(e, state, Wie, Wih, G, Bv, eps):
    H = Wih.shape[1]
    a = e @ Wie.T + state.h @ Wih.T
    a = a.reshape(a.shape[0], 4, H)
    ahat, ln_cache = layer_norm_forward(a, G, Bv, eps)
    s = sigmoid(ahat[:, :3])
    i, f, o = s[:, 0], s[:, 1], s[:, 2]
    u = np.tanh(ahat[:, 3])
    c = f * state.c + i * u
    tc = np.tanh(c)
    h = o * tc
    cache = (e, state.h, state.c, ln_cache, i, f, o, u, tc)
    return CellState(h, c), cache


def lnlstm_step(e_k, state: CellState, w: LSTMWeights, ln: LNParams, eps: float = LN_EPS) -> CellState:
    """One LN-LSTM step. Accepts (E,) / (H,) vectors or (B, E) / (B, H) batches."""
    single = np.ndim(e_k) == 1
    e = np.atleast_2d(e_k)
    st = CellState(np.atleast_2d(state.h), np.atleast_2d(state.c))
    Wie, Wih = w.stacked()
    _check(e, st, Wie, Wih)
    G, Bv = ln.stacked()
    out, _ = _step(e, st, Wie, Wih, G, Bv, eps)
    if single:
        return CellState(out.h[0], out.c[0])
    return out


@dataclass
class Trajectory:
    caches: list
    Wie: np.ndarray
    Wih: np.ndarray
    G: np.ndarray


def lnlstm_forward(e_seq, state0: CellState, w: LSTMWeights, ln: LNParams, eps: float = LN_EPS):
    """Run over e_seq of shape (T, B, E). Returns (h_seq (T, B, H), final state, trajectory)."""
    Wie, Wih = w.stacked()
    G, Bv = ln.stacked()
    _check(e_seq[0], state0, Wie, Wih)
    state = state0
    hs, caches = [], []
    for e in e_seq:
        state, cache = _step(e, state, Wie, Wih, G, Bv, eps)
        hs.append(state.h)
        caches.append(cache)
    return np.stack(hs), state, Trajectory(caches, Wie, Wih, G)


def lnlstm_backward(traj: Trajectory, dh_seq, dc_final=None):
    """Exact BPTT through a cached trajectory.

    Returns (de_seq, grads, dh0, dc0) where ``grads`` maps
    ``lstm.{gate}.{ie|ih}`` and ``{gate}.{g|b}`` to arrays.
    """
    T = len(traj.caches)
    if len(dh_seq) != T:
        raise StateError(f"trajectory has {T} steps but got {len(dh_seq)} hidden grads")
    Wie, Wih, G = traj.Wie, traj.Wih, traj.G
    H = Wih.shape[1]
    dWie = np.zeros_like(Wie)
    dWih = np.zeros_like(Wih)
    dG = np.zeros_like(G)
    dB = np.zeros_like(G)
    de_seq = [None] * T
    dh_next = np.zeros_like(dh_seq[0])
    dc_next = np.zeros_like(dh_seq[0]) if dc_final is None else np.asarray(dc_final).copy()
    for t in range(T - 1, -1, -1):
        e, h_prev, c_prev, ln_cache, i, f, o, u, tc = traj.caches[t]
        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dahat = np.empty((dh.shape[0], 4, H), dtype=dh.dtype)
        dahat[:, 0] = dc * u * i * (1.0 - i)
        dahat[:, 1] = dc * c_prev * f * (1.0 - f)
        dahat[:, 2] = dh * tc * o * (1.0 - o)
        dahat[:, 3] = dc * i * (1.0 - u * u)
        da, dg, db = layer_norm_backward(dahat, G, ln_cache)
        dG += dg.sum(axis=0)
        dB += db.sum(axis=0)
        da = da.reshape(da.shape[0], 4 * H)
        dWie += da.T @ e
        dWih += da.T @ h_prev
        de_seq[t] = da @ Wie
        dh_next = da @ Wih
        dc_next = dc * f
    grads = {}
    for n, k in enumerate(GATES):
        grads[f"lstm.{k}.ie"] = dWie[n * H:(n + 1) * H]
        grads[f"lstm.{k}.ih"] = dWih[n * H:(n + 1) * H]
        grads[f"{k}.g"] = dG[n]
        grads[f"{k}.b"] = dB[n]
    return np.stack(de_seq), grads, dh_next, dc_next
