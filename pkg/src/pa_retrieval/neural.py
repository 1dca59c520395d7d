"""Hand-differentiated 3-layer MLP, Adam with global-norm clipping, and stable loss primitives."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import N_ACTIONS, OBS_DIM

HIDDEN = 256
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    pass


@dataclass
class MlpParams:
    """Weights ``W[i]`` have shape (fan_in, fan_out); ReLU on hidden layers, identity output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, seed: int, in_dim: int = OBS_DIM, hidden: int = HIDDEN, out_dim: int = N_ACTIONS,
             n_hidden: int = 2) -> "MlpParams":
        rng = np.random.default_rng(seed)
        sizes = [in_dim] + [hidden] * n_hidden + [out_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros_like(cls, other: "MlpParams") -> "MlpParams":
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for a in self.arrays():
            a[...] = vec[i:i + a.size].reshape(a.shape)
            i += a.size
        if i != vec.size:
            raise ValueError("flat vector length does not match parameter count")

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def forward(params: MlpParams, obs: np.ndarray) -> np.ndarray:
    out, _ = forward_cache(params, obs)
    return out


def forward_cache(params: MlpParams, obs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping the per-layer inputs needed by :func:`backward`."""
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"expected input dimension {params.weights[0].shape[0]}, got {x.shape[1]}")
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return (h[0] if single else h), acts


def backward(params: MlpParams, acts: list[np.ndarray], grad_out: np.ndarray) -> MlpParams:
    """Reverse-mode gradients of ``sum(grad_out * forward(obs))`` w.r.t. every parameter."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    gw: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        a = acts[i]
        gw[i] = a.T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (a > 0)
    return MlpParams(gw, gb)


# ------------------------------------------------------------------ optimizer
@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(MlpParams.zeros_like(params), MlpParams.zeros_like(params), lr, beta1, beta2, eps)


def global_norm(grads: MlpParams) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays())))


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, clip_norm: float = 1.0) -> float:
    """Clip ``grads`` to ``clip_norm`` (global L2), then apply one bias-corrected Adam update in place.

    Returns the pre-clipping gradient norm.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise DivergenceError("divergence detected: non-finite gradient")
    scale = min(1.0, clip_norm / norm) if norm > 0 else 1.0
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        g = g * scale
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm


# ------------------------------------------------------------------ losses
def log_sum_exp(values: np.ndarray, axis: int = -1) -> np.ndarray | float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m), axis=axis)) + np.squeeze(m, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise log-softmax; masked-out entries get ``-inf``."""
    z = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    return np.exp(log_softmax(logits, mask))


def softmax_cross_entropy(logits: np.ndarray, action: int) -> float:
    return float(-log_softmax(np.asarray(logits, dtype=np.float64))[action])


def expectile_loss(u: np.ndarray | float, tau: float) -> np.ndarray | float:
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    u = np.asarray(u, dtype=np.float64)
    out = np.abs(tau - (u < 0)) * u * u
    return float(out) if out.ndim == 0 else out


def log_sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = -np.logaddexp(0.0, -x)
    return float(out) if out.ndim == 0 else out


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(log_sigmoid(x))
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------ checks & io
def finite_difference_grad(f, params: MlpParams, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f(params)`` over the flat parameter vector."""
    base = params.flat()
    grad = np.zeros_like(base)
    probe = params.copy()
    for i in range(base.size):
        x = base.copy()
        x[i] = base[i] + h
        probe.set_flat(x)
        fp = f(probe)
        x[i] = base[i] - h
        probe.set_flat(x)
        fm = f(probe)
        grad[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def params_to_json(params: MlpParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "shapes": [list(s) for s in params.shapes],
        "flat": params.flat().astype("<f8").tobytes().hex(),
    }


def params_from_json(d: dict) -> MlpParams:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    shapes = [tuple(s) for s in d["shapes"]]
    params = MlpParams([np.zeros(s) for s in shapes], [np.zeros(s[1]) for s in shapes])
    params.set_flat(np.frombuffer(bytes.fromhex(d["flat"]), dtype="<f8").astype(np.float64))
    return params


def save_params(params: MlpParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_json(params)))


def load_params(path: str | Path) -> MlpParams:
    return params_from_json(json.loads(Path(path).read_text()))
