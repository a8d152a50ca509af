"""
Dense numeric kernel: seeded random streams, bias-augmented MLPs with analytic
backward passes, a central-difference gradient checker and Adam.

A DenseMatrix is a 2-D float64 numpy array, rows are samples. Parameters of an
MLP live in one flat float64 vector; per layer the weight matrix W of shape
(w_out, w_in) comes first (row-major), then the bias (w_out,). A layer maps a
batch h to h @ W.T + b.
"""
import hashlib
from dataclasses import dataclass
from typing import Callable, Iterator, Tuple

import numpy as np

from ibac.errors import DivergenceError, GradientCheckError, NonFiniteError, ShapeError

MASK64 = (1 << 64) - 1
ACTIVATIONS = ("tanh", "relu")

DenseMatrix = np.ndarray


def derive_seed(*parts) -> int:
    """
    Deterministic 64-bit seed from any sequence of str/int/float parts.
    Floats go through repr, so 1e-3 and 0.001 agree.
    """
    text = "|".join(repr(p) if isinstance(p, float) else str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """
    Seeded random stream on numpy's PCG64 bit generator.

    Uniforms are the top 53 bits of each raw 64-bit draw scaled by 2**-53, so
    they lie in [0, 1). Standard normals use Box-Muller on two uniforms:
    z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2), one normal per pair. Both rely only
    on the raw PCG64 stream, which is identical on every platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._bits = np.random.PCG64(self.seed)

    def raw(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64)

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = _shape(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return (low + (high - low) * u).reshape(shape)

    def normal(self, size) -> np.ndarray:
        shape = _shape(size)
        n = int(np.prod(shape, dtype=np.int64))
        u1 = self.uniform(n)
        u2 = self.uniform(n)
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)

    def integers(self, high: int, size) -> np.ndarray:
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, *key) -> "Rng":
        return Rng(derive_seed(self.seed, *key))


def _shape(size) -> Tuple[int, ...]:
    if isinstance(size, (int, np.integer)):
        return (int(size),)
    return tuple(int(s) for s in size)


@dataclass(frozen=True)
class MlpSpec:
    """
    Layer widths from input to output. Non-final layers apply ``activation``;
    the final layer is linear. With ``residual`` a non-final layer whose input
    and output widths match adds its input back (identity skip).
    """
    layer_widths: Tuple[int, ...]
    activation: str = "tanh"
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ShapeError(f"MlpSpec needs at least 2 widths, got {self.layer_widths}")
        if any(w < 1 for w in self.layer_widths):
            raise ShapeError(f"MlpSpec widths must be >= 1, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum((w[i] + 1) * w[i + 1] for i in range(len(w) - 1))

    def skips(self, layer: int) -> bool:
        w = self.layer_widths
        return self.residual and layer < self.n_layers - 1 and w[layer] == w[layer + 1]

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activation": self.activation, "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_widths"]), d.get("activation", "tanh"), bool(d.get("residual", False)))


def init_params(spec: MlpSpec, rng: Rng) -> np.ndarray:
    chunks = []
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        chunks.append(rng.normal(n_out * n_in) * np.sqrt(1.0 / n_in))
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


def _layers(params: np.ndarray, spec: MlpSpec) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    offset = 0
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        W = params[offset:offset + n_out * n_in].reshape(n_out, n_in)
        offset += n_out * n_in
        b = params[offset:offset + n_out]
        offset += n_out
        yield W, b


def _check_params(params: np.ndarray, spec: MlpSpec) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ShapeError(f"parameter vector has shape {params.shape}, spec {spec.layer_widths} needs ({spec.n_params},)")
    return params


def as_matrix(x, cols: int = None, name: str = "input") -> DenseMatrix:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    if cols is not None and x.shape[1] != cols:
        raise ShapeError(f"{name} has {x.shape[1]} columns, expected {cols} (shape {x.shape})")
    return x


def _activate(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(a)
    return np.maximum(a, 0.0)


def _activation_grad(a: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - out * out
    return (a > 0.0).astype(np.float64)


def _forward(params, spec, x):
    hs, pre, acts = [x], [], []
    h = x
    last = spec.n_layers - 1
    for layer, (W, b) in enumerate(_layers(params, spec)):
        a = h @ W.T + b
        pre.append(a)
        if layer == last:
            h = a
            acts.append(None)
        else:
            out = _activate(a, spec.activation)
            acts.append(out)
            h = h + out if spec.skips(layer) else out
        hs.append(h)
    return h, (hs, pre, acts)


def mlp_forward(params: np.ndarray, spec: MlpSpec, x: DenseMatrix) -> DenseMatrix:
    params = _check_params(params, spec)
    x = as_matrix(x, spec.n_in)
    out, _ = _forward(params, spec, x)
    if not np.isfinite(out).all():
        raise NonFiniteError(f"mlp_forward produced non-finite output for spec {spec.layer_widths}")
    return out


def mlp_backward(params: np.ndarray, spec: MlpSpec, x: DenseMatrix,
                 upstream: DenseMatrix) -> Tuple[np.ndarray, DenseMatrix]:
    """
    Gradient of sum(upstream * mlp_forward(params, spec, x)) with respect to
    the parameter vector and the input batch.
    """
    params = _check_params(params, spec)
    x = as_matrix(x, spec.n_in)
    upstream = as_matrix(upstream, spec.n_out, name="upstream gradient")
    if upstream.shape[0] != x.shape[0]:
        raise ShapeError(f"upstream gradient has {upstream.shape[0]} rows, input has {x.shape[0]}")

    _, (hs, pre, acts) = _forward(params, spec, x)
    layers = list(_layers(params, spec))
    grads = []
    g = upstream
    last = spec.n_layers - 1
    for layer in range(last, -1, -1):
        W, _ = layers[layer]
        if layer == last:
            ga = g
        else:
            ga = g * _activation_grad(pre[layer], acts[layer], spec.activation)
        grads.append((ga.T @ hs[layer]).ravel())
        grads.append(ga.sum(axis=0))
        g_in = ga @ W
        if spec.skips(layer):
            g_in = g_in + g
        g = g_in
    # collected last layer first, bias after weight
    ordered = []
    for i in range(len(grads) - 2, -1, -2):
        ordered.append(grads[i])
        ordered.append(grads[i + 1])
    return np.concatenate(ordered), g


def softmax_cross_entropy(logits: DenseMatrix, targets: np.ndarray) -> Tuple[float, DenseMatrix]:
    """
    Mean cross-entropy of integer targets under softmax(logits), and its
    gradient with respect to the logits.
    """
    logits = as_matrix(logits, name="logits")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = -log_p[rows, targets].mean()
    grad = np.exp(log_p)
    grad[rows, targets] -= 1.0
    return float(loss), grad / n


def grad_check(f: Callable[[np.ndarray], Tuple[float, np.ndarray]], point: np.ndarray, h: float = 1e-5) -> float:
    """
    Max over coordinates of |analytic - central| / max(1, |analytic|, |central|).

    ``f`` returns (value, analytic gradient) at a point.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    point = np.asarray(point, dtype=np.float64)
    _, analytic = f(point.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    for i in range(point.shape[0]):
        xp = point.copy()
        xp[i] += h
        xm = point.copy()
        xm[i] -= h
        fp, _ = f(xp)
        fm, _ = f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientCheckError("non-finite function value", coordinate=i)
        central = (fp - fm) / (2.0 * h)
        err = abs(analytic[i] - central) / max(1.0, abs(analytic[i]), abs(central))
        worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Tuple[np.ndarray, AdamState]:
    """
    One bias-corrected Adam update. Returns new arrays; the inputs are never
    mutated, so a rejected step leaves the caller's state as it was.
    """
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ShapeError(f"adam_step shapes differ: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}/{state.v.shape}")
    if not np.isfinite(grads).all():
        raise DivergenceError("non-finite gradient rejected by adam_step")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)
