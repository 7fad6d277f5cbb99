"""Small MLP with a cosine-normalised output layer, and SGD with momentum.

The network is ``x -> [relu(W x + b)]* -> s * cos(W_out, h)``: hidden
activations and every row of the bias-free output matrix are scaled to unit
length before the dot product, so each logit lies in ``[-s, s]``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError

NORM_EPS = 1e-12


@dataclass
class NetworkParams:
    hidden: list[tuple[np.ndarray, np.ndarray]]
    out: np.ndarray
    scale: float = 10.0

    @property
    def in_dim(self) -> int:
        return self.hidden[0][0].shape[1] if self.hidden else self.out.shape[1]

    @property
    def num_classes(self) -> int:
        return self.out.shape[0]

    def arrays(self) -> list[np.ndarray]:
        flat = []
        for W, b in self.hidden:
            flat.extend((W, b))
        flat.append(self.out)
        return flat

    def copy(self) -> "NetworkParams":
        return copy.deepcopy(self)


def init_network(in_dim: int, num_classes: int, hidden: tuple[int, ...] = (64,),
                 scale: float = 10.0, seed: int = 0) -> NetworkParams:
    """He-initialised hidden layers, standard-normal output rows."""
    if in_dim < 1 or num_classes < 2:
        raise InvalidInputError(f"need in_dim >= 1 and num_classes >= 2, got {in_dim}, {num_classes}")
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = in_dim
    for width in hidden:
        W = rng.standard_normal((width, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append((W, np.zeros(width)))
        fan_in = width
    out = rng.standard_normal((num_classes, fan_in))
    return NetworkParams(hidden=layers, out=out, scale=float(scale))


def _unit_rows(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    return A / (norms + NORM_EPS)[:, None], norms


def _unit_rows_backward(A: np.ndarray, norms: np.ndarray, dU: np.ndarray) -> np.ndarray:
    # d/dA of A/(|A|+eps): dU/(n+eps) - A (A.dU) / (n (n+eps)^2); zero rows have A = 0
    denom = norms + NORM_EPS
    proj = np.einsum("ij,ij->i", A, dU)
    safe = np.where(norms > 0, norms, 1.0)
    return dU / denom[:, None] - A * (proj / (safe * denom**2))[:, None]


def normalized_logits(hidden, W, s: float) -> np.ndarray:
    """Scaled cosine similarity between features and each row of ``W``.

    ``hidden`` may be a single d-vector or an (N, d) batch. Zero vectors give
    zero logits instead of an error.
    """
    if not s > 0:
        raise InvalidInputError(f"scale must be > 0, got {s}")
    H = np.asarray(hidden, dtype=np.float64)
    single = H.ndim == 1
    H = np.atleast_2d(H)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != H.shape[1]:
        raise InvalidInputError(f"feature dim {H.shape[1]} does not match weight shape {W.shape}")
    Hn, _ = _unit_rows(H)
    Wn, _ = _unit_rows(W)
    Z = s * Hn @ Wn.T
    return Z[0] if single else Z


@dataclass
class Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    feat: np.ndarray | None = None
    feat_norms: np.ndarray | None = None
    feat_unit: np.ndarray | None = None
    w_unit: np.ndarray | None = None
    w_norms: np.ndarray | None = None
    params: NetworkParams | None = None


def forward(X, params: NetworkParams) -> tuple[np.ndarray, Cache]:
    """Logits for a batch ``X`` of shape (N, d) (or a single d-vector)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != params.in_dim:
        raise InvalidInputError(f"input dim {X.shape[1]} does not match network input {params.in_dim}")
    cache = Cache(params=params)
    A = X
    for W, b in params.hidden:
        cache.inputs.append(A)
        pre = A @ W.T + b
        cache.pre.append(pre)
        A = np.maximum(pre, 0.0)
    cache.feat = A
    cache.feat_unit, cache.feat_norms = _unit_rows(A)
    cache.w_unit, cache.w_norms = _unit_rows(params.out)
    Z = params.scale * cache.feat_unit @ cache.w_unit.T
    return (Z[0] if single else Z), cache


def backward(cache: Cache, grad_logits) -> NetworkParams:
    """Gradients of ``sum(grad_logits * Z)`` with respect to every parameter.

    Per-example contributions are summed, not averaged. The result is returned
    as a ``NetworkParams`` with the same layout as the forward parameters.
    """
    params = cache.params
    dZ = np.atleast_2d(np.asarray(grad_logits, dtype=np.float64))
    if dZ.shape != (cache.feat.shape[0], params.num_classes):
        raise InvalidInputError(f"grad_logits shape {dZ.shape} does not match the cached forward pass")
    s = params.scale
    d_feat_unit = s * dZ @ cache.w_unit
    d_w_unit = s * dZ.T @ cache.feat_unit
    d_out = _unit_rows_backward(params.out, cache.w_norms, d_w_unit)
    dA = _unit_rows_backward(cache.feat, cache.feat_norms, d_feat_unit)
    grads = []
    for (W, _), A_in, pre in zip(reversed(params.hidden), reversed(cache.inputs), reversed(cache.pre)):
        dpre = dA * (pre > 0)
        grads.append((dpre.T @ A_in, dpre.sum(axis=0)))
        dA = dpre @ W
    grads.reverse()
    return NetworkParams(hidden=grads, out=d_out, scale=s)


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 2e-4
    buffers: list[np.ndarray] | None = None

    def init_for(self, params: NetworkParams) -> None:
        self.buffers = [np.zeros_like(a) for a in params.arrays()]


def sgd_update(params: NetworkParams, grads: NetworkParams, state: OptimizerState,
               lr: float) -> tuple[NetworkParams, OptimizerState]:
    """In-place momentum SGD step with L2 decay folded into the gradient.

    ``v <- mu v + (g + wd theta)``, ``theta <- theta - lr v``. Raises
    ``TrainingDivergedError`` before touching anything if a gradient is not
    finite.
    """
    if lr < 0:
        raise InvalidInputError(f"learning rate must be >= 0, got {lr}")
    thetas = params.arrays()
    gs = grads.arrays()
    if state.buffers is None:
        state.init_for(params)
    if len(gs) != len(thetas) or any(g.shape != t.shape for g, t in zip(gs, thetas)):
        raise InvalidInputError("gradient layout does not match parameters")
    for k, g in enumerate(gs):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in parameter array {k}")
    for theta, g, v in zip(thetas, gs, state.buffers):
        v *= state.momentum
        v += g + state.weight_decay * theta
        theta -= lr * v
    return params, state
