"""Maximum-margin loss family and baseline losses with analytic gradients.

Every kernel works on a batch of logits ``Z`` of shape (N, K) and integer
labels ``y`` of shape (N,), and returns per-example loss values together with
dL/dZ. The single-example functions (``mm_loss``, ``baseline_loss``) wrap the
batch kernels and package the result as a ``LossResult``.

Logits are expected to already carry the cosine-classifier scale ``s``; the
margin is subtracted from the scaled true-class logit.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError

logger = logging.getLogger(__name__)


class GradMode(str, enum.Enum):
    FULL = "full"
    STOP_MARGIN = "stop_margin"


class MarginMode(str, enum.Enum):
    MM = "mm"
    NONE = "none"


class Branch(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class BaselineKind(str, enum.Enum):
    CE = "ce"
    FOCAL = "focal"
    LDAM = "ldam"


@dataclass(frozen=True)
class ClassCounts:
    """Per-class training sample counts."""

    counts: tuple[int, ...]

    def __post_init__(self):
        values = tuple(int(n) for n in self.counts)
        if len(values) == 0:
            raise InvalidInputError("counts must be non-empty")
        for j, n in enumerate(values):
            if n < 1:
                raise InvalidInputError(f"class {j} has count {n}; every class needs n >= 1")
        object.__setattr__(self, "counts", values)

    def __len__(self) -> int:
        return len(self.counts)

    def __iter__(self):
        return iter(self.counts)

    def __getitem__(self, j):
        return self.counts[j]

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def rho(self) -> float:
        return max(self.counts) / min(self.counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)


@dataclass(frozen=True)
class MarginParams:
    """Hyperparameters of the maximum-margin loss.

    ``C=None`` selects the LDAM constant that makes the largest class margin
    0.5. The defaults are the best long-tailed CIFAR-10 (ratio 100) setting.
    """

    delta_neg: float = 0.6
    beta: float = 1.5
    C: float | None = None
    scale: float = 10.0
    class_aware: bool = False
    grad_mode: GradMode = GradMode.FULL
    margin_mode: MarginMode = MarginMode.MM

    def __post_init__(self):
        object.__setattr__(self, "grad_mode", GradMode(self.grad_mode))
        object.__setattr__(self, "margin_mode", MarginMode(self.margin_mode))
        if not (math.isfinite(self.delta_neg) and self.delta_neg >= 0):
            raise ConfigurationError(f"delta_neg must be finite and >= 0, got {self.delta_neg}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ConfigurationError(f"beta must be > 0, got {self.beta}")
        if self.C is not None and not (math.isfinite(self.C) and self.C >= 0):
            raise ConfigurationError(f"C must be >= 0, got {self.C}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ConfigurationError(f"scale must be > 0, got {self.scale}")

    @property
    def delta_pos(self) -> float:
        return self.delta_neg * self.beta


@dataclass(frozen=True)
class LossResult:
    value: float
    grad: np.ndarray = field(repr=False)
    margin_used: float
    branch: Branch


def _as_counts(counts) -> ClassCounts:
    if counts is None or isinstance(counts, ClassCounts):
        return counts
    return ClassCounts(tuple(counts))


def _check_batch(Z, y) -> tuple[np.ndarray, np.ndarray]:
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if Z.ndim != 2 or y.ndim != 1 or Z.shape[0] != y.shape[0]:
        raise InvalidInputError(f"expected logits (N, K) and labels (N,), got {Z.shape} and {y.shape}")
    if Z.shape[1] < 2:
        raise InvalidInputError("need at least two classes")
    if not np.all(np.isfinite(Z)):
        raise InvalidInputError("logits must be finite")
    if y.size and (y.min() < 0 or y.max() >= Z.shape[1]):
        raise InvalidInputError(f"labels must lie in [0, {Z.shape[1]})")
    return Z, y


def _check_single(z, y) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidInputError(f"expected a 1-d logit vector, got shape {z.shape}")
    if z.size < 2:
        raise InvalidInputError("need at least two classes: no competing class exists")
    if not 0 <= int(y) < z.size:
        raise InvalidInputError(f"label {y} out of range for K={z.size}")
    return z


def _runner_up(Z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and value of the best non-target logit (smallest index on ties)."""
    rows = np.arange(Z.shape[0])
    masked = Z.copy()
    masked[rows, y] = -np.inf
    r = np.argmax(masked, axis=1)
    return r, masked[rows, r]


def hard_positive_margin(z, y: int, delta_plus: float) -> float:
    """``exp(-max(z_y - max_{j!=y} z_j, 0) - delta_plus)``."""
    z = _check_single(z, y)
    _, top = _runner_up(z[None, :], np.array([y]))
    return math.exp(-max(z[y] - top[0], 0.0) - delta_plus)


def hard_negative_margin(z, y: int, delta_minus: float) -> float:
    """``exp(-max(max_{j!=y} z_j - z_y, 0) - delta_minus)``."""
    z = _check_single(z, y)
    _, top = _runner_up(z[None, :], np.array([y]))
    return math.exp(-max(top[0] - z[y], 0.0) - delta_minus)


def ldam_gammas(counts, C: float) -> np.ndarray:
    """Class-dependent LDAM margins ``C / n_j ** 0.25``."""
    if any(int(n) <= 0 for n in counts):
        raise InvalidInputError(f"every class count must be positive, got {list(counts)}")
    counts = _as_counts(counts)
    if not C >= 0:
        raise InvalidInputError(f"C must be >= 0, got {C}")
    return C / counts.as_array() ** 0.25


def ldam_constant(counts, max_margin: float = 0.5) -> float:
    """The C that gives the rarest class a margin of ``max_margin``."""
    counts = _as_counts(counts)
    return max_margin * min(counts.counts) ** 0.25


@functools.lru_cache(maxsize=256)
def _effective_deltas_cached(delta_neg: float, beta: float, C: float | None,
                             counts: tuple[int, ...] | None) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if counts is None:
        return (delta_neg,), (delta_neg * beta,)
    if C is None:
        C = ldam_constant(counts)
    gammas = ldam_gammas(counts, C)
    dneg = delta_neg - gammas
    dpos = dneg * beta
    if np.any(dneg < 0):
        logger.warning(
            "class-aware deltas are negative for classes %s; margins exceed 1 there",
            np.flatnonzero(dneg < 0).tolist(),
        )
    return tuple(dneg.tolist()), tuple(dpos.tolist())


def effective_deltas(params: MarginParams, counts=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-class (delta_neg, delta_pos) after the class-aware adjustment.

    Without ``class_aware`` both arrays have length 1 and broadcast over
    classes. Negative entries are kept as is (a warning is logged once).
    """
    if params.class_aware:
        if counts is None:
            raise ConfigurationError("class_aware margins require class counts")
        key = _as_counts(counts).counts
    else:
        key = None
    dneg, dpos = _effective_deltas_cached(float(params.delta_neg), float(params.beta),
                                          params.C, key)
    return np.asarray(dneg), np.asarray(dpos)


def mm_margin_batch(Z, y, params: MarginParams, counts=None):
    """Vectorised margin selector.

    Returns:
        ``(delta, correct, runner_up, sign)`` where ``delta`` is the shift per
        example, ``correct`` the POSITIVE-branch mask, ``runner_up`` the routing
        index of the best competitor and ``sign = sign(z_y - z_r)``.
    """
    Z, y = _check_batch(Z, y)
    dneg, dpos = effective_deltas(params, counts)
    if params.class_aware and len(dneg) != Z.shape[1]:
        raise InvalidInputError(f"got {Z.shape[1]} logits but {len(dneg)} class counts")
    rows = np.arange(Z.shape[0])
    r, top = _runner_up(Z, y)
    gap = Z[rows, y] - top
    correct = gap >= 0
    idx = y if params.class_aware else np.zeros_like(y)
    offset = np.where(correct, dpos[idx], dneg[idx])
    if params.margin_mode is MarginMode.NONE:
        delta = np.zeros(Z.shape[0])
    else:
        delta = np.exp(-np.abs(gap) - offset)
    return delta, correct, r, np.sign(gap)


def mm_margin(z, y: int, params: MarginParams, counts=None) -> tuple[float, Branch]:
    z = _check_single(z, y)
    delta, correct, _, _ = mm_margin_batch(z[None, :], [y], params, counts)
    return float(delta[0]), Branch.POSITIVE if correct[0] else Branch.NEGATIVE


def _shifted_xent(Z: np.ndarray, y: np.ndarray, shift: np.ndarray):
    """Cross-entropy on ``Z`` with ``shift`` subtracted from the target logit.

    Returns loss values and softmax probabilities of the shifted logits.
    """
    rows = np.arange(Z.shape[0])
    S = Z.copy()
    S[rows, y] -= shift
    m = S.max(axis=1, keepdims=True)
    E = np.exp(S - m)
    target = S[rows, y] - m[:, 0]
    rest = E.copy()
    rest[rows, y] = 0.0
    others = rest.sum(axis=1)
    # log(e^t + others) computed without cancellation when the target dominates
    values = -target + np.log1p(np.expm1(target) + others)
    P = E / E.sum(axis=1, keepdims=True)
    return values, P


def mm_loss_batch(Z, y, params: MarginParams, counts=None):
    """Maximum-margin loss for a batch.

    Returns:
        ``(values, grads, delta, correct)``.
    """
    Z, y = _check_batch(Z, y)
    delta, correct, r, sign = mm_margin_batch(Z, y, params, counts)
    values, P = _shifted_xent(Z, y, delta)
    rows = np.arange(Z.shape[0])
    G = P
    G[rows, y] -= 1.0
    if params.grad_mode is GradMode.FULL and params.margin_mode is MarginMode.MM:
        # dL/dshift = 1 - p_y; dshift/dz_y = -shift*sign, dshift/dz_r = +shift*sign
        coef = -G[rows, y] * delta * sign
        G[rows, y] -= coef
        G[rows, r] += coef
    return values, G, delta, correct


def mm_loss(z, y: int, params: MarginParams, counts=None) -> LossResult:
    z = _check_single(z, y)
    values, G, delta, correct = mm_loss_batch(z[None, :], [y], params, counts)
    return LossResult(
        value=float(values[0]),
        grad=G[0],
        margin_used=float(delta[0]),
        branch=Branch.POSITIVE if correct[0] else Branch.NEGATIVE,
    )


def cross_entropy_batch(Z, y):
    Z, y = _check_batch(Z, y)
    values, P = _shifted_xent(Z, y, np.zeros(Z.shape[0]))
    P[np.arange(Z.shape[0]), y] -= 1.0
    return values, P


def focal_batch(Z, y, gamma: float = 2.0):
    """Softmax focal loss ``(1 - p_y)^gamma * CE`` and its gradient."""
    if not gamma >= 0:
        raise ConfigurationError(f"focal gamma must be >= 0, got {gamma}")
    Z, y = _check_batch(Z, y)
    ce, P = _shifted_xent(Z, y, np.zeros(Z.shape[0]))
    rows = np.arange(Z.shape[0])
    p_y = P[rows, y]
    q = -np.expm1(-ce)  # 1 - p_y, accurate when p_y is close to 1
    if gamma == 0:
        return ce, _ce_grad(P, y)
    weight = q ** gamma
    values = weight * ce
    # dL/dp_y = -gamma q^(gamma-1) ce - q^gamma / p_y ; dp_y/dz = p_y (e_y - p)
    with np.errstate(divide="ignore", invalid="ignore"):
        dq_term = np.where(q > 0, gamma * q ** (gamma - 1) * ce, 0.0)
    dL_dpy_times_py = -dq_term * p_y - weight
    grad = _ce_grad(P, y) * (-dL_dpy_times_py)[:, None]
    return values, grad


def _ce_grad(P: np.ndarray, y: np.ndarray) -> np.ndarray:
    G = P.copy()
    G[np.arange(P.shape[0]), y] -= 1.0
    return G


def ldam_batch(Z, y, counts, C: float | None = None):
    """Cross-entropy with the constant class margin ``C / n_y ** 0.25``."""
    if counts is None:
        raise ConfigurationError("LDAM loss requires class counts")
    counts = _as_counts(counts)
    Z, y = _check_batch(Z, y)
    if len(counts) != Z.shape[1]:
        raise InvalidInputError(f"got {Z.shape[1]} logits but {len(counts)} class counts")
    if C is None:
        C = ldam_constant(counts)
    gammas = ldam_gammas(counts, C)
    values, P = _shifted_xent(Z, y, gammas[y])
    return values, _ce_grad(P, y)


@dataclass(frozen=True)
class BaselineOptions:
    focal_gamma: float = 2.0
    counts: ClassCounts | None = None
    C: float | None = None


def baseline_loss(kind, z, y: int, opts: BaselineOptions | None = None) -> LossResult:
    """Single-example CE, focal or LDAM loss.

    ``margin_used`` is the LDAM class margin (0 for CE and focal); ``branch``
    reports whether the example is currently classified correctly.
    """
    kind = BaselineKind(kind)
    opts = opts or BaselineOptions()
    z = _check_single(z, y)
    Z, Y = z[None, :], np.array([y])
    margin = 0.0
    if kind is BaselineKind.CE:
        values, G = cross_entropy_batch(Z, Y)
    elif kind is BaselineKind.FOCAL:
        values, G = focal_batch(Z, Y, opts.focal_gamma)
    else:
        if opts.counts is None:
            raise ConfigurationError("LDAM loss requires class counts")
        values, G = ldam_batch(Z, Y, opts.counts, opts.C)
        C = opts.C if opts.C is not None else ldam_constant(opts.counts)
        margin = float(ldam_gammas(opts.counts, C)[y])
    _, top = _runner_up(Z, Y)
    branch = Branch.POSITIVE if z[y] >= top[0] else Branch.NEGATIVE
    return LossResult(value=float(values[0]), grad=G[0], margin_used=margin, branch=branch)


LOSS_KINDS = ("erm", "focal", "ldam", "mm", "mm-ldam")


@dataclass(frozen=True)
class LossSpec:
    """A configured loss, evaluated on batches during training.

    ``kind`` is one of ``erm``, ``focal``, ``ldam``, ``mm`` or ``mm-ldam``
    (the class-aware maximum-margin loss).
    """

    kind: str = "mm"
    margin: MarginParams = field(default_factory=MarginParams)
    counts: ClassCounts | None = None
    focal_gamma: float = 2.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"loss.kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "counts", _as_counts(self.counts))
        if self.kind in ("ldam", "mm-ldam") and self.counts is None:
            raise ConfigurationError(f"loss.kind={self.kind} requires class counts")
        if self.kind == "mm-ldam" and not self.margin.class_aware:
            object.__setattr__(self, "margin", _replace(self.margin, class_aware=True))
        if self.kind == "mm" and self.margin.class_aware:
            object.__setattr__(self, "margin", _replace(self.margin, class_aware=False))

    def __call__(self, Z, y) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "erm":
            return cross_entropy_batch(Z, y)
        if self.kind == "focal":
            return focal_batch(Z, y, self.focal_gamma)
        if self.kind == "ldam":
            return ldam_batch(Z, y, self.counts, self.margin.C)
        values, G, _, _ = mm_loss_batch(Z, y, self.margin, self.counts if self.kind == "mm-ldam" else None)
        return values, G


def _replace(params: MarginParams, **changes) -> MarginParams:
    return dataclasses.replace(params, **changes)


def softmax_cross_entropy(z: Sequence[float], y: int) -> float:
    return float(cross_entropy_batch(np.asarray(z, dtype=np.float64)[None, :], [y])[0][0])
