"""Independent verification tools.

Nothing here imports from ``margin_losses``: the reference loss re-derives the
margin rules from scratch with scalar ``math`` code and compensated summation,
so a bug in the vectorised kernels cannot hide behind a shared helper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError


@dataclass(frozen=True)
class FDSpec:
    step: float = 1e-5
    tolerance: float = 1e-6
    kink_exclusion_radius: float = 1e-4

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidInputError(f"step must be > 0, got {self.step}")
        if not self.tolerance > 0:
            raise InvalidInputError(f"tolerance must be > 0, got {self.tolerance}")


def finite_diff_gradient(
    f: Callable,
    x,
    spec: FDSpec | None = None,
    vectorized: bool = False,
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function.

    Args:
        f: Maps an n-vector to a float. With ``vectorized=True`` it must map an
            (m, n) array to m values, which lets all 2n probes run in one call.
        x: Point of evaluation.
        spec: Step size and tolerances; only ``step`` is used here.
        vectorized: See ``f``.

    Returns:
        ``g_i = (f(x + h e_i) - f(x - h e_i)) / (2h)``.
    """
    spec = spec or FDSpec()
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    h = spec.step
    eye = np.eye(n) * h
    probes = np.concatenate([x + eye, x - eye])
    if vectorized:
        vals = np.asarray(f(probes), dtype=np.float64)
    else:
        vals = np.array([f(p) for p in probes], dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        i = int(bad[0])
        sign = "+" if i < n else "-"
        raise InvalidInputError(f"non-finite function value at coordinate {i % n} ({sign}h probe)")
    return (vals[:n] - vals[n:]) / (2.0 * h)


def max_relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Largest elementwise deviation, relative to the larger gradient norm.

    Entries are compared against ``max(||a||_inf, ||b||_inf)`` rather than
    their own magnitude so that near-zero components, which central
    differences can only resolve to ~1e-11 absolute, do not dominate.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def near_kink(z, y: int, radius: float = 1e-4) -> bool:
    """True when ``z`` is within ``radius`` of a non-differentiable point.

    Two kinds of kink: the true-class logit ties the best competitor (branch
    switch and hinge clamp), or the best competitor is itself tied with the
    next one (argmax routing switches).
    """
    others = sorted((float(v) for j, v in enumerate(z) if j != y), reverse=True)
    if abs(float(z[y]) - others[0]) < radius:
        return True
    return len(others) > 1 and others[0] - others[1] < radius


def _deltas_for(y: int, delta_neg: float, beta: float, class_aware: bool,
                counts: Sequence[int] | None, C: float | None):
    if not class_aware:
        return delta_neg, delta_neg * beta
    if counts is None:
        raise ConfigurationError("class-aware margins need class counts")
    if C is None:
        C = 0.5 * min(counts) ** 0.25
    gamma_y = C / counts[y] ** 0.25
    return delta_neg - gamma_y, (delta_neg - gamma_y) * beta


def _softmax_xent(scores: list[float], y: int) -> float:
    # -log softmax(scores)[y], written as log(1 + sum_j exp(d_j)) with d_j = s_j - s_y
    diffs = [s - scores[y] for j, s in enumerate(scores) if j != y]
    top = max(diffs)
    if top > 0.0:
        return top + math.log(math.exp(-top) + math.fsum(math.exp(d - top) for d in diffs))
    return math.log1p(math.fsum(math.exp(d) for d in diffs))


def reference_loss(z, y: int, params, counts=None) -> float:
    """Margin loss value recomputed from first principles.

    ``params`` may be any object exposing ``delta_neg``, ``beta``, ``C``,
    ``class_aware`` and ``margin_mode``; ``counts`` a plain sequence of class
    sizes or an object with a ``counts`` attribute.
    """
    scores = [float(v) for v in z]
    if len(scores) < 2:
        raise InvalidInputError("need at least two classes")
    if not all(math.isfinite(v) for v in scores):
        raise InvalidInputError("non-finite logit")
    if counts is not None and hasattr(counts, "counts"):
        counts = list(counts.counts)
    mode = getattr(params.margin_mode, "value", params.margin_mode)

    runner_up = -math.inf
    for j, v in enumerate(scores):
        if j != y and v > runner_up:
            runner_up = v
    dneg, dpos = _deltas_for(y, params.delta_neg, params.beta, params.class_aware,
                             counts, params.C)
    if str(mode).lower() == "none":
        shift = 0.0
    elif scores[y] >= runner_up:
        shift = math.exp(-max(scores[y] - runner_up, 0.0) - dpos)
    else:
        shift = math.exp(-max(runner_up - scores[y], 0.0) - dneg)
    shifted = list(scores)
    shifted[y] -= shift
    return _softmax_xent(shifted, y)


def frozen_shift_loss(points, y: int, shift: float) -> np.ndarray:
    """Cross-entropy of each row of ``points`` with a constant target shift.

    The function a stop-gradient margin actually differentiates: finite
    differences of it give the STOP_MARGIN gradient.
    """
    P = np.array(points, dtype=np.float64, ndmin=2)
    P[:, y] -= shift
    # L = log(1 + sum_{j!=y} exp(z_j - z_y)), kept free of cancellation near L = 0
    D = np.delete(P, y, axis=1) - P[:, [y]]
    m = np.maximum(D.max(axis=1), 0.0) if D.shape[1] else np.zeros(len(P))
    rest = np.exp(D - m[:, None]).sum(axis=1)
    return m + np.log1p(np.expm1(-m) + rest)


def reference_cross_entropy(z, y: int) -> float:
    return _softmax_xent([float(v) for v in z], y)


def reference_focal(z, y: int, gamma: float) -> float:
    ce = reference_cross_entropy(z, y)
    return (-math.expm1(-ce)) ** gamma * ce


def reference_ldam(z, y: int, counts: Sequence[int], C: float | None = None) -> float:
    if C is None:
        C = 0.5 * min(counts) ** 0.25
    shifted = [float(v) for v in z]
    shifted[y] -= C / counts[y] ** 0.25
    return _softmax_xent(shifted, y)
