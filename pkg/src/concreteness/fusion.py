"""Logistic fusion of the two reconstruction scores into one target.

The fused score is sigmoid(a * vba + b * sba + c). Parameters are fitted by
logistic regression against binarized human concreteness labels; the solver
is a damped Newton iteration on the (convex) mean logistic loss with an L2
ridge on the weights (never the bias), falling back to gradient descent when
the Hessian is ill-conditioned. Step damping enforces a non-increasing loss
at every iteration.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning

from .corpus import AnnotationSet, CaptionRecord, ReadStats

HESSIAN_CONDITION_LIMIT = 1e12
MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class FusionParams:
    """Weights of the logistic combination: a scales vba, b scales sba."""

    a: float
    b: float
    c: float

    def validate(self) -> None:
        for name, value in (("a", self.a), ("b", self.b), ("c", self.c)):
            if not math.isfinite(value):
                raise ValueError(f"fusion parameter {name} is not finite: {value!r}")

    def to_obj(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "format_version": 1}

    @classmethod
    def from_obj(cls, obj: dict) -> "FusionParams":
        params = cls(float(obj["a"]), float(obj["b"]), float(obj["c"]))
        params.validate()
        return params

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_obj()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FusionParams":
        return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


# Reference parameters shipped with the toolkit, selectable on the CLI
# as --params paper-a8.
PRESETS: dict[str, FusionParams] = {
    "paper-a8": FusionParams(a=13.2, b=3.6, c=-9.4),
}


def resolve_params(spec: str) -> FusionParams:
    """Resolve a CLI parameter designator: a preset name or a file path."""
    if spec in PRESETS:
        return PRESETS[spec]
    return FusionParams.load(spec)


@dataclass
class FitConfig:
    max_iters: int = 10_000
    tol: float = 1e-8
    l2: float = 1e-6
    binarize_threshold: float | None = None  # None: median split

    def validate(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


def lower_median(values: Sequence[float]) -> float:
    """The lower of the two middle order statistics for even-sized samples."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("no values")
    return ordered[(len(ordered) - 1) // 2]


def binarize_labels(annotations: AnnotationSet, threshold: float | None = None) -> dict[str, int]:
    """Map annotation scores to {0, 1}: label 1 iff score > threshold.

    With ``threshold=None`` the split point is the lower median of all
    labels, so ties at the median fall to class 0. Raises if the result
    contains a single class (both are required to fit).
    """
    if not annotations.labels:
        raise ValueError("annotation set is empty")
    cut = lower_median(list(annotations.labels.values())) if threshold is None else threshold
    binary = {key: int(value > cut) for key, value in annotations.labels.items()}
    classes = set(binary.values())
    if len(classes) < 2:
        raise ValueError(f"binarization produced a single class {classes} "
                         f"(threshold {cut}); both classes are required")
    return binary


@dataclass
class SolveResult:
    weights: np.ndarray  # (a, b, c)
    loss_history: list[float] = field(default_factory=list)
    converged: bool = False
    n_iters: int = 0
    used_fallback: bool = False
    stalled: bool = False


def _loss(w: np.ndarray, design: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = design @ w
    # mean(log(1 + e^z) - y*z), computed stably
    data_term = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return data_term + 0.5 * l2 * float(w[0] ** 2 + w[1] ** 2)


def _line_search(w: np.ndarray, direction: np.ndarray, loss: float,
                 design: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, float] | None:
    """Largest-progress step along ``direction``: expand while strictly
    improving, otherwise halve; None when no step length improves."""
    step = 1.0
    candidate = w + step * direction
    candidate_loss = _loss(candidate, design, y, l2)
    if candidate_loss <= loss:
        best, best_loss = candidate, candidate_loss
        for _ in range(MAX_BACKTRACKS):
            step *= 2.0
            grown = w + step * direction
            grown_loss = _loss(grown, design, y, l2)
            if grown_loss < best_loss:
                best, best_loss = grown, grown_loss
            else:
                break
        return best, best_loss
    for _ in range(MAX_BACKTRACKS):
        step *= 0.5
        candidate = w + step * direction
        candidate_loss = _loss(candidate, design, y, l2)
        if candidate_loss <= loss:
            return candidate, candidate_loss
    return None


def solve_logistic(points: np.ndarray, labels: np.ndarray, *, l2: float = 1e-6,
                   tol: float = 1e-8, max_iters: int = 10_000) -> SolveResult:
    """Minimize mean logistic loss + (l2/2)(a^2 + b^2) over (a, b, c).

    ``points`` has shape (n, 2) holding (vba, sba); ``labels`` in {0, 1}.
    Damped Newton with an expanding/backtracking line search;
    gradient-descent steps when the Hessian condition number exceeds
    ``HESSIAN_CONDITION_LIMIT``. The recorded loss history is non-increasing.
    Converged means the max parameter change dropped below ``tol``; a stall
    (no step length can improve the loss in double precision before ``tol``
    is met) counts as hitting the iteration cap, since every further
    iteration would repeat the same state.
    """
    design = np.column_stack([points, np.ones(len(points))])
    y = labels.astype(float)
    ridge = np.diag([l2, l2, 0.0])
    n = len(design)

    w = np.zeros(3)
    loss = _loss(w, design, y, l2)
    result = SolveResult(weights=w, loss_history=[loss])

    for iteration in range(1, max_iters + 1):
        z = design @ w
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))
        grad = design.T @ (p - y) / n + ridge @ w
        hess = (design * (p * (1.0 - p))[:, None]).T @ design / n + ridge

        use_fallback = not np.isfinite(hess).all() or np.linalg.cond(hess) > HESSIAN_CONDITION_LIMIT
        if use_fallback:
            direction = -grad
            result.used_fallback = True
        else:
            direction = -np.linalg.solve(hess, grad)

        found = _line_search(w, direction, loss, design, y, l2)
        if found is None:
            result.stalled = True
            result.n_iters = max_iters
            break

        new_w, new_loss = found
        delta = float(np.max(np.abs(new_w - w)))
        w = new_w
        loss = new_loss
        result.loss_history.append(loss)
        result.n_iters = iteration
        if delta < tol:
            result.converged = True
            break

    result.weights = w
    return result


def fit_fusion(points: Iterable[tuple[float, float, int]],
               config: FitConfig | None = None) -> FusionParams:
    """Fit (a, b, c) from (vba, sba, label) triples.

    Hitting the iteration cap issues a ``ConvergenceWarning`` rather than
    failing: the parameters are still usable, just not fully polished.
    """
    config = config or FitConfig()
    config.validate()
    triples = list(points)
    if not triples:
        raise ValueError("no training points")
    data = np.array([(v, s) for v, s, _ in triples], dtype=float)
    labels = np.array([lab for _, _, lab in triples], dtype=int)
    if not np.isfinite(data).all():
        raise ValueError("scores must be finite")
    if set(labels.tolist()) != {0, 1}:
        raise ValueError("both classes (0 and 1) are required to fit")

    result = solve_logistic(data, labels, l2=config.l2, tol=config.tol,
                            max_iters=config.max_iters)
    if not result.converged:
        warnings.warn(
            f"fusion fit hit the iteration cap ({config.max_iters}) before "
            f"reaching tol={config.tol}", ConvergenceWarning)
    params = FusionParams(*[float(v) for v in result.weights])
    params.validate()
    return params


def apply_fusion(params: FusionParams, vba: float, sba: float) -> float:
    """sigmoid(a * vba + b * sba + c), strictly monotone in each score whose
    weight is positive."""
    params.validate()
    z = params.a * vba + params.b * sba + params.c
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def fuse_corpus(records: Iterable[CaptionRecord], params: FusionParams,
                vba_name: str, sba_name: str, out_name: str,
                strict: bool = True, stats: ReadStats | None = None) -> Iterator[CaptionRecord]:
    """Attach the fused score to every record carrying both input scores."""
    for record in records:
        if vba_name not in record.scores or sba_name not in record.scores:
            if strict:
                missing = vba_name if vba_name not in record.scores else sba_name
                raise KeyError(f"record {record.id!r} has no score {missing!r}")
            if stats is not None:
                stats.skipped += 1
            continue
        value = apply_fusion(params, record.scores[vba_name], record.scores[sba_name])
        yield record.with_score(out_name, value)


class LogisticScoreFusion(BaseEstimator):
    """Estimator view of the fusion fit.

    ``X`` has shape (n, 2) holding (vba, sba) and ``y`` is binary.
    After ``fit``, ``params_`` holds the :class:`FusionParams`,
    ``loss_history_`` the per-iteration losses, and ``converged_`` whether
    the tolerance was reached within the iteration budget.
    """

    def __init__(self, l2=1e-6, tol=1e-8, max_iters=10_000):
        self.l2 = l2
        self.tol = tol
        self.max_iters = max_iters

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have shape (n, 2): columns (vba, sba)")
        if set(np.unique(y).tolist()) != {0, 1}:
            raise ValueError("y must contain both classes 0 and 1")
        result = solve_logistic(X, y, l2=self.l2, tol=self.tol, max_iters=self.max_iters)
        if not result.converged:
            warnings.warn("fusion fit hit the iteration cap", ConvergenceWarning)
        self.params_ = FusionParams(*[float(v) for v in result.weights])
        self.loss_history_ = result.loss_history
        self.converged_ = result.converged
        return self

    def decision_function(self, X):
        X = np.asarray(X, dtype=float)
        p = self.params_
        return p.a * X[:, 0] + p.b * X[:, 1] + p.c

    def predict_proba(self, X):
        z = self.decision_function(X)
        return 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)
