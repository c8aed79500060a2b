"""Classical wear classifiers: CART decision tree and RBF-kernel SVC.

Both models are trained from scratch (greedy Gini splitting without a depth
limit; sequential minimal optimization for the soft-margin dual) and are
deterministic given a seed.  A temporal post-filter removes short islands of
flipped predictions, encoding that a tool cannot briefly appear worn and
then revert.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConvergenceError,
    FormatError,
    ParameterError,
    ShapeError,
    TrainingError,
)

NOT_WORN = 0
WORN = 1


@dataclass(frozen=True)
class Prediction:
    """One window's predicted tool state on a cycle's time axis."""

    label: int
    t_s: float
    cycle_id: str = ""

    def __post_init__(self):
        if self.label not in (NOT_WORN, WORN):
            raise ParameterError(f"label must be 0 or 1, got {self.label}")


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-feature affine map to zero mean / unit variance on training data.

    Zero-variance columns keep scale 1 and are recorded in ``flagged``.
    """

    mean: np.ndarray
    scale: np.ndarray
    flagged: tuple[int, ...] = ()

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X, len(self.mean))
        return (X - self.mean) / self.scale


def _as_matrix(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(
            f"feature dimension mismatch: model expects {n_features}, "
            f"got {X.shape[1]}"
        )
    return X


def fit_standardizer(X: np.ndarray) -> Standardizer:
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise ParameterError("standardizer needs at least 2 rows")
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=0)
    flagged = tuple(int(i) for i in np.flatnonzero(scale == 0))
    scale = np.where(scale == 0, 1.0, scale)
    return Standardizer(mean=mean, scale=scale, flagged=flagged)


# ---------------------------------------------------------------------------
# Decision tree (CART, Gini impurity, no depth limit)
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    klass: int = NOT_WORN
    counts: tuple[int, int] = (0, 0)

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class TreeModel:
    root: TreeNode
    n_features: int
    criterion: str = "gini"


@dataclass(frozen=True)
class TreeConfig:
    min_samples_split: int = 2

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ParameterError("min_samples_split must be >= 2")


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(X: np.ndarray, y: np.ndarray) -> tuple[int, float] | None:
    """Best (feature, threshold) by Gini decrease; ties break to the lowest
    feature index, then the lowest threshold.  Returns None if every feature
    is constant within the node."""
    n, d = X.shape
    total = np.bincount(y, minlength=2).astype(np.float64)
    best_gain = -np.inf
    best: tuple[int, float] | None = None
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        vals = X[order, f]
        labels = y[order]
        cut = np.flatnonzero(vals[:-1] != vals[1:])
        if len(cut) == 0:
            continue
        ones = np.cumsum(labels)[cut].astype(np.float64)
        n_left = (cut + 1).astype(np.float64)
        left = np.stack([n_left - ones, ones], axis=1)
        right = total - left
        n_right = n - n_left
        gini_left = 1.0 - ((left / n_left[:, None]) ** 2).sum(axis=1)
        gini_right = 1.0 - ((right / n_right[:, None]) ** 2).sum(axis=1)
        child = (n_left * gini_left + n_right * gini_right) / n
        gains = _gini(total) - child
        k = int(np.argmax(gains))  # first max -> lowest threshold
        if gains[k] > best_gain:
            best_gain = float(gains[k])
            best = (f, float(0.5 * (vals[cut[k]] + vals[cut[k] + 1])))
    return best


def _grow(X: np.ndarray, y: np.ndarray, cfg: TreeConfig) -> TreeNode:
    counts = np.bincount(y, minlength=2)
    klass = int(np.argmax(counts))  # majority; tie -> lower class
    node = TreeNode(klass=klass, counts=(int(counts[0]), int(counts[1])))
    if counts.min() == 0 or len(y) < cfg.min_samples_split:
        return node
    split = _best_split(X, y)
    if split is None:
        return node  # identical rows with conflicting labels: unsplittable
    node.feature, node.threshold = split
    mask = X[:, node.feature] <= node.threshold
    node.left = _grow(X[mask], y[mask], cfg)
    node.right = _grow(X[~mask], y[~mask], cfg)
    return node


def train_tree(X: np.ndarray, y: np.ndarray, cfg: TreeConfig = TreeConfig()) -> TreeModel:
    """Grow a CART tree to purity (impure splittable nodes always split,
    even at zero Gini gain, so consistent data is always fit exactly)."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ParameterError("cannot train a tree on an empty dataset")
    if y.shape != (X.shape[0],):
        raise ShapeError("y must have one label per row of X")
    if not np.isin(y, (NOT_WORN, WORN)).all():
        raise ParameterError("labels must be 0 or 1")
    return TreeModel(root=_grow(X, y, cfg), n_features=X.shape[1])


# ---------------------------------------------------------------------------
# Support vector classifier (RBF kernel, SMO solver)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvcConfig:
    C: float = 1.0
    gamma: float | None = None  # None -> 1 / (n_features * mean feature variance)
    tol: float = 1e-3
    max_passes: int = 1000
    seed: int = 0
    standardize: bool = True
    track_objective: bool = False

    def __post_init__(self):
        if self.C <= 0:
            raise ParameterError("C must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ParameterError("gamma must be positive")


@dataclass(frozen=True)
class SvcDiagnostics:
    n_passes: int
    final_kkt_violation: float
    objective_history: tuple[float, ...] = ()


@dataclass
class SvcModel:
    support_vectors: np.ndarray  # rows in standardized space
    dual_coef: np.ndarray  # alpha_i * y_i, |.| <= C
    bias: float
    gamma: float
    C: float
    n_features: int
    standardizer: Standardizer | None = None
    diagnostics: SvcDiagnostics | None = None


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        (A * A).sum(axis=1)[:, None]
        + (B * B).sum(axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _kkt_violations(alpha: np.ndarray, yE: np.ndarray, C: float) -> np.ndarray:
    atol = 1e-8 * C  # alphas this close to a bound count as bound
    v = np.abs(yE)
    v[(alpha <= atol) & (yE >= 0)] = 0.0
    v[(alpha >= C - atol) & (yE <= 0)] = 0.0
    return v


class _Smo:
    """Platt-style SMO over a precomputed kernel matrix."""

    _EPS = 1e-12

    def __init__(self, K, ysign, C, tol, rng, track_objective):
        self.K = K
        self.y = ysign
        self.C = C
        self.tol = tol
        self.rng = rng
        self.n = len(ysign)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.E = -ysign.astype(np.float64)  # decision function starts at 0
        self.objective_history: list[float] = [] if track_objective else None

    def _objective(self) -> float:
        ay = self.alpha * self.y
        return float(self.alpha.sum() - 0.5 * ay @ self.K @ ay)

    def _snap(self, a: float) -> float:
        """Clamp an alpha that lands numerically next to a box bound onto it,
        so bound/free bookkeeping stays consistent with the KKT checks."""
        atol = 1e-8 * self.C
        if a < atol:
            return 0.0
        if a > self.C - atol:
            return self.C
        return a

    def _take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = self.y[i1], self.y[i2]
        e1, e2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if s < 0:
            lo, hi = max(0.0, a2 - a1), min(self.C, self.C + a2 - a1)
        else:
            lo, hi = max(0.0, a1 + a2 - self.C), min(self.C, a1 + a2)
        if lo >= hi:
            return False
        k11, k12, k22 = self.K[i1, i1], self.K[i1, i2], self.K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            a2_new = np.clip(a2 + y2 * (e1 - e2) / eta, lo, hi)
        else:
            # evaluate the pair objective at both clip bounds; (E - b) is the
            # kernel expansion minus the label under the +b sign convention
            f1 = y1 * (e1 - self.b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (e2 - self.b) - s * a1 * k12 - a2 * k22
            l1 = a1 + s * (a2 - lo)
            h1 = a1 + s * (a2 - hi)
            obj_lo = (
                l1 * f1 + lo * f2
                + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22 + s * lo * l1 * k12
            )
            obj_hi = (
                h1 * f1 + hi * f2
                + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22 + s * hi * h1 * k12
            )
            if obj_lo < obj_hi - self._EPS:
                a2_new = lo
            elif obj_hi < obj_lo - self._EPS:
                a2_new = hi
            else:
                return False
        a2_new = self._snap(float(a2_new))
        if abs(a2_new - a2) < self._EPS * (a2_new + a2 + self._EPS):
            return False
        a1_new = self._snap(a1 + s * (a2 - a2_new))
        d1, d2 = a1_new - a1, a2_new - a2
        b1 = self.b - e1 - y1 * d1 * k11 - y2 * d2 * k12
        b2 = self.b - e2 - y1 * d1 * k12 - y2 * d2 * k22
        if 0 < a1_new < self.C:
            b_new = b1
        elif 0 < a2_new < self.C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self.E += (
            y1 * d1 * self.K[i1] + y2 * d2 * self.K[i2] + (b_new - self.b)
        )
        self.alpha[i1], self.alpha[i2] = a1_new, a2_new
        self.b = b_new
        if self.objective_history is not None:
            self.objective_history.append(self._objective())
        return True

    def _examine(self, i2: int) -> bool:
        y2, a2, e2 = self.y[i2], self.alpha[i2], self.E[i2]
        r2 = e2 * y2
        if not ((r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0)):
            return False
        nb = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
        if len(nb) > 1:
            i1 = int(nb[np.argmax(np.abs(self.E[nb] - e2))])
            if self._take_step(i1, i2):
                return True
        for pool in (nb, np.arange(self.n)):
            if len(pool) == 0:
                continue
            start = int(self.rng.integers(len(pool)))
            for k in range(len(pool)):
                if self._take_step(int(pool[(start + k) % len(pool)]), i2):
                    return True
        return False

    def refresh_errors(self) -> None:
        self.E = self.K @ (self.alpha * self.y) + self.b - self.y

    def max_violation(self) -> float:
        v = _kkt_violations(self.alpha, self.y * self.E, self.C)
        return float(v.max()) if len(v) else 0.0

    def solve(self, max_passes: int) -> int:
        passes = 0
        for _ in range(3):  # restart with exact errors if the cache drifted
            examine_all = True
            changed = 1
            while changed > 0 or examine_all:
                if passes >= max_passes:
                    self.refresh_errors()
                    raise ConvergenceError(
                        f"SMO did not converge in {max_passes} passes "
                        f"(max KKT violation {self.max_violation():.3e})",
                        violation=self.max_violation(),
                    )
                targets = (
                    range(self.n)
                    if examine_all
                    else np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
                )
                changed = sum(self._examine(int(i)) for i in targets)
                if examine_all:
                    examine_all = False
                elif changed == 0:
                    examine_all = True
                passes += 1
            self.refresh_errors()
            if self.max_violation() < self.tol:
                return passes
        raise ConvergenceError(
            f"SMO stalled with max KKT violation {self.max_violation():.3e}",
            violation=self.max_violation(),
        )


def train_svc(X: np.ndarray, y: np.ndarray, cfg: SvcConfig = SvcConfig()) -> SvcModel:
    """Train a soft-margin RBF SVC by sequential minimal optimization.

    The feature matrix is standardized internally (unless disabled) and the
    default gamma is 1 / (n_features * mean per-feature variance) of the
    matrix the kernel actually sees.  Deterministic given ``cfg.seed``.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise ShapeError("y must have one label per row of X")
    classes = np.unique(y)
    if not np.isin(classes, (NOT_WORN, WORN)).all():
        raise ParameterError("labels must be 0 or 1")
    if len(classes) < 2:
        raise TrainingError("SVC training needs both classes present")

    standardizer = fit_standardizer(X) if cfg.standardize else None
    Xs = standardizer.apply(X) if standardizer is not None else X
    gamma = cfg.gamma
    if gamma is None:
        mean_var = float(Xs.var(axis=0).mean())
        if mean_var <= 0:
            raise TrainingError("cannot infer gamma from zero-variance data")
        gamma = 1.0 / (X.shape[1] * mean_var)

    ysign = np.where(y == WORN, 1.0, -1.0)
    K = rbf_kernel(Xs, Xs, gamma)
    smo = _Smo(
        K,
        ysign,
        cfg.C,
        cfg.tol,
        np.random.default_rng(cfg.seed),
        cfg.track_objective,
    )
    passes = smo.solve(cfg.max_passes)

    sv = smo.alpha > 0
    diagnostics = SvcDiagnostics(
        n_passes=passes,
        final_kkt_violation=smo.max_violation(),
        objective_history=tuple(smo.objective_history or ()),
    )
    return SvcModel(
        support_vectors=Xs[sv].copy(),
        dual_coef=(smo.alpha * ysign)[sv].copy(),
        bias=float(smo.b),
        gamma=float(gamma),
        C=cfg.C,
        n_features=X.shape[1],
        standardizer=standardizer,
        diagnostics=diagnostics,
    )


ModelLike = TreeModel | SvcModel


@dataclass(frozen=True)
class ModelSpec:
    """Trainer selection plus hyperparameters, as used by sweeps and the CLI."""

    kind: str  # "tree" | "svc"
    C: float = 1.0
    gamma: float | None = None
    min_samples_split: int = 2

    def __post_init__(self):
        if self.kind not in ("tree", "svc"):
            raise ParameterError(f"unknown model kind {self.kind!r}")


def train_model(spec: ModelSpec, X: np.ndarray, y: np.ndarray, seed: int = 0) -> ModelLike:
    if spec.kind == "tree":
        return train_tree(X, y, TreeConfig(min_samples_split=spec.min_samples_split))
    return train_svc(X, y, SvcConfig(C=spec.C, gamma=spec.gamma, seed=seed))


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def decision_values(model: SvcModel, X: np.ndarray) -> np.ndarray:
    X = _as_matrix(X, model.n_features)
    if model.standardizer is not None:
        X = model.standardizer.apply(X)
    if len(X) == 0:
        return np.zeros(0)
    return rbf_kernel(X, model.support_vectors, model.gamma) @ model.dual_coef + model.bias


def predict(model: TreeModel | SvcModel, X: np.ndarray) -> np.ndarray:
    """Predict 0/1 labels; an SVC decision value of exactly 0 maps to Worn."""
    if isinstance(model, SvcModel):
        return (decision_values(model, X) >= 0).astype(np.int64)
    if isinstance(model, TreeModel):
        X = _as_matrix(X, model.n_features)
        out = np.empty(len(X), dtype=np.int64)
        for i, row in enumerate(X):
            node = model.root
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.klass
        return out
    raise ParameterError(f"unknown model type {type(model).__name__}")


# ---------------------------------------------------------------------------
# Temporal outlier filter
# ---------------------------------------------------------------------------


def filter_labels(labels, min_run: int) -> list[int]:
    """Remove short label islands from a time-ordered 0/1 sequence.

    Any maximal run shorter than ``min_run`` that is flanked on both sides
    (runs touching the sequence boundaries are kept) is replaced by the
    flanking label; the rule is applied to a fixpoint, so the result is
    idempotent under re-filtering.
    """
    if min_run < 1:
        raise ParameterError(f"min_run must be >= 1, got {min_run}")
    out = [int(v) for v in labels]
    while True:
        runs = []
        start = 0
        for i in range(1, len(out) + 1):
            if i == len(out) or out[i] != out[start]:
                runs.append((start, i))
                start = i
        changed = False
        for start, end in runs[1:-1]:
            if end - start < min_run:
                out[start:end] = [1 - out[start]] * (end - start)
                changed = True
        if not changed:
            return out


def temporal_filter(preds: list[Prediction], min_run: int) -> list[Prediction]:
    """Apply :func:`filter_labels` to one cycle's time-ordered predictions."""
    times = [p.t_s for p in preds]
    if times != sorted(times):
        raise ParameterError("predictions must be sorted by time within a cycle")
    filtered = filter_labels([p.label for p in preds], min_run)
    return [
        Prediction(label=new, t_s=p.t_s, cycle_id=p.cycle_id)
        for new, p in zip(filtered, preds)
    ]


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

_MODEL_FORMAT = "millwear-model"
MODEL_VERSION = 1


def _node_to_json(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"class": node.klass, "counts": list(node.counts)}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "counts": list(node.counts),
        "left": _node_to_json(node.left),
        "right": _node_to_json(node.right),
    }


def _node_from_json(doc: dict) -> TreeNode:
    counts = tuple(doc.get("counts", (0, 0)))
    if "class" in doc:
        return TreeNode(klass=int(doc["class"]), counts=counts)
    node = TreeNode(
        feature=int(doc["feature"]),
        threshold=float(doc["threshold"]),
        counts=counts,
        left=_node_from_json(doc["left"]),
        right=_node_from_json(doc["right"]),
    )
    node.klass = int(np.argmax(counts)) if any(counts) else NOT_WORN
    return node


def save_model(model: TreeModel | SvcModel, path: str | Path) -> Path:
    """Write a model as a versioned JSON document (full-precision floats)."""
    path = Path(path)
    if isinstance(model, TreeModel):
        doc = {
            "format": _MODEL_FORMAT,
            "version": MODEL_VERSION,
            "model": "tree",
            "criterion": model.criterion,
            "n_features": model.n_features,
            "root": _node_to_json(model.root),
        }
    elif isinstance(model, SvcModel):
        std = model.standardizer
        doc = {
            "format": _MODEL_FORMAT,
            "version": MODEL_VERSION,
            "model": "svc",
            "n_features": model.n_features,
            "C": model.C,
            "gamma": model.gamma,
            "bias": model.bias,
            "support_vectors": model.support_vectors.tolist(),
            "dual_coef": model.dual_coef.tolist(),
            "standardizer": None
            if std is None
            else {
                "mean": std.mean.tolist(),
                "scale": std.scale.tolist(),
                "flagged": list(std.flagged),
            },
        }
    else:
        raise ParameterError(f"cannot serialize {type(model).__name__}")
    try:
        path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write model to {path}: {exc}") from exc
    return path


def load_model(path: str | Path) -> TreeModel | SvcModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if doc.get("format") != _MODEL_FORMAT:
        raise FormatError(f"{path} is not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {doc.get('version')}")
    kind = doc.get("model")
    if kind == "tree":
        return TreeModel(
            root=_node_from_json(doc["root"]),
            n_features=int(doc["n_features"]),
            criterion=str(doc.get("criterion", "gini")),
        )
    if kind == "svc":
        std_doc = doc.get("standardizer")
        standardizer = None
        if std_doc is not None:
            standardizer = Standardizer(
                mean=np.array(std_doc["mean"], dtype=np.float64),
                scale=np.array(std_doc["scale"], dtype=np.float64),
                flagged=tuple(int(i) for i in std_doc.get("flagged", ())),
            )
        return SvcModel(
            support_vectors=np.array(doc["support_vectors"], dtype=np.float64),
            dual_coef=np.array(doc["dual_coef"], dtype=np.float64),
            bias=float(doc["bias"]),
            gamma=float(doc["gamma"]),
            C=float(doc["C"]),
            n_features=int(doc["n_features"]),
            standardizer=standardizer,
        )
    raise FormatError(f"{path}: unknown model kind {kind!r}")
