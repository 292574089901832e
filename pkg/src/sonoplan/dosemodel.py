"""Quantification layer: reproducibility filtering, sparse selection and a
boosted dose regressor.

The pipeline mirrors its training-time shape: ICC-filter feature columns,
LASSO-select a sparse signature, then fit shrinkage-boosted regression trees
on the signature concatenated with the clinical variables.  Evaluation is
regression RMSE plus an exact ROC AUC over a binarized high-dose label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CASE_FACT_FIELDS, ClinicalVariables
from .errors import (
    EmptyTrainingSet,
    NonFiniteInput,
    SchemaMismatch,
    SingleClass,
    TooFewReplicates,
)

CLINICAL_NAMES = CASE_FACT_FIELDS
MODEL_VERSION = "gbrt-1"


@dataclass(frozen=True)
class TrainingTable:
    feature_names: tuple[str, ...]
    features: np.ndarray       # n_samples x d
    clinical: np.ndarray       # n_samples x len(CLINICAL_NAMES)
    dose_j: np.ndarray         # n_samples

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        c = np.asarray(self.clinical, dtype=np.float64)
        y = np.asarray(self.dose_j, dtype=np.float64)
        if f.ndim != 2 or c.ndim != 2 or y.ndim != 1:
            raise ValueError("features/clinical must be 2-D, dose 1-D")
        if not (f.shape[0] == c.shape[0] == y.shape[0]):
            raise ValueError("row counts differ")
        if f.shape[1] != len(self.feature_names):
            raise ValueError("feature column count != feature_names")
        if c.shape[1] != len(CLINICAL_NAMES):
            raise ValueError(f"clinical must have columns {CLINICAL_NAMES}")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        if not (np.isfinite(f).all() and np.isfinite(c).all() and np.isfinite(y).all()):
            raise NonFiniteInput("training table contains NaN/Inf")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "clinical", c)
        object.__setattr__(self, "dose_j", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def to_csv(self) -> str:
        header = ",".join(self.feature_names + CLINICAL_NAMES + ("dose_j",))
        rows = [header]
        for i in range(self.features.shape[0]):
            cells = [repr(float(v)) for v in self.features[i]]
            cells += [repr(float(v)) for v in self.clinical[i]]
            cells.append(repr(float(self.dose_j[i])))
            rows.append(",".join(cells))
        return "\n".join(rows) + "\n"

    @staticmethod
    def from_csv(text: str) -> "TrainingTable":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            raise EmptyTrainingSet("empty CSV")
        header = lines[0].split(",")
        if header[-1] != "dose_j" or tuple(header[-5:-1]) != CLINICAL_NAMES:
            raise ValueError("CSV header must end with clinical columns + dose_j")
        feature_names = tuple(header[: -5])
        data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
        d = len(feature_names)
        return TrainingTable(feature_names, data[:, :d], data[:, d:d + 4], data[:, -1])


# ---------------------------------------------------------------------------
# ICC reproducibility filter
# ---------------------------------------------------------------------------

def icc_1_1(column_replicates: np.ndarray) -> float:
    """One-way random-effects ICC(1,1) for an n_subjects x n_raters matrix."""
    x = np.asarray(column_replicates, dtype=np.float64)
    n, k = x.shape
    grand = x.mean()
    subject_means = x.mean(axis=1)
    msb = k * ((subject_means - grand) ** 2).sum() / (n - 1)
    msw = ((x - subject_means[:, None]) ** 2).sum() / (n * (k - 1))
    denom = msb + (k - 1) * msw
    if denom == 0.0:
        return 0.0
    return float((msb - msw) / denom)


def icc_filter(replicates: list[np.ndarray], threshold: float = 0.75) -> list[int]:
    """Indices of columns whose ICC(1,1) across replicates >= threshold.

    ``replicates`` holds R feature matrices of identical shape (same rows,
    same column schema), one per perturbed re-extraction.  Columns with zero
    total variance are discarded.
    """
    if len(replicates) < 2:
        raise TooFewReplicates("need at least 2 replicates")
    mats = [np.asarray(r, dtype=np.float64) for r in replicates]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValueError("replicates must share one schema")
    stacked = np.stack(mats, axis=2)  # n x d x R
    retained = []
    for j in range(shape[1]):
        col = stacked[:, j, :]
        if np.ptp(col) == 0.0:
            continue
        if icc_1_1(col) >= threshold:
            retained.append(j)
    return retained


# ---------------------------------------------------------------------------
# LASSO by cyclic coordinate descent
# ---------------------------------------------------------------------------

MAX_SWEEPS = 10_000
COORD_TOL = 1e-8


@dataclass(frozen=True)
class LassoFit:
    weights: np.ndarray            # original column scale
    intercept: float
    lam: float
    selected: tuple[int, ...]      # indices with nonzero weight

    def predict(self, F: np.ndarray) -> np.ndarray:
        return np.asarray(F, dtype=np.float64) @ self.weights + self.intercept


def _soft_threshold(z: float, lam: float) -> float:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _standardize(F: np.ndarray):
    mu = F.mean(axis=0)
    sd = F.std(axis=0)  # population sd so columns satisfy (1/N)||x||^2 = 1
    safe = np.where(sd > 0, sd, 1.0)
    return (F - mu) / safe, mu, sd


def lasso_max_penalty(F: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty that forces the all-zero solution (standardized scale)."""
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xs, _, sd = _standardize(F)
    yc = y - y.mean()
    n = F.shape[0]
    grads = np.abs(Xs.T @ yc) / n
    grads[sd == 0] = 0.0
    return float(grads.max()) if grads.size else 0.0


def _cd_solve(Xs: np.ndarray, yc: np.ndarray, lam: float, active: np.ndarray) -> np.ndarray:
    n, d = Xs.shape
    w = np.zeros(d)
    r = yc.copy()
    for _ in range(MAX_SWEEPS):
        max_delta = 0.0
        for j in range(d):
            if not active[j]:
                continue
            rho = w[j] + float(Xs[:, j] @ r) / n
            new = _soft_threshold(rho, lam)
            if new != w[j]:
                r += Xs[:, j] * (w[j] - new)
                max_delta = max(max_delta, abs(new - w[j]))
                w[j] = new
        if max_delta < COORD_TOL:
            break
    return w


def lasso_fit(F: np.ndarray, y: np.ndarray, lam: float | None = None) -> LassoFit:
    """Minimize (1/2N)||y - Fw||^2 + lam*||w||_1 over internally standardized
    columns; weights are reported back in the original column scale.

    When ``lam`` is None it is chosen by 5-fold cross-validation over a
    50-point log grid below the zero-solution penalty.
    """
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.isfinite(F).all() and np.isfinite(y).all()):
        raise NonFiniteInput("lasso inputs contain NaN/Inf")
    if lam is not None and lam < 0:
        raise ValueError("penalty must be >= 0")
    if lam is None:
        lam = _cv_penalty(F, y)

    Xs, mu, sd = _standardize(F)
    yc = y - y.mean()
    active = sd > 0
    w_std = _cd_solve(Xs, yc, lam, active)

    w_orig = np.where(active, w_std / np.where(active, sd, 1.0), 0.0)
    intercept = float(y.mean() - w_orig @ mu)
    selected = tuple(int(j) for j in np.nonzero(w_std)[0])
    return LassoFit(weights=w_orig, intercept=intercept, lam=float(lam), selected=selected)


def _cv_penalty(F: np.ndarray, y: np.ndarray, n_folds: int = 5, n_grid: int = 50) -> float:
    lam_max = lasso_max_penalty(F, y)
    if lam_max == 0.0:
        return 0.0
    grid = np.geomspace(lam_max, lam_max * 1e-3, n_grid)
    n = F.shape[0]
    folds = np.arange(n) % n_folds
    errors = np.zeros(n_grid)
    for k in range(n_folds):
        test = folds == k
        train = ~test
        if not test.any() or not train.any():
            continue
        for gi, lam in enumerate(grid):
            fit = lasso_fit(F[train], y[train], lam=float(lam))
            pred = fit.predict(F[test])
            errors[gi] += float(((pred - y[test]) ** 2).sum())
    # prefer the sparser (larger) penalty on ties; grid is descending
    best = int(np.argmin(errors))
    return float(grid[best])


# ---------------------------------------------------------------------------
# boosted regression trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoostParams:
    n_stages: int = 100
    learning_rate: float = 0.1
    max_depth: int = 2
    min_leaf: int = 1

    def __post_init__(self):
        if self.n_stages < 0:
            raise ValueError("n_stages must be >= 0")
        if not (0 < self.learning_rate <= 1):
            raise ValueError("learning_rate must be in (0, 1]")


def _fit_tree(X: np.ndarray, resid: np.ndarray, depth: int, params: BoostParams) -> dict:
    n = X.shape[0]
    mean = float(resid.mean())
    if depth >= params.max_depth or n < 2 * params.min_leaf:
        return {"leaf": mean}

    best = None  # (sse, feature, threshold)
    base_sse = float(((resid - mean) ** 2).sum())
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        rs = resid[order]
        csum = np.cumsum(rs)
        csq = np.cumsum(rs ** 2)
        total_sum = csum[-1]
        total_sq = csq[-1]
        # split between sorted positions i-1 and i: left size i, right size n-i
        for i in range(params.min_leaf, n - params.min_leaf + 1):
            if xs[i - 1] == xs[i]:
                continue
            left_sum = csum[i - 1]
            left_sq = csq[i - 1]
            right_sum = total_sum - left_sum
            right_sq = total_sq - left_sq
            sse = (left_sq - left_sum ** 2 / i) + (right_sq - right_sum ** 2 / (n - i))
            if best is None or sse < best[0] - 1e-12:
                threshold = 0.5 * (xs[i - 1] + xs[i])
                best = (float(sse), j, float(threshold))

    if best is None or best[0] >= base_sse - 1e-12:
        return {"leaf": mean}

    _, j, threshold = best
    go_left = X[:, j] <= threshold
    return {
        "feature": j,
        "threshold": threshold,
        "left": _fit_tree(X[go_left], resid[go_left], depth + 1, params),
        "right": _fit_tree(X[~go_left], resid[~go_left], depth + 1, params),
    }


def _eval_tree(tree: dict, x: np.ndarray) -> float:
    node = tree
    while "leaf" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["leaf"]


def _eval_tree_batch(tree: dict, X: np.ndarray) -> np.ndarray:
    return np.array([_eval_tree(tree, X[i]) for i in range(X.shape[0])])


@dataclass(frozen=True)
class DoseBands:
    """Joule thresholds mapping a prediction to {low, medium, high}."""

    low_max_j: float = 15_000.0
    medium_max_j: float = 30_000.0

    def band(self, dose_j: float) -> str:
        if dose_j < self.low_max_j:
            return "low"
        if dose_j < self.medium_max_j:
            return "medium"
        return "high"


@dataclass(frozen=True)
class DoseModel:
    """Shrinkage-boosted regression trees over signature + clinical columns."""

    schema: tuple[str, ...]
    base_prediction: float
    learning_rate: float
    trees: tuple[dict, ...]
    bands: DoseBands = field(default_factory=DoseBands)
    version: str = MODEL_VERSION

    def predict_row(self, x: np.ndarray) -> float:
        pred = self.base_prediction
        for tree in self.trees:
            pred += self.learning_rate * _eval_tree(tree, x)
        return float(pred)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != len(self.schema):
            raise SchemaMismatch(f"expected {len(self.schema)} columns, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_prediction)
        for tree in self.trees:
            out += self.learning_rate * _eval_tree_batch(tree, X)
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "schema": list(self.schema),
                "base_prediction": self.base_prediction,
                "learning_rate": self.learning_rate,
                "bands": {"low_max_j": self.bands.low_max_j, "medium_max_j": self.bands.medium_max_j},
                "trees": list(self.trees),
            },
            indent=1,
        )

    @staticmethod
    def from_json(text: str) -> "DoseModel":
        doc = json.loads(text)
        return DoseModel(
            schema=tuple(doc["schema"]),
            base_prediction=float(doc["base_prediction"]),
            learning_rate=float(doc["learning_rate"]),
            trees=tuple(doc["trees"]),
            bands=DoseBands(**doc.get("bands", {})),
            version=doc.get("version", MODEL_VERSION),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "DoseModel":
        return DoseModel.from_json(Path(path).read_text())


def boosted_fit(
    X: np.ndarray,
    y: np.ndarray,
    schema: tuple[str, ...],
    params: BoostParams = BoostParams(),
    bands: DoseBands = DoseBands(),
) -> DoseModel:
    """Greedy least-squares stagewise boosting: each tree fits the residuals
    of the ensemble so far, scaled by the learning rate."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no training rows")
    if X.shape[1] != len(schema):
        raise SchemaMismatch("schema length != column count")

    base = float(y.mean())
    resid = y - base
    trees = []
    for _ in range(params.n_stages):
        tree = _fit_tree(X, resid, 0, params)
        resid = resid - params.learning_rate * _eval_tree_batch(tree, X)
        trees.append(tree)
    return DoseModel(
        schema=tuple(schema),
        base_prediction=base,
        learning_rate=params.learning_rate,
        trees=tuple(trees),
        bands=bands,
    )


@dataclass(frozen=True)
class DoseObservation:
    predicted_dose_j: float
    dose_band: str
    model_version: str

    def to_block(self) -> str:
        return f"DOSE: predicted_J={self.predicted_dose_j:.1f}; band={self.dose_band}"


def predict_dose(
    model: DoseModel,
    selected_features: dict[str, float],
    clinical: ClinicalVariables,
) -> DoseObservation:
    """Predict a dose for one case; inputs must cover the model schema."""
    pool = dict(selected_features)
    pool.update(clinical.as_dict())
    try:
        x = np.array([pool[name] for name in model.schema], dtype=np.float64)
    except KeyError as exc:
        raise SchemaMismatch(f"missing model input {exc.args[0]!r}") from exc
    dose = model.predict_row(x)
    return DoseObservation(
        predicted_dose_j=dose,
        dose_band=model.bands.band(dose),
        model_version=model.version,
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def roc_auc(scores, labels) -> float:
    """Exact AUC: probability a positive outscores a negative, ties half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("both classes must be present")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # average rank for the tie run, 1-based
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1

    pos_rank_sum = float(ranks[labels].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
