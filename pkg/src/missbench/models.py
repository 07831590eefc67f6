"""Preprocessing, model training with grid tuning, bootstrap ensembles, and the
joint clean-and-train boosting ensemble.

Tree models wrap scikit-learn's CART and random forest; logistic regression is
implemented here (log-loss with optional L2, minimized by L-BFGS against the
analytic gradient). All training is seeded and deterministic.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.ensemble import RandomForestClassifier
from sklearn.tree import DecisionTreeClassifier

from .dataset import Dataset, NUMERICAL
from .errors import ConfigurationError, ContractError, TrainingError
from .imputers import DELETION, FittedImputer, fit as fit_imputer, transform
from .metrics import model_scores

LOGISTIC_REGRESSION = "lr"
DECISION_TREE = "dt"
RANDOM_FOREST = "rf"
MODEL_KINDS = (LOGISTIC_REGRESSION, DECISION_TREE, RANDOM_FOREST)

DEFAULT_GRIDS = {
    DECISION_TREE: {
        "max_depth": [3, 5, 10, None],
        "min_samples_leaf": [1, 5, 10],
        "criterion": ["gini", "entropy"],
    },
    LOGISTIC_REGRESSION: {
        "strength": [0.01, 0.1, 1.0, 10.0],
        "penalty": ["none", "l2"],
    },
    RANDOM_FOREST: {
        "n_estimators": [50, 100],
        "max_depth": [5, 10, None],
        "min_samples_split": [2, 10],
        "min_samples_leaf": [1, 5],
    },
}

DEFAULT_HYPER = {
    DECISION_TREE: {"max_depth": 5, "min_samples_leaf": 5, "criterion": "gini"},
    LOGISTIC_REGRESSION: {"strength": 1.0, "penalty": "l2"},
    RANDOM_FOREST: {"n_estimators": 100, "max_depth": 10,
                    "min_samples_split": 2, "min_samples_leaf": 1},
}


def _seed32(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:4], "big") & 0x7FFFFFFF


# -- preprocessing -----------------------------------------------------------------


@dataclass(frozen=True)
class Preprocessor:
    numerical: dict      # name -> (mean, std); population std
    categorical: dict    # name -> category tuple defining the one-hot layout
    feature_order: tuple

    @property
    def width(self) -> int:
        return len(self.numerical) + sum(len(c) for c in self.categorical.values())


def preprocess_fit(train: Dataset) -> Preprocessor:
    """Standard-scaling and one-hot layouts learned from a completed train set."""
    if train.null_mask.any():
        raise ContractError("preprocessing requires a completed dataset (impute first)")
    numerical, categorical = {}, {}
    for name in train.feature_names:
        col = train.column_schema(name)
        if col.kind == NUMERICAL:
            arr = train.columns[name]
            numerical[name] = (float(arr.mean()), float(arr.std()))
        else:
            categorical[name] = tuple(col.categories)
    return Preprocessor(numerical, categorical, tuple(train.feature_names))


def preprocess_apply(p: Preprocessor, d: Dataset) -> np.ndarray:
    """Encode features: scaled numericals, one-hot categoricals.

    Constant numericals map to zeros; unseen test categories one-hot to an
    all-zero block.
    """
    if d.null_mask.any():
        raise ContractError("preprocessing requires a completed dataset (impute first)")
    blocks = []
    for name in p.feature_order:
        if name in p.numerical:
            mean, std = p.numerical[name]
            arr = d.columns[name].astype(float)
            blocks.append(np.zeros((d.n, 1)) if std < 1e-12
                          else ((arr - mean) / std)[:, None])
        else:
            cats = p.categorical[name]
            code = {c: i for i, c in enumerate(cats)}
            hot = np.zeros((d.n, len(cats)))
            for i, v in enumerate(d.columns[name]):
                j = code.get(v)
                if j is not None:
                    hot[i, j] = 1.0
            blocks.append(hot)
    return np.hstack(blocks)


# -- logistic regression -----------------------------------------------------------


def lr_loss_and_grad(wb: np.ndarray, x: np.ndarray, y: np.ndarray,
                     alpha: float, sample_weight: np.ndarray | None = None):
    """Weighted mean log-loss with L2 on the weights (not the intercept).

    Returns (loss, gradient) for parameter vector [w..., b].
    """
    w, b = wb[:-1], wb[-1]
    f = x @ w + b
    if sample_weight is None:
        sample_weight = np.ones(len(y))
    wsum = sample_weight.sum()
    losses = np.logaddexp(0.0, f) - y * f
    loss = float((sample_weight * losses).sum() / wsum + 0.5 * alpha * (w @ w))
    residual = sample_weight * (expit(f) - y) / wsum
    grad = np.concatenate([x.T @ residual + alpha * w, [residual.sum()]])
    return loss, grad


class LogisticModel:
    def __init__(self, w: np.ndarray, b: float):
        self.w = w
        self.b = b

    def scores(self, x: np.ndarray) -> np.ndarray:
        return expit(x @ self.w + self.b)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.scores(x) >= 0.5).astype(np.int64)


def _fit_lr(x, y, hyper, sample_weight=None) -> LogisticModel:
    alpha = 0.0 if hyper.get("penalty", "l2") == "none" else 1.0 / float(hyper.get("strength", 1.0))
    alpha /= len(y)
    wb0 = np.zeros(x.shape[1] + 1)
    res = minimize(lr_loss_and_grad, wb0, args=(x, y, alpha, sample_weight),
                   method="L-BFGS-B", jac=True,
                   options={"maxiter": int(hyper.get("max_epochs", 500)), "gtol": 1e-7})
    return LogisticModel(res.x[:-1], float(res.x[-1]))


# -- training and prediction ----------------------------------------------------------


@dataclass
class TrainedModel:
    kind: str
    estimator: object
    hyper: dict
    seed: int


def train(x: np.ndarray, y: np.ndarray, kind: str, hyper: dict, seed: int,
          sample_weight: np.ndarray | None = None) -> TrainedModel:
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise TrainingError("training set contains a single class")
    hyper = {**DEFAULT_HYPER[kind], **(hyper or {})} if kind in DEFAULT_HYPER \
        else dict(hyper or {})
    if kind == LOGISTIC_REGRESSION:
        est = _fit_lr(x, y, hyper, sample_weight)
    elif kind == DECISION_TREE:
        est = DecisionTreeClassifier(
            max_depth=hyper["max_depth"], min_samples_leaf=hyper["min_samples_leaf"],
            criterion=hyper["criterion"], random_state=_seed32(seed, kind))
        est.fit(x, y, sample_weight=sample_weight)
    elif kind == RANDOM_FOREST:
        extra = {k: hyper[k] for k in ("bootstrap", "max_features") if k in hyper}
        est = RandomForestClassifier(
            n_estimators=hyper["n_estimators"], max_depth=hyper["max_depth"],
            min_samples_split=hyper["min_samples_split"],
            min_samples_leaf=hyper["min_samples_leaf"],
            random_state=_seed32(seed, kind), n_jobs=1, **extra)
        est.fit(x, y, sample_weight=sample_weight)
    else:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    return TrainedModel(kind, est, hyper, seed)


def predict(m: TrainedModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Binary labels and positive-class scores."""
    if m.kind == LOGISTIC_REGRESSION:
        scores = m.estimator.scores(x)
        return (scores >= 0.5).astype(np.int64), scores
    labels = m.estimator.predict(x).astype(np.int64)
    proba = m.estimator.predict_proba(x)
    pos = list(m.estimator.classes_).index(1)
    return labels, proba[:, pos]


# -- hyperparameter tuning ---------------------------------------------------------------


def grid_points(grid: dict) -> list[dict]:
    """Enumerate a grid in declaration order (ties in tuning break by this order)."""
    if not grid:
        raise ConfigurationError("empty hyperparameter grid")
    keys = list(grid)
    for k in keys:
        if not grid[k]:
            raise ConfigurationError(f"grid parameter {k!r} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def tune(x: np.ndarray, y: np.ndarray, kind: str, grid: dict,
         k_folds: int = 3, seed: int = 0) -> tuple[dict, list]:
    """Seeded k-fold CV; selects the grid point with the highest mean F1.

    Returns (chosen point, full table of per-point results). Folds whose
    training part is single-class score 0 and are flagged.
    """
    if k_folds < 2:
        raise ConfigurationError("k_folds must be at least 2")
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))
    perm = rng.permutation(len(y))
    folds = np.array_split(perm, k_folds)

    table = []
    for pi, point in enumerate(grid_points(grid)):
        fold_scores, flagged = [], False
        for fi, fold in enumerate(folds):
            train_idx = np.setdiff1d(perm, fold, assume_unique=True)
            if len(np.unique(y[train_idx])) < 2 or len(np.unique(y[fold])) < 2:
                fold_scores.append(0.0)
                flagged = True
                continue
            m = train(x[train_idx], y[train_idx], kind, point, seed=_seed32(seed, pi, fi))
            labels, _ = predict(m, x[fold])
            fold_scores.append(model_scores(y[fold], labels)["f1"])
        table.append({"params": point, "mean_f1": float(np.mean(fold_scores)),
                      "fold_f1": fold_scores, "flagged": flagged})

    best = max(range(len(table)), key=lambda i: table[i]["mean_f1"])
    # max() already keeps the earliest (grid-order) point on ties
    return dict(table[best]["params"]), table


# -- bootstrap ensembles --------------------------------------------------------------------


@dataclass
class BootstrapEnsemble:
    members: tuple
    subsample: float
    base_seed: int
    n_sub: int = 0

    @property
    def b(self) -> int:
        return len(self.members)


def bootstrap_ensemble(x: np.ndarray, y: np.ndarray, kind: str, hyper: dict,
                       b: int = 50, subsample: float = 0.8, seed: int = 0) -> BootstrapEnsemble:
    """B models, each trained on a seeded subsample (without replacement) of
    round(subsample * n) rows. Single-class subsamples retry with a fresh
    sub-seed up to 5 times."""
    if b < 1:
        raise ConfigurationError("B must be at least 1")
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    n_sub = int(np.floor(subsample * n + 0.5))
    members = []
    for i in range(b):
        member = None
        for attempt in range(5):
            rng = np.random.default_rng(
                np.random.SeedSequence([_seed32(seed, "subsample", i, attempt), i]))
            idx = rng.choice(n, size=n_sub, replace=False)
            if n_sub < 2 or len(np.unique(y[idx])) < 2:
                continue
            member = train(x[idx], y[idx], kind, hyper, seed=_seed32(seed, "member", i))
            break
        if member is None:
            raise TrainingError(f"ensemble member {i}: no valid subsample in 5 attempts")
        members.append(member)
    return BootstrapEnsemble(tuple(members), subsample, seed, n_sub)


def ensemble_predict(e: BootstrapEnsemble, x: np.ndarray) -> np.ndarray:
    """(B, N) matrix of member labels."""
    return np.vstack([predict(m, x)[0] for m in e.members])


# -- joint clean-and-train boosting ------------------------------------------------------------


ALPHA_EPS = 1e-10  # error floor; caps the vote weight at 0.5*ln((1-eps)/eps)


@dataclass
class BoostCleanMember:
    imputer: FittedImputer
    preprocessor: Preprocessor
    model: TrainedModel
    alpha: float


@dataclass
class BoostCleanEnsemble:
    members: tuple
    history: list = field(default_factory=list)


def boostclean_train(train_with_nulls: Dataset, imputer_kinds, model_kind: str,
                     rounds: int = 5, seed: int = 0, model_hyper: dict | None = None,
                     imputer_params: dict | None = None) -> BoostCleanEnsemble:
    """AdaBoost-style selection over candidate imputers.

    Each round trains one weighted model per candidate's imputed view of the
    training set, keeps the (imputer, model) pair with the lowest weighted
    error, and reweights rows by the standard exp(-alpha * margin) update.
    Rounds stop early when every candidate has weighted error >= 0.5.
    """
    imputer_kinds = tuple(imputer_kinds)
    if not imputer_kinds:
        raise ConfigurationError("boostclean needs at least one candidate imputer")
    if DELETION in imputer_kinds:
        raise ConfigurationError("deletion drops rows and cannot be boosted over")
    if rounds < 1:
        raise ConfigurationError("rounds must be at least 1")
    imputer_params = imputer_params or {}

    views = []
    y = train_with_nulls.labels()
    for kind in imputer_kinds:
        fitted = fit_imputer(train_with_nulls, kind,
                             seed=_seed32(seed, "imputer", kind),
                             **imputer_params.get(kind, {}))
        completed = transform(fitted, train_with_nulls).dataset
        pre = preprocess_fit(completed)
        views.append((kind, fitted, pre, preprocess_apply(pre, completed)))

    n = train_with_nulls.n
    w = np.full(n, 1.0 / n)
    sign = 2 * y - 1
    members, history = [], []
    for rnd in range(rounds):
        best = None
        for ci, (kind, fitted, pre, x) in enumerate(views):
            m = train(x, y, model_kind, model_hyper, seed=_seed32(seed, "round", rnd, ci),
                      sample_weight=w)
            labels, _ = predict(m, x)
            eps = float(w[labels != y].sum() / w.sum())
            if best is None or eps < best[0]:
                best = (eps, kind, fitted, pre, m, labels)
        eps, kind, fitted, pre, m, labels = best
        if eps >= 0.5:
            history.append({"round": rnd + 1, "imputer": kind, "error": eps,
                            "stopped_early": True})
            break
        alpha = 0.5 * np.log((1 - max(eps, ALPHA_EPS)) / max(eps, ALPHA_EPS))
        members.append(BoostCleanMember(fitted, pre, m, float(alpha)))
        history.append({"round": rnd + 1, "imputer": kind, "error": eps,
                        "alpha": float(alpha)})
        margin = sign * (2 * labels - 1)
        w = w * np.exp(-alpha * margin)
        w = w / w.sum()
    if not members:
        raise TrainingError("boostclean: every candidate had weighted error >= 0.5 in round 1")
    return BoostCleanEnsemble(tuple(members), history)


def boostclean_predict(e: BoostCleanEnsemble, test_with_nulls: Dataset) -> np.ndarray:
    """Each member imputes the test set with its own fitted imputer, then votes."""
    total = np.zeros(test_with_nulls.n)
    for member in e.members:
        completed = transform(member.imputer, test_with_nulls).dataset
        x = preprocess_apply(member.preprocessor, completed)
        labels, _ = predict(member.model, x)
        total += member.alpha * (2 * labels - 1)
    return (total >= 0).astype(np.int64)


# -- model artifact serialization ----------------------------------------------------


MODEL_SERIAL_FORMAT = "missbench-model"
MODEL_SERIAL_VERSION = 1


def model_to_bytes(m: TrainedModel) -> bytes:
    import io
    import pickle
    from .imputers import _canonical_pickle
    buf = io.BytesIO()
    pickle.dump({"format": MODEL_SERIAL_FORMAT, "version": MODEL_SERIAL_VERSION,
                 "kind": m.kind}, buf, protocol=5)
    buf.write(_canonical_pickle(m))
    return buf.getvalue()


def model_from_bytes(data: bytes) -> TrainedModel:
    import io
    import pickle
    buf = io.BytesIO(data)
    header = pickle.load(buf)
    if header.get("format") != MODEL_SERIAL_FORMAT:
        raise ContractError("not a serialized model")
    if header.get("version") != MODEL_SERIAL_VERSION:
        raise ContractError(f"unsupported model format version {header.get('version')}")
    return pickle.load(buf)
