"""Gradient-boosted meta-learner mapping features to combination weights.

Per boosting round, one histogram-based regression tree is fit per pool
method on the softmax objective L_n = sum_m w_m * O_nm, where O is the
per-series loss matrix. Predicted raw scores are softmaxed into the
weights used for forecast combination.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

LAMBDA_REG = 1.0
MIN_CHILD_WEIGHT = 1.0  # minimum rows per child, one unit of weight per row
HESSIAN_FLOOR = 1e-6  # keeps the second-order machinery valid where h < 0
N_BINS = 256

DEPTH_RANGE = (6, 50)
LEARNING_RATE_RANGE = (0.001, 1.0)
SUBSAMPLE_RANGE = (0.5, 1.0)
ROUNDS_RANGE = (1, 250)

_MODEL_MAGIC = b"ICWM"
_MODEL_VERSION = 1


class CombinerError(ValueError):
    """Raised on invalid hyperparameters, inputs, or model files."""


@dataclass(frozen=True)
class HyperParams:
    """Boosting knobs, validated against their documented ranges."""

    max_depth: int = 8
    learning_rate: float = 0.05
    subsample_rows: float = 0.9
    subsample_cols: float = 0.9
    rounds: int = 100

    def __post_init__(self):
        def check(name, value, lo, hi):
            if not (lo <= value <= hi):
                raise CombinerError(f"{name}={value} outside [{lo}, {hi}]")

        check("max_depth", self.max_depth, *DEPTH_RANGE)
        check("learning_rate", self.learning_rate, *LEARNING_RATE_RANGE)
        check("subsample_rows", self.subsample_rows, *SUBSAMPLE_RANGE)
        check("subsample_cols", self.subsample_cols, *SUBSAMPLE_RANGE)
        check("rounds", self.rounds, *ROUNDS_RANGE)


@dataclass
class Tree:
    """Flat-array binary regression tree; leaves hold additive score updates.

    ``left[i] == -1`` marks a leaf. Internal nodes send a row left when
    ``x[feature] < threshold``, which reproduces the training-time split
    "bin <= b" exactly because thresholds are the raw bin edges.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def predict_into(self, x: np.ndarray, out: np.ndarray) -> None:
        _predict_tree(
            x, self.feature, self.threshold, self.left, self.right, self.value, out
        )


@dataclass
class WeightModel:
    """Trained ensemble: ``trees[r][m]`` is round r's tree for method m."""

    n_features: int
    method_ids: tuple
    hyperparams: HyperParams
    seed: int
    trees: list = field(default_factory=list)
    loss_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_methods(self) -> int:
        return len(self.method_ids)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)


def softmax_weights(p: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis; rows sum to one."""
    p = np.asarray(p, dtype=np.float64)
    shifted = p - p.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss(p: np.ndarray, o: np.ndarray) -> float:
    """Weighted per-series loss: sum_m softmax(p)_m * o_m."""
    w = softmax_weights(p)
    return float(np.sum(w * np.asarray(o, dtype=np.float64)))


def gradient(p: np.ndarray, o: np.ndarray) -> np.ndarray:
    """dL/dp_m = w_m (o_m - L)."""
    w = softmax_weights(p)
    o = np.asarray(o, dtype=np.float64)
    l_val = float(np.sum(w * o))
    return w * (o - l_val)


def hessian_diag(p: np.ndarray, o: np.ndarray) -> np.ndarray:
    """d2L/dp_m2 = w_m (o_m - L)(1 - 2 w_m); may be negative."""
    w = softmax_weights(p)
    o = np.asarray(o, dtype=np.float64)
    l_val = float(np.sum(w * o))
    return w * (o - l_val) * (1.0 - 2.0 * w)


@njit(cache=True)
def _hist_fill(binned, rows, cols, g, h, hist_g, hist_h, hist_c):
    for ri in range(rows.shape[0]):
        r = rows[ri]
        gr = g[r]
        hr = h[r]
        for fi in range(cols.shape[0]):
            b = binned[r, cols[fi]]
            hist_g[fi, b] += gr
            hist_h[fi, b] += hr
            hist_c[fi, b] += 1


@njit(cache=True)
def _best_split(hist_g, hist_h, hist_c, n_bins, lam, min_child_weight):
    best_gain = 0.0
    best_f = -1
    best_b = -1
    for fi in range(hist_g.shape[0]):
        nb = n_bins[fi]
        g_tot = 0.0
        h_tot = 0.0
        c_tot = 0
        for b in range(nb):
            g_tot += hist_g[fi, b]
            h_tot += hist_h[fi, b]
            c_tot += hist_c[fi, b]
        parent = g_tot * g_tot / (h_tot + lam)
        gl = 0.0
        hl = 0.0
        cl = 0
        for b in range(nb - 1):
            gl += hist_g[fi, b]
            hl += hist_h[fi, b]
            cl += hist_c[fi, b]
            if cl == 0:
                continue
            if cl == c_tot:
                break
            # child weight is counted in rows: the softmax hessian vanishes
            # at uniform weights, so hessian mass cannot gate the first split
            if cl < min_child_weight or (c_tot - cl) < min_child_weight:
                continue
            hr = h_tot - hl
            gr = g_tot - gl
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
            if gain > best_gain:
                best_gain = gain
                best_f = fi
                best_b = b
    return best_f, best_b, best_gain


@njit(cache=True)
def _predict_tree(x, feature, threshold, left, right, value, out):
    for r in range(x.shape[0]):
        node = 0
        while left[node] >= 0:
            if x[r, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += value[node]


def _bin_features(x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Quantile-bin every column; bin = count of edges <= value.

    A split "bin <= b" is equivalent to "value < edges[b]", so raw edge
    values serve directly as prediction thresholds.
    """
    n, d = x.shape
    qs = np.linspace(0.0, 1.0, N_BINS + 1)[1:-1]
    quantiles = np.quantile(x, qs, axis=0)
    binned = np.empty((n, d), dtype=np.uint8)
    edges: list[np.ndarray] = []
    for j in range(d):
        e = np.unique(quantiles[:, j])
        edges.append(e)
        binned[:, j] = np.searchsorted(e, x[:, j], side="right").astype(np.uint8)
    return binned, edges


class _TreeBuilder:
    """Grows one tree on (g, h) over a row/column subsample."""

    def __init__(self, binned, edges, hp, hist_g, hist_h, hist_c):
        self.binned = binned
        self.edges = edges
        self.hp = hp
        self.hist_g = hist_g
        self.hist_h = hist_h
        self.hist_c = hist_c
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, g, h, rows, cols) -> Tree:
        self._g = g
        self._h = h
        self._cols = cols
        self._n_bins = np.array([self.edges[c].size + 1 for c in cols], dtype=np.int64)
        self._grow(rows, 0)
        return Tree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=np.float64),
        )

    def _grow(self, rows, depth) -> int:
        node = self._add_node()
        g_sum = float(self._g[rows].sum())
        h_sum = float(self._h[rows].sum())
        self.value[node] = -self.hp.learning_rate * g_sum / (h_sum + LAMBDA_REG)
        if depth >= self.hp.max_depth or rows.size < 2:
            return node
        n_cols = self._cols.size
        self.hist_g[:n_cols].fill(0.0)
        self.hist_h[:n_cols].fill(0.0)
        self.hist_c[:n_cols].fill(0)
        _hist_fill(
            self.binned,
            rows,
            self._cols,
            self._g,
            self._h,
            self.hist_g[:n_cols],
            self.hist_h[:n_cols],
            self.hist_c[:n_cols],
        )
        fi, b, gain = _best_split(
            self.hist_g[:n_cols],
            self.hist_h[:n_cols],
            self.hist_c[:n_cols],
            self._n_bins,
            LAMBDA_REG,
            MIN_CHILD_WEIGHT,
        )
        if fi < 0 or gain <= 0.0:
            return node
        col = int(self._cols[fi])
        go_left = self.binned[rows, col] <= b
        left_rows = rows[go_left]
        right_rows = rows[~go_left]
        self.feature[node] = col
        self.threshold[node] = float(self.edges[col][b])
        self.left[node] = self._grow(left_rows, depth + 1)
        self.right[node] = self._grow(right_rows, depth + 1)
        return node


def _as_losses(losses) -> tuple[np.ndarray, tuple]:
    """Accept a LossMatrix-like object (owa + method_ids) or a plain array."""
    if hasattr(losses, "owa") and hasattr(losses, "method_ids"):
        return np.asarray(losses.owa, dtype=np.float64), tuple(losses.method_ids)
    arr = np.asarray(losses, dtype=np.float64)
    return arr, tuple(f"method_{i}" for i in range(arr.shape[1]))


def train(
    features: np.ndarray,
    losses,
    hp: HyperParams | None = None,
    seed: int = 0,
    method_ids=None,
) -> WeightModel:
    """Fit the boosted weight model on per-series losses.

    Rows are subsampled once per round (shared by that round's M trees),
    columns once per tree. The recorded loss curve has ``rounds + 1``
    entries: the uniform-weights starting loss, then the mean loss after
    each round. All-constant features yield a zero-tree model.
    """
    hp = hp or HyperParams()
    x = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    o, inferred_ids = _as_losses(losses)
    ids = tuple(method_ids) if method_ids is not None else inferred_ids
    if x.ndim != 2 or o.ndim != 2:
        raise CombinerError("features and losses must be 2-d")
    n, d = x.shape
    if o.shape[0] != n:
        raise CombinerError(f"feature rows ({n}) != loss rows ({o.shape[0]})")
    m = o.shape[1]
    if len(ids) != m:
        raise CombinerError("method id count does not match loss columns")
    if n < 10:
        raise CombinerError(f"need at least 10 training series, got {n}")
    if m < 2:
        raise CombinerError("need at least 2 pool methods")
    if not np.all(np.isfinite(x)):
        raise CombinerError("features must be finite")
    if not (np.all(np.isfinite(o)) and np.all(o >= 0.0)):
        raise CombinerError("losses must be finite and non-negative")

    model = WeightModel(
        n_features=d, method_ids=ids, hyperparams=hp, seed=seed, trees=[]
    )
    if np.all(x == x[0:1, :]):
        logger.warning("all features constant; returning zero-tree model")
        model.loss_curve = np.array([float(np.mean(o))])
        return model

    binned, edges = _bin_features(x)
    hist_g = np.zeros((d, N_BINS))
    hist_h = np.zeros((d, N_BINS))
    hist_c = np.zeros((d, N_BINS), dtype=np.int64)
    rng = np.random.default_rng(seed)
    scores = np.zeros((n, m))
    n_rows = max(1, math.ceil(hp.subsample_rows * n))
    n_cols = max(1, math.ceil(hp.subsample_cols * d))
    curve = []

    def mean_loss():
        w = softmax_weights(scores)
        return float(np.mean(np.sum(w * o, axis=1)))

    curve.append(mean_loss())
    for _ in range(hp.rounds):
        w = softmax_weights(scores)
        l_vec = np.sum(w * o, axis=1)
        g = w * (o - l_vec[:, None])
        h = np.maximum(g * (1.0 - 2.0 * w), HESSIAN_FLOOR)
        if n_rows < n:
            rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        else:
            rows = np.arange(n)
        round_trees = []
        for j in range(m):
            if n_cols < d:
                cols = np.sort(rng.choice(d, size=n_cols, replace=False))
            else:
                cols = np.arange(d)
            builder = _TreeBuilder(binned, edges, hp, hist_g, hist_h, hist_c)
            tree = builder.build(
                np.ascontiguousarray(g[:, j]),
                np.ascontiguousarray(h[:, j]),
                rows.astype(np.int64),
                cols.astype(np.int64),
            )
            round_trees.append(tree)
            update = np.zeros(n)
            tree.predict_into(x, update)
            scores[:, j] += update
        model.trees.append(round_trees)
        curve.append(mean_loss())
    model.loss_curve = np.array(curve)
    return model


def predict_scores(model: WeightModel, features: np.ndarray) -> np.ndarray:
    """Raw per-method scores before the softmax; ``(n, M)``."""
    x = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.n_features:
        raise CombinerError(
            f"expected {model.n_features} features, got {x.shape[1]}"
        )
    scores = np.zeros((x.shape[0], model.n_methods))
    for round_trees in model.trees:
        for j, tree in enumerate(round_trees):
            tree.predict_into(x, scores[:, j])
    return scores[0] if single else scores


def predict_weights(model: WeightModel, features: np.ndarray) -> np.ndarray:
    """Softmaxed combination weights for one feature vector or a batch."""
    return softmax_weights(predict_scores(model, features))


def combine_forecasts(weights: np.ndarray, forecast_sets) -> np.ndarray:
    """Pointwise convex combination of equal-horizon forecasts."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(forecast_sets) != weights.size:
        raise CombinerError(
            f"{weights.size} weights for {len(forecast_sets)} forecast sets"
        )
    if not forecast_sets:
        raise CombinerError("no forecasts to combine")
    horizons = {len(fs.values) for fs in forecast_sets}
    if len(horizons) != 1:
        raise CombinerError(f"mixed horizons in combination: {sorted(horizons)}")
    stacked = np.vstack([np.asarray(fs.values, dtype=np.float64) for fs in forecast_sets])
    return weights @ stacked


@dataclass
class CvTrial:
    params: HyperParams
    fold_losses: np.ndarray
    mean_loss: float


def sample_hyperparams(rng: np.random.Generator, space: dict | None = None) -> HyperParams:
    """One random configuration; learning rate is log-uniform."""
    space = space or {}
    d_lo, d_hi = space.get("max_depth", DEPTH_RANGE)
    lr_lo, lr_hi = space.get("learning_rate", LEARNING_RATE_RANGE)
    s_lo, s_hi = space.get("subsample", SUBSAMPLE_RANGE)
    r_lo, r_hi = space.get("rounds", ROUNDS_RANGE)
    return HyperParams(
        max_depth=int(rng.integers(d_lo, d_hi + 1)),
        learning_rate=float(np.exp(rng.uniform(np.log(lr_lo), np.log(lr_hi)))),
        subsample_rows=float(rng.uniform(s_lo, s_hi)),
        subsample_cols=float(rng.uniform(s_lo, s_hi)),
        rounds=int(rng.integers(r_lo, r_hi + 1)),
    )


def cv_search(
    features: np.ndarray,
    losses,
    folds: int = 10,
    budget: int = 16,
    seed: int = 0,
    space: dict | None = None,
) -> tuple[HyperParams, list[CvTrial]]:
    """Seeded random hyperparameter search scored by k-fold weighted OWA.

    Every candidate sees the same fold assignment; the minimum mean
    validation loss wins, first sampled on ties.
    """
    x = np.asarray(features, dtype=np.float64)
    o, ids = _as_losses(losses)
    n = x.shape[0]
    if budget < 1:
        raise CombinerError("cv budget must be >= 1")
    if n < 2 * folds:
        raise CombinerError(f"{n} series is too few for {folds}-fold search")
    rng = np.random.default_rng(seed)
    candidates = [sample_hyperparams(rng, space) for _ in range(budget)]
    perm = rng.permutation(n)
    chunks = np.array_split(perm, folds)
    trials: list[CvTrial] = []
    for trial_i, hp in enumerate(candidates):
        fold_losses = np.zeros(folds)
        for k, val_idx in enumerate(chunks):
            train_idx = np.setdiff1d(perm, val_idx, assume_unique=True)
            model = train(x[train_idx], o[train_idx], hp, seed=seed, method_ids=ids)
            w = predict_weights(model, x[val_idx])
            fold_losses[k] = float(np.mean(np.sum(w * o[val_idx], axis=1)))
        trials.append(CvTrial(hp, fold_losses, float(fold_losses.mean())))
        logger.info(
            "cv trial %d/%d: mean weighted loss %.6f", trial_i + 1, budget, trials[-1].mean_loss
        )
    best = min(trials, key=lambda t: t.mean_loss)
    return replace(best.params), trials


def save_model(path, model: WeightModel) -> None:
    """Self-describing binary dump; nodes are five little-endian doubles."""
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIq",
                _MODEL_VERSION,
                model.n_methods,
                model.n_rounds,
                model.n_features,
                model.seed,
            )
        )
        hp = model.hyperparams
        fh.write(
            struct.pack(
                "<qdddq",
                hp.max_depth,
                hp.learning_rate,
                hp.subsample_rows,
                hp.subsample_cols,
                hp.rounds,
            )
        )
        for mid in model.method_ids:
            raw = mid.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        for round_trees in model.trees:
            for tree in round_trees:
                fh.write(struct.pack("<I", tree.n_nodes))
                packed = np.column_stack(
                    [
                        tree.feature.astype(np.float64),
                        tree.threshold,
                        tree.left.astype(np.float64),
                        tree.right.astype(np.float64),
                        tree.value,
                    ]
                )
                fh.write(packed.astype("<f8").tobytes())


def load_model(path) -> WeightModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise CombinerError(f"{path}: not a weight-model file")
        version, m, rounds, d, seed = struct.unpack("<IIIIq", fh.read(24))
        if version != _MODEL_VERSION:
            raise CombinerError(f"{path}: unsupported model version {version}")
        depth, lr, sub_r, sub_c, n_rounds_hp = struct.unpack("<qdddq", fh.read(40))
        hp = HyperParams(
            max_depth=int(depth),
            learning_rate=lr,
            subsample_rows=sub_r,
            subsample_cols=sub_c,
            rounds=int(n_rounds_hp),
        )
        ids = []
        for _ in range(m):
            (ln,) = struct.unpack("<H", fh.read(2))
            ids.append(fh.read(ln).decode("utf-8"))
        trees = []
        for _ in range(rounds):
            round_trees = []
            for _ in range(m):
                (n_nodes,) = struct.unpack("<I", fh.read(4))
                raw = np.frombuffer(fh.read(n_nodes * 5 * 8), dtype="<f8")
                if raw.size != n_nodes * 5:
                    raise CombinerError(f"{path}: truncated tree data")
                packed = raw.reshape(n_nodes, 5)
                round_trees.append(
                    Tree(
                        feature=packed[:, 0].astype(np.int64),
                        threshold=packed[:, 1].copy(),
                        left=packed[:, 2].astype(np.int64),
                        right=packed[:, 3].astype(np.int64),
                        value=packed[:, 4].copy(),
                    )
                )
            trees.append(round_trees)
    return WeightModel(
        n_features=int(d),
        method_ids=tuple(ids),
        hyperparams=hp,
        seed=int(seed),
        trees=trees,
    )
