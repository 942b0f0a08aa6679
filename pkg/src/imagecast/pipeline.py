"""Orchestration for the CLI subcommands: featurize, forecast, train, evaluate.

Every step reads and writes only the configured work directory. Output
files are byte-deterministic given config and seed; manifests additionally
carry wall-clock timings and so are exempt from byte comparisons.

The usual flow trains the meta-learner on a truncated corpus (each series
minus its final horizon), then evaluates on the full corpus in a second
work directory after copying ``codebook.bin`` and ``model_*.bin`` across,
so both phases share one visual vocabulary and one trained model.
"""

from __future__ import annotations

import glob
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import codebook as cb
from . import combiner, forecasters, llc, metrics, rp, sift, spm
from .config import RunConfig
from .series import (
    SplitSeries,
    apply_metadata,
    load_corpus_lenient,
    load_metadata,
    split_train_test,
)

logger = logging.getLogger(__name__)

FEATURES_FILE = "features.bin"
CODEBOOK_FILE = "codebook.bin"
FORECASTS_FILE = "forecasts.csv"
LOSSES_FILE = "losses.csv"
REPORT_FILE = "report.csv"
PROJECTION_FILE = "projection.csv"
COMBINATION_ID = "combination"

_M4_GROUPS = {
    "Y": "Yearly",
    "Q": "Quarterly",
    "M": "Monthly",
    "W": "Weekly",
    "D": "Daily",
    "H": "Hourly",
}


class PipelineError(RuntimeError):
    """Raised when a step's inputs are missing or inconsistent."""


def frequency_group(series_id: str, period: int, horizon: int) -> str:
    """Group label: M4-style id prefixes, else period/horizon derived."""
    m = re.fullmatch(r"([YQMWDH])\d+", series_id)
    if m:
        return _M4_GROUPS[m.group(1)]
    return f"P{period}H{horizon}"


def _group_slug(label: str) -> str:
    slug = re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_").lower()
    return slug or "group"


def work_path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.work_dir, name)


def _ensure_work_dir(cfg: RunConfig) -> None:
    os.makedirs(cfg.work_dir, exist_ok=True)


def _write_manifest(cfg: RunConfig, name: str, manifest: dict) -> None:
    with open(work_path(cfg, name), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_split_corpus(cfg: RunConfig) -> tuple[list[SplitSeries], list[str]]:
    """Load, apply metadata, and split every loadable series.

    Series that fail to parse or are too short to split are skipped and
    reported, never fatal.
    """
    if not cfg.corpus:
        raise PipelineError("config sets no corpus path")
    if not os.path.exists(cfg.corpus):
        raise PipelineError(f"corpus file not found: {cfg.corpus}")
    series, problems = load_corpus_lenient(
        cfg.corpus, period=cfg.default_period, horizon=cfg.default_horizon
    )
    if cfg.metadata:
        if not os.path.exists(cfg.metadata):
            raise PipelineError(f"metadata file not found: {cfg.metadata}")
        series = apply_metadata(series, load_metadata(cfg.metadata))
    splits = []
    for s in series:
        try:
            splits.append(split_train_test(s))
        except Exception as exc:
            problems.append(str(exc))
            logger.warning("skipping series %s: %s", s.series_id, exc)
    if not splits:
        raise PipelineError("no usable series in corpus")
    return splits, problems


def _groups_of(splits: list[SplitSeries]) -> dict[str, str]:
    return {
        sp.train.series_id: frequency_group(
            sp.train.series_id, sp.train.period, sp.train.horizon
        )
        for sp in splits
    }


# ---------------------------------------------------------------------------
# featurize
# ---------------------------------------------------------------------------


def _extract_one(cfg: RunConfig, sp: SplitSeries):
    img = rp.encode_series(
        sp.train.values, eps=cfg.rp.eps, steps=cfg.rp.steps, size=cfg.rp.size
    )
    kps, desc = sift.extract(
        img,
        scales_per_octave=cfg.sift.scales_per_octave,
        sigma0=cfg.sift.sigma0,
        init_sigma=cfg.sift.init_sigma,
        contrast_threshold=cfg.sift.contrast_threshold,
        edge_ratio=cfg.sift.edge_ratio,
    )
    keep = [i for i in range(desc.shape[0]) if desc[i].any()]
    positions = np.array([[kps[i].x, kps[i].y] for i in keep], dtype=np.float64)
    return positions.reshape(-1, 2), desc[keep] if keep else desc[:0]


def featurize(cfg: RunConfig) -> dict:
    """Series -> image -> descriptors -> codes -> pooled feature vectors.

    Reuses ``codebook.bin`` from the work directory when present (so a
    model trained elsewhere can be applied); otherwise trains and saves
    one from this corpus's descriptors.
    """
    started = time.perf_counter()
    _ensure_work_dir(cfg)
    splits, problems = load_split_corpus(cfg)
    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        extracted = list(ex.map(lambda sp: _extract_one(cfg, sp), splits))
    zero_ids = [
        sp.train.series_id
        for sp, (_, desc) in zip(splits, extracted)
        if desc.shape[0] == 0
    ]
    all_desc = [d for _, d in extracted if d.shape[0] > 0]
    n_desc = int(sum(d.shape[0] for d in all_desc))

    cb_path = work_path(cfg, CODEBOOK_FILE)
    reused = os.path.exists(cb_path)
    if reused:
        book = cb.load_codebook(cb_path)
        if book.bases.shape[1] != sift.DESCRIPTOR_DIM:
            raise PipelineError(
                f"{cb_path}: codebook dimension {book.bases.shape[1]} "
                f"!= descriptor dimension {sift.DESCRIPTOR_DIM}"
            )
        logger.info("reusing codebook %s (K=%d)", cb_path, book.k)
    else:
        if not all_desc:
            raise PipelineError(
                "corpus produced no descriptors; cannot train a codebook"
            )
        descriptor_pool = cb.sample_descriptor_pool(
            np.vstack(all_desc), cap=cfg.codebook.pool_cap, seed=cfg.seed
        )
        book = cb.train_codebook(
            descriptor_pool,
            k=cfg.codebook.k,
            seed=cfg.seed,
            max_iters=cfg.codebook.max_iters,
            tol=cfg.codebook.tol,
        )
        cb.save_codebook(book, cb_path)

    uniform_fallbacks = 0
    features = np.zeros((len(splits), spm.N_REGIONS * book.k))
    def _code_one(item):
        positions, desc = item
        if desc.shape[0] == 0:
            return np.zeros(spm.N_REGIONS * book.k), 0
        codes = llc.code_all(desc, book, knn_k=cfg.llc.knn, lam=cfg.llc.lam)
        fallbacks = sum(1 for c in codes if c.uniform_fallback)
        return spm.pool(positions, codes, book.k, cfg.rp.size), fallbacks

    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        coded = list(ex.map(_code_one, extracted))
    for i, (vec, fallbacks) in enumerate(coded):
        features[i] = vec
        uniform_fallbacks += fallbacks

    ids = [sp.train.series_id for sp in splits]
    spm.write_features(work_path(cfg, FEATURES_FILE), ids, features, k=book.k)
    manifest = {
        "series_ok": len(splits),
        "skipped": problems,
        "zero_keypoint_ids": zero_ids,
        "descriptor_total": n_desc,
        "codebook_k": book.k,
        "codebook_reused": reused,
        "llc_uniform_fallbacks": uniform_fallbacks,
        "feature_dim": int(features.shape[1]),
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_manifest(cfg, "manifest_featurize.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def _runnable_pool(cfg: RunConfig) -> list[str]:
    methods = [m for m in cfg.pool if not m.startswith(forecasters.EXTERNAL_PREFIX)]
    unknown = [m for m in methods if m not in forecasters.IN_REPO_METHODS]
    if unknown:
        raise PipelineError(f"unknown pool methods: {unknown}")
    if metrics.REFERENCE_METHOD not in methods:
        methods.append(metrics.REFERENCE_METHOD)
    return methods


def forecast(cfg: RunConfig) -> dict:
    """Run the in-repo pool (always including the reference) plus externals."""
    started = time.perf_counter()
    _ensure_work_dir(cfg)
    splits, problems = load_split_corpus(cfg)
    methods = _runnable_pool(cfg)

    def _forecast_one(sp: SplitSeries):
        sets, failures = [], []
        for m in methods:
            try:
                sets.append(forecasters.run_method(m, sp.train))
            except Exception as exc:
                failures.append(f"{sp.train.series_id}/{m}: {exc}")
                logger.warning("forecast failure %s/%s: %s", sp.train.series_id, m, exc)
        return sets, failures

    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        per_series = list(ex.map(_forecast_one, splits))
    all_sets: list[forecasters.ForecastSet] = []
    failures: list[str] = []
    for sets, fails in per_series:
        all_sets.extend(sets)
        failures.extend(fails)

    horizons = {sp.train.series_id: sp.train.horizon for sp in splits}
    rejected_external: list[str] = []
    for path in cfg.external_forecasts:
        if not os.path.exists(path):
            raise PipelineError(f"external forecast file not found: {path}")
        sets, rejected = forecasters.ingest_external_forecasts(path, horizons)
        all_sets.extend(sets)
        rejected_external.extend(rejected)

    forecasters.write_forecast_csv(work_path(cfg, FORECASTS_FILE), all_sets)
    fallback_counts: dict[str, int] = {}
    for fs in all_sets:
        if fs.fallback:
            fallback_counts[fs.method_id] = fallback_counts.get(fs.method_id, 0) + 1
    manifest = {
        "series_ok": len(splits),
        "skipped": problems,
        "methods": methods
        + sorted({fs.method_id for fs in all_sets} - set(methods)),
        "rows": len(all_sets),
        "failures": failures,
        "rejected_external": rejected_external,
        "fallback_counts": fallback_counts,
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_manifest(cfg, "manifest_forecast.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _read_pipeline_inputs(cfg: RunConfig, splits: list[SplitSeries]):
    feat_path = work_path(cfg, FEATURES_FILE)
    fc_path = work_path(cfg, FORECASTS_FILE)
    if not os.path.exists(feat_path):
        raise PipelineError(f"{feat_path} missing; run featurize first")
    if not os.path.exists(fc_path):
        raise PipelineError(f"{fc_path} missing; run forecast first")
    ids, matrix, k, regions = spm.read_features(feat_path)
    row_of = {sid: i for i, sid in enumerate(ids)}
    missing = [sp.train.series_id for sp in splits if sp.train.series_id not in row_of]
    if missing:
        raise PipelineError(
            f"features missing for {len(missing)} series (first: {missing[:3]}); "
            "re-run featurize on this corpus"
        )
    horizons = {sp.train.series_id: sp.train.horizon for sp in splits}
    sets, rejected = forecasters.read_forecast_csv(fc_path, horizons)
    if rejected:
        logger.warning("%d forecast rows rejected on read", len(rejected))
    return ids, matrix, row_of, sets, rejected


def _combine_pool(cfg: RunConfig, lm: metrics.LossMatrix) -> list[str]:
    pool = list(cfg.pool)
    missing = [m for m in pool if m not in lm.method_ids]
    if missing:
        raise PipelineError(f"pool methods without forecasts: {missing}")
    return pool


def _zero_tree_model(n_features, pool, hp, seed) -> combiner.WeightModel:
    return combiner.WeightModel(
        n_features=n_features,
        method_ids=tuple(pool),
        hyperparams=hp,
        seed=seed,
        trees=[],
        loss_curve=np.zeros(0),
    )


def train_model(cfg: RunConfig) -> dict:
    """Fit weight models from saved features and forecasts.

    One model per frequency group by default (``model_<group>.bin``), or a
    single ``model_all.bin``. Groups too small or degenerate to train get
    a zero-tree (uniform weights) model, reported in the manifest.
    """
    started = time.perf_counter()
    _ensure_work_dir(cfg)
    splits, _ = load_split_corpus(cfg)
    ids, matrix, row_of, sets, _ = _read_pipeline_inputs(cfg, splits)
    lm = metrics.build_loss_matrix(splits, sets)
    metrics.write_loss_csv(work_path(cfg, LOSSES_FILE), lm)
    pool = _combine_pool(cfg, lm)
    cols = [lm.column(m) for m in pool]
    owa = lm.owa[:, cols]
    x = np.vstack([matrix[row_of[sid]] for sid in lm.series_ids])
    groups = _groups_of(splits)

    if cfg.combiner.per_group:
        labels = sorted({groups[sid] for sid in lm.series_ids})
        partitions = {
            label: np.array([i for i, sid in enumerate(lm.series_ids) if groups[sid] == label])
            for label in labels
        }
    else:
        partitions = {"all": np.arange(len(lm.series_ids))}

    manifest: dict = {
        "pool": pool,
        "per_group": cfg.combiner.per_group,
        "groups": {},
        "losses_file": LOSSES_FILE,
    }
    for label, idx in partitions.items():
        slug = _group_slug(label)
        hp = cfg.combiner.hyperparams()
        entry: dict = {"series": int(idx.size)}
        cv_trials = None
        try:
            if cfg.combiner.cv_budget > 0:
                hp, cv_trials = combiner.cv_search(
                    x[idx],
                    owa[idx],
                    folds=cfg.combiner.cv_folds,
                    budget=cfg.combiner.cv_budget,
                    seed=cfg.seed,
                )
            model = combiner.train(x[idx], owa[idx], hp, seed=cfg.seed, method_ids=pool)
            entry["rounds"] = model.n_rounds
            entry["final_loss"] = (
                float(model.loss_curve[-1]) if model.loss_curve.size else None
            )
        except combiner.CombinerError as exc:
            logger.warning("group %s: %s; using uniform weights", label, exc)
            model = _zero_tree_model(x.shape[1], pool, hp, cfg.seed)
            entry["rounds"] = 0
            entry["fallback"] = str(exc)
        combiner.save_model(work_path(cfg, f"model_{slug}.bin"), model)
        entry["model_file"] = f"model_{slug}.bin"
        if model.loss_curve.size:
            curve_name = f"loss_curve_{slug}.csv"
            with open(work_path(cfg, curve_name), "w") as fh:
                fh.write("round,loss\n")
                for i, v in enumerate(model.loss_curve):
                    fh.write(f"{i},{float(v)!r}\n")
            entry["loss_curve_file"] = curve_name
        if cv_trials is not None:
            cv_name = f"cv_report_{slug}.csv"
            with open(work_path(cfg, cv_name), "w") as fh:
                fh.write(
                    "trial,max_depth,learning_rate,subsample_rows,"
                    "subsample_cols,rounds,mean_loss\n"
                )
                for i, t in enumerate(cv_trials):
                    p = t.params
                    fh.write(
                        f"{i},{p.max_depth},{p.learning_rate!r},{p.subsample_rows!r},"
                        f"{p.subsample_cols!r},{p.rounds},{t.mean_loss!r}\n"
                    )
            entry["cv_report_file"] = cv_name
            entry["cv_best"] = {
                "max_depth": hp.max_depth,
                "learning_rate": hp.learning_rate,
                "subsample_rows": hp.subsample_rows,
                "subsample_cols": hp.subsample_cols,
                "rounds": hp.rounds,
            }
        manifest["groups"][label] = entry
    manifest["elapsed_s"] = round(time.perf_counter() - started, 3)
    _write_manifest(cfg, "manifest_train.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _load_models(cfg: RunConfig) -> dict[str, combiner.WeightModel]:
    models = {}
    for path in sorted(glob.glob(work_path(cfg, "model_*.bin"))):
        slug = os.path.basename(path)[len("model_") : -len(".bin")]
        models[slug] = combiner.load_model(path)
    if not models:
        raise PipelineError(
            f"no model_*.bin in {cfg.work_dir}; run train first (or copy models in)"
        )
    return models


def _model_for(models: dict, label: str) -> tuple[combiner.WeightModel | None, str]:
    slug = _group_slug(label)
    if slug in models:
        return models[slug], slug
    if "all" in models:
        return models["all"], "all"
    return None, ""


def evaluate(cfg: RunConfig) -> tuple[metrics.Report, dict]:
    """Score the combination against every pool method on held-out tails.

    Needs ``features.bin``, ``forecasts.csv``, and model files in the work
    directory. Series whose group has no model (and with no ``model_all``)
    fall back to uniform weights and are counted in the manifest.
    """
    started = time.perf_counter()
    _ensure_work_dir(cfg)
    splits, problems = load_split_corpus(cfg)
    ids, matrix, row_of, sets, _ = _read_pipeline_inputs(cfg, splits)
    models = _load_models(cfg)
    groups = _groups_of(splits)
    by_key = {(fs.series_id, fs.method_id): fs for fs in sets}

    uniform_fallback_ids: list[str] = []
    combo_sets: list[forecasters.ForecastSet] = []
    for sp in splits:
        sid = sp.train.series_id
        model, _ = _model_for(models, groups[sid])
        if model is None:
            pool = list(cfg.pool)
            weights = np.full(len(pool), 1.0 / len(pool))
            uniform_fallback_ids.append(sid)
        else:
            pool = list(model.method_ids)
            weights = combiner.predict_weights(model, matrix[row_of[sid]])
        try:
            members = [by_key[(sid, m)] for m in pool]
        except KeyError as exc:
            raise PipelineError(
                f"forecasts.csv lacks {exc} needed for the combination"
            ) from None
        values = combiner.combine_forecasts(weights, members)
        combo_sets.append(
            forecasters.ForecastSet(sid, COMBINATION_ID, sp.train.horizon, values)
        )

    lm = metrics.build_loss_matrix(splits, sets + combo_sets)
    metrics.write_loss_csv(work_path(cfg, LOSSES_FILE), lm)
    report = metrics.aggregate(lm, groups)
    _write_report_csv(work_path(cfg, REPORT_FILE), report)
    combo_total = report.get("Total", COMBINATION_ID, "owa")
    manifest = {
        "series_ok": len(splits),
        "skipped": problems,
        "methods": list(lm.method_ids),
        "flags": len(lm.flags),
        "uniform_weight_series": uniform_fallback_ids,
        "combination_total_owa": combo_total,
        "report_file": REPORT_FILE,
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_manifest(cfg, "manifest_evaluate.json", manifest)
    return report, manifest


_METRIC_COLUMNS = ("smape", "mase", "owa", "owa_group")
_METRIC_LABELS = {"smape": "sMAPE", "mase": "MASE", "owa": "OWA", "owa_group": "OWA_group"}


def _write_report_csv(path, report: metrics.Report) -> None:
    """One row per (method, metric); one column per group plus Total."""
    with open(path, "w", newline="") as fh:
        fh.write("method,metric," + ",".join(report.groups) + "\n")
        for m in report.method_ids:
            for metric in _METRIC_COLUMNS:
                cells = []
                for g in report.groups:
                    v = report.get(g, m, metric)
                    cells.append("" if isinstance(v, float) and np.isnan(v) else repr(v))
                fh.write(f"{m},{_METRIC_LABELS[metric]}," + ",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# plot / project
# ---------------------------------------------------------------------------


def plot(cfg: RunConfig) -> dict:
    """Render each series' training-part image to plots/<id>.<ext>."""
    started = time.perf_counter()
    _ensure_work_dir(cfg)
    splits, problems = load_split_corpus(cfg)
    plot_dir = work_path(cfg, "plots")
    os.makedirs(plot_dir, exist_ok=True)
    written = []
    for sp in splits:
        img = rp.encode_series(
            sp.train.values, eps=cfg.rp.eps, steps=cfg.rp.steps, size=cfg.rp.size
        )
        name = f"{sp.train.series_id}.{cfg.image_format}"
        rp.save_image(img, os.path.join(plot_dir, name))
        written.append(name)
    manifest = {
        "images": written,
        "skipped": problems,
        "directory": "plots",
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_manifest(cfg, "manifest_plot.json", manifest)
    return manifest


def pca_project(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-2 principal components: (coords, components, explained variances).

    Component signs are fixed by making each component's largest-magnitude
    loading positive, so output is reproducible across runs.
    """
    x = np.asarray(matrix, dtype=np.float64)
    centered = x - x.mean(axis=0, keepdims=True)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    n_comp = min(2, vt.shape[0])
    comps = vt[:n_comp].copy()
    for i in range(n_comp):
        pivot = np.argmax(np.abs(comps[i]))
        if comps[i, pivot] < 0:
            comps[i] = -comps[i]
    if n_comp < 2:
        comps = np.vstack([comps, np.zeros((2 - n_comp, x.shape[1]))])
        s = np.concatenate([s, np.zeros(2 - n_comp)])
    coords = centered @ comps.T
    denom = max(x.shape[0] - 1, 1)
    variances = (s[:2] ** 2) / denom
    return coords, comps, variances


def project(cfg: RunConfig) -> dict:
    """Write a 2-d PCA of the feature file with group labels for plotting."""
    started = time.perf_counter()
    _ensure_work_dir(cfg)
    feat_path = work_path(cfg, FEATURES_FILE)
    if not os.path.exists(feat_path):
        raise PipelineError(f"{feat_path} missing; run featurize first")
    ids, matrix, _, _ = spm.read_features(feat_path)
    splits, _ = load_split_corpus(cfg)
    groups = _groups_of(splits)
    coords, _, variances = pca_project(matrix)
    out_path = work_path(cfg, PROJECTION_FILE)
    with open(out_path, "w", newline="") as fh:
        fh.write("id,group,pc1,pc2\n")
        for i, sid in enumerate(ids):
            g = groups.get(sid, "Other")
            fh.write(f"{sid},{g},{float(coords[i, 0])!r},{float(coords[i, 1])!r}\n")
    manifest = {
        "series": len(ids),
        "explained_variance": [float(v) for v in variances],
        "projection_file": PROJECTION_FILE,
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_manifest(cfg, "manifest_project.json", manifest)
    return manifest
