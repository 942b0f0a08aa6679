"""Reusable desk-scale experiments behind the scripts in scripts/.

Both experiments return plain dicts (also written as JSON next to their
artifacts) so tests and scripts share one implementation.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import time

import numpy as np

from . import combiner, metrics, pipeline, spm, synthetic
from .config import RunConfig
from .series import TimeSeries, load_corpus, write_corpus, write_metadata

logger = logging.getLogger(__name__)

M4_YEARLY_ENV = "IMAGECAST_M4_YEARLY"
THREE_CLASS_POOL = ("naive", "snaive", "rw_drift", "naive2")


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def three_class_experiment(
    out_dir: str,
    n_series: int = 600,
    seed: int = 0,
    codebook_k: int = 200,
    rounds: int = 100,
    holdout_fraction: float = 1.0 / 3.0,
) -> dict:
    """Train on part of the three-class corpus, score weights on the rest.

    The pool is restricted to the three constructed winners plus the
    reference. Reports the held-out mean weighted loss against the
    uniform-weight baseline.
    """
    started = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    series, _ = synthetic.three_class_corpus(n_series=n_series, seed=seed)
    corpus_path = os.path.join(out_dir, "corpus.csv")
    meta_path = os.path.join(out_dir, "metadata.csv")
    write_corpus(corpus_path, series)
    write_metadata(meta_path, series)

    cfg = RunConfig(
        corpus=corpus_path,
        metadata=meta_path,
        work_dir=out_dir,
        pool=THREE_CLASS_POOL,
        seed=seed,
    )
    cfg.codebook.k = codebook_k
    cfg.combiner.rounds = rounds
    cfg.combiner.per_group = False

    pipeline.featurize(cfg)
    pipeline.forecast(cfg)

    splits, _ = pipeline.load_split_corpus(cfg)
    ids, matrix, row_of, sets, _ = pipeline._read_pipeline_inputs(cfg, splits)
    lm = metrics.build_loss_matrix(splits, sets)
    cols = [lm.column(m) for m in cfg.pool]
    owa = lm.owa[:, cols]
    x = np.vstack([matrix[row_of[sid]] for sid in lm.series_ids])

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(lm.series_ids))
    n_held = max(1, int(round(holdout_fraction * len(perm))))
    held, tr = perm[:n_held], perm[n_held:]

    model = combiner.train(
        x[tr], owa[tr], cfg.combiner.hyperparams(), seed=seed, method_ids=cfg.pool
    )
    weights = combiner.predict_weights(model, x[held])
    weighted = float(np.mean(np.sum(weights * owa[held], axis=1)))
    uniform = float(np.mean(owa[held].mean(axis=1)))
    summary = {
        "n_series": len(lm.series_ids),
        "n_train": int(tr.size),
        "n_held_out": int(held.size),
        "pool": list(cfg.pool),
        "held_out_weighted_loss": weighted,
        "held_out_uniform_loss": uniform,
        "ratio": weighted / uniform,
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_json(os.path.join(out_dir, "three_class_summary.json"), summary)
    return summary


def _load_yearly_corpus(n_series: int, seed: int) -> tuple[list[TimeSeries], str]:
    """Competition yearly data when pointed at a file, else synthetic."""
    path = os.environ.get(M4_YEARLY_ENV, "")
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"{M4_YEARLY_ENV} points at missing file: {path}")
        series = load_corpus(path, period=1, horizon=synthetic.YEARLY_HORIZON)
        usable = [s for s in series if len(s) >= 2 * synthetic.YEARLY_HORIZON + 2]
        if len(usable) > n_series:
            rng = np.random.default_rng(seed)
            idx = np.sort(rng.choice(len(usable), size=n_series, replace=False))
            usable = [usable[i] for i in idx]
        return usable, f"file:{path}"
    return synthetic.yearly_like_corpus(n_series=n_series, seed=seed), "synthetic"


def yearly_benchmark(out_dir: str, n_series: int = 1000, seed: int = 0) -> dict:
    """Two-phase yearly experiment: meta-train on truncated series, evaluate on full.

    Phase A truncates every series by its horizon, featurizes (training
    the codebook), forecasts, and fits the weight model. Phase B copies
    the codebook and model into a second work directory, re-runs
    featurize/forecast on the full series, and scores the combination
    against the pool on the final held-out tails.
    """
    started = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    full, source = _load_yearly_corpus(n_series, seed)
    h = synthetic.YEARLY_HORIZON
    truncated = [
        TimeSeries(s.series_id, s.values[:-h], s.period, s.horizon)
        for s in full
        if len(s) >= 2 * h + 2
    ]
    if len(truncated) < len(full):
        logger.warning(
            "dropped %d series too short for the two-phase protocol",
            len(full) - len(truncated),
        )
        kept = {s.series_id for s in truncated}
        full = [s for s in full if s.series_id in kept]

    meta_dir = os.path.join(out_dir, "meta")
    eval_dir = os.path.join(out_dir, "eval")
    os.makedirs(meta_dir, exist_ok=True)
    os.makedirs(eval_dir, exist_ok=True)

    meta_cfg = RunConfig(
        corpus=os.path.join(meta_dir, "corpus.csv"),
        metadata=os.path.join(meta_dir, "metadata.csv"),
        work_dir=meta_dir,
        seed=seed,
    )
    write_corpus(meta_cfg.corpus, truncated)
    write_metadata(meta_cfg.metadata, truncated)
    pipeline.featurize(meta_cfg)
    pipeline.forecast(meta_cfg)
    train_manifest = pipeline.train_model(meta_cfg)

    eval_cfg = RunConfig(
        corpus=os.path.join(eval_dir, "corpus.csv"),
        metadata=os.path.join(eval_dir, "metadata.csv"),
        work_dir=eval_dir,
        seed=seed,
    )
    write_corpus(eval_cfg.corpus, full)
    write_metadata(eval_cfg.metadata, full)
    shutil.copy(
        pipeline.work_path(meta_cfg, pipeline.CODEBOOK_FILE),
        pipeline.work_path(eval_cfg, pipeline.CODEBOOK_FILE),
    )
    for entry in train_manifest["groups"].values():
        src = pipeline.work_path(meta_cfg, entry["model_file"])
        shutil.copy(src, pipeline.work_path(eval_cfg, entry["model_file"]))
    pipeline.featurize(eval_cfg)
    pipeline.forecast(eval_cfg)
    report, eval_manifest = pipeline.evaluate(eval_cfg)

    member_owa = {
        m: report.get("Total", m, "owa")
        for m in report.method_ids
        if m != pipeline.COMBINATION_ID
    }
    pool_members = {m: v for m, v in member_owa.items()}
    summary = {
        "source": source,
        "n_series": len(full),
        "combination_owa": report.get("Total", pipeline.COMBINATION_ID, "owa"),
        "member_owa": pool_members,
        "worst_member_owa": max(pool_members.values()),
        "naive2_owa": report.get("Total", "naive2", "owa"),
        "uniform_weight_series": len(eval_manifest["uniform_weight_series"]),
        "elapsed_s": round(time.perf_counter() - started, 3),
    }
    _write_json(os.path.join(out_dir, "yearly_summary.json"), summary)
    return summary
