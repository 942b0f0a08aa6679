"""End-to-end acceptance checks.

Each test covers one numbered criterion, asserts its stated tolerance and
runtime budget, and prints a single visible PASS line (failures surface
through pytest itself). The suite is self-contained: helpers are inlined
rather than imported from the unit-test files.
"""

import math
import os
import time

import numpy as np
import pytest

from imagecast import (
    codebook as cb,
    combiner,
    experiments,
    forecasters,
    llc,
    metrics,
    pipeline,
    rp,
    sift,
    spm,
    synthetic,
)
from imagecast.combiner import HyperParams
from imagecast.config import RunConfig
from imagecast.series import split_train_test, write_corpus, write_metadata


@pytest.fixture
def announce(capsys):
    def _p(line: str) -> None:
        with capsys.disabled():
            print(line)

    return _p


def _blob(size, cx, cy, sigma, amp=1.0):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    return amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma * sigma))


def _blob_field(seed, size=128, n=6):
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    for _ in range(n):
        cx, cy = rng.uniform(24, size - 24, 2)
        img += _blob(size, cx, cy, rng.uniform(2.0, 5.0), rng.uniform(0.4, 0.9))
    return np.clip(img, 0.0, 1.0)


def _circ_deg(a, b):
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def test_criterion_01_naive2_anchor(announce):
    started = time.perf_counter()
    series = synthetic.yearly_like_corpus(n_series=1000, seed=1)
    splits = [split_train_test(s) for s in series]
    sets = [forecasters.run_method("naive2", sp.train) for sp in splits]
    lm = metrics.build_loss_matrix(splits, sets)
    col = lm.column("naive2")
    worst = float(np.abs(lm.owa[:, col] - 1.0).max())
    assert worst <= 1e-9
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    announce(
        f"[criterion 01] PASS: naive2 per-series OWA within {worst:.2e} of 1.0 "
        f"on 1000 series ({elapsed:.1f}s)"
    )


def test_criterion_02_metric_hand_examples(announce):
    assert metrics.smape(np.array([100.0]), np.array([110.0])) == pytest.approx(
        100.0 * 2.0 * 10.0 / 210.0, abs=1e-9
    )
    assert metrics.smape(np.array([5.0, 7.0]), np.array([5.0, 7.0])) == pytest.approx(
        0.0, abs=1e-9
    )
    assert metrics.smape(np.array([0.0]), np.array([0.0])) == pytest.approx(
        0.0, abs=1e-9
    )
    train = np.arange(1.0, 11.0)
    assert metrics.mase(
        train, np.array([11.0, 12.0]), np.array([10.0, 10.0]), 1
    ) == pytest.approx(1.5, abs=1e-9)
    assert metrics.mase(train, np.array([11.0]), np.array([11.0]), 1) == pytest.approx(
        0.0, abs=1e-9
    )
    owa, flags = metrics.owa_contrib(4.0, 2.0, 4.0, 2.0)
    assert owa == pytest.approx(1.0, abs=1e-9) and not flags
    owa, flags = metrics.owa_contrib(2.0, 1.0, 4.0, 2.0)
    assert owa == pytest.approx(0.5, abs=1e-9) and not flags
    announce("[criterion 02] PASS: sMAPE/MASE/OWA hand examples match to 1e-9")


def _pg_solve(x, bases_sel, r, iters=200_000, ftol=1e-15):
    k = bases_sel.shape[0]
    c = np.full(k, 1.0 / k)

    def objective(v):
        resid = x - v @ bases_sel
        return float(resid @ resid + r * (v @ v))

    prev = objective(c)
    for _ in range(iters):
        resid = x - c @ bases_sel
        grad = -2.0 * (bases_sel @ resid) + 2.0 * r * c
        gt = grad - grad.mean()
        hg = 2.0 * (bases_sel @ (gt @ bases_sel) + r * gt)
        denom = float(gt @ hg)
        if denom <= 0.0:
            break
        c = c - (float(grad @ gt) / denom) * gt
        cur = objective(c)
        if prev - cur < ftol * max(1.0, prev):
            prev = cur
            break
        prev = cur
    return c, prev


def test_criterion_03_llc_oracle(announce):
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_gap = worst_sum = 0.0
    for _ in range(100):
        bases = rng.normal(0, 1, (16, 8))
        x = rng.normal(0, 1, 8)
        book = cb.Codebook(bases=bases, seed=0)
        out = llc.code(x, book, knn_k=3, lam=llc.DEFAULT_LAMBDA)
        worst_sum = max(worst_sum, abs(out.coefficients.sum() - 1.0))
        sel = bases[out.indices]
        z = sel - x
        r = llc.DEFAULT_LAMBDA * float(np.trace(z @ z.T))
        _, f_pg = _pg_solve(x, sel, r)
        resid = x - out.coefficients @ sel
        f_mod = float(resid @ resid + r * (out.coefficients @ out.coefficients))
        gap = abs(f_mod - f_pg) / max(1.0, f_pg)
        worst_gap = max(worst_gap, gap)
        assert gap <= 1e-6
        assert abs(out.coefficients.sum() - 1.0) <= 1e-12
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    announce(
        f"[criterion 03] PASS: LLC matches projected-gradient objective "
        f"(worst rel gap {worst_gap:.2e}, worst sum error {worst_sum:.2e}, "
        f"{elapsed:.1f}s)"
    )


def test_criterion_04_gradient_finite_differences(announce):
    started = time.perf_counter()
    rng = np.random.default_rng(99)
    step = 1e-5
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(2, 10))
        p = rng.normal(0, 2, m)
        o = rng.uniform(0, 3, m)
        g = combiner.gradient(p, o)
        fd = np.empty(m)
        for j in range(m):
            e = np.zeros(m)
            e[j] = step
            fd[j] = (combiner.loss(p + e, o) - combiner.loss(p - e, o)) / (2 * step)
        # relative tolerance needs an absolute floor: g_m crosses zero
        # exactly whenever O_m equals the weighted loss
        err = np.abs(fd - g)
        assert np.all(err <= 1e-9 + 1e-6 * np.abs(g))
        worst = max(worst, float(err.max() / max(float(np.abs(g).max()), 1e-9)))
    assert worst <= 1e-6
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    announce(
        f"[criterion 04] PASS: gradient matches finite differences "
        f"(worst relative error {worst:.2e} over 1000 cases, {elapsed:.1f}s)"
    )


def test_criterion_05_boosting_monotonicity(announce):
    rng = np.random.default_rng(7)
    x = rng.normal(0, 1, (200, 8))
    o = rng.uniform(0.1, 2.0, (200, 4))
    hp = HyperParams(
        max_depth=6,
        learning_rate=0.05,
        subsample_rows=1.0,
        subsample_cols=1.0,
        rounds=100,
    )
    model = combiner.train(x, o, hp, seed=0)
    curve = model.loss_curve
    assert curve.shape == (101,)
    steps = np.diff(curve)
    assert np.all(steps <= 1e-12)
    announce(
        f"[criterion 05] PASS: 100-round loss curve non-increasing "
        f"(largest step {steps.max():.2e}, start {curve[0]:.4f} -> end {curve[-1]:.4f})"
    )


def test_criterion_07_feature_shape(announce):
    pool = np.random.default_rng(0).uniform(0.0, 0.2, (2000, sift.DESCRIPTOR_DIM))
    book = cb.train_codebook(pool, k=200, seed=0)
    assert book.k == 200
    img = _blob_field(11)
    kps, desc = sift.extract(img)
    positions = np.array([[k.x, k.y] for k in kps])
    codes = llc.code_all(desc, book)
    vec = spm.pool(positions, codes, book.k, 128)
    assert vec.shape == (4200,)
    # constant input: no keypoints anywhere, feature must be exact zeros
    flat_img = rp.encode_series(np.ones(50))
    kps0, desc0 = sift.extract(flat_img.pixels)
    assert kps0 == []
    vec0 = spm.pool(np.zeros((0, 2)), [], book.k, 128)
    assert vec0.shape == (4200,)
    assert np.all(vec0 == 0.0)
    announce(
        "[criterion 07] PASS: K=200 features have length 4200; "
        "zero-keypoint image pools to the zero vector"
    )


def test_criterion_08_sift_covariance_suite(announce):
    started = time.perf_counter()
    size, shift = 128, 8

    img = _blob_field(17, size=size)
    moved = np.zeros_like(img)
    moved[shift:, shift:] = img[:-shift, :-shift]
    kps_a = sift.detect_keypoints(sift.build_dog_pyramid(img))
    kps_b = sift.detect_keypoints(sift.build_dog_pyramid(moved))
    pts_b = np.array([[k.x, k.y] for k in kps_b])
    interior = [
        k
        for k in kps_a
        if 16 <= k.x < size - 16 - shift and 16 <= k.y < size - 16 - shift
    ]
    assert interior
    matched = sum(
        1
        for k in interior
        if np.linalg.norm(pts_b - [k.x + shift, k.y + shift], axis=1).min() <= 1.0
    )
    assert matched >= 0.8 * len(interior)

    img = _blob_field(23, size=size)
    kps_a, _ = sift.extract(img)
    kps_r, _ = sift.extract(np.rot90(img))
    pts_r = np.array([[k.x, k.y] for k in kps_r])
    interior = [k for k in kps_a if 16 <= k.x < size - 16 and 16 <= k.y < size - 16]
    rot_matched = rot_ok = 0
    for k in interior:
        d = np.linalg.norm(pts_r - [k.y, size - 1.0 - k.x], axis=1)
        near = np.flatnonzero(d <= 1.0)
        if near.size:
            rot_matched += 1
            want = math.degrees(k.orientation) + 90.0
            if any(
                _circ_deg(math.degrees(kps_r[j].orientation), want) <= 5.0
                for j in near
            ):
                rot_ok += 1
    assert rot_matched >= 0.8 * len(interior)
    assert rot_ok >= 0.9 * rot_matched

    img = _blob_field(31) * 0.55
    kps_a, desc_a = sift.extract(img)
    kps_s, desc_s = sift.extract(1.7 * img)
    pts_s = np.array([[k.x, k.y, k.orientation] for k in kps_s])
    worst_desc = 0.0
    hits = 0
    for i, k in enumerate(kps_a):
        d = np.abs(pts_s - [k.x, k.y, k.orientation]).sum(axis=1)
        j = int(np.argmin(d))
        if d[j] < 1e-6:
            hits += 1
            worst_desc = max(worst_desc, float(np.abs(desc_a[i] - desc_s[j]).max()))
    assert hits == len(kps_a)
    assert worst_desc <= 1e-4

    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    announce(
        f"[criterion 08] PASS: translation +-1px, rotation +-5deg, intensity "
        f"invariance {worst_desc:.2e} <= 1e-4 ({elapsed:.1f}s)"
    )


def test_criterion_09_rp_properties(announce):
    started = time.perf_counter()
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(10, 80))
        y = rng.normal(0, 1, n) * rng.uniform(0.5, 100) + rng.uniform(-50, 50)
        x = rp.normalize(y)
        rm = rp.recurrence_matrix(x)
        cells = rm.cells
        assert np.array_equal(cells, cells.T)
        assert np.all(np.diag(cells) == 0)
        d = np.abs(x[:, None] - x[None, :])
        assert np.all(cells[d >= rm.eps] == rm.steps)
        assert np.all(cells <= rm.steps)
        a, b = rng.uniform(0.1, 10), rng.uniform(-100, 100)
        rm2 = rp.recurrence_matrix(rp.normalize(a * y + b))
        assert np.array_equal(cells, rm2.cells)
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    announce(
        f"[criterion 09] PASS: symmetry, zero diagonal, eps clipping, affine "
        f"invariance on 1000 series ({elapsed:.1f}s)"
    )


def test_criterion_06_three_class_learning(announce, tmp_path):
    started = time.perf_counter()
    summary = experiments.three_class_experiment(str(tmp_path / "tc"), seed=0)
    assert summary["n_series"] == 600
    ratio = summary["ratio"]
    assert ratio <= 0.8
    elapsed = time.perf_counter() - started
    assert elapsed < 300.0
    announce(
        f"[criterion 06] PASS: held-out weighted loss "
        f"{summary['held_out_weighted_loss']:.4f} vs uniform "
        f"{summary['held_out_uniform_loss']:.4f} (ratio {ratio:.3f} <= 0.8, "
        f"{elapsed:.0f}s)"
    )


def test_criterion_10_yearly_benchmark(announce, tmp_path):
    started = time.perf_counter()
    summary = experiments.yearly_benchmark(str(tmp_path / "yb"), seed=0)
    combo = summary["combination_owa"]
    worst = summary["worst_member_owa"]
    assert summary["naive2_owa"] == pytest.approx(1.0, abs=1e-9)
    assert combo < 1.0
    assert combo <= worst
    elapsed = time.perf_counter() - started
    assert elapsed <= 1800.0
    announce(
        f"[criterion 10] PASS: {summary['source']} corpus, combination OWA "
        f"{combo:.4f} < 1.0 and <= worst member {worst:.4f} ({elapsed:.0f}s)"
    )


def test_criterion_11_determinism(announce, tmp_path):
    started = time.perf_counter()
    series, _ = synthetic.three_class_corpus(n_series=30, seed=5)
    corpus = tmp_path / "corpus.csv"
    metadata = tmp_path / "meta.csv"
    write_corpus(corpus, series)
    write_metadata(metadata, series)

    def run(work_dir) -> None:
        cfg = RunConfig(
            corpus=str(corpus),
            metadata=str(metadata),
            work_dir=str(work_dir),
            seed=0,
        )
        cfg.codebook.k = 32
        cfg.combiner.rounds = 20
        cfg.combiner.per_group = False
        pipeline.featurize(cfg)
        pipeline.forecast(cfg)
        pipeline.train_model(cfg)
        pipeline.evaluate(cfg)

    run(tmp_path / "run_a")
    run(tmp_path / "run_b")
    names = [
        pipeline.FEATURES_FILE,
        pipeline.CODEBOOK_FILE,
        pipeline.FORECASTS_FILE,
        pipeline.LOSSES_FILE,
        "model_all.bin",
        "loss_curve_all.csv",
        pipeline.REPORT_FILE,
    ]
    for name in names:
        a = open(tmp_path / "run_a" / name, "rb").read()
        b = open(tmp_path / "run_b" / name, "rb").read()
        assert a == b, f"{name} differs between identically-seeded runs"
    elapsed = time.perf_counter() - started
    announce(
        f"[criterion 11] PASS: {len(names)} artifacts byte-identical across "
        f"two runs ({elapsed:.0f}s)"
    )
