"""Acceptance suite.

One test per criterion, each printing an ``ACCEPTANCE <k> ...: PASS`` line
(run with ``pytest -s`` to see the lines as they pass; a failing criterion
prints FAIL before the assertion error).

 1. Normalized-Laplacian spectrum within [-1e-9, 2+1e-9] on 1000 random
    weighted graphs (n <= 12) in under 10 s.
 2. Chebyshev filtering matches dense spectral filtering to 1e-8 relative
    error on 200 random instances (n <= 6, K <= 5) in under 10 s.
 3. Analytic gradients match central finite differences (h=1e-5) within
    relative error 1e-4 (absolute floor 1e-7) on 50 random toy models in
    under 60 s.
 4. Metric exactness: the hand case to 1e-12 plus RMSE^2=MSE and MAE<=RMSE
    on 1000 random vectors.
 5. Pipeline oracles: IQR hand case, 133->85 occupancy drop, collinearity
    pruning post-condition and idempotence, normalization round-trip and
    leakage guard under test-row perturbation.
 6. End-to-end synthetic run (seed 7, 10 nodes, 20 days, reference
    hyperparameters, M=10, N=5, <= 50 epochs): test-day raw-count MSE at
    least 10% below both the persistence and the historical-average
    baseline, in under 15 minutes.
 7. Convergence shape on the same run: epoch-10 training loss below half
    the epoch-1 training loss.
 8. Sweep machinery over lookbacks {10..60} and horizons {1..5} emits
    well-formed reports; horizon monotonicity is a warn-only check.
 9. Determinism: two identical --serial runs produce byte-identical
    synthetic data, training histories, checkpoints, and reports.
"""

import json
import os
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from conftest import random_weight_matrix

ROOT = Path(__file__).resolve().parents[1]


def report(criterion, ok, detail=""):
    import conftest

    status = "PASS" if ok else "FAIL"
    line = f"ACCEPTANCE {criterion}: {status}  {detail}"
    print("\n" + line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, f"criterion {criterion} failed: {detail}"


def run_cli(*args):
    env = dict(os.environ)
    env["PYTHONPATH"] = str(ROOT / "src")
    return subprocess.run(
        [sys.executable, "-m", "mgcnn", *map(str, args)],
        capture_output=True,
        text=True,
        env=env,
        cwd=ROOT,
    )


# ---------------------------------------------------------------------------
# criteria 1-2: spectral core


def test_criterion_1_spectral_bound():
    from mgcnn.spectral import normalized_laplacian

    rng = np.random.default_rng(1)
    started = time.perf_counter()
    lo, hi = np.inf, -np.inf
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        W = random_weight_matrix(rng, n, density=float(rng.uniform(0.1, 1.0)))
        eig = np.linalg.eigvalsh(normalized_laplacian(W).matrix)
        lo, hi = min(lo, eig.min()), max(hi, eig.max())
    elapsed = time.perf_counter() - started
    ok = lo >= -1e-9 and hi <= 2.0 + 1e-9 and elapsed < 10.0
    report(
        "1 spectral-bound",
        ok,
        f"eigenvalues in [{lo:.2e}, {hi:.9f}], {elapsed:.1f}s for 1000 graphs",
    )


def test_criterion_2_chebyshev_equals_spectral_filter():
    from mgcnn.spectral import chebyshev_basis, normalized_laplacian, scale_laplacian

    def cheb_scalar(k, x):
        prev, cur = np.ones_like(x), x
        if k == 0:
            return prev
        for _ in range(k - 1):
            prev, cur = cur, 2 * x * cur - prev
        return cur

    rng = np.random.default_rng(2)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        K = int(rng.integers(1, 6))
        W = random_weight_matrix(rng, n, density=1.0)
        L = normalized_laplacian(W).matrix
        Lt = scale_laplacian(L, np.linalg.eigvalsh(L).max()).matrix
        x = rng.standard_normal((n, 1))
        theta = rng.standard_normal(K)
        cheb = sum(t * term for t, term in zip(theta, chebyshev_basis(Lt, x, K)))
        eigval, U = np.linalg.eigh(Lt)
        filt = sum(t * cheb_scalar(k, eigval) for k, t in enumerate(theta))
        oracle = U @ np.diag(filt) @ U.T @ x
        rel = np.linalg.norm(cheb - oracle) / max(np.linalg.norm(oracle), 1e-12)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-8 and elapsed < 10.0
    report(
        "2 chebyshev-spectral-equivalence",
        ok,
        f"worst relative error {worst:.2e}, {elapsed:.1f}s for 200 instances",
    )


# ---------------------------------------------------------------------------
# criterion 3: gradients


def test_criterion_3_gradient_correctness():
    from mgcnn.model import ModelConfig, forward, gradients, init_params
    from mgcnn.topology import GraphSnapshot, MultiGraphWindow
    from mgcnn.trainer import mse_loss

    rng = np.random.default_rng(3)
    started = time.perf_counter()
    worst = 0.0
    h = 1e-5
    for trial in range(50):
        n = int(rng.integers(2, 4))
        F = int(rng.integers(2, 5))
        m = int(rng.integers(2, 5))
        K = int(rng.integers(1, 4))
        rate = 0.35 if trial % 2 else 0.0
        snaps = [
            GraphSnapshot(
                timestep=t,
                weights=random_weight_matrix(rng, n, density=1.0),
                node_features=rng.standard_normal((n, F)),
            )
            for t in range(m)
        ]
        target = rng.standard_normal((n, 12))
        window = MultiGraphWindow(snapshots=snaps, target=target, horizon=1, lookback=m)
        cfg = ModelConfig(cheb_order=K, channels1=3, channels2=2, dropout_rate=rate)
        params = init_params(F, m, cfg, seed=int(rng.integers(2**31)))
        params.dropout_rate = rate
        seed = int(rng.integers(2**31))
        _, trace = forward(window, params, mode="train", seed=seed, lambda_max=2.0)
        grads = gradients(window, params, target, trace)
        for name, tensor in params.tensors().items():
            analytic = grads.tensors()[name]
            it = np.nditer(tensor, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                plus, minus = params.copy(), params.copy()
                plus.tensors()[name][idx] += h
                minus.tensors()[name][idx] -= h
                fp, _ = forward(window, plus, mode="train", seed=seed, lambda_max=2.0)
                fm, _ = forward(window, minus, mode="train", seed=seed, lambda_max=2.0)
                fd = (mse_loss(fp, target) - mse_loss(fm, target)) / (2 * h)
                err = abs(fd - analytic[idx]) / max(abs(fd), abs(analytic[idx]), 1e-7)
                worst = max(worst, err)
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-4 and elapsed < 60.0
    report(
        "3 gradient-check",
        ok,
        f"worst relative error {worst:.2e}, {elapsed:.1f}s for 50 models",
    )


# ---------------------------------------------------------------------------
# criterion 4: metrics


def test_criterion_4_metric_exactness():
    from mgcnn.metrics import compute_metrics

    r = compute_metrics([1.0, 6.0], [2.0, 4.0])
    exact = (
        abs(r.mse - 2.5) < 1e-12
        and abs(r.rmse - np.sqrt(2.5)) < 1e-12
        and abs(r.mae - 1.5) < 1e-12
        and abs(r.mape - 50.0) < 1e-12
    )
    rng = np.random.default_rng(4)
    identities = True
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        rep = compute_metrics(rng.standard_normal(n), rng.standard_normal(n))
        identities &= abs(rep.rmse**2 - rep.mse) < 1e-12
        identities &= rep.mae <= rep.rmse + 1e-12
    ok = exact and identities
    report("4 metric-exactness", ok, "hand case to 1e-12; identities on 1000 vectors")


# ---------------------------------------------------------------------------
# criterion 5: pipeline oracles


def test_criterion_5_pipeline_oracles():
    from mgcnn.pipeline import (
        RAW_ATTRIBUTES,
        RawIntersectionSeries,
        check_no_leakage,
        collinear_kept_mask,
        correlation_matrix,
        denormalize,
        drop_occupancy,
        fit_normalization,
        iqr_outlier_replace,
        normalize,
    )
    from mgcnn.pipeline import PipelineError

    checks = {}
    checks["iqr hand case"] = np.allclose(
        iqr_outlier_replace([1.0, 2.0, 3.0, 4.0, 100.0]), [1.0, 2.0, 3.0, 4.0, 3.0]
    )

    rng = np.random.default_rng(5)
    raw = RawIntersectionSeries(
        "X1", np.arange(50), rng.random((133, 50)), list(RAW_ATTRIBUTES)
    )
    checks["133 -> 85 columns"] = drop_occupancy(raw).attributes.shape[0] == 85

    attrs = rng.random((85, 400))
    base = rng.standard_normal(400)
    for i in (15, 20, 40, 41, 70):
        attrs[i] = base + 0.03 * rng.standard_normal(400)
    corr = correlation_matrix(attrs)
    alive = collinear_kept_mask(corr, 0.8)
    kept = np.flatnonzero(alive)
    sub = np.abs(corr[np.ix_(kept, kept)])
    np.fill_diagonal(sub, 0.0)
    non_target = kept >= 12
    checks["pruning post-condition"] = sub[np.ix_(non_target, non_target)].max() < 0.8
    checks["pruning idempotent"] = collinear_kept_mask(
        correlation_matrix(attrs[kept]), 0.8
    ).all()
    checks["targets protected"] = alive[:12].all()

    data = rng.standard_normal((6, 200)) * 4 + 2
    stats = fit_normalization(data, train_rows=150)
    z = normalize(data, stats)
    checks["normalization round-trip 1e-12"] = np.allclose(
        denormalize(z, stats), data, atol=1e-12
    )
    perturbed = data.copy()
    perturbed[:, 150:] += 1e9
    stats2 = fit_normalization(perturbed, train_rows=150)
    checks["no test-set leakage"] = np.array_equal(stats.mean, stats2.mean) and np.array_equal(
        stats.std, stats2.std
    )
    try:
        check_no_leakage(fit_normalization(data, 200), train_boundary=150)
        checks["leakage guard"] = False
    except PipelineError:
        checks["leakage guard"] = True

    failed = [name for name, ok in checks.items() if not ok]
    report("5 pipeline-oracles", not failed, f"failed: {failed}" if failed else
           "; ".join(checks))


# ---------------------------------------------------------------------------
# criteria 6, 7, 9: the end-to-end double run


E2E_DATA = ["--seed", "7", "--days", "20", "--nodes", "10"]
E2E_TRAIN = ["--lookback", "10", "--horizon", "5", "--epochs", "50", "--serial"]


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    """Two identical full runs (synth, train, evaluate, predict, export)."""
    results = []
    for tag in ("run1", "run2"):
        base = tmp_path_factory.mktemp(tag)
        data, run = base / "data", base / "out"
        started = time.perf_counter()
        for argv in (
            ["synth", *E2E_DATA, "--out-dir", data, "--serial"],
            ["train", "--data-dir", data, "--out-dir", run, *E2E_TRAIN],
            ["evaluate", "--ckpt", run / "model.ckpt", "--data-dir", data,
             "--out-dir", run, "--serial"],
        ):
            proc = run_cli(*argv)
            assert proc.returncode == 0, f"{argv[0]} failed:\n{proc.stderr[-2000:]}"
        core_elapsed = time.perf_counter() - started
        for argv in (
            ["predict", "--ckpt", run / "model.ckpt", "--data-dir", data,
             "--out-dir", run, "--serial"],
            ["export-plot-data", "--ckpt", run / "model.ckpt", "--data-dir", data,
             "--out-dir", run, "--movement", "WB_T", "--serial"],
        ):
            proc = run_cli(*argv)
            assert proc.returncode == 0, f"{argv[0]} failed:\n{proc.stderr[-2000:]}"
        results.append({"data": data, "run": run, "seconds": core_elapsed})
    return results


def read_reports(run_dir):
    rows = [json.loads(line) for line in (run_dir / "report.jsonl").read_text().splitlines()]
    return {(row["label"], row["unit_space"]): row for row in rows}


def test_criterion_6_end_to_end_beats_baselines(e2e_runs):
    run = e2e_runs[0]
    rows = read_reports(run["run"])
    model = rows[("mgcnn", "raw")]["mse"]
    persistence = rows[("persistence", "raw")]["mse"]
    historical = rows[("historical_average", "raw")]["mse"]
    vs_p = 1.0 - model / persistence
    vs_h = 1.0 - model / historical
    # the 20-day test partition is day 20: 1440 windows x 10 nodes x 12 moves
    test_windows_ok = rows[("mgcnn", "raw")]["sample_count"] == 1440 * 10 * 12
    ok = vs_p >= 0.10 and vs_h >= 0.10 and run["seconds"] <= 900.0 and test_windows_ok
    report(
        "6 end-to-end",
        ok,
        f"raw MSE {model:.4f} vs persistence {persistence:.4f} ({vs_p:.0%} better) "
        f"and historical {historical:.4f} ({vs_h:.0%} better); "
        f"{run['seconds']:.0f}s of 900s budget",
    )


def test_criterion_7_convergence_shape(e2e_runs):
    history = (e2e_runs[0]["run"] / "history.csv").read_text().splitlines()[1:]
    losses = [float(line.split(",")[1]) for line in history]
    assert len(losses) >= 10, "training ended before epoch 10"
    ratio = losses[9] / losses[0]
    ok = losses[9] < 0.5 * losses[0]
    report(
        "7 convergence-shape",
        ok,
        f"epoch-10 loss {losses[9]:.4f} vs epoch-1 {losses[0]:.4f} (ratio {ratio:.2f}, "
        f"{len(losses)} epochs run)",
    )


def test_criterion_9_serial_determinism(e2e_runs):
    a, b = e2e_runs
    differing = []
    for rel in sorted(p.relative_to(a["data"]) for p in a["data"].rglob("*") if p.is_file()):
        if rel.name == "run_manifest.txt":  # carries a timestamp by design
            continue
        if (a["data"] / rel).read_bytes() != (b["data"] / rel).read_bytes():
            differing.append(f"data/{rel}")
    for name in (
        "history.csv",
        "model.ckpt",
        "report.txt",
        "report.jsonl",
        "predictions.csv",
        "pipeline_manifest.txt",
        "series_I01_WB_T.txt",
    ):
        if (a["run"] / name).read_bytes() != (b["run"] / name).read_bytes():
            differing.append(name)
    report(
        "9 determinism",
        not differing,
        "all artifacts byte-identical" if not differing else f"differ: {differing}",
    )


# ---------------------------------------------------------------------------
# criterion 8: sweep machinery


def test_criterion_8_sweep_machinery(tmp_path):
    data = tmp_path / "data"
    proc = run_cli("synth", "--seed", "7", "--days", "3", "--nodes", "4",
                   "--out-dir", data)
    assert proc.returncode == 0, proc.stderr
    fast = ["--train-days", "2", "--total-days", "3", "--epochs", "3",
            "--train-stride", "10", "--channels1", "8", "--channels2", "8"]
    out_m = tmp_path / "sweepM"
    proc = run_cli("sweep-lookback", "--data-dir", data, "--out-dir", out_m,
                   "--lookbacks", "10,20,30,40,50,60", "--horizon", "5", *fast)
    assert proc.returncode == 0, proc.stderr
    rows_m = [json.loads(l) for l in (out_m / "sweep_lookback.jsonl").read_text().splitlines()]
    raw_m = [r for r in rows_m if r["unit_space"] == "raw"]

    out_n = tmp_path / "sweepN"
    proc = run_cli("sweep-horizon", "--data-dir", data, "--out-dir", out_n,
                   "--horizons", "1,2,3,4,5", "--lookback", "10", *fast)
    assert proc.returncode == 0, proc.stderr
    rows_n = [json.loads(l) for l in (out_n / "sweep_horizon.jsonl").read_text().splitlines()]
    raw_n = [r for r in rows_n if r["unit_space"] == "raw"]

    shape_ok = (
        [r["lookback"] for r in raw_m] == [10, 20, 30, 40, 50, 60]
        and [r["horizon"] for r in raw_n] == [1, 2, 3, 4, 5]
        and all(abs(r["rmse"] ** 2 - r["mse"]) < 1e-9 for r in raw_m + raw_n)
        and all(
            key in r
            for r in raw_m + raw_n
            for key in ("mse", "rmse", "mae", "mape", "sample_count")
        )
        and (out_m / "sweep_lookback.txt").exists()
        and (out_n / "sweep_horizon.txt").exists()
    )
    by_horizon = {r["horizon"]: r["mse"] for r in raw_n}
    if by_horizon[1] > by_horizon[5]:  # soft, warn-only: empirical tendency
        warnings.warn(
            f"horizon monotonicity violated: MSE(N=1)={by_horizon[1]:.4f} > "
            f"MSE(N=5)={by_horizon[5]:.4f}"
        )
    report(
        "8 sweep-machinery",
        shape_ok,
        f"6 lookback rows, 5 horizon rows; MSE(N=1)={by_horizon[1]:.4f}, "
        f"MSE(N=5)={by_horizon[5]:.4f}",
    )
