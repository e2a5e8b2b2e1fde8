"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete.  Criteria 5-7 are Monte Carlo experiments and take
minutes; everything else finishes in seconds.
"""

import gzip
import hashlib
import os
import struct
import time

import numpy as np
import pytest
from click.testing import CliRunner

import oracles
from seiboot.cli import main as cli_main
from seiboot.cluster import cluster_sizes, threshold_label
from seiboot.glm import Design, OutcomeStack, WeightStack, chisq_cft, f_to_chisq
from seiboot.grid import Mask
from seiboot.niftiio import (
    HEADER_SIZE,
    VOX_OFFSET,
    CovariateTable,
    VolumeFile,
    read_nifti,
    write_covariates,
    write_nifti,
)
from seiboot.pbj import SqrtCovRoot, pbj_bootstrap
from seiboot.simulate import (
    MethodArm,
    NullSimConfig,
    PowerSimConfig,
    fwer_experiment,
    power_experiment,
)
from seiboot.spbj import spbj_bootstrap, spbj_fit

FWER_BAND = (0.031, 0.069)


@pytest.fixture
def verdict(capfd):
    """Print one visible PASS/FAIL line per criterion, then assert."""

    def announce(number, name, ok, detail):
        with capfd.disabled():
            print(f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"criterion {number} ({name}): {detail}"

    return announce


def test_criterion_1_sandwich_oracle_equivalence(verdict):
    start = time.perf_counter()
    worst = 0.0
    master = np.random.default_rng(2024)
    for instance in range(100):
        n = 10 if instance % 2 == 0 else 20
        voxels = 4
        rng = np.random.default_rng(master.integers(2**63))
        X = Design(
            X0=np.column_stack([np.ones(n), rng.standard_normal(n)]),
            X1=rng.standard_normal(n),
        )
        Y = OutcomeStack(rng.standard_normal((n, voxels)))
        if instance % 3 == 0:
            S = WeightStack.scalar(rng.uniform(0.2, 4.0, size=n))
            scales = np.broadcast_to(S.values[:, None], (n, voxels))
        else:
            S = WeightStack.voxelwise(rng.uniform(0.2, 4.0, size=(n, voxels)))
            scales = S.values
        fit = spbj_fit(Y, X, S)
        _, var_expected, _ = oracles.hc3_sandwich_dense(Y.data, X.X0, X.X1, scales)
        rel = np.max(np.abs(fit.var_beta - var_expected) / var_expected)
        worst = max(worst, float(rel))
    elapsed = time.perf_counter() - start
    verdict(
        1,
        "sandwich oracle equivalence",
        worst < 1e-10 and elapsed < 5.0,
        f"max rel err {worst:.2e}, {elapsed:.2f}s",
    )


def test_criterion_2_transform_correctness(verdict):
    start = time.perf_counter()
    worst = 0.0
    for t in (0.3, 1.0, 2.5, 4.0, 6.63, 12.0):
        for df2 in (5, 20, 50, 200):
            z = f_to_chisq(np.array([t]), 1, df2).values[0]
            gap = abs(oracles.chi2_cdf_quad(z, 1) - oracles.f_cdf_quad(t, 1, df2))
            worst = max(worst, gap)
    thresholds_ok = (
        abs(chisq_cft(0.01, 1) - 6.63) <= 0.01
        and abs(chisq_cft(0.005, 1) - 7.88) <= 0.01
    )
    elapsed = time.perf_counter() - start
    verdict(
        2,
        "transform correctness",
        worst < 1e-8 and thresholds_ok and elapsed < 1.0,
        f"max CDF gap {worst:.2e}, thresholds "
        f"{chisq_cft(0.01, 1):.4f}/{chisq_cft(0.005, 1):.4f}, {elapsed:.2f}s",
    )


def test_criterion_3_bootstrap_marginals(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(31)
    B, n, voxels = 10_000, 15, 20

    rows = rng.standard_normal((voxels, n))
    root = SqrtCovRoot(rows / np.linalg.norm(rows, axis=1, keepdims=True))

    total = np.zeros(voxels)
    total_sq = np.zeros(voxels)
    for img in pbj_bootstrap(root, 2, B, seed=301):
        total += img.values
        total_sq += img.values**2
    mean_pbj = total / B
    var_pbj = total_sq / B - mean_pbj**2
    pbj_ok = np.all((mean_pbj > 1.9) & (mean_pbj < 2.1)) and np.all(
        (var_pbj > 3.6) & (var_pbj < 4.4)
    )

    total[:] = 0.0
    total_sq[:] = 0.0
    for img in spbj_bootstrap(root, B, seed=302):
        total += img.values
        total_sq += img.values**2
    mean_spbj = total / B
    var_spbj = total_sq / B - mean_spbj**2
    spbj_ok = np.all((mean_spbj > 0.95) & (mean_spbj < 1.05)) and np.all(
        (var_spbj > 1.8) & (var_spbj < 2.2)
    )
    elapsed = time.perf_counter() - start
    verdict(
        3,
        "bootstrap marginals",
        pbj_ok and spbj_ok and elapsed < 30.0,
        f"pbj mean [{mean_pbj.min():.3f},{mean_pbj.max():.3f}] "
        f"var [{var_pbj.min():.3f},{var_pbj.max():.3f}]; "
        f"spbj mean [{mean_spbj.min():.3f},{mean_spbj.max():.3f}] "
        f"var [{var_spbj.min():.3f},{var_spbj.max():.3f}]; {elapsed:.1f}s",
    )


def test_criterion_4_labeling_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(44)
    mask = Mask.full((16, 16, 16))
    mismatches = 0
    # densities span both sides of the 6-connectivity percolation threshold
    for grid_index in range(1000):
        density = rng.uniform(0.05, 0.45)
        grid = rng.random((16, 16, 16)) < density
        values = grid[mask.inclusion].astype(float)
        for connectivity in (6, 18, 26):
            sizes = sorted(cluster_sizes(values, 0.5, connectivity, mask).tolist())
            if sizes != oracles.flood_fill_sizes(grid, connectivity):
                mismatches += 1
            if grid_index < 100:
                # the full table is built from the same labeling
                table = threshold_label(values, 0.5, connectivity, mask)
                if sorted(rec.size_voxels for rec in table) != sizes:
                    mismatches += 1
    elapsed = time.perf_counter() - start
    verdict(
        4,
        "labeling oracle",
        mismatches == 0 and elapsed < 10.0,
        f"{mismatches} mismatches over 3000 labelings, {elapsed:.1f}s",
    )


@pytest.mark.acceptance
def test_criterion_5_exchangeable_null_calibration(verdict):
    start = time.perf_counter()
    cfg = NullSimConfig(
        n=50,
        n_sims=500,
        seed=501,
        dims=(24, 24, 24),
        fwhm_voxels=4.5,
        nboot=200,
        cft_p=[0.01],
        alpha=[0.05],
        methods=[MethodArm("spbj"), MethodArm("pbj"), MethodArm("perm")],
    )
    report = fwer_experiment(cfg)
    rates = {row["method"]: row["fwer"] for row in report.rows}
    ok = all(FWER_BAND[0] <= rates[m] <= FWER_BAND[1] for m in ("spbj", "pbj", "perm"))
    elapsed = time.perf_counter() - start
    verdict(
        5,
        "exchangeable-null calibration",
        ok and elapsed < 1800.0,
        f"fwer {rates}, band {FWER_BAND}, {elapsed / 60:.1f}min",
    )


@pytest.mark.acceptance
def test_criterion_6_heteroskedastic_null_robustness(verdict):
    start = time.perf_counter()
    cfg = NullSimConfig(
        n=200,
        n_sims=500,
        seed=601,
        dims=(24, 24, 24),
        fwhm_voxels=4.5,
        nboot=200,
        cft_p=[0.01],
        alpha=[0.05],
        variance_log_slopes={"grp": 1.0},
        methods=[MethodArm("spbj", "oracle"), MethodArm("perm")],
    )
    report = fwer_experiment(cfg)
    rates = {row["method"]: row["fwer"] for row in report.rows}
    spbj_rate = rates["spbj(oracle)"]
    ok = FWER_BAND[0] <= spbj_rate <= FWER_BAND[1]
    elapsed = time.perf_counter() - start
    verdict(
        6,
        "heteroskedastic-null robustness",
        ok,
        f"spbj(oracle) fwer {spbj_rate} in band {FWER_BAND}; "
        f"unweighted perm fwer {rates['perm']} (recorded, no bound); "
        f"{elapsed / 60:.1f}min",
    )


@pytest.mark.acceptance
def test_criterion_7_power_monotonicity(verdict):
    start = time.perf_counter()
    cfg = PowerSimConfig(
        n=50,
        n_sims=200,
        seed=701,
        dims=(24, 24, 24),
        fwhm_voxels=4.5,
        nboot=200,
        cft_p=[0.01],
        alpha=[0.05],
        radii=[3, 4, 5],
        effect_size=0.4,
        methods=[MethodArm("spbj")],
    )
    report = power_experiment(cfg)
    rows = {
        row["radius"]: row for row in report.rows if row["kind"] == "power_radius"
    }
    rates = {r: rows[r]["rate"] for r in (3, 4, 5)}
    counts = {r: rows[r]["n_spheres"] for r in (3, 4, 5)}

    def mc_se(rate, count):
        return np.sqrt(max(rate * (1 - rate), 1e-6) / count)

    monotone = all(
        rates[b] >= rates[a] - 2 * (mc_se(rates[a], counts[a]) + mc_se(rates[b], counts[b]))
        for a, b in ((3, 4), (4, 5))
    )
    strict = rates[5] > rates[3]
    elapsed = time.perf_counter() - start
    verdict(
        7,
        "power monotonicity",
        monotone and strict,
        f"rates {rates}, {elapsed / 60:.1f}min",
    )


def _run_cli(runner, args, env=None):
    result = runner.invoke(cli_main, args, env=env)
    assert result.exit_code == 0, f"{args}: {result.output}"
    return result


_SIM_CONFIG = """
[simulation]
n = 16
n_sims = 2
seed = 11
dims = [8, 8, 8]
fwhm_voxels = 1.0
nboot = 25
cft_p = [0.05]
alpha = [0.05]

[simulation.covariates]
x1 = "normal"
grp = "binary"

[simulation.model]
nuisance = ["x1"]
interest = "grp"

[[simulation.methods]]
method = "spbj"

[power]
radii = [2]
effect_size = 2.0
"""


def test_criterion_8_cli_determinism(verdict, tmp_path):
    start = time.perf_counter()
    runner = CliRunner()

    rng = np.random.default_rng(88)
    n = 16
    mask = Mask.ellipsoid((8, 8, 8))
    affine = np.eye(4)
    mask_path = str(tmp_path / "mask.nii.gz")
    write_nifti(VolumeFile(data=mask.inclusion.astype(np.int16), affine=affine), mask_path)
    four = np.zeros((8, 8, 8, n))
    four[mask.inclusion] = rng.standard_normal((n, mask.n_voxels)).T
    outcomes_path = str(tmp_path / "outcomes.nii.gz")
    write_nifti(VolumeFile(data=four, affine=affine), outcomes_path)
    table = CovariateTable(
        ids=[f"s{i}" for i in range(n)],
        names=["age", "score"],
        values=rng.standard_normal((n, 2)),
    )
    cov_path = str(tmp_path / "cov.csv")
    write_covariates(table, cov_path)
    config_path = tmp_path / "cfg.toml"
    config_path.write_text(_SIM_CONFIG)

    def hash_dir(directory):
        digests = {}
        for name in sorted(os.listdir(directory)):
            with open(os.path.join(directory, name), "rb") as f:
                digests[name] = hashlib.sha256(f.read()).hexdigest()
        return digests

    all_ok = True
    details = []
    for method in ("spbj", "pbj", "perm"):
        runs = []
        for tag, workers in (("r1", "1"), ("r2", "3")):
            out_dir = tmp_path / f"sei_{method}_{tag}"
            out_dir.mkdir()
            _run_cli(runner, [
                "sei", "--outcomes", outcomes_path, "--mask", mask_path,
                "--covariates", cov_path, "--nuisance", "age", "--interest", "score",
                "--method", method, "--cft-p", "0.05", "--nboot", "40",
                "--seed", "9", "--workers", workers, "--out", str(out_dir / "run"),
            ])
            runs.append(hash_dir(str(out_dir)))
        same = runs[0] == runs[1]
        all_ok &= same
        details.append(f"sei/{method}={'ok' if same else 'DIFF'}")

    for sub in ("simulate-null", "simulate-power"):
        runs = []
        for tag, workers in (("r1", "1"), ("r2", "3")):
            out_dir = tmp_path / f"{sub}_{tag}"
            out_dir.mkdir()
            _run_cli(runner, [sub, str(config_path), "--out", str(out_dir / "exp"),
                              "--workers", workers])
            runs.append(hash_dir(str(out_dir)))
        same = runs[0] == runs[1]
        all_ok &= same
        details.append(f"{sub}={'ok' if same else 'DIFF'}")

    out_a = runner.invoke(cli_main, ["threshold", "0.01", "1"]).output
    out_b = runner.invoke(cli_main, ["threshold", "0.01", "1"]).output
    same = out_a == out_b
    all_ok &= same
    details.append(f"threshold={'ok' if same else 'DIFF'}")

    elapsed = time.perf_counter() - start
    verdict(8, "CLI determinism", all_ok, f"{', '.join(details)}, {elapsed:.1f}s")


def test_criterion_9_nifti_round_trip(verdict, tmp_path):
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    dtypes = [np.int16, np.float32, np.float64]
    failures = []
    for case in range(50):
        dtype = dtypes[case % 3]
        compress = bool((case // 3) % 2)
        scaled = bool((case // 6) % 2)
        dims = tuple(int(d) for d in rng.integers(3, 9, size=3))
        if np.issubdtype(dtype, np.integer):
            data = rng.integers(-1000, 1000, size=dims).astype(dtype)
        else:
            data = rng.standard_normal(dims).astype(dtype)
        affine = np.diag([*rng.uniform(0.5, 4.0, size=3), 1.0])
        affine[:3, 3] = rng.uniform(-50, 50, size=3)
        path = str(tmp_path / f"v{case}.nii{'.gz' if compress else ''}")
        if scaled:
            slope, inter = 2.5, -1.25
            write_nifti(VolumeFile(data=data, affine=affine), path,
                        scl_slope=slope, scl_inter=inter)
            expected = data.astype(np.float64) * slope + inter
        else:
            write_nifti(VolumeFile(data=data, affine=affine), path)
            expected = data
        back = read_nifti(path)
        if not np.array_equal(back.data, expected):
            failures.append((case, "payload"))
        if not np.allclose(back.affine, affine, atol=1e-5):
            failures.append((case, "affine"))

        # header conformance at the fixed offsets
        raw = gzip.open(path, "rb").read() if compress else open(path, "rb").read()
        if struct.unpack_from("<i", raw, 0)[0] != HEADER_SIZE:
            failures.append((case, "sizeof_hdr"))
        if struct.unpack_from("4s", raw, 344)[0] != b"n+1\x00":
            failures.append((case, "magic"))
        if struct.unpack_from("<f", raw, 108)[0] != float(VOX_OFFSET):
            failures.append((case, "vox_offset"))
        dim = struct.unpack_from("<8h", raw, 40)
        if dim[0] != 3 or tuple(dim[1:4]) != dims:
            failures.append((case, "dim"))
    elapsed = time.perf_counter() - start
    verdict(
        9,
        "NIfTI round trip",
        not failures and elapsed < 30.0,
        f"{len(failures)} failures over 50 volumes, {elapsed:.1f}s",
    )
