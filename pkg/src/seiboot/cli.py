"""Command-line front end: end-to-end analyses and simulation experiments.

Progress and timing go to stderr; results go to files and stdout only, so
output files are byte-identical across reruns with the same seed no matter
the worker count.  Exit codes: 0 success, 1 runtime error, 2 bad usage or
validation failure.
"""

import sys
import time

import click
import numpy as np

from .cluster import null_max_distribution, sei_pvalues, threshold_label
from .glm import (
    Design,
    OutcomeStack,
    WeightStack,
    chisq_cft,
    f_statistic,
    f_to_chisq,
    wls_fit,
)
from .grid import Mask
from .niftiio import (
    CovariateError,
    NiftiError,
    load_outcomes,
    read_covariates,
    read_nifti,
    write_results,
)
from .pbj import pbj_bootstrap, pbj_sqrt_cov
from .permutation import freedman_lane_max_distribution
from .simulate import (
    ConfigError,
    config_out_prefix,
    fwer_experiment,
    load_config,
    power_experiment,
    report_text,
    write_report,
)
from .spbj import spbj_bootstrap, spbj_fit

_PROBABILITY = click.FloatRange(0.0, 1.0, min_open=True, max_open=True)


@click.group()
def main():
    """Spatial extent inference with bootstrap and permutation nulls."""


def _status(message):
    click.echo(message, err=True)


def _fail_validation(message):
    raise click.UsageError(message)


def _load_mask(path):
    vol = read_nifti(path)
    if vol.data.ndim != 3:
        _fail_validation(f"mask {path} must be 3D, got {vol.data.ndim}D")
    return Mask(vol.data != 0, voxel_size=vol.voxel_size, affine=vol.affine)


def _split_columns(text):
    return [c.strip() for c in text.split(",") if c.strip()]


@main.command()
@click.option("--outcomes", required=True, type=click.Path(exists=True, dir_okay=False),
              help="4D NIfTI of subject images, or a .txt list of 3D NIfTI paths.")
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="3D NIfTI; nonzero voxels define the analysis mask.")
@click.option("--covariates", "covariates_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV with an id column followed by numeric covariates.")
@click.option("--nuisance", default="", help="Comma-separated nuisance column names "
              "(the intercept is always included).")
@click.option("--interest", required=True, help="Comma-separated interest column name(s); "
              "sPBJ and the permutation method take exactly one.")
@click.option("--method", type=click.Choice(["pbj", "spbj", "perm"]), default="spbj",
              show_default=True)
@click.option("--weights", default="uniform", show_default=True,
              help="'uniform', a covariate column of per-subject variance scales, "
              "or a 4D NIfTI of voxelwise variance scales.")
@click.option("--cft-p", multiple=True, type=_PROBABILITY, default=(0.005,), show_default=True,
              help="Cluster-forming threshold tail probabilities (repeatable).")
@click.option("--nboot", default=5000, show_default=True, type=click.IntRange(min=1),
              help="Bootstrap samples or permutations.")
@click.option("--connectivity", type=click.Choice(["6", "18", "26"]), default="26",
              show_default=True)
@click.option("--alpha", default=0.05, type=_PROBABILITY, show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_prefix", required=True, help="Output path prefix.")
@click.option("--subjects", "subjects_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Optional text file of subject ids; must match the covariate id order.")
@click.option("--workers", default=1, show_default=True, envvar="SEIBOOT_WORKERS",
              type=click.IntRange(min=1), help="Worker threads (never affects results).")
def sei(outcomes, mask_path, covariates_path, nuisance, interest, method, weights,
        cft_p, nboot, connectivity, alpha, seed, out_prefix, subjects_path, workers):
    """Run spatial extent inference on a voxelwise regression."""
    start = time.perf_counter()
    connectivity = int(connectivity)
    try:
        mask = _load_mask(mask_path)
        table = read_covariates(covariates_path)
        if subjects_path is not None:
            with open(subjects_path) as f:
                expected = [line.strip() for line in f if line.strip()]
            if expected != table.ids:
                _fail_validation(
                    f"subject ids in {subjects_path} do not match covariate order "
                    f"in {covariates_path}"
                )
        data = load_outcomes(outcomes, mask)
        if data.shape[0] != table.n:
            _fail_validation(
                f"{outcomes} has {data.shape[0]} subjects but {covariates_path} has {table.n} rows"
            )

        nuisance_cols = _split_columns(nuisance)
        interest_cols = _split_columns(interest)
        if not interest_cols:
            _fail_validation("at least one interest column is required")
        for name in nuisance_cols + interest_cols:
            if name not in table.names:
                _fail_validation(f"column '{name}' not found in {covariates_path}")
        if method in ("spbj", "perm") and len(interest_cols) != 1:
            _fail_validation("sPBJ requires a scalar interest parameter")

        Y = OutcomeStack(data)
        X = Design(
            X0=np.column_stack([np.ones(table.n)] + [table.column(c) for c in nuisance_cols]),
            X1=np.column_stack([table.column(c) for c in interest_cols]),
        )
        S = _load_weights(weights, table, mask, covariates_path)
    except (NiftiError, CovariateError, ValueError) as exc:
        _fail_validation(str(exc))

    _status(f"fit: n={table.n}, V={mask.n_voxels}, method={method}, B={nboot}")
    try:
        observed, sampler, beta = _observed_and_sampler(method, Y, X, S, nboot, seed)
        z0s = [chisq_cft(p, observed.df) for p in cft_p]
        if method == "perm":
            dists = freedman_lane_max_distribution(
                Y, X, z0s, connectivity, mask, nboot, seed, workers=workers
            )
        else:
            dists = null_max_distribution(sampler, z0s, connectivity, mask, workers=workers)
        for p, z0, dist in zip(cft_p, z0s, dists):
            cluster_table = sei_pvalues(
                threshold_label(observed, z0, connectivity, mask), dist
            )
            prefix = f"{out_prefix}_cft{p:g}"
            write_results(cluster_table, observed, cluster_table.labels, mask, prefix)
            _print_summary(cluster_table, p, z0, alpha, beta, mask)
    except click.UsageError:
        raise
    except Exception as exc:
        _status(f"error: {exc}")
        sys.exit(1)
    _status(f"done in {time.perf_counter() - start:.1f}s")


def _load_weights(weights, table, mask, covariates_path):
    if weights == "uniform":
        return WeightStack.uniform()
    if weights in table.names:
        return WeightStack.scalar(table.column(weights))
    try:
        vol = read_nifti(weights)
    except (OSError, NiftiError):
        _fail_validation(
            f"weights '{weights}' is neither a column of {covariates_path} "
            "nor a readable NIfTI file"
        )
    if vol.data.ndim != 4:
        _fail_validation(f"weight image {weights} must be 4D")
    if vol.data.shape[:3] != mask.dims:
        _fail_validation(f"weight image {weights} does not match the mask dimensions")
    return WeightStack.voxelwise(np.ascontiguousarray(vol.data[mask.inclusion].T.astype(float)))


def _observed_and_sampler(method, Y, X, S, nboot, seed):
    """Observed chi-square image, its null sampler, and beta (sPBJ only)."""
    if method == "spbj":
        fit = spbj_fit(Y, X, S)
        return fit.stat, spbj_bootstrap(fit.root, nboot, seed), fit.beta
    if method == "pbj":
        fit = wls_fit(Y, X, S, weighted_residuals=True)
        root = pbj_sqrt_cov(fit)
        T, df1, df2 = f_statistic(Y, X, S)
        return f_to_chisq(T, df1, df2), pbj_bootstrap(root, X.m1, nboot, seed), None
    T, df1, df2 = f_statistic(Y, X, WeightStack.uniform())
    return f_to_chisq(T, df1, df2), None, None


def _print_summary(cluster_table, cft_p, z0, alpha, beta, mask):
    click.echo(f"cft p={cft_p:g} (z0={z0:.4f}): {len(cluster_table)} cluster(s)")
    if not len(cluster_table):
        return
    has_sign = beta is not None
    header = "label  size_vox  extent_mm3    peak     peak_site       p      sig"
    if has_sign:
        header += "  sign"
    click.echo(header)
    for rec in cluster_table:
        site = ",".join(str(c) for c in rec.peak_site)
        line = (
            f"{rec.label:>5}  {rec.size_voxels:>8}  {rec.extent_mm3:>10.6g}  "
            f"{rec.peak_value:>6.4g}  ({site:>11})  {rec.p_value:.6g}  "
            f"{'*' if rec.p_value < alpha else ' '}"
        )
        if has_sign:
            members = cluster_table.labels == rec.label
            line += f"  {'+' if beta[members].mean() >= 0 else '-'}"
        click.echo(line)


@main.command("simulate-null")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_prefix", default=None, help="Output prefix "
              "(default: simulation.out_prefix from the config).")
@click.option("--workers", default=1, show_default=True, envvar="SEIBOOT_WORKERS",
              type=click.IntRange(min=1))
def simulate_null(config_path, out_prefix, workers):
    """Run a global-null FWER experiment from a TOML config."""
    _run_experiment(config_path, out_prefix, workers, kind="null")


@main.command("simulate-power")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_prefix", default=None, help="Output prefix "
              "(default: simulation.out_prefix from the config).")
@click.option("--workers", default=1, show_default=True, envvar="SEIBOOT_WORKERS",
              type=click.IntRange(min=1))
def simulate_power(config_path, out_prefix, workers):
    """Run a sphere-signal power experiment from a TOML config."""
    _run_experiment(config_path, out_prefix, workers, kind="power")


def _run_experiment(config_path, out_prefix, workers, kind):
    try:
        cfg = load_config(config_path, kind)
        out_prefix = out_prefix or config_out_prefix(config_path)
        if not out_prefix:
            _fail_validation(
                "missing required key simulation.out_prefix (or pass --out)"
            )
    except ConfigError as exc:
        _fail_validation(f"{config_path}: {exc}")
    _status(f"{kind} experiment: {cfg.n_sims} simulations, n={cfg.n}, B={cfg.nboot}")
    try:
        run = fwer_experiment if kind == "null" else power_experiment
        report = run(cfg, workers=workers)
        paths = write_report(report, out_prefix)
    except Exception as exc:
        _status(f"error: {exc}")
        sys.exit(1)
    click.echo(report_text(report), nl=False)
    _status(f"wrote {paths['records']} and {paths['report']}")
    _status(f"done in {report.runtime_seconds:.1f}s")


@main.command()
@click.argument("p", type=_PROBABILITY)
@click.argument("df", type=click.IntRange(min=1))
def threshold(p, df):
    """Print the chi-square cluster-forming threshold for tail probability P."""
    click.echo(f"{chisq_cft(p, df):.2f}")


if __name__ == "__main__":
    main()
