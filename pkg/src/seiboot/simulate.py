"""Synthetic null and signal experiments for FWER and power estimation.

Datasets are built as per-subject smoothed Gaussian noise fields with
covariate-driven variance (and optionally covariate-driven smoothness), so
the covariates never touch the mean but may shape the covariance.  The
experiment drivers run the configured inference arms end to end over many
simulated datasets and report rejection or detection rates with exact
binomial confidence intervals.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import rng
from ._parallel import parallel_map
from .cluster import null_max_distribution, sei_pvalues, threshold_label
from .glm import Design, OutcomeStack, WeightStack, chisq_cft, f_statistic, f_to_chisq, wls_fit
from .grid import Mask
from .pbj import pbj_bootstrap, pbj_sqrt_cov
from .permutation import freedman_lane_max_distribution
from .spbj import spbj_bootstrap, spbj_fit


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


VALID_METHODS = ("pbj", "spbj", "perm")
VALID_WEIGHTS = ("uniform", "oracle")
VALID_DISTRIBUTIONS = ("normal", "binary", "uniform")


@dataclass(frozen=True)
class MethodArm:
    """One inference arm: a method plus its weight source.

    ``oracle`` weights hand the fit the generator's true per-subject
    variance scales (tau squared), the simulation analogue of plugging in
    estimated subject-level variances.
    """

    method: str
    weights: str = "uniform"

    def __post_init__(self):
        if self.method not in VALID_METHODS:
            raise ConfigError(f"unknown method '{self.method}' (choose from {VALID_METHODS})")
        if self.weights not in VALID_WEIGHTS:
            raise ConfigError(f"unknown weights '{self.weights}' (choose from {VALID_WEIGHTS})")
        if self.method == "perm" and self.weights != "uniform":
            raise ConfigError("the permutation arm does not take weights")

    @property
    def name(self):
        return self.method if self.weights == "uniform" else f"{self.method}({self.weights})"


@dataclass
class NullSimConfig:
    """Global-null experiment configuration.

    ``variance_log_slopes`` maps covariate names to slopes of a log-linear
    variance model tau_i = exp(sum slope_c * x_ic); ``correlation_fwhm_slopes``
    makes each subject's smoothing width fwhm + sum slope_c * x_ic.
    """

    n: int
    n_sims: int
    seed: int
    dims: tuple = (24, 24, 24)
    # smooth enough that an n-of-tens covariance root resolves the field's
    # effective degrees of freedom on the default 24-cubed grid
    fwhm_voxels: float = 4.5
    covariates: dict = field(default_factory=lambda: {"x1": "normal", "grp": "binary"})
    nuisance: list = field(default_factory=lambda: ["x1"])
    interest: str = "grp"
    variance_log_slopes: dict = field(default_factory=dict)
    correlation_fwhm_slopes: dict = field(default_factory=dict)
    nboot: int = 200
    cft_p: list = field(default_factory=lambda: [0.01])
    alpha: list = field(default_factory=lambda: [0.05])
    connectivity: int = 26
    methods: list = field(
        default_factory=lambda: [MethodArm("spbj"), MethodArm("pbj"), MethodArm("perm")]
    )

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d < 2 for d in self.dims):
            raise ConfigError("dims must be three lattice extents of at least 2")
        self.n = int(self.n)
        self.n_sims = int(self.n_sims)
        if self.n_sims < 1:
            raise ConfigError("n_sims must be at least 1")
        self.fwhm_voxels = float(self.fwhm_voxels)
        if self.fwhm_voxels < 0:
            raise ConfigError("fwhm_voxels must be non-negative")
        if self.nboot < 1:
            raise ConfigError("nboot must be at least 1")
        if not self.covariates:
            raise ConfigError("at least one covariate is required")
        for name, dist in self.covariates.items():
            if dist not in VALID_DISTRIBUTIONS:
                raise ConfigError(
                    f"unknown distribution '{dist}' for covariate '{name}' "
                    f"(choose from {VALID_DISTRIBUTIONS})"
                )
        unknown = [c for c in [*self.nuisance, self.interest] if c not in self.covariates]
        if unknown:
            raise ConfigError(f"model names undeclared covariates: {unknown}")
        if self.interest in self.nuisance:
            raise ConfigError("interest covariate cannot also be a nuisance covariate")
        for section, slopes in (
            ("variance", self.variance_log_slopes),
            ("correlation", self.correlation_fwhm_slopes),
        ):
            bad = [c for c in slopes if c not in self.covariates]
            if bad:
                raise ConfigError(f"{section} model names undeclared covariates: {bad}")
        for p in self.cft_p:
            if not 0 < p < 1:
                raise ConfigError(f"cft_p entries must be in (0, 1), got {p}")
        for a in self.alpha:
            if not 0 < a < 1:
                raise ConfigError(f"alpha entries must be in (0, 1), got {a}")
        if self.connectivity not in (6, 18, 26):
            raise ConfigError("connectivity must be 6, 18, or 26")
        self.methods = [m if isinstance(m, MethodArm) else MethodArm(**m) for m in self.methods]
        if self.n <= 2 + len(self.nuisance):
            raise ConfigError("n must exceed the design column count")

    def make_mask(self):
        return Mask.ellipsoid(self.dims)

    def tau_values(self, covariates):
        """Per-subject error scale tau(x_i) under the variance model."""
        log_tau = np.zeros(self.n)
        for name, slope in self.variance_log_slopes.items():
            log_tau += float(slope) * covariates[name]
        tau = np.exp(log_tau)
        if not (np.isfinite(tau).all() and (tau > 0).all()):
            raise ConfigError("variance model produced non-positive or non-finite scales")
        return tau

    def subject_fwhm(self, covariates):
        fwhm = np.full(self.n, self.fwhm_voxels)
        for name, slope in self.correlation_fwhm_slopes.items():
            fwhm = fwhm + float(slope) * covariates[name]
        return np.maximum(fwhm, 0.0)

    def to_dict(self):
        return {
            "n": self.n,
            "n_sims": self.n_sims,
            "seed": self.seed,
            "dims": list(self.dims),
            "fwhm_voxels": self.fwhm_voxels,
            "covariates": dict(self.covariates),
            "nuisance": list(self.nuisance),
            "interest": self.interest,
            "variance_log_slopes": dict(self.variance_log_slopes),
            "correlation_fwhm_slopes": dict(self.correlation_fwhm_slopes),
            "nboot": self.nboot,
            "cft_p": list(self.cft_p),
            "alpha": list(self.alpha),
            "connectivity": self.connectivity,
            "methods": [{"method": m.method, "weights": m.weights} for m in self.methods],
        }


@dataclass
class PowerSimConfig(NullSimConfig):
    """Sphere-signal power experiment configuration."""

    radii: list = field(default_factory=lambda: [3, 4, 5])
    spheres_per_sim: int = None
    effect_size: float = 0.4

    def __post_init__(self):
        super().__post_init__()
        self.radii = [int(r) for r in self.radii]
        if not self.radii or any(r < 1 for r in self.radii):
            raise ConfigError("sphere radii must be positive integers")
        if max(self.radii) >= min(self.dims) / 2:
            raise ConfigError(
                f"sphere radius {max(self.radii)} exceeds grid of dims {self.dims}"
            )
        if self.spheres_per_sim is None:
            self.spheres_per_sim = len(self.radii)
        self.spheres_per_sim = int(self.spheres_per_sim)
        if self.spheres_per_sim < 1:
            raise ConfigError("spheres_per_sim must be at least 1")
        self.effect_size = float(self.effect_size)
        if self.effect_size < 0:
            raise ConfigError("effect_size must be non-negative")

    def to_dict(self):
        base = super().to_dict()
        base.update(
            radii=list(self.radii),
            spheres_per_sim=self.spheres_per_sim,
            effect_size=self.effect_size,
        )
        return base


@dataclass
class ExperimentReport:
    """Experiment outcome rows plus the configuration that produced them.

    ``runtime_seconds`` is informational only and is never written to
    output files, which must be byte-identical across reruns.
    """

    kind: str
    config: dict
    rows: list
    runtime_seconds: float = None


def smooth_noise_field(dims, fwhm_voxels, seed):
    """Standardized Gaussian noise smoothed to the requested kernel FWHM.

    White noise is convolved with a Gaussian kernel of the given full width
    at half maximum (in voxels; sigma = fwhm / sqrt(8 ln 2)) and rescaled
    to zero mean and unit sample variance.  ``fwhm_voxels = 0`` skips the
    convolution.
    """
    return _smooth_field(rng.stream(seed, rng.NOISE_FIELD, 0), dims, fwhm_voxels)


def _smooth_field(gen, dims, fwhm):
    noise = gen.standard_normal(tuple(dims))
    if fwhm > 0:
        sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
        fieldv = ndimage.gaussian_filter(noise, sigma, mode="constant")
    else:
        fieldv = noise
    fieldv = fieldv - fieldv.mean()
    return fieldv / fieldv.std()


def _draw_covariate(gen, dist, n):
    if dist == "normal":
        return gen.standard_normal(n)
    if dist == "binary":
        return gen.choice([-1.0, 1.0], size=n)
    return gen.uniform(0.0, 1.0, size=n)


def gen_null_dataset(cfg, sim_index, mask=None):
    """One global-null dataset: outcomes plus its covariate table.

    Y_i(v) = tau(x_i) * field_i(v); covariates may scale the variance or
    the smoothness but never enter the mean, so every simulated dataset
    satisfies the global null by construction.  Fully determined by
    ``(cfg.seed, sim_index)``.
    """
    if mask is None:
        mask = cfg.make_mask()
    sim_seed = rng.derive_seed(cfg.seed, sim_index)
    covariates = {
        name: _draw_covariate(rng.stream(sim_seed, rng.SIM_COVARIATES, j), dist, cfg.n)
        for j, (name, dist) in enumerate(cfg.covariates.items())
    }
    tau = cfg.tau_values(covariates)
    fwhm = cfg.subject_fwhm(covariates)
    data = np.empty((cfg.n, mask.n_voxels))
    for i in range(cfg.n):
        fieldv = _smooth_field(rng.stream(sim_seed, rng.SIM_FIELDS, i), cfg.dims, fwhm[i])
        data[i] = tau[i] * fieldv[mask.inclusion]
    return OutcomeStack(data), covariates


def _design_from(covariates, nuisance, interest, n):
    X0 = np.column_stack([np.ones(n)] + [covariates[c] for c in nuisance])
    return Design(X0=X0, X1=covariates[interest])


def _run_arm(arm, Y, X, S, z0s, cfg, mask, arm_seed):
    """Observed statistic image and null max-size distributions for one arm."""
    if arm.method == "spbj":
        fit = spbj_fit(Y, X, S)
        sampler = spbj_bootstrap(fit.root, cfg.nboot, arm_seed)
        dists = null_max_distribution(sampler, z0s, cfg.connectivity, mask)
        return fit.stat, dists
    if arm.method == "pbj":
        fit = wls_fit(Y, X, S, weighted_residuals=True)
        root = pbj_sqrt_cov(fit)
        T, df1, df2 = f_statistic(Y, X, S)
        sampler = pbj_bootstrap(root, X.m1, cfg.nboot, arm_seed)
        dists = null_max_distribution(sampler, z0s, cfg.connectivity, mask)
        return f_to_chisq(T, df1, df2), dists
    uniform = WeightStack.uniform()
    T, df1, df2 = f_statistic(Y, X, uniform)
    dists = freedman_lane_max_distribution(
        Y, X, z0s, cfg.connectivity, mask, cfg.nboot, arm_seed
    )
    return f_to_chisq(T, df1, df2), dists


def _binomial_ci(k, n, level=0.95):
    """Exact (Clopper-Pearson) binomial confidence interval."""
    a = (1.0 - level) / 2.0
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1.0 - a, k + 1, n - k))
    return lo, hi


def fwer_experiment(cfg, workers=1, progress=None):
    """Estimate the family-wise error rate of every configured arm.

    Each simulation draws a fresh null dataset and runs each arm end to
    end; a simulation rejects when any cluster's extent p-value falls
    below alpha.  Reported rates carry exact binomial 95% intervals.
    """
    start = time.perf_counter()
    if not cfg.methods:
        return ExperimentReport(kind="null", config=cfg.to_dict(), rows=[], runtime_seconds=0.0)
    mask = cfg.make_mask()
    z0s = [chisq_cft(p, 1) for p in cfg.cft_p]

    def run_sim(s):
        try:
            Y, covariates = gen_null_dataset(cfg, s, mask)
            X = _design_from(covariates, cfg.nuisance, cfg.interest, cfg.n)
            tau = cfg.tau_values(covariates)
            flags = {}
            for a_idx, arm in enumerate(cfg.methods):
                S = (
                    WeightStack.uniform()
                    if arm.weights == "uniform"
                    else WeightStack.scalar(tau**2)
                )
                arm_seed = rng.derive_seed(cfg.seed, s, a_idx)
                observed, dists = _run_arm(arm, Y, X, S, z0s, cfg, mask, arm_seed)
                for p, z0, dist in zip(cfg.cft_p, z0s, dists):
                    table = sei_pvalues(
                        threshold_label(observed, z0, cfg.connectivity, mask), dist
                    )
                    min_p = table[0].p_value if len(table) else 1.0
                    for alpha in cfg.alpha:
                        flags[(arm.name, p, alpha)] = min_p < alpha
            return flags
        except Exception as exc:
            raise RuntimeError(f"simulation {s} (master seed {cfg.seed}) failed") from exc

    per_sim = parallel_map(run_sim, range(cfg.n_sims), workers)
    if progress is not None:
        progress(cfg.n_sims, cfg.n_sims)

    rows = []
    for arm in cfg.methods:
        for p in cfg.cft_p:
            for alpha in cfg.alpha:
                k = sum(flags[(arm.name, p, alpha)] for flags in per_sim)
                lo, hi = _binomial_ci(k, cfg.n_sims)
                rows.append(
                    {
                        "kind": "fwer",
                        "method": arm.name,
                        "cft_p": p,
                        "alpha": alpha,
                        "n_sims": cfg.n_sims,
                        "rejections": k,
                        "fwer": k / cfg.n_sims,
                        "ci_low": lo,
                        "ci_high": hi,
                    }
                )
    return ExperimentReport(
        kind="null",
        config=cfg.to_dict(),
        rows=rows,
        runtime_seconds=time.perf_counter() - start,
    )


_BALL_OFFSETS = {}


def _ball_offsets(radius):
    if radius not in _BALL_OFFSETS:
        span = np.arange(-radius, radius + 1)
        dx, dy, dz = np.meshgrid(span, span, span, indexing="ij")
        keep = dx * dx + dy * dy + dz * dz <= radius * radius
        _BALL_OFFSETS[radius] = np.column_stack([dx[keep], dy[keep], dz[keep]])
    return _BALL_OFFSETS[radius]


def _place_spheres(cfg, mask, sim_seed):
    """Seeded sphere placement; returns (radius, in-mask voxel indices) pairs.

    Centers are uniform over in-mask voxels, so spheres may overlap each
    other or be cropped by the mask boundary.
    """
    gen = rng.stream(sim_seed, rng.SIM_SPHERES, 0)
    spheres = []
    for s_idx in range(cfg.spheres_per_sim):
        radius = cfg.radii[s_idx % len(cfg.radii)]
        center = mask.sites[int(gen.integers(mask.n_voxels))]
        coords = center + _ball_offsets(radius)
        in_bounds = np.all((coords >= 0) & (coords < np.array(cfg.dims)), axis=1)
        coords = coords[in_bounds]
        flat = mask._lookup[coords[:, 0], coords[:, 1], coords[:, 2]]
        spheres.append((radius, flat[flat >= 0]))
    return spheres


def _size_bins(radii):
    nominal = sorted(len(_ball_offsets(r)) for r in set(radii))
    edges = [0] + [
        (nominal[i] + nominal[i + 1]) // 2 for i in range(len(nominal) - 1)
    ] + [np.inf]
    bins = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        label = f"[{lo}, {'inf' if hi == np.inf else int(hi)})"
        bins.append((lo, hi, label))
    return bins


def power_experiment(cfg, workers=1, progress=None):
    """Detection rates for sphere signals of configured radii.

    Per simulation, spheres of true signal are planted at seeded random
    in-mask centers with a standardized slope of ``effect_size`` on the
    orthogonalized interest covariate.  A sphere counts as detected when a
    significant cluster overlaps it in at least one voxel.  Rates are
    reported per nominal radius and binned by true (cropped) sphere size.
    """
    start = time.perf_counter()
    if not cfg.methods:
        return ExperimentReport(kind="power", config=cfg.to_dict(), rows=[], runtime_seconds=0.0)
    mask = cfg.make_mask()
    z0s = [chisq_cft(p, 1) for p in cfg.cft_p]
    bins = _size_bins(cfg.radii)

    def run_sim(s):
        try:
            Y, covariates = gen_null_dataset(cfg, s, mask)
            sim_seed = rng.derive_seed(cfg.seed, s)
            spheres = _place_spheres(cfg, mask, sim_seed)
            X = _design_from(covariates, cfg.nuisance, cfg.interest, cfg.n)
            tau = cfg.tau_values(covariates)

            x = covariates[cfg.interest]
            X0 = X.X0
            x_orth = x - X0 @ np.linalg.lstsq(X0, x, rcond=None)[0]
            sd_x = x_orth.std(ddof=1)
            sd_y = Y.data.std(axis=0, ddof=1)
            signal = np.zeros(mask.n_voxels)
            for _, voxels in spheres:
                signal[voxels] = 1.0
            beta = cfg.effect_size * (sd_y / sd_x) * signal
            Y = OutcomeStack(Y.data + np.outer(x_orth, beta))

            hits = []
            for a_idx, arm in enumerate(cfg.methods):
                S = (
                    WeightStack.uniform()
                    if arm.weights == "uniform"
                    else WeightStack.scalar(tau**2)
                )
                arm_seed = rng.derive_seed(cfg.seed, s, a_idx)
                observed, dists = _run_arm(arm, Y, X, S, z0s, cfg, mask, arm_seed)
                for p, z0, dist in zip(cfg.cft_p, z0s, dists):
                    table = sei_pvalues(
                        threshold_label(observed, z0, cfg.connectivity, mask), dist
                    )
                    for alpha in cfg.alpha:
                        sig_labels = [r.label for r in table if r.p_value < alpha]
                        sig_mask = (
                            np.isin(table.labels, sig_labels)
                            if sig_labels
                            else np.zeros(mask.n_voxels, dtype=bool)
                        )
                        for radius, voxels in spheres:
                            hits.append(
                                {
                                    "method": arm.name,
                                    "cft_p": p,
                                    "alpha": alpha,
                                    "radius": radius,
                                    "true_size": int(voxels.size),
                                    "detected": bool(sig_mask[voxels].any()),
                                }
                            )
            return hits
        except Exception as exc:
            raise RuntimeError(f"simulation {s} (master seed {cfg.seed}) failed") from exc

    per_sim = parallel_map(run_sim, range(cfg.n_sims), workers)
    if progress is not None:
        progress(cfg.n_sims, cfg.n_sims)
    all_hits = [h for hits in per_sim for h in hits]

    rows = []
    for arm in cfg.methods:
        for p in cfg.cft_p:
            for alpha in cfg.alpha:
                group = [
                    h
                    for h in all_hits
                    if h["method"] == arm.name and h["cft_p"] == p and h["alpha"] == alpha
                ]
                for radius in sorted(set(cfg.radii)):
                    sub = [h for h in group if h["radius"] == radius]
                    k, t = sum(h["detected"] for h in sub), len(sub)
                    lo, hi = _binomial_ci(k, t) if t else (0.0, 1.0)
                    rows.append(
                        {
                            "kind": "power_radius",
                            "method": arm.name,
                            "cft_p": p,
                            "alpha": alpha,
                            "radius": radius,
                            "n_spheres": t,
                            "detected": k,
                            "rate": k / t if t else 0.0,
                            "ci_low": lo,
                            "ci_high": hi,
                        }
                    )
                for lo_edge, hi_edge, label in bins:
                    sub = [h for h in group if lo_edge <= h["true_size"] < hi_edge]
                    k, t = sum(h["detected"] for h in sub), len(sub)
                    lo, hi = _binomial_ci(k, t) if t else (0.0, 1.0)
                    rows.append(
                        {
                            "kind": "power_size",
                            "method": arm.name,
                            "cft_p": p,
                            "alpha": alpha,
                            "size_bin": label,
                            "n_spheres": t,
                            "detected": k,
                            "rate": k / t if t else 0.0,
                            "ci_low": lo,
                            "ci_high": hi,
                        }
                    )
    return ExperimentReport(
        kind="power",
        config=cfg.to_dict(),
        rows=rows,
        runtime_seconds=time.perf_counter() - start,
    )


def _require(table, key, path):
    if key not in table:
        raise ConfigError(f"missing required key {path}.{key}")
    return table[key]


def load_config(path, kind):
    """Load a TOML experiment configuration.

    ``kind`` selects the null or power schema.  Parse errors and missing
    required keys surface as ConfigError naming the key (and line, for
    syntax errors).
    """
    with open(path, "rb") as f:
        try:
            doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}") from exc
    sim = _require(doc, "simulation", "config")
    kwargs = {
        "n": _require(sim, "n", "simulation"),
        "n_sims": _require(sim, "n_sims", "simulation"),
        "seed": _require(sim, "seed", "simulation"),
        "covariates": _require(sim, "covariates", "simulation"),
    }
    model = _require(sim, "model", "simulation")
    kwargs["nuisance"] = model.get("nuisance", [])
    kwargs["interest"] = _require(model, "interest", "simulation.model")
    for key in ("dims", "fwhm_voxels", "nboot", "cft_p", "alpha", "connectivity"):
        if key in sim:
            kwargs[key] = sim[key]
    if "variance" in sim:
        kwargs["variance_log_slopes"] = sim["variance"]
    if "correlation" in sim:
        kwargs["correlation_fwhm_slopes"] = sim["correlation"]
    if "methods" in sim:
        kwargs["methods"] = [MethodArm(**m) for m in sim["methods"]]
    if kind == "null":
        return NullSimConfig(**kwargs)
    power = doc.get("power", {})
    for src, dst in (("radii", "radii"), ("spheres_per_sim", "spheres_per_sim"), ("effect_size", "effect_size")):
        if src in power:
            kwargs[dst] = power[src]
    return PowerSimConfig(**kwargs)


def config_out_prefix(path):
    """Optional simulation.out_prefix from a config file, if present."""
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    return doc.get("simulation", {}).get("out_prefix")


_TEXT_COLUMNS = {
    "fwer": ["method", "cft_p", "alpha", "n_sims", "rejections", "fwer", "ci_low", "ci_high"],
    "power_radius": [
        "method", "cft_p", "alpha", "radius", "n_spheres", "detected", "rate", "ci_low", "ci_high",
    ],
    "power_size": [
        "method", "cft_p", "alpha", "size_bin", "n_spheres", "detected", "rate", "ci_low", "ci_high",
    ],
}


def _format_cell(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def report_text(report):
    """Human-readable report table (deterministic; no timing information)."""
    lines = [f"experiment: {report.kind}", f"config: {json.dumps(report.config)}"]
    for kind in ("fwer", "power_radius", "power_size"):
        rows = [r for r in report.rows if r["kind"] == kind]
        if not rows:
            continue
        columns = _TEXT_COLUMNS[kind]
        cells = [[_format_cell(r[c]) for c in columns] for r in rows]
        widths = [
            max(len(col), *(len(row[j]) for row in cells)) for j, col in enumerate(columns)
        ]
        lines.append("")
        lines.append("  ".join(col.ljust(w) for col, w in zip(columns, widths)))
        for row in cells:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def write_report(report, path_prefix):
    """Write machine-readable records and the text table for a report.

    Emits ``<prefix>_records.jsonl`` (a config line then one line per row)
    and ``<prefix>_report.txt``.  Neither file contains timing metadata, so
    reruns with the same configuration are byte-identical.
    """
    records_path = f"{path_prefix}_records.jsonl"
    text_path = f"{path_prefix}_report.txt"
    with open(records_path, "w") as f:
        f.write(json.dumps({"type": "config", "kind": report.kind, "config": report.config}) + "\n")
        for row in report.rows:
            f.write(json.dumps({"type": "row", **row}) + "\n")
    with open(text_path, "w") as f:
        f.write(report_text(report))
    return {"records": records_path, "report": text_path}
