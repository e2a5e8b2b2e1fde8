"""Mass-univariate weighted least squares and the chi-square statistic image.

One design matrix is shared by an independent regression at every voxel.
Outcomes are stored as n-by-V matrices so a voxel is a column; all fits
are vectorized over voxels and are pure functions of their column slices,
which makes them safe for data-parallel execution.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special, stats


class SingularDesignError(ValueError):
    """The design (or a weighted Gram matrix) is rank deficient."""


class InvalidWeightsError(ValueError):
    """Weights contain non-positive or non-finite entries."""


class DegenerateVoxelError(ValueError):
    """A voxel has zero residual variation where positive variation is required."""

    def __init__(self, voxel, message="degenerate voxel"):
        self.voxel = int(voxel)
        super().__init__(f"{message} at voxel {self.voxel}")


# Relative tolerance deciding when a residual sum of squares counts as zero.
_RSS_REL_TOL = (100 * np.finfo(float).eps) ** 2

# Tail probabilities below this saturate instead of erroring; thresholds of
# practical interest live many orders of magnitude above it.
_TAIL_FLOOR = 1e-300


@dataclass
class Design:
    """Design matrix split into a nuisance block and an interest block.

    ``X0`` holds the nuisance columns and must start with the intercept;
    ``X1`` holds the tested columns.
    """

    X0: np.ndarray
    X1: np.ndarray

    def __post_init__(self):
        self.X0 = _as_column_matrix(self.X0, "X0")
        self.X1 = _as_column_matrix(self.X1, "X1")
        if self.X0.shape[0] != self.X1.shape[0]:
            raise ValueError("nuisance and interest blocks disagree on subject count")
        if not (np.isfinite(self.X0).all() and np.isfinite(self.X1).all()):
            raise ValueError("design contains non-finite entries")
        if not np.array_equal(self.X0[:, 0], np.ones(self.n)):
            raise ValueError("first nuisance column must be the intercept")
        if np.linalg.matrix_rank(self.X) < self.m:
            raise SingularDesignError("singular design")

    @property
    def X(self):
        return np.hstack([self.X0, self.X1])

    @property
    def n(self):
        return self.X0.shape[0]

    @property
    def m0(self):
        return self.X0.shape[1]

    @property
    def m1(self):
        return self.X1.shape[1]

    @property
    def m(self):
        return self.m0 + self.m1


@dataclass
class OutcomeStack:
    """Subject-by-voxel outcome matrix; row i is subject i's masked image."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("outcome stack must be a 2D n-by-V matrix")
        if not np.isfinite(self.data).all():
            raise ValueError("outcome stack contains non-finite values")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def n_voxels(self):
        return self.data.shape[1]


@dataclass
class WeightStack:
    """Per-observation variance scales S; the fitting weights are 1/S.

    ``kind`` is one of ``uniform`` (all ones), ``scalar`` (one value per
    subject), or ``voxelwise`` (an n-by-V matrix).
    """

    kind: str
    values: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("uniform", "scalar", "voxelwise"):
            raise ValueError(f"unknown weight kind: {self.kind!r}")
        if self.kind == "uniform":
            self.values = None
            return
        self.values = np.asarray(self.values, dtype=float)
        expected_ndim = 1 if self.kind == "scalar" else 2
        if self.values.ndim != expected_ndim:
            raise InvalidWeightsError(
                f"invalid weights: {self.kind} weights must be {expected_ndim}D"
            )
        if not np.isfinite(self.values).all() or not (self.values > 0).all():
            raise InvalidWeightsError("invalid weights: scales must be positive and finite")

    @classmethod
    def uniform(cls, n=None):
        return cls("uniform")

    @classmethod
    def scalar(cls, values):
        return cls("scalar", values)

    @classmethod
    def voxelwise(cls, values):
        return cls("voxelwise", values)

    def scales(self, n, n_voxels):
        """Variance scales broadcastable against an (n, V) outcome matrix."""
        if self.kind == "uniform":
            return np.ones((n, 1))
        if self.kind == "scalar":
            if self.values.shape != (n,):
                raise InvalidWeightsError(
                    f"invalid weights: expected {n} subject scales, got {self.values.shape}"
                )
            return self.values[:, None]
        if self.values.shape != (n, n_voxels):
            raise InvalidWeightsError(
                f"invalid weights: expected shape {(n, n_voxels)}, got {self.values.shape}"
            )
        return self.values


@dataclass
class StatImage:
    """Voxelwise test statistic image on the chi-square scale."""

    values: np.ndarray
    df: int
    family: str = "chi2"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("statistic image must be a 1D in-mask vector")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("statistic values must be finite and non-negative")
        self.df = int(self.df)
        if self.df < 1:
            raise ValueError("degrees of freedom must be a positive integer")

    @property
    def n_voxels(self):
        return self.values.shape[0]


@dataclass
class FitResult:
    """Per-voxel least-squares output.

    ``coef`` is m-by-V; ``resid`` is n-by-V and holds the S^{-1/2}-scaled
    residuals when ``weighted`` is set, raw residuals otherwise.
    """

    coef: np.ndarray
    resid: np.ndarray
    df_resid: int
    weighted: bool


def _as_column_matrix(arr, name):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a 2D matrix with at least one column")
    return arr


def _gram_solve(X, W, Y):
    """Solve the weighted normal equations at every voxel.

    ``W`` is (n, 1) when a single weight vector is shared across voxels and
    (n, V) for voxelwise weights.  Returns coefficients with shape (k, V).
    """
    try:
        if W.shape[1] == 1:
            Xw = X * W
            return np.linalg.solve(Xw.T @ X, Xw.T @ Y)
        A = np.einsum("iv,ij,ik->vjk", W, X, X, optimize=True)
        b = np.einsum("iv,ij,iv->vj", W, X, Y, optimize=True)
        return np.linalg.solve(A, b[..., None])[..., 0].T
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("singular design") from exc


def wls_fit(Y, X, S, weighted_residuals=False):
    """Weighted least squares at every voxel.

    Parameters
    ----------
    Y : OutcomeStack
    X : Design
    S : WeightStack
        Variance scales; the normal equations use weights 1/S.
    weighted_residuals : bool
        When set, residual row i at voxel v is S_i(v)^{-1/2} (Y_i(v) - X_i zeta(v)).

    Returns
    -------
    FitResult
    """
    if Y.n != X.n:
        raise ValueError("outcome stack and design disagree on subject count")
    if Y.n <= X.m:
        raise ValueError("need more subjects than design columns")
    W = 1.0 / S.scales(Y.n, Y.n_voxels)
    coef = _gram_solve(X.X, W, Y.data)
    resid = Y.data - X.X @ coef
    if weighted_residuals:
        resid = np.sqrt(W) * resid
    return FitResult(coef=coef, resid=resid, df_resid=Y.n - X.m, weighted=bool(weighted_residuals))


def f_statistic(Y, X, S):
    """Partial F image for the interest block, weighted by 1/S.

    Compares the full model [X0 | X1] against the nuisance-only model X0
    using weighted residual sums of squares.

    Returns
    -------
    (T, df1, df2) : (np.ndarray, int, int)
        F values per voxel with numerator df ``m1`` and denominator df ``n - m``.
    """
    if Y.n != X.n:
        raise ValueError("outcome stack and design disagree on subject count")
    if Y.n <= X.m:
        raise ValueError("need more subjects than design columns")
    W = 1.0 / S.scales(Y.n, Y.n_voxels)
    sqrt_w = np.sqrt(W)

    coef_full = _gram_solve(X.X, W, Y.data)
    rss = np.sum((sqrt_w * (Y.data - X.X @ coef_full)) ** 2, axis=0)
    coef_red = _gram_solve(X.X0, W, Y.data)
    rss0 = np.sum((sqrt_w * (Y.data - X.X0 @ coef_red)) ** 2, axis=0)

    scale = np.sum((sqrt_w * Y.data) ** 2, axis=0)
    tiny = _RSS_REL_TOL * np.maximum(scale, np.finfo(float).tiny)
    zero_numer = rss0 <= tiny
    degenerate = (rss <= tiny) & ~zero_numer
    if degenerate.any():
        raise DegenerateVoxelError(np.flatnonzero(degenerate)[0])

    T = np.zeros(Y.n_voxels)
    ok = ~zero_numer
    df2 = Y.n - X.m
    T[ok] = (np.maximum(rss0[ok] - rss[ok], 0.0) / X.m1) / (rss[ok] / df2)
    return T, X.m1, df2


def f_to_chisq(T, df1, df2):
    """Map an F image to the chi-square scale by probability integral transform.

    Each value is carried through the upper tail: z = Qchi2(df1, Pf(T)),
    evaluated with survival functions so moderate and extreme tails keep
    full precision.  The result is exactly chi-square(df1) distributed when
    T is F(df1, df2) distributed.  Tail probabilities below 1e-300 saturate.
    """
    T = np.asarray(T, dtype=float)
    if not np.isfinite(T).all():
        raise ValueError("F statistics must be finite")
    if (T < 0).any():
        raise ValueError("F statistics must be non-negative")
    if df1 < 1 or df2 < 1:
        raise ValueError("degrees of freedom must be positive")
    p_upper = np.clip(special.fdtrc(df1, df2, T), _TAIL_FLOOR, 1.0)
    z = special.chdtri(df1, p_upper)
    return StatImage(np.maximum(z, 0.0), df=int(df1))


def chisq_cft(p, df):
    """Chi-square cluster forming threshold with upper-tail probability p."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"threshold probability must be in (0, 1), got {p}")
    if df < 1:
        raise ValueError("degrees of freedom must be a positive integer")
    return float(special.chdtri(int(df), p))


def chisq_to_f_threshold(z0, df1, df2):
    """F-scale threshold equivalent to a chi-square threshold.

    The F-to-chi-square transform is strictly increasing, so thresholding
    an F image at the returned value selects exactly the voxels whose
    transformed statistic exceeds ``z0``.
    """
    if z0 < 0:
        raise ValueError("chi-square threshold must be non-negative")
    p_upper = max(float(special.chdtrc(int(df1), z0)), _TAIL_FLOOR)
    return float(stats.f.isf(p_upper, df1, df2))
