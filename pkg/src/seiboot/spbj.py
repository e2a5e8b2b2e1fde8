"""Sandwich-covariance statistic image and its bootstrap sampler.

The interest coefficient is estimated by voxelwise weighted least squares
with a working variance model S.  Its variance is estimated robustly: the
weighted residuals are inflated by the annihilator diagonal (the HC3
small-sample correction), projected against the nuisance block, and
collected into a row u(v) whose squared norm forms the meat of the
sandwich A^{-1} ||u||^2 A^{-1}.  The same rows, scaled to unit norm,
double as the covariance square root the bootstrap samples through.

Restricted to a scalar interest parameter: with several tested columns the
joint law of the statistic image is not available to sample from.
"""

import numpy as np

from . import rng
from .glm import (
    DegenerateVoxelError,
    SingularDesignError,
    StatImage,
    _gram_solve,
    wls_fit,
)
from .pbj import SqrtCovRoot, StatImageStream

# Annihilator diagonal entries at or below this are treated as leverage-one
# observations, for which the HC3 inflation is undefined.
LEVERAGE_EPS = 1e-10

# Relative tolerance for declaring the interest column collinear with the
# nuisance block under the weighted inner product.
_COLLINEAR_REL_TOL = 1e-10


class CollinearInterestError(ValueError):
    """Interest column lies in the weighted span of the nuisance block."""

    def __init__(self):
        super().__init__("interest column collinear with nuisance")


class LeverageOneError(ValueError):
    """An observation with leverage one, where HC3 residuals are undefined."""

    def __init__(self, voxel, subject):
        self.voxel = int(voxel)
        self.subject = int(subject)
        super().__init__(
            f"leverage-one observation at voxel {self.voxel}, subject {self.subject}"
        )


class SandwichFit:
    """Voxelwise robust fit: coefficient, variance, statistic, and root."""

    def __init__(self, beta, var_beta, root, stat, hc3_resid):
        self.beta = beta
        self.var_beta = var_beta
        self.root = root
        self.stat = stat
        self.hc3_resid = hc3_resid


def annihilator_diag(X, s):
    """Diagonal of P = I - S^{-1/2} X (X' S^{-1} X)^{-1} X' S^{-1/2}.

    ``s`` holds the per-observation variance scales at one voxel.  Entries
    are one minus leverage and lie in [0, 1].
    """
    X = np.asarray(X, dtype=float)
    s = np.asarray(s, dtype=float)
    if X.ndim != 2 or s.shape != (X.shape[0],):
        raise ValueError("X must be n-by-k and s a length-n vector")
    if not (np.isfinite(s).all() and (s > 0).all()):
        raise ValueError("invalid weights: scales must be positive and finite")
    w = 1.0 / s
    try:
        gram_inv = np.linalg.inv((X * w[:, None]).T @ X)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("singular design") from exc
    leverage = w * np.einsum("ij,jk,ik->i", X, gram_inv, X)
    return np.clip(1.0 - leverage, 0.0, 1.0)


def _annihilator_diag_all(X, W):
    """Annihilator diagonals for every voxel; W is (n, 1) or (n, V)."""
    if W.shape[1] == 1:
        w = W[:, 0]
        try:
            gram_inv = np.linalg.inv((X * w[:, None]).T @ X)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError("singular design") from exc
        leverage = w * np.einsum("ij,jk,ik->i", X, gram_inv, X)
        return np.clip(1.0 - leverage, 0.0, 1.0)[:, None]
    gram = np.einsum("iv,ij,ik->vjk", W, X, X, optimize=True)
    try:
        gram_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("singular design") from exc
    leverage = W * np.einsum("vjk,ij,ik->iv", gram_inv, X, X, optimize=True)
    return np.clip(1.0 - leverage, 0.0, 1.0)


def _check_leverage(diag):
    bad = diag <= LEVERAGE_EPS
    if bad.any():
        subject, voxel = np.unravel_index(np.argmax(bad), bad.shape)
        raise LeverageOneError(voxel, subject)


def hc3_residuals(Y, X, S):
    """Weighted residuals divided by the full-model annihilator diagonal.

    Q_i(v) = S_i(v)^{-1/2} (Y_i(v) - X_i zeta(v)) / P^X_ii(v).
    """
    fit = wls_fit(Y, X, S, weighted_residuals=True)
    W = 1.0 / S.scales(Y.n, Y.n_voxels)
    diag = _annihilator_diag_all(X.X, W)
    _check_leverage(diag)
    return fit.resid / diag


def abeta_hat(X0, X1, s):
    """Weighted energy of the interest column after nuisance projection.

    Returns X1' S^{-1/2} P^{X0} S^{-1/2} X1 for a single interest column,
    which is positive exactly when X1 is not in the weighted span of X0.
    """
    X0 = np.asarray(X0, dtype=float)
    x1 = np.asarray(X1, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float)
    if x1.shape[0] != X0.shape[0] or s.shape != (X0.shape[0],):
        raise ValueError("X0, X1, and s disagree on subject count")
    w = (1.0 / s)[:, None]
    projected = _project_out_nuisance(X0, x1, w)[:, 0]
    value = float(projected @ projected)
    reference = float(np.sum(w[:, 0] * x1 * x1))
    if value <= _COLLINEAR_REL_TOL * reference:
        raise CollinearInterestError()
    return value


def _project_out_nuisance(X0, x1, W):
    """S^{-1/2}-scaled interest column with its weighted X0 projection removed.

    Returns the n-by-V matrix c with c(v) = P^{X0}(v) S^{-1/2}(v) x1; its
    column norms squared equal the A-hat scalars because the projector is
    idempotent.
    """
    sqrt_w = np.sqrt(W)
    if W.shape[1] == 1:
        w = W[:, 0]
        try:
            coef = np.linalg.solve((X0 * w[:, None]).T @ X0, (X0 * w[:, None]).T @ x1)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError("singular design") from exc
        return sqrt_w * (x1 - X0 @ coef)[:, None]
    gram = np.einsum("iv,ij,ik->vjk", W, X0, X0, optimize=True)
    rhs = np.einsum("iv,ij,i->vj", W, X0, x1, optimize=True)
    try:
        coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("singular design") from exc
    return sqrt_w * (x1[:, None] - X0 @ coef.T)


def spbj_fit(Y, X, S):
    """Robust voxelwise fit of a scalar interest parameter.

    Per voxel: weighted least squares with weights 1/S, HC3 residuals Q,
    the unnormalized root row u(v) = X1' S^{-1/2} P^{X0} diag(Q(v)), the
    sandwich variance A^{-1} ||u||^2 A^{-1}, and the Wald statistic
    beta^2 / var on the chi-square(1) scale.

    Returns
    -------
    SandwichFit
    """
    if X.m1 != 1:
        raise ValueError("sPBJ requires a scalar interest parameter")
    if Y.n != X.n:
        raise ValueError("outcome stack and design disagree on subject count")
    if Y.n <= X.m:
        raise ValueError("need more subjects than design columns")

    W = 1.0 / S.scales(Y.n, Y.n_voxels)
    coef = _gram_solve(X.X, W, Y.data)
    resid_w = np.sqrt(W) * (Y.data - X.X @ coef)

    diag_full = _annihilator_diag_all(X.X, W)
    _check_leverage(diag_full)
    Q = resid_w / diag_full

    x1 = X.X1[:, 0]
    c = _project_out_nuisance(X.X0, x1, W)
    abeta = np.einsum("iv,iv->v", c, c)
    reference = np.sum(W * (x1 * x1)[:, None], axis=0)
    if (abeta <= _COLLINEAR_REL_TOL * reference).any():
        raise CollinearInterestError()

    u = c * Q
    omega = np.einsum("iv,iv->v", u, u)
    norms = np.sqrt(omega)
    bad = ~(norms > np.finfo(float).tiny)
    if bad.any():
        raise DegenerateVoxelError(np.flatnonzero(bad)[0])

    if abeta.shape[0] == 1:
        abeta = np.broadcast_to(abeta, omega.shape)
    var_beta = omega / abeta**2
    beta = coef[X.m0]
    stat = StatImage(beta * beta / var_beta, df=1)
    root = SqrtCovRoot((u / norms).T)
    return SandwichFit(beta=beta, var_beta=var_beta, root=root, stat=stat, hc3_resid=Q)


def spbj_sample(root, draw):
    """One bootstrap image from an n-vector of standard normal draws.

    The linear statistic root @ draw is standard normal per voxel; it is
    squared onto the chi-square(1) scale so observed and bootstrap images
    share a single thresholding path.
    """
    draw = np.asarray(draw, dtype=float)
    if draw.shape != (root.n,):
        raise ValueError(f"draw shape {draw.shape} does not match n = {root.n}")
    z = root.rows @ draw
    return StatImage(z * z, df=1)


def spbj_bootstrap(root, B, seed):
    """Stream of B bootstrap images with the same determinism contract as
    the parametric sampler: image b depends only on (seed, b)."""

    def make_image(b):
        draw = rng.stream(seed, rng.SPBJ_DRAWS, b).standard_normal(root.n)
        return spbj_sample(root, draw)

    return StatImageStream(B, make_image)
