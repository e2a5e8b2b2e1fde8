"""Spatial extent inference for voxelwise regression.

Builds chi-square statistic images from mass-univariate (weighted) least
squares fits, estimates the joint null law of the image by parametric or
robust-sandwich bootstrap sampling (or a permutation baseline), and
assigns p-values to suprathreshold clusters from the null distribution of
the maximum cluster size.
"""

from .cluster import (
    ClusterRecord,
    ClusterTable,
    MaxSizeDistribution,
    cluster_sizes,
    max_cluster_size,
    null_max_distribution,
    sei_pvalues,
    threshold_label,
)
from .glm import (
    DegenerateVoxelError,
    Design,
    FitResult,
    InvalidWeightsError,
    OutcomeStack,
    SingularDesignError,
    StatImage,
    WeightStack,
    chisq_cft,
    chisq_to_f_threshold,
    f_statistic,
    f_to_chisq,
    wls_fit,
)
from .grid import Mask
from .niftiio import (
    CovariateError,
    CovariateTable,
    NiftiError,
    NotNifti1Error,
    TruncatedPayloadError,
    UnsupportedDatatypeError,
    VolumeFile,
    load_outcomes,
    read_cluster_records,
    read_covariates,
    read_nifti,
    write_covariates,
    write_nifti,
    write_results,
)
from .pbj import SqrtCovRoot, StatImageStream, pbj_bootstrap, pbj_sample, pbj_sqrt_cov
from .permutation import freedman_lane_max_distribution
from .simulate import (
    ConfigError,
    ExperimentReport,
    MethodArm,
    NullSimConfig,
    PowerSimConfig,
    fwer_experiment,
    gen_null_dataset,
    load_config,
    power_experiment,
    smooth_noise_field,
    write_report,
)
from .spbj import (
    CollinearInterestError,
    LeverageOneError,
    SandwichFit,
    abeta_hat,
    annihilator_diag,
    hc3_residuals,
    spbj_bootstrap,
    spbj_fit,
    spbj_sample,
)

__version__ = "0.1.0"
