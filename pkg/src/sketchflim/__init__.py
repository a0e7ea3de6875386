"""Spline-sketch compression and lifetime estimation for TCSPC/FLIM data."""

from .decay import (
    BiParams,
    BiRanges,
    Histogram,
    IrfSpec,
    MonoParams,
    MonoRanges,
    SpatialMap,
    TimeAxis,
    build_irf,
    derive_seed,
    expected_counts,
    generate_spatial_map,
    generate_trial_set,
    histogram_to_timestamps,
    model_curve,
    sample_histogram,
)
from .errors import ConfigError, DataError, NumericError, SketchFlimError
from .fisher import (
    FisherDensity,
    KnotSet,
    allocate_knots,
    fisher_cdf,
    fisher_density_bi,
    fisher_density_mono,
    mu_gradient,
    uniform_knots,
)
from .fit import (
    CrbResult,
    FitContext,
    FitResult,
    crb,
    fit_bi_sketch,
    fit_histogram_mle,
    fit_histogram_nlsf,
    fit_mono_sketch,
    fit_sketch,
    make_context,
    mean_lifetime,
    model_sketch,
    phasor_mono_lifetime,
)
from .metrics import (
    MetricReport,
    RunKey,
    assemble_report,
    bland_altman,
    evaluate_run,
    relative_accuracy,
    scalar_metrics,
    ssim_map,
)
from .sketch import (
    FxpLut,
    PhasorPoint,
    SketchVector,
    SplineBasis,
    analytic_mono_phasor,
    basis_eval,
    basis_matrix,
    build_fxp_lut,
    fxp_accumulate,
    fxp_sketch_from_timestamps,
    irf_correct_phasor,
    normalize_sketch,
    phasor_from_histogram,
    phasor_from_timestamps,
    sketch_from_histogram,
    sketch_from_timestamps,
    sketch_matrix,
)

__version__ = "0.1.0"
