"""panelforge: longitudinal collaboration/impact panels and their dynamic models.

The package turns a national researcher roster plus a publication corpus into
a balanced researcher-by-window panel of citation-normalized productivity,
collaboration propensities, and academic rank; fits a family of cross-lagged
panel models with individual effects to that panel by normal-theory maximum
likelihood (classical or outlier-downweighted moments); compares nested
variants; decomposes two-wave effects into direct and mediated channels; and
validates the whole chain against synthetic panels with known parameters.
"""

from .config import RunConfig
from .corpus import (
    AuthorEntry,
    CollaborationProfile,
    PublicationRecord,
    RankEntry,
    ResearcherRecord,
    WindowSpec,
    classify_collaboration,
    filter_document_types,
    link_roster,
    load_publications,
    load_roster,
    make_windows,
    rank_at,
    save_publications,
    save_roster,
    select_active_population,
)
from .errors import (
    AlignmentError,
    BalanceError,
    BaselineUndefinedError,
    CollinearityError,
    ConvergenceError,
    DegenerateColumnError,
    DegenerateGroupError,
    DuplicateIdError,
    IdentificationError,
    InputError,
    ModelSpecError,
    NestingError,
    NotPositiveDefiniteError,
    PanelforgeError,
    ParseError,
    StabilityError,
)
from .indicators import (
    BYLINE_WEIGHTED,
    UNIFORM,
    CitationBaseline,
    FractionalScheme,
    WindowIndicators,
    byline_weights,
    citation_baseline,
    compute_window_indicators,
    fractional_contribution,
    fss,
    fss_scaled,
    propensities,
    write_indicators_csv,
)
from .panel import (
    PanelDataset,
    PanelObservation,
    build_panel,
    collinearity_diagnostics,
    correlation_matrix,
    descriptive_stats,
    read_panel_csv,
    write_panel_csv,
)
from .clpm import (
    ClpmSpec,
    VariantComparison,
    build_model,
    coefficient_table,
    cross_paths,
    fit_variants,
    structural_param_ids,
)
from .mediation import (
    MediationCell,
    PathSystem,
    channel_contributions,
    direct_effect,
    indirect_effect,
    mediation_report,
    mediation_table,
)
from .semcore import (
    CovarianceModel,
    FitOptions,
    FitResult,
    SampleMoments,
    akaike_information,
    chi_square_diff_test,
    chi_square_p,
    classical_moments,
    fit,
    fit_indices,
    lm_test,
    robust_moments,
)
from .synth import (
    EquationParams,
    RecoveryReport,
    TrueParameters,
    check_stability,
    default_true_parameters,
    recovery_report,
    simulate_panel,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "PanelforgeError", "InputError", "ParseError", "DuplicateIdError",
    "BaselineUndefinedError", "DegenerateGroupError", "DegenerateColumnError",
    "BalanceError", "CollinearityError", "ModelSpecError", "NestingError",
    "NotPositiveDefiniteError", "IdentificationError", "ConvergenceError",
    "StabilityError", "AlignmentError",
    # corpus
    "ResearcherRecord", "RankEntry", "AuthorEntry", "PublicationRecord",
    "CollaborationProfile", "WindowSpec", "make_windows", "load_roster",
    "save_roster", "load_publications", "save_publications", "link_roster",
    "filter_document_types", "classify_collaboration",
    "select_active_population", "rank_at",
    # indicators
    "FractionalScheme", "UNIFORM", "BYLINE_WEIGHTED", "byline_weights",
    "fractional_contribution", "CitationBaseline", "citation_baseline",
    "fss", "fss_scaled", "propensities", "WindowIndicators",
    "compute_window_indicators", "write_indicators_csv",
    # panel
    "PanelObservation", "PanelDataset", "build_panel", "descriptive_stats",
    "correlation_matrix", "collinearity_diagnostics", "write_panel_csv",
    "read_panel_csv",
    # semcore
    "CovarianceModel", "SampleMoments", "classical_moments", "robust_moments",
    "fit", "FitOptions", "FitResult", "fit_indices", "chi_square_diff_test",
    "chi_square_p", "akaike_information", "lm_test",
    # clpm
    "ClpmSpec", "build_model", "cross_paths", "structural_param_ids",
    "fit_variants", "VariantComparison", "coefficient_table",
    # mediation
    "PathSystem", "indirect_effect", "direct_effect", "channel_contributions",
    "MediationCell", "mediation_report", "mediation_table",
    # synth
    "EquationParams", "TrueParameters", "default_true_parameters",
    "check_stability", "simulate_panel", "recovery_report", "RecoveryReport",
    # config
    "RunConfig",
]
