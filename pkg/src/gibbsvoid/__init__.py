"""Void-probability densities for locally stable Gibbs point processes and Ising fields."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    PointPattern,
    QuadratureScheme,
    Window,
    build_quadrature,
    min_pairwise_distance,
    read_pattern,
    window_measure,
    write_pattern,
)
from .inference import (  # noqa: E402
    ConjectureVoid,
    ExactDiscreteVoid,
    FitResult,
    MonteCarloVoid,
    conjectured_log_partition,
    conjectured_void,
    exact_log_likelihood,
    log_likelihood_ratio,
    log_posterior_unnorm,
    mle_fit,
    posterior_grid,
    pseudo_log_likelihood,
    score,
)
from .models import (  # noqa: E402
    ModelSpec,
    cond_intensity,
    energy,
    grad_log_cond_intensity,
    higher_order_cond_intensity,
    local_stability_bound,
    model_from_dict,
)
from .oracle import DiscreteSpace, conjecture_report, enumerate_exact, exact_log_likelihood_discrete  # noqa: E402
from .simulate import (  # noqa: E402
    MCMCConfig,
    SampleSet,
    estimate_generating_functional,
    estimate_intensity,
    estimate_void,
    implied_retention,
    sample_gibbs,
    sample_poisson,
    thin_independent,
)

__all__ = [
    "__version__",
    "ConjectureVoid",
    "DiscreteSpace",
    "ExactDiscreteVoid",
    "FitResult",
    "MCMCConfig",
    "ModelSpec",
    "MonteCarloVoid",
    "PointPattern",
    "QuadratureScheme",
    "SampleSet",
    "Window",
    "build_quadrature",
    "cond_intensity",
    "conjecture_report",
    "conjectured_log_partition",
    "conjectured_void",
    "energy",
    "enumerate_exact",
    "estimate_generating_functional",
    "estimate_intensity",
    "estimate_void",
    "exact_log_likelihood",
    "exact_log_likelihood_discrete",
    "grad_log_cond_intensity",
    "higher_order_cond_intensity",
    "implied_retention",
    "local_stability_bound",
    "log_likelihood_ratio",
    "log_posterior_unnorm",
    "min_pairwise_distance",
    "mle_fit",
    "model_from_dict",
    "posterior_grid",
    "pseudo_log_likelihood",
    "read_pattern",
    "sample_gibbs",
    "sample_poisson",
    "score",
    "thin_independent",
    "window_measure",
    "write_pattern",
]
