"""Cache-performance laboratory.

Hazard-rate upper bounds on cache hit probability, traffic-model trace
generation, online replacement policies, offline optimal replay, and
closed-form hit probabilities, wired into an experiment runner exposed
through a FastAPI service and a thin CLI client.
"""

from cachelab.hazard import (
    HAZARD_CAP,
    Erlang,
    Exponential,
    Gamma,
    GeneralizedPareto,
    GpdFit,
    Hyperexponential,
    IrtDistribution,
    Uniform,
    fit_gpd_mle,
    from_rate,
    zipf_rates,
)

__all__ = [
    "HAZARD_CAP",
    "Erlang",
    "Exponential",
    "Gamma",
    "GeneralizedPareto",
    "GpdFit",
    "Hyperexponential",
    "IrtDistribution",
    "Uniform",
    "fit_gpd_mle",
    "from_rate",
    "zipf_rates",
]

__version__ = "0.1.0"
