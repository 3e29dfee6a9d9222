from .base import StateSpaceModel
from .benchmark import BenchmarkModel, benchmark_mean, benchmark_suffstats
from .epidemic import EpidemicModel, beta_binomial_logpmf
from .linear_gaussian import LinearGaussianModel
from .population import PopulationModel, population_step_components

MODELS = {
    "benchmark": BenchmarkModel,
    "population": PopulationModel,
    "epidemic": EpidemicModel,
    "linear-gaussian": LinearGaussianModel,
}


def make_model(name: str, **params) -> StateSpaceModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; valid models: {', '.join(sorted(MODELS))}") from None
    return cls(**params)


__all__ = [
    "MODELS",
    "BenchmarkModel",
    "EpidemicModel",
    "LinearGaussianModel",
    "PopulationModel",
    "StateSpaceModel",
    "benchmark_mean",
    "benchmark_suffstats",
    "beta_binomial_logpmf",
    "make_model",
    "population_step_components",
]
