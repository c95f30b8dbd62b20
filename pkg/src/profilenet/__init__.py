"""Person-centred survey analytics: latent profiles, description, importance, networks."""

__version__ = "0.1.0"

from .dataset import (ColumnKind, Dataset, MixtureSpec, encode_categoricals, generate_mixture_sample,
                      load_table, split_by_group, standardize, write_table)
from .errors import (ConfigError, DataError, NumericalError, ProfileNetError)
from .ggm import (bootstrap_network, centrality, compare_networks, estimate_network, glasso_fit,
                  network_from_weights, partial_correlations)
from .lpa import (ALL_MODELS, Parameterization, classify, fit_em, fit_indices, n_free_params,
                  select_model, sweep_models)
from .profile_desc import (describe_profiles, membership_correlations, vtest_categorical,
                           vtest_quantitative)
from .relimp import PredictorGroup, dominance_analysis, importance_matrix, lmg_shares, ols_fit

__all__ = [
    "ALL_MODELS", "ColumnKind", "ConfigError", "DataError", "Dataset", "MixtureSpec", "NumericalError",
    "Parameterization", "PredictorGroup", "ProfileNetError", "bootstrap_network", "centrality",
    "classify", "compare_networks", "describe_profiles", "dominance_analysis", "encode_categoricals",
    "estimate_network", "fit_em", "fit_indices", "generate_mixture_sample", "glasso_fit",
    "importance_matrix", "lmg_shares", "load_table", "membership_correlations", "n_free_params",
    "network_from_weights", "ols_fit", "partial_correlations", "select_model", "split_by_group",
    "standardize", "sweep_models", "vtest_categorical", "vtest_quantitative", "write_table",
]
