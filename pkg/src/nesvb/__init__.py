"""Evolution-strategies ELBO gradients (NESVB) and classic baselines for variational inference."""
from .core import ElboEstimate, Layout, NonFiniteError, ParamVector, elbo_mean, elbo_single_sample
from .estimators import (
    EstimatorConfig,
    GradientEstimate,
    NesConfig,
    make_estimator,
    nesvb_gradient,
    reinforce_gradient,
    rws_gradient,
    sgvb_gradient,
    st_gumbel_gradient,
)
from .models import GmmModel, NoisyScaleModel, gmm_generate_dataset
from .optimizer import OptimizerState, step
from .stats import Gaussian1D, RngStream

__version__ = "0.1.0"
