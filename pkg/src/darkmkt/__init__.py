"""Mean-field model of a search market with dark venues: steady state, stability, prices."""

from .dynamics import BlowUpError, integrate
from .equilibrium import ConvergenceError, SteadyState, solve_steady_state
from .model import ModelParams, ValidationError, load_params, two_asset_params, validate
from .pricing import equilibrium_prices
from .stability import stability_certificate

__all__ = [
    "BlowUpError",
    "ConvergenceError",
    "ModelParams",
    "SteadyState",
    "ValidationError",
    "equilibrium_prices",
    "integrate",
    "load_params",
    "solve_steady_state",
    "stability_certificate",
    "two_asset_params",
    "validate",
]
