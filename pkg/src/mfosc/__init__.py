"""Laboratory for sign changes of completely multiplicative +-1 functions."""

from .core import (
    ExperimentParams,
    Interval,
    PrimeSignAssignment,
    SignTable,
    f_at,
    load_table,
    mean_value,
    save_table,
    sieve_signs,
)
from .oscillation import (
    OscillationReport,
    ShiftSpec,
    count_sign_changes,
    floor_shift_sums,
    integral_sigma,
    locate_sign_change,
    pigeonhole_agreement_witness,
    ratio_floor_sigma,
    shift_sum,
    short_interval_mean,
    sigma,
    sigma_thresholds,
)
from .smooth import (
    AlphaChain,
    ChainKnobs,
    MatchedProductSpec,
    RatioFactor,
    RatioProduct,
    approximate_in_interval,
    build_alpha_chain,
    chain_prefix_sigma_profile,
    find_matched_products,
    in_Rx,
    prime_count_in_J,
    reorder_prefix,
)
from .experiment import ExperimentConfig, interval_avoiding_denominators, resolve_params, run_experiment

__version__ = "0.1.0"
