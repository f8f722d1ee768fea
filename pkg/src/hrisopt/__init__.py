"""Receive design for a hybrid active-passive RIS-aided uplink.

A single-antenna user reaches a multi-antenna base station directly and
through a reconfigurable surface whose elements either reflect passively or
amplify through one shared gain. The toolkit jointly picks the receive
combiner, the antenna subset, the per-element modes and discrete phases,
and the gain, minimizing the phase-noise-averaged symbol MSE under
transceiver distortion; it ships seeded channel generation, benchmark
schemes, an exhaustive tiny-instance oracle, and a Monte-Carlo driver.
"""

from .channel import (
    ChannelSet,
    FadingParams,
    Geometry,
    gen_channel_set,
    load_channel_set,
    save_channel_set,
    substream,
)
from .config import ConfigError, RunConfig, dbm_to_watts, parse_config, watts_to_dbm
from .model import (
    AntennaSelection,
    HrisConfig,
    Solution,
    SystemParams,
    mse_analytic,
    simulate_empirical_mse,
)
from .pebcd import (
    BlockFreeze,
    ConvergenceError,
    PebcdOptions,
    PebcdResult,
    run,
    run_multistart,
)
from .bench import (
    Scheme,
    TrialResult,
    brute_force,
    monte_carlo,
    parse_scheme,
    run_scheme,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "AntennaSelection",
    "BlockFreeze",
    "ChannelSet",
    "ConfigError",
    "ConvergenceError",
    "FadingParams",
    "Geometry",
    "HrisConfig",
    "PebcdOptions",
    "PebcdResult",
    "RunConfig",
    "Scheme",
    "Solution",
    "SystemParams",
    "TrialResult",
    "brute_force",
    "dbm_to_watts",
    "gen_channel_set",
    "load_channel_set",
    "monte_carlo",
    "mse_analytic",
    "parse_config",
    "parse_scheme",
    "run",
    "run_multistart",
    "run_scheme",
    "save_channel_set",
    "simulate_empirical_mse",
    "substream",
    "summarize",
    "watts_to_dbm",
    "__version__",
]
