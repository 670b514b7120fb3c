from .mechanisms import (
    MECHANISMS, MechanismSpec, SimulatedData, TooFewEcsError, UnknownMechanismError,
    gen_demo, gen_mech1, gen_mech2, gen_exchangeable, generate, true_ate, default_family,
)
from .monte_carlo import McSummary, monte_carlo, evaluate_acceptance, summarize
