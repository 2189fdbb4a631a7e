"""Global power-system momentum estimation from converter-based probing.

The package models mixed machine/converter grids with the classical
constant-EMF swing model, linearizes them around an AC power flow
equilibrium, and recovers the total system momentum (the sum of 2 H S_B
over machines and T_a P_ref over grid-forming converters) from the change
of the fitted rational frequency response when a known momentum increment
is switched on the converter side.  Both a frequency-scan estimator (AC
sweep of the linearized model) and a time-domain probing estimator
(coherent sinusoidal tones injected in simulation, with optional
Ornstein-Uhlenbeck load noise) are provided.
"""

from .cases import (Bus, Branch, CaseError, Converter, Governor, Load,
                    Machine, PowerSystemCase, converter_momentum, load_case,
                    machine_momentum, save_case, system_momentum,
                    validate_case, with_converter_momentum,
                    with_inertia_factors)
from .powerflow import (Equilibrium, PowerFlowError, PowerFlowResult,
                        build_ybus, equilibrium, kron_reduce, solve_powerflow)

__version__ = "0.1.0"
