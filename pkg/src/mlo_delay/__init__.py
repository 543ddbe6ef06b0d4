"""Delay distribution of multi-link (STR MLMR) Wi-Fi access points.

The analytic model lives in :mod:`mlo_delay.analytic`; the discrete-event
simulator in :mod:`mlo_delay.simulator`; traffic sources in
:mod:`mlo_delay.traffic`.
"""

from .analytic import Scenario, solve_fixed_point
from .phy import AirTimes, PhyMacParams, compute_air_times

__all__ = ["AirTimes", "PhyMacParams", "Scenario", "compute_air_times", "solve_fixed_point"]
__version__ = "0.1.0"
