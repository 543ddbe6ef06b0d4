"""Overlapping-BSS contention seen on one link.

N identical contenders share each of the AP's links. They transmit in a
generic slot with probability ``tau_cont`` and are coupled to the AP
through its own per-slot transmission probability.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backoff import mean_contention_window
from .phy import AirTimes, PhyMacParams


@dataclass(frozen=True)
class ObssState:
    p_empty: float
    p_succ: float
    p_coll_slot: float
    rho: float
    p: float
    tau_cont: float
    p_cont: float
    e_backoff_cont: float


def slot_probabilities(tau_cont: float, n: int) -> tuple[float, float, float]:
    """Probabilities that a slot on the link is empty, a success, or a collision."""
    if n == 0 or tau_cont == 0.0:
        return 1.0, 0.0, 0.0
    p_e = (1.0 - tau_cont) ** n
    p_s = n * tau_cont * (1.0 - tau_cont) ** (n - 1)
    p_c = max(0.0, 1.0 - p_e - p_s)
    return p_e, p_s, p_c


def channel_occupancy(p_e: float, p_s: float, p_c: float, air: AirTimes, sigma: float) -> float:
    """Fraction of backoff wall-clock time during which the link is busy."""
    mean_slot = p_e * sigma + p_s * air.t_s + p_c * air.t_c
    return 1.0 - sigma / mean_slot


def ap_collision_probability(tau_cont: float, n: int) -> float:
    """Chance that at least one contender fires in the AP's transmission slot."""
    return 1.0 - slot_probabilities(tau_cont, n)[0]


def contender_update(tau_ap: float, tau_cont_prev: float, n: int, alpha: float,
                     params: PhyMacParams) -> tuple[float, float, float]:
    """One pass of the contender map.

    Returns ``(tau_cont, p_cont, e_backoff_cont)``. Contenders behave like
    single-link stations, so their mean backoff is half the mean window at
    their own collision probability.
    """
    if n == 0:
        return 0.0, 0.0, params.cw_min / 2.0
    others = n - 1
    p_cont = 1.0 - (1.0 - tau_cont_prev) ** others * (1.0 - tau_ap)
    e_backoff_cont = mean_contention_window(p_cont, params.cw_min, params.m_stages) / 2.0
    tau_cont = alpha / (e_backoff_cont + 1.0)
    return tau_cont, p_cont, e_backoff_cont


def obss_state(tau_cont: float, p_cont: float, e_backoff_cont: float, n: int,
               air: AirTimes, sigma: float) -> ObssState:
    p_e, p_s, p_c = slot_probabilities(tau_cont, n)
    return ObssState(
        p_empty=p_e,
        p_succ=p_s,
        p_coll_slot=p_c,
        rho=channel_occupancy(p_e, p_s, p_c, air, sigma),
        p=1.0 - p_e,
        tau_cont=tau_cont,
        p_cont=p_cont,
        e_backoff_cont=e_backoff_cont,
    )
