"""Binary exponential backoff: mean contention window per transmission."""

from __future__ import annotations


def stage_window(stage: int, cw_min: int) -> int:
    """Largest backoff value drawable at ``stage``: 2^stage (CW_min + 1) - 1."""
    return (cw_min + 1) * (1 << stage) - 1


def mean_contention_window(p: float, cw_min: int, m: int) -> float:
    """Average contention window (slots) seen per transmission attempt.

    ``p`` is the per-attempt collision probability and ``m`` the highest
    backoff stage. The usual closed form

        (1 - p - p (2p)^m) / (1 - 2p) * (CW_min + 1) - 1

    has a removable singularity at p = 1/2. Its ratio equals the polynomial
    (1 - p) sum_{k<m} (2p)^k + (2p)^m, which is what gets evaluated here,
    so p = 1/2 needs no special branch ((2 + m)/2 falls out directly).
    The result grows without bound as p -> 1 when m > 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"collision probability must be in [0, 1), got {p!r}")
    x = 2.0 * p
    head = 0.0
    term = 1.0
    for _ in range(m):
        head += term
        term *= x
    ratio = (1.0 - p) * head + term
    return ratio * (cw_min + 1) - 1.0
