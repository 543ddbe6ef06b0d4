import pytest

from mlo_delay.phy import PhyMacParams, compute_air_times

US = 1e-6

# Timing set with 32 µs control frames and a 40 µs preamble; gives round
# numbers (T_s = 239.24 µs, T_c = 123 µs) that are easy to check by hand.
ROUND_TIMINGS = dict(sigma=9 * US, sifs=16 * US, difs=34 * US, t_rts=32 * US, t_cts=32 * US,
                     t_ack=32 * US, phy_preamble=40 * US, data_rate=980.4e6, packet_bits=12000)


@pytest.fixture
def params():
    return PhyMacParams()


@pytest.fixture
def air(params):
    return compute_air_times(params)


@pytest.fixture
def round_params():
    return PhyMacParams(**ROUND_TIMINGS)
