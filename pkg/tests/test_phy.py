import math

import pytest
from hypothesis import given, strategies as st

from mlo_delay.phy import InvalidParameterError, PhyMacParams, compute_air_times

from conftest import ROUND_TIMINGS, US


def test_round_timings_by_hand(round_params):
    a = compute_air_times(round_params)
    assert a.t_data == pytest.approx(40 * US + 12000 / 980.4e6, rel=1e-12)
    assert a.t_data == pytest.approx(52.24 * US, abs=0.01 * US)
    assert a.t_c == pytest.approx(123 * US, rel=1e-12)
    assert a.t_s == pytest.approx(239.24 * US, abs=0.01 * US)


def test_default_timings_by_hand(air):
    # RTS 52 + SIFS 16 + CTS 44 + SIFS 16 + data (48 + 12.24) + SIFS 16 + BA 68 + DIFS 34 + slot 9
    assert air.t_s == pytest.approx(315.24 * US, abs=0.01 * US)
    assert air.t_c == pytest.approx((52 + 16 + 44 + 34 + 9) * US, rel=1e-12)


def test_zero_durations_rejected():
    with pytest.raises(InvalidParameterError):
        PhyMacParams(sigma=0, sifs=0, difs=0, t_rts=0, t_cts=0, t_ack=0, phy_preamble=0,
                     data_rate=1, packet_bits=1)


@pytest.mark.parametrize("field,value", [("sigma", -1e-6), ("data_rate", 0), ("packet_bits", 0),
                                         ("cw_min", 0), ("m_stages", -1), ("cw_min", 7.5)])
def test_invalid_fields(field, value):
    with pytest.raises(InvalidParameterError):
        PhyMacParams(**{field: value})


def test_doubling_packet_size_adds_payload_time(round_params):
    a = compute_air_times(round_params)
    b = compute_air_times(PhyMacParams(**{**ROUND_TIMINGS, "packet_bits": 24000}))
    assert b.t_s - a.t_s == pytest.approx(12000 / 980.4e6, rel=1e-9)
    assert b.t_c == a.t_c


def test_from_dict_round_trip_and_unknown_key(params):
    assert PhyMacParams.from_dict(params.to_dict()) == params
    with pytest.raises(InvalidParameterError):
        PhyMacParams.from_dict({"sigma": 9e-6, "slot": 9e-6})


durations = st.floats(1e-7, 1e-3)


@given(sigma=durations, sifs=durations, difs=durations, rts=durations, cts=durations,
       ack=durations, pre=durations, rate=st.floats(1e6, 1e10), bits=st.integers(1, 100_000))
def test_air_time_identities(sigma, sifs, difs, rts, cts, ack, pre, rate, bits):
    p = PhyMacParams(sigma=sigma, sifs=sifs, difs=difs, t_rts=rts, t_cts=cts, t_ack=ack,
                     phy_preamble=pre, data_rate=rate, packet_bits=bits)
    a = compute_air_times(p)
    assert a.t_s > a.t_c > 0
    assert math.isclose(a.t_s - a.t_c, sifs + a.t_data + sifs + ack, rel_tol=1e-9)
    assert compute_air_times(p) == a


@given(bits=st.integers(1, 50_000), extra=st.integers(1, 50_000), rate=st.floats(1e6, 1e10))
def test_monotone_in_size_and_rate(bits, extra, rate):
    base = PhyMacParams(packet_bits=bits, data_rate=rate)
    bigger = PhyMacParams(packet_bits=bits + extra, data_rate=rate)
    faster = PhyMacParams(packet_bits=bits, data_rate=rate * 1.5)
    a, b, c = (compute_air_times(x) for x in (base, bigger, faster))
    assert b.t_s > a.t_s and c.t_s < a.t_s
    assert a.t_c == b.t_c == c.t_c
