import math
from collections import defaultdict

import numpy as np
import pytest

from mlo_delay.analytic import DelayDistribution, Scenario, solve_fixed_point, stationary_distribution
from mlo_delay.phy import compute_air_times
from mlo_delay.simulator import (SimConfig, SimulationError, derive_seed, percentile, pool, run,
                                 run_replications)
from mlo_delay.traffic import Arrivals, batch_video_source

import scripted


# ---------------------------------------------------------------- percentile

def test_percentile_nearest_rank():
    assert percentile(list(range(1, 101)), 0.95) == 95
    assert percentile([4.2], 0.3) == 4.2
    assert percentile([3, 1, 2], 0.5) == 2


def test_percentile_exponential():
    x = np.random.default_rng(0).exponential(1.0, 1_000_000)
    assert percentile(x, 0.95) == pytest.approx(math.log(20), rel=1e-2)


@pytest.mark.parametrize("samples,q", [([], 0.5), ([1.0], 0.0), ([1.0], 1.0)])
def test_percentile_errors(samples, q):
    with pytest.raises(ValueError):
        percentile(samples, q)


# ---------------------------------------------------------------- scripted scenario

def test_five_packet_script_trace():
    report = scripted.run_script()
    assert "\n".join(report.trace) == scripted.EXPECTED
    assert report.n_departed == 5


# ---------------------------------------------------------------- single packet

def test_isolated_packet_delay(params, air):
    n = 100_000
    rng = np.random.default_rng(1)
    # far apart, so each packet meets an idle system
    times = np.arange(n) * 5e-3 + rng.uniform(0, 1e-3, n)
    rep = run(Scenario(1, 1.0), params, cfg=SimConfig(duration=n * 5e-3, warmup=0.0),
              arrivals=Arrivals(times, np.full(n, params.packet_bits)))
    assert rep.n_departed == n
    assert rep.mean_delay == pytest.approx(7.5 * params.sigma + air.t_s, rel=1e-2)
    slots = np.round((rep.delay_samples - air.t_s) / params.sigma)
    assert set(np.unique(slots)) == set(range(16))
    assert np.allclose(rep.delay_samples, air.t_s + slots * params.sigma, atol=1e-12)


# ---------------------------------------------------------------- invariants

def _busy_scenario(params):
    return Scenario.from_load(3, 30e6, params.packet_bits, 5, 0.25)


def test_determinism(params):
    sc = _busy_scenario(params)
    a = run(sc, params, cfg=SimConfig(seed=42, duration=3.0))
    b = run(sc, params, cfg=SimConfig(seed=42, duration=3.0))
    c = run(sc, params, cfg=SimConfig(seed=43, duration=3.0))
    assert a.to_json() == b.to_json()
    assert np.array_equal(a.delay_samples, b.delay_samples)
    assert a.to_json() != c.to_json()


@pytest.mark.parametrize("s,load", [(1, 10e6), (2, 30e6), (4, 40e6), (1, 30e6)])
def test_conservation_and_checker(params, s, load):
    sc = Scenario.from_load(s, load, params.packet_bits, 5, 0.25)
    rep = run(sc, params, cfg=SimConfig(seed=3, duration=3.0, check_invariants=True))
    assert rep.n_arrivals == rep.n_departed + rep.n_buffered_end + rep.n_in_service_end
    assert rep.n_in_service_end <= s
    assert rep.p50 <= rep.p95 <= rep.p99
    assert rep.throughput_bps <= rep.offered_bps


def test_checker_under_batches(params):
    sc = Scenario.from_load(3, 40e6, params.packet_bits, 5, 0.25)
    rep = run(sc, params, batch_video_source("2160p", seed=1),
              SimConfig(seed=4, duration=3.0, check_invariants=True))
    assert rep.n_departed > 0


def test_no_overlapping_transmissions(params, air):
    sc = _busy_scenario(params)
    rep = run(sc, params, cfg=SimConfig(seed=5, duration=2.0, trace=True, trace_cap=2_000_000))
    assert len(rep.trace) < 2_000_000
    rows = [line.split(",") for line in rep.trace]
    attempts = defaultdict(list)      # link -> [(t, packet)]
    collided = set()
    links_of = defaultdict(set)
    departures = defaultdict(int)
    for t, link, ev, pkt in rows:
        if ev == "TX":
            attempts[link].append((float(t), pkt))
            links_of[pkt].add(link)
        elif ev == "COLLISION":
            collided.add((float(t), pkt))
        elif ev == "DEPART":
            departures[pkt] += 1
            links_of[pkt].add(link)
    for link, seq in attempts.items():
        for (t0, p0), (t1, _) in zip(seq, seq[1:]):
            length = air.t_c if (t0, p0) in collided else air.t_s
            assert t1 >= t0 + length - 1e-6  # trace prints microseconds
    assert all(len(links) == 1 for links in links_of.values())
    assert all(n == 1 for n in departures.values())


def test_stability_verdict(params):
    light = run(Scenario.from_load(2, 5e6, params.packet_bits, 5, 0.25), params,
                cfg=SimConfig(seed=1, duration=20.0))
    heavy = run(Scenario.from_load(1, 30e6, params.packet_bits, 5, 0.25), params,
                cfg=SimConfig(seed=1, duration=20.0))
    assert light.stable and light.queue_slope < 0.01 * 5e6 / 12000
    assert not heavy.stable and heavy.queue_slope > 0


def test_event_cap(params):
    with pytest.raises(SimulationError):
        run(_busy_scenario(params), params, cfg=SimConfig(duration=1.0, max_events=100))


def test_immediate_access_skips_backoff_on_idle_link(params, air):
    n = 2000
    times = np.arange(n) * 5e-3
    rep = run(Scenario(1, 1.0), params,
              cfg=SimConfig(duration=n * 5e-3, warmup=0.0, immediate_access=True),
              arrivals=Arrivals(times, np.full(n, params.packet_bits)))
    assert np.allclose(rep.delay_samples, air.t_s)


def test_fragment_airtime_scales_with_size(params, air):
    times = np.array([0.0, 0.01])
    rep = run(Scenario(1, 1.0), params, cfg=SimConfig(duration=1.0, warmup=0.0, immediate_access=True),
              arrivals=Arrivals(times, np.array([params.packet_bits, 2000])))
    short = air.t_s - (params.packet_bits - 2000) / params.data_rate
    assert rep.delay_samples == pytest.approx([air.t_s, short], abs=1e-12)


# ---------------------------------------------------------------- pure queue

@pytest.mark.parametrize("s,a", [(1, 0.3), (1, 0.9), (2, 0.5), (2, 0.9), (4, 0.6)])
def test_pure_queue_matches_erlang(params, s, a):
    ms = 1e-3
    lam = a * s / ms
    rep = run(Scenario(s, lam), params,
              cfg=SimConfig(seed=8, duration=1.12e6 / lam, mode="pure-queue", service_mean=ms))
    assert rep.n_arrivals >= 1_000_000
    q = stationary_distribution(s, a, 1 / ms)
    dist = DelayDistribution.from_queue(q)
    assert rep.queued_fraction == pytest.approx(q.eta, rel=2e-2)
    x = np.sort(rep.delay_samples)
    for t in (0.5 * ms, 2 * ms, 5 * ms):
        empirical = np.searchsorted(x, t, side="right") / x.size
        assert empirical == pytest.approx(dist.cdf(t), rel=2e-2)


# ---------------------------------------------------------------- contenders

@pytest.mark.parametrize("n", [1, 5, 10])
@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5])
def test_contender_calibration(params, n, alpha):
    sc = Scenario.from_load(2, 10e6, params.packet_bits, n, alpha)
    sol = solve_fixed_point(sc, params)
    rep = run(sc, params, cfg=SimConfig(seed=11, duration=20.0))
    for measured in rep.contender_tau:
        assert measured == pytest.approx(sol.tau_cont, rel=5e-2)


# ---------------------------------------------------------------- replications

def test_replications_pool_and_use_distinct_seeds(params):
    sc = Scenario.from_load(2, 10e6, params.packet_bits, 5, 0.25)
    pooled = run_replications(sc, params, None, SimConfig(seed=9, duration=2.0), 3)
    seeds = [r.seed for r in pooled.reports]
    assert len(set(seeds)) == 3
    assert seeds == [derive_seed(9, 100 + r) for r in range(3)]
    assert pooled.delay_samples.size == sum(r.delay_samples.size for r in pooled.reports)
    assert pool(pooled.reports).p95 == pooled.p95


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(duration=0.0)
    with pytest.raises(ValueError):
        SimConfig(duration=10.0, warmup=10.0)
    with pytest.raises(ValueError):
        SimConfig(mode="fluid")
