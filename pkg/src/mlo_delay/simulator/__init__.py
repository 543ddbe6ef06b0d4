"""Discrete-event simulation of a multi-link AP under OBSS contention.

Two modes are available. ``protocol`` plays out the multi-link backoff
rules packet by packet: a packet that finds idle interfaces gets a backoff
instance on each of them, leaves the buffer on the first one to expire, and
is pinned to its closest-to-expire instance when another packet arrives.
``pure-queue`` skips the MAC and serves packets from S exponential servers,
which makes it an M/M/S reference.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..analytic import Scenario, solve_fixed_point
from ..phy import InvalidParameterError, PhyMacParams, compute_air_times
from ..traffic import Arrivals, TrafficSource, poisson_source
from . import engine

__all__ = ["PooledReport", "SimConfig", "SimReport", "SimulationError", "percentile", "run",
           "run_replications", "pool", "format_trace", "derive_seed"]


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    duration: float = 60.0
    warmup: Optional[float] = None        # default: 10% of duration
    mode: str = "protocol"                # or "pure-queue"
    service_mean: Optional[float] = None  # pure-queue; default: analytic E[D_s]
    immediate_access: bool = False
    check_invariants: bool = False
    trace: bool = False
    trace_cap: int = 100_000
    max_events: int = 2_000_000_000
    queue_samples: int = 2000
    stability_eps: Optional[float] = None  # packets/s; default 1% of the arrival rate

    def __post_init__(self) -> None:
        if self.mode not in ("protocol", "pure-queue"):
            raise InvalidParameterError(f"unknown simulation mode {self.mode!r}")
        if not self.duration > 0:
            raise InvalidParameterError("duration must be positive")
        if not 0 <= self.effective_warmup < self.duration:
            raise InvalidParameterError("need 0 <= warmup < duration")

    @property
    def effective_warmup(self) -> float:
        return 0.1 * self.duration if self.warmup is None else self.warmup


@dataclass
class SimReport:
    delay_samples: np.ndarray = field(repr=False)
    p50: float
    p95: float
    p99: float
    mean_delay: float
    throughput_bps: float
    offered_bps: float
    collisions: int
    retries_hist: list[int]
    max_queue: int
    stable: bool
    queue_slope: float
    n_arrivals: int
    n_departed: int
    n_buffered_end: int
    n_in_service_end: int
    queued_fraction: float
    contender_tau: list[float]
    events: int
    seed: int
    trace: list[str] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("delay_samples")
        d.pop("trace")
        return d

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q n)-th smallest sample."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("percentile of an empty sample")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q!r}")
    k = max(1, math.ceil(q * n - 1e-9))
    return float(np.partition(x, k - 1)[k - 1])


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit child seed from a parent seed and integer keys."""
    return int(np.random.SeedSequence([seed & (2**64 - 1), *keys]).generate_state(1, np.uint64)[0])


def _engine_seed(seed: int) -> int:
    return int(np.random.SeedSequence(seed & (2**64 - 1)).generate_state(1)[0])


def _stability(sample_t: np.ndarray, sample_n: np.ndarray, eps: float) -> tuple[bool, float]:
    k = max(2, len(sample_t) // 5)
    t = sample_t[-k:]
    n = sample_n[-k:].astype(float)
    if np.ptp(t) == 0:
        return True, 0.0
    slope = float(np.polyfit(t, n, 1)[0])
    return slope <= eps, slope


def format_trace(t, link, ev, pkt) -> list[str]:
    """One ``time,link,event,packet`` line per event (packet ids are 1-based)."""
    lines = []
    for ti, li, ei, pi in zip(t, link, ev, pkt):
        link_s = str(int(li) + 1) if li >= 0 else "-"
        pkt_s = str(int(pi) + 1) if pi >= 0 else "-"
        lines.append(f"{ti:.6f},{link_s},{engine.EVENT_NAMES[int(ei)]},{pkt_s}")
    return lines


def run(scenario: Scenario, params: PhyMacParams, traffic: Optional[TrafficSource] = None,
        cfg: SimConfig = SimConfig(), *, arrivals: Optional[Arrivals] = None,
        script_busy: Sequence[tuple[int, float, float]] = (),
        script_draws: Sequence[int] = ()) -> SimReport:
    """Simulate one replication.

    ``traffic`` defaults to Poisson arrivals at the scenario's rate, seeded
    from ``cfg.seed``. ``arrivals`` overrides the source entirely (used for
    scripted runs), as do ``script_busy`` (link, start, duration) periods and
    ``script_draws`` (AP backoff values consumed in order before random ones).
    """
    air = compute_air_times(params)
    if arrivals is None:
        if traffic is None:
            traffic = poisson_source(scenario.arrival_rate, params.packet_bits,
                                     derive_seed(cfg.seed, 0))
        arrivals = traffic.generate(cfg.duration)
    times = np.ascontiguousarray(arrivals.times, dtype=np.float64)
    sizes = np.ascontiguousarray(arrivals.sizes, dtype=np.int64)
    eng_seed = _engine_seed(derive_seed(cfg.seed, 1))
    s = scenario.n_interfaces
    warmup = cfg.effective_warmup

    if cfg.mode == "pure-queue":
        mean = cfg.service_mean
        if mean is None:
            mean = solve_fixed_point(scenario, params).e_service_s
        start, depart = engine.run_pure_queue(times, s, float(mean), eng_seed)
        done = depart < cfg.duration
        depart = np.where(done, depart, np.nan)
        retries = np.zeros(len(times), np.int64)
        collisions = 0
        events = len(times)
        # queue length sampled from the event record
        grid = np.linspace(0.0, cfg.duration, cfg.queue_samples, endpoint=False)
        sample_n = (np.searchsorted(times, grid, side="right")
                    - np.searchsorted(np.sort(np.where(done, depart, np.inf)), grid, side="right"))
        sample_t = grid
        n_in_service = int(np.sum((start < cfg.duration) & ~done))
        n_buffered = int(np.sum(start >= cfg.duration))
        max_queue = int(sample_n.max()) if len(sample_n) else 0
        contender_tau: list[float] = []
        trace: list[str] = []
        queued = start > times
    else:
        ext = sorted(script_busy, key=lambda b: b[1])
        ext_link = np.array([b[0] for b in ext], np.int64)
        ext_time = np.array([b[1] for b in ext], np.float64)
        ext_dur = np.array([b[2] for b in ext], np.float64)
        tx_time = air.t_s + (sizes - params.packet_bits) / params.data_rate
        out = engine.run_protocol(
            times, tx_time, s, scenario.n_contenders, float(scenario.activity),
            params.cw_min, params.m_stages, params.sigma, air.t_c, air.t_s,
            cfg.duration, eng_seed, cfg.immediate_access,
            ext_link, ext_time, ext_dur, np.asarray(script_draws, np.int64),
            cfg.trace_cap if cfg.trace else 0, cfg.check_invariants,
            cfg.max_events, cfg.queue_samples)
        (start, depart, retries, _via, queued, n_arr, n_buffered, n_in_service, collisions,
         max_queue, idle_slots, busy_slots, cont_tx, _cont_coll, sample_t, sample_n,
         tr_t, tr_l, tr_e, tr_p, _tr_v, status, events) = out
        if status == engine.EVENT_CAP:
            raise SimulationError(f"event cap {cfg.max_events} reached")
        if status == engine.INVARIANT_BROKEN:
            raise SimulationError("backoff-instance invariant violated")
        slots = idle_slots + busy_slots
        n = max(scenario.n_contenders, 1)
        contender_tau = [float(c) / (n * sl) if sl > 0 else 0.0 for c, sl in zip(cont_tx, slots)]
        trace = format_trace(tr_t, tr_l, tr_e, tr_p) if cfg.trace else []
        max_queue = int(max_queue)
        collisions = int(collisions)
        events = int(events)
        n_in_service = int(n_in_service)
        n_buffered = int(n_buffered)

    post = times >= warmup
    finished = post & ~np.isnan(depart)
    delays = depart[finished] - times[finished]
    window = cfg.duration - warmup
    throughput = float(sizes[finished].sum()) / window
    offered = float(sizes[post].sum()) / window
    if delays.size:
        p50, p95, p99 = (percentile(delays, q) for q in (0.5, 0.95, 0.99))
        mean_delay = float(delays.mean())
    else:
        p50 = p95 = p99 = mean_delay = math.nan
    eps = cfg.stability_eps
    if eps is None:
        eps = 0.01 * len(times) / cfg.duration
    stable, slope = _stability(np.asarray(sample_t), np.asarray(sample_n), eps)
    hist = np.bincount(retries[finished]).tolist() if finished.any() else []
    n_post = int(post.sum())
    return SimReport(
        delay_samples=delays,
        p50=p50, p95=p95, p99=p99,
        mean_delay=mean_delay,
        throughput_bps=throughput,
        offered_bps=offered,
        collisions=collisions,
        retries_hist=hist,
        max_queue=int(max_queue),
        stable=bool(stable),
        queue_slope=slope,
        n_arrivals=int(len(times)),
        n_departed=int(np.sum(~np.isnan(depart))),
        n_buffered_end=n_buffered,
        n_in_service_end=n_in_service,
        queued_fraction=float(queued[post].sum()) / n_post if n_post else math.nan,
        contender_tau=contender_tau,
        events=events,
        seed=cfg.seed,
        trace=trace,
    )


@dataclass
class PooledReport:
    reports: list[SimReport]
    delay_samples: np.ndarray = field(repr=False)
    p95: float
    mean_delay: float
    throughput_bps: float
    stable: bool

    def quantile(self, q: float) -> float:
        return percentile(self.delay_samples, q)


def pool(reports: Sequence[SimReport]) -> PooledReport:
    samples = np.concatenate([r.delay_samples for r in reports]) if reports else np.empty(0)
    return PooledReport(
        reports=list(reports),
        delay_samples=samples,
        p95=percentile(samples, 0.95) if samples.size else math.nan,
        mean_delay=float(samples.mean()) if samples.size else math.nan,
        throughput_bps=float(np.mean([r.throughput_bps for r in reports])) if reports else 0.0,
        stable=all(r.stable for r in reports),
    )


def run_replications(scenario: Scenario, params: PhyMacParams, traffic: Optional[TrafficSource],
                     cfg: SimConfig, replications: int) -> PooledReport:
    """Independent replications with child seeds; samples are pooled."""
    if replications < 1:
        raise InvalidParameterError("need at least one replication")
    reports = []
    for r in range(replications):
        seed = derive_seed(cfg.seed, 100 + r)
        src = traffic.with_seed(derive_seed(seed, 2)) if traffic is not None else None
        reports.append(run(scenario, params, src, replace(cfg, seed=seed)))
    return pool(reports)
