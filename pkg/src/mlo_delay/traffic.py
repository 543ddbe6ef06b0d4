"""Downlink packet sources: Poisson, trace replay and synthetic batch video.

Every source is a frozen description; :meth:`TrafficSource.generate`
materializes arrival times and packet sizes for a horizon. Generation is a
pure function of the description (seed included), so replications built
from distinct seeds never share generator state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .phy import InvalidParameterError

RESOLUTION_LOAD_BPS = {"720p": 10e6, "1080p": 20e6, "2160p": 40e6}
DEFAULT_MTU_BITS = 12000


class TraceFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class Arrivals:
    times: np.ndarray
    sizes: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def total_bits(self) -> int:
        return int(self.sizes.sum())


@dataclass(frozen=True)
class TraceRecord:
    t: float      # microseconds since trace start
    size: int     # bytes


@dataclass(frozen=True)
class VideoParams:
    fps: float = 60.0
    mean_frame_bits: float = 20e6 / 60.0
    frame_cv: float = 0.2
    frame_jitter: float = 0.1     # fraction of the frame interval
    mtu_bits: int = DEFAULT_MTU_BITS


@dataclass(frozen=True)
class TrafficSource:
    kind: str
    rate: float = 0.0             # packets/s for poisson, bits/s otherwise
    packet_bits: int = DEFAULT_MTU_BITS
    seed: int = 0
    trace: tuple[TraceRecord, ...] = field(default=(), repr=False)
    trace_path: Optional[str] = None
    loop: bool = False
    period_us: Optional[float] = None
    video: Optional[VideoParams] = None

    def with_seed(self, seed: int) -> "TrafficSource":
        return replace(self, seed=seed)

    @property
    def offered_bps(self) -> float:
        if self.kind == "poisson":
            return self.rate * self.packet_bits
        return self.rate

    def generate(self, duration: float) -> Arrivals:
        """Arrivals in [0, duration), sorted by time."""
        rng = np.random.default_rng(self.seed)
        if self.kind == "poisson":
            return _poisson(self.rate, self.packet_bits, duration, rng)
        if self.kind == "trace":
            return _replay(self.trace, self.loop, self.packet_bits, duration, self.period_us)
        if self.kind == "batch-video":
            return _video(self.video, duration, rng)
        raise InvalidParameterError(f"unknown traffic kind {self.kind!r}")


def poisson_source(lam: float, packet_bits: int = DEFAULT_MTU_BITS, seed: int = 0) -> TrafficSource:
    """Poisson arrivals at ``lam`` packets/s with fixed packet size."""
    if lam < 0:
        raise InvalidParameterError(f"arrival rate must be >= 0, got {lam}")
    return TrafficSource(kind="poisson", rate=float(lam), packet_bits=packet_bits, seed=seed)


def poisson_from_load(load_bps: float, packet_bits: int = DEFAULT_MTU_BITS, seed: int = 0) -> TrafficSource:
    return poisson_source(load_bps / packet_bits, packet_bits, seed)


def _poisson(lam: float, packet_bits: int, duration: float, rng: np.random.Generator) -> Arrivals:
    if lam == 0 or duration <= 0:
        return Arrivals(np.empty(0), np.empty(0, np.int64))
    chunks = []
    t = 0.0
    block = max(16, int(lam * duration * 1.05) + 16)
    while t < duration:
        gaps = rng.exponential(1.0 / lam, size=block)
        times = t + np.cumsum(gaps)
        chunks.append(times)
        t = times[-1]
    times = np.concatenate(chunks)
    times = times[times < duration]
    return Arrivals(times, np.full(len(times), packet_bits, np.int64))


def read_trace(path) -> tuple[TraceRecord, ...]:
    """Parse a ``t_us,bytes`` CSV with an optional header line."""
    records = []
    last = -math.inf
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise TraceFormatError(path, lineno, f"expected 2 fields, got {len(row)}")
            try:
                t = float(row[0])
                size = int(row[1])
            except ValueError:
                if lineno == 1 and not records:
                    continue  # header
                raise TraceFormatError(path, lineno, f"cannot parse {row!r}") from None
            if size <= 0:
                raise TraceFormatError(path, lineno, f"size must be positive, got {size}")
            if t < last:
                raise TraceFormatError(path, lineno, f"timestamp {t} goes backwards (previous {last})")
            last = t
            records.append(TraceRecord(t, size))
    return tuple(records)


def trace_source(path, loop: bool = False, seed: int = 0,
                 mtu_bits: int = DEFAULT_MTU_BITS, period_us: Optional[float] = None) -> TrafficSource:
    """Replay a ``t_us,bytes`` trace. ``seed`` is accepted for interface symmetry; replay is
    deterministic. ``period_us`` sets the loop period (default: see :func:`trace_period_us`)."""
    records = read_trace(path)
    if period_us is not None and records and period_us <= records[-1].t:
        raise InvalidParameterError(f"period {period_us} us does not cover the trace")
    span = trace_period_us(records, period_us)
    bits = sum(r.size * 8 for r in records)
    rate = bits / (span * 1e-6) if span > 0 else 0.0
    return TrafficSource(kind="trace", rate=rate, packet_bits=mtu_bits, seed=seed,
                         trace=records, trace_path=str(path), loop=loop, period_us=period_us)


def trace_period_us(records, period_us: Optional[float] = None) -> float:
    """Replay period: ``period_us`` if given, else the trace span plus one mean record gap."""
    if period_us is not None:
        return float(period_us)
    if not records:
        return 0.0
    if len(records) == 1:
        return max(records[0].t, 1.0)
    span = records[-1].t - records[0].t
    return records[-1].t + span / (len(records) - 1)


def fragment(bits: int, mtu_bits: int) -> list[int]:
    """Split a payload into MTU-sized packets; the last one carries the rest."""
    n = -(-bits // mtu_bits)
    sizes = [mtu_bits] * n
    rest = bits - (n - 1) * mtu_bits
    sizes[-1] = rest
    return sizes


def _replay(records, loop: bool, mtu_bits: int, duration: float,
            period_us: Optional[float] = None) -> Arrivals:
    if not records:
        return Arrivals(np.empty(0), np.empty(0, np.int64))
    period = trace_period_us(records, period_us) * 1e-6
    base_t = []
    base_s = []
    for r in records:
        for s in fragment(r.size * 8, mtu_bits):
            base_t.append(r.t * 1e-6)
            base_s.append(s)
    base_t = np.asarray(base_t)
    base_s = np.asarray(base_s, np.int64)
    reps = max(1, math.ceil(duration / period)) if loop else 1
    times = np.concatenate([base_t + k * period for k in range(reps)])
    sizes = np.tile(base_s, reps)
    keep = times < duration
    return Arrivals(times[keep], sizes[keep])


def batch_video_source(resolution: str = "1080p", fps: float = 60.0, seed: int = 0, *,
                       frame_cv: float = 0.2, frame_jitter: float = 0.1,
                       mtu_bits: int = DEFAULT_MTU_BITS,
                       load_bps: Optional[float] = None) -> TrafficSource:
    """Frame-based video: one MTU-fragmented batch per frame.

    Frame sizes follow a normal law truncated below at one MTU, with mean
    set so the long-run bit rate matches the resolution's nominal load.
    The shape parameters approximate a cloud-gaming stream; they are not
    fitted to any particular trace.
    """
    if fps <= 0:
        raise InvalidParameterError(f"fps must be positive, got {fps}")
    if load_bps is None:
        try:
            load_bps = RESOLUTION_LOAD_BPS[resolution]
        except KeyError:
            raise InvalidParameterError(f"unknown resolution {resolution!r}") from None
    video = VideoParams(fps=fps, mean_frame_bits=load_bps / fps, frame_cv=frame_cv,
                        frame_jitter=frame_jitter, mtu_bits=mtu_bits)
    return TrafficSource(kind="batch-video", rate=load_bps, packet_bits=mtu_bits,
                         seed=seed, video=video)


def _frame_sizes(v: VideoParams, n: int, rng: np.random.Generator) -> np.ndarray:
    sd = v.frame_cv * v.mean_frame_bits
    sizes = rng.normal(v.mean_frame_bits, sd, size=n)
    low = sizes < v.mtu_bits
    while low.any():
        sizes[low] = rng.normal(v.mean_frame_bits, sd, size=int(low.sum()))
        low = sizes < v.mtu_bits
    return np.rint(sizes).astype(np.int64)


def _video(v: VideoParams, duration: float, rng: np.random.Generator) -> Arrivals:
    interval = 1.0 / v.fps
    offset = rng.uniform(0.0, interval)
    n_frames = max(0, math.ceil((duration - offset) / interval))
    frame_t = offset + interval * np.arange(n_frames)
    if v.frame_jitter > 0:
        frame_t = frame_t + rng.uniform(0.0, v.frame_jitter * interval, size=n_frames)
    frame_bits = _frame_sizes(v, n_frames, rng)
    counts = -(-frame_bits // v.mtu_bits)
    times = np.repeat(frame_t, counts)
    sizes = np.full(int(counts.sum()), v.mtu_bits, np.int64)
    last = np.cumsum(counts) - 1
    sizes[last] = frame_bits - (counts - 1) * v.mtu_bits
    keep = times < duration
    return Arrivals(times[keep], sizes[keep])
