"""Experiment plumbing shared by the command-line front end.

A run is described by a nested JSON-compatible mapping (see ``DEFAULTS``).
Presets shipped in :mod:`mlo_delay.presets` are such mappings; a user config
file and command-line flags are deep-merged on top of them.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from .analytic import Scenario, solve_fixed_point
from .phy import InvalidParameterError, PhyMacParams, compute_air_times
from .simulator import PooledReport, SimConfig, derive_seed, percentile, run_replications
from .traffic import RESOLUTION_LOAD_BPS, TrafficSource, batch_video_source, trace_source

AXES = ("load", "contenders", "activity", "interfaces", "resolution")
ENGINES = ("analytic", "sim")
CSV_COLUMNS = ("axis_value", "S", "engine", "p95_ms", "mean_ms", "throughput_mbps", "stable",
               "ci_low", "ci_high")
BOOTSTRAP_RESAMPLES = 1000

DEFAULTS: dict[str, Any] = {
    "phy": {},
    "scenario": {"interfaces": [1, 2, 3, 4], "load_mbps": 10.0, "contenders": 5, "activity": 0.25},
    "traffic": {"kind": "poisson"},
    "sim": {"duration": 60.0, "warmup": None, "replications": 10, "mode": "protocol",
            "immediate_access": False},
    "seed": 1,
    "quantile": 0.95,
    "engine": "analytic",
    "sweep": None,
    "capacity": {"budget_ms": 5.0, "tolerance": 1e-4},
}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


# ---------------------------------------------------------------- config

def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("mlo_delay.presets").iterdir()
                  if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("mlo_delay.presets") / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def merge(base: Mapping, override: Mapping) -> dict:
    """Recursive dict merge; ``override`` wins, nested objects merge key by key."""
    out = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(*layers: Optional[Mapping]) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for layer in layers:
        if layer:
            unknown = set(layer) - set(DEFAULTS) - {"name", "description"}
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            cfg = merge(cfg, layer)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["engine"] not in ("analytic", "sim", "both"):
        raise ConfigError(f"engine must be analytic, sim or both, got {cfg['engine']!r}")
    q = cfg["quantile"]
    if not isinstance(q, (int, float)) or not 0 < q < 1:
        raise ConfigError(f"quantile must be in (0, 1), got {q!r}")
    if int(cfg["sim"]["replications"]) < 1:
        raise ConfigError("replications must be >= 1")
    sweep = cfg["sweep"]
    if sweep is not None:
        if sweep.get("axis") not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}, got {sweep.get('axis')!r}")
        if not sweep.get("values"):
            raise ConfigError("sweep values must be a non-empty list")
    try:
        phy_params(cfg)
    except (InvalidParameterError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def phy_params(cfg: Mapping) -> PhyMacParams:
    return PhyMacParams.from_dict(cfg["phy"])


def interfaces(cfg: Mapping) -> list[int]:
    s = cfg["scenario"]["interfaces"]
    return sorted({int(x) for x in (s if isinstance(s, list) else [s])})


def engines(cfg: Mapping) -> tuple[str, ...]:
    return ENGINES if cfg["engine"] == "both" else (cfg["engine"],)


def scenario_for(cfg: Mapping, n_interfaces: int, params: PhyMacParams,
                 load_bps: Optional[float] = None) -> Scenario:
    sc = cfg["scenario"]
    if load_bps is None:
        load_bps = float(sc["load_mbps"]) * 1e6
    try:
        return Scenario.from_load(n_interfaces, load_bps, params.packet_bits,
                                  int(sc["contenders"]), float(sc["activity"]))
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None


def traffic_for(cfg: Mapping, params: PhyMacParams, load_bps: float,
                resolution: Optional[str] = None) -> Optional[TrafficSource]:
    """Traffic source for the simulator; ``None`` means Poisson at the scenario rate."""
    t = cfg["traffic"]
    kind = t.get("kind", "poisson")
    if kind == "poisson":
        return None
    if kind == "batch-video":
        # a resolution pins the load; otherwise the scenario load drives frame sizes
        resolution = resolution or t.get("resolution")
        try:
            return batch_video_source(resolution or "custom",
                                      fps=float(t.get("fps", 60.0)),
                                      frame_cv=float(t.get("frame_cv", 0.2)),
                                      frame_jitter=float(t.get("frame_jitter", 0.1)),
                                      mtu_bits=int(t.get("mtu_bits", params.packet_bits)),
                                      load_bps=None if resolution else load_bps)
        except InvalidParameterError as exc:
            raise ConfigError(str(exc)) from None
    if kind == "trace":
        if "path" not in t:
            raise ConfigError("trace traffic needs a 'path'")
        try:
            return trace_source(t["path"], loop=bool(t.get("loop", True)),
                                mtu_bits=int(t.get("mtu_bits", params.packet_bits)),
                                period_us=t.get("period_us"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"trace {t['path']}: {exc}") from None
    raise ConfigError(f"unknown traffic kind {kind!r}")


def sim_config(cfg: Mapping, seed: int) -> SimConfig:
    s = cfg["sim"]
    try:
        return SimConfig(seed=seed, duration=float(s["duration"]), warmup=s.get("warmup"),
                         mode=s.get("mode", "protocol"),
                         immediate_access=bool(s.get("immediate_access", False)))
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- results

@dataclass
class PointResult:
    axis_value: Any
    n_interfaces: int
    engine: str
    quantile_s: float          # inf when unstable
    mean_s: float
    throughput_bps: float
    stable: bool
    ci: tuple[float, float] = (math.nan, math.nan)
    error: Optional[str] = None
    detail: dict = field(default_factory=dict)


def bootstrap_ci(samples: np.ndarray, q: float, resamples: int = BOOTSTRAP_RESAMPLES,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile-bootstrap CI of the nearest-rank q-quantile.

    Resampling n values with replacement and taking the k-th smallest is
    the same as reading the empirical quantile at the k-th order statistic
    of n uniforms, which is Beta(k, n-k+1). Drawing that directly gives the
    bootstrap distribution without materializing resamples.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        return math.nan, math.nan
    k = max(1, math.ceil(q * n - 1e-9))
    u = np.random.default_rng(seed).beta(k, n - k + 1, size=resamples)
    idx = np.clip(np.ceil(u * n).astype(np.int64) - 1, 0, n - 1)
    boot = x[idx]
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def analytic_point(scenario: Scenario, params: PhyMacParams, q: float) -> PointResult:
    sol = solve_fixed_point(scenario, params)
    if sol.stable:
        dist = sol.delay_distribution()
        quant, mean = dist.quantile(q), dist.mean()
        thr = scenario.offered_load_bps(params.packet_bits)
    else:
        quant = mean = math.inf
        thr = scenario.n_interfaces / sol.e_service_s * params.packet_bits
    return PointResult(None, scenario.n_interfaces, "analytic", quant, mean, thr, sol.stable,
                       detail={"a": sol.a, "eta": sol.eta, "e_service_ms": sol.e_service_s * 1e3,
                               "e_backoff_slots": sol.e_backoff_slots, "rho": sol.rho,
                               "p": sol.p_coll, "tau": sol.tau_ap, "tau_cont": sol.tau_cont,
                               "iterations": sol.iterations})


def sim_point(scenario: Scenario, params: PhyMacParams, traffic: Optional[TrafficSource],
              simcfg: SimConfig, replications: int, q: float) -> PointResult:
    pooled: PooledReport = run_replications(scenario, params, traffic, simcfg, replications)
    x = pooled.delay_samples
    if x.size == 0:
        return PointResult(None, scenario.n_interfaces, "sim", math.inf, math.inf, 0.0, False,
                           error="no packet delivered")
    quant = percentile(x, q)
    # a CI around a quantile of a growing queue means nothing
    ci = (bootstrap_ci(x, q, seed=derive_seed(simcfg.seed, 9) & 0xFFFFFFFF) if pooled.stable
          else (math.nan, math.nan))
    return PointResult(None, scenario.n_interfaces, "sim",
                       quant if pooled.stable else math.inf, float(x.mean()),
                       pooled.throughput_bps, pooled.stable, ci,
                       detail={"p95_measured_ms": quant * 1e3, "samples": int(x.size),
                               "collisions": sum(r.collisions for r in pooled.reports)})


def _axis_load(cfg: Mapping, axis: str, value) -> tuple[dict, Optional[str]]:
    """Scenario overrides for one axis value, plus the resolution if any."""
    if axis == "load":
        return {"load_mbps": float(value)}, None
    if axis == "contenders":
        return {"contenders": int(value)}, None
    if axis == "activity":
        return {"activity": float(value)}, None
    if axis == "interfaces":
        return {"interfaces": int(value)}, None
    if value not in RESOLUTION_LOAD_BPS:
        raise ConfigError(f"unknown resolution {value!r}")
    return {"load_mbps": RESOLUTION_LOAD_BPS[value] / 1e6}, value


def _axis_key(axis: str, value):
    return RESOLUTION_LOAD_BPS[value] if axis == "resolution" else float(value)


def run_sweep(cfg: Mapping, progress=None) -> list[PointResult]:
    """Every (axis value, S, engine) point, ordered by that triple."""
    params = phy_params(cfg)
    sweep = cfg["sweep"]
    if sweep is None:
        raise ConfigError("config has no 'sweep' section")
    axis = sweep["axis"]
    q = float(cfg["quantile"])
    reps = int(cfg["sim"]["replications"])
    values = sorted(sweep["values"], key=lambda v: _axis_key(axis, v))
    results = []
    for i, value in enumerate(values):
        over, resolution = _axis_load(cfg, axis, value)
        local = merge(cfg, {"scenario": over})
        for s in interfaces(local):
            sc = scenario_for(local, s, params)
            for eng in engines(cfg):
                try:
                    if eng == "analytic":
                        res = analytic_point(sc, params, q)
                    else:
                        seed = derive_seed(int(cfg["seed"]), i, s)
                        traffic = traffic_for(local, params, sc.offered_load_bps(params.packet_bits),
                                              resolution)
                        res = sim_point(sc, params, traffic, sim_config(local, seed), reps, q)
                except ArithmeticError as exc:
                    res = PointResult(None, s, eng, math.inf, math.inf, 0.0, False, error=str(exc))
                except RuntimeError as exc:   # non-convergence, simulator failure
                    res = PointResult(None, s, eng, math.nan, math.nan, math.nan, False,
                                      error=f"{type(exc).__name__}: {exc}")
                res.axis_value = value
                results.append(res)
                if progress:
                    progress(res)
    return results


def _ms(x: float) -> str:
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return f"{x * 1e3:.4g}"


def format_csv(results: Iterable[PointResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        sim = r.engine == "sim"
        w.writerow([r.axis_value, r.n_interfaces, r.engine, _ms(r.quantile_s), _ms(r.mean_s),
                    "nan" if math.isnan(r.throughput_bps) else f"{r.throughput_bps / 1e6:.4g}",
                    "true" if r.stable else "false",
                    *(_ms(c) if sim and not math.isnan(c) else "" for c in r.ci)])
    return buf.getvalue()


# ---------------------------------------------------------------- capacity

@dataclass
class CapacityResult:
    n_interfaces: int
    load_bps: float
    arrival_rate: float
    reason: str = ""


def _meets(s: int, lam: float, n: int, alpha: float, params: PhyMacParams,
           budget: float, q: float) -> bool:
    sol = solve_fixed_point(Scenario(s, lam, n, alpha), params)
    if not sol.stable:
        return False
    return math.isinf(budget) or sol.quantile(q) <= budget


def capacity(n_interfaces: int, n_contenders: int, activity: float, params: PhyMacParams,
             budget: float, q: float = 0.95, rel_tol: float = 1e-4) -> CapacityResult:
    """Largest Poisson load whose analytic q-quantile stays within ``budget``.

    The quantile grows with the load, so the feasible set is an interval
    starting at zero and bisection applies. An infinite budget yields the
    stability limit.
    """
    if not budget > 0:
        raise InvalidParameterError(f"budget must be positive, got {budget}")
    air = compute_air_times(params)
    lo = 0.0
    probe = 1e-6 * n_interfaces / air.t_s
    if not _meets(n_interfaces, probe, n_contenders, activity, params, budget, q):
        floor = solve_fixed_point(Scenario(n_interfaces, probe, n_contenders, activity), params)
        return CapacityResult(n_interfaces, 0.0, 0.0,
                              f"budget {budget * 1e3:.4g} ms is below the light-load "
                              f"{q:g}-quantile {floor.quantile(q) * 1e3:.4g} ms")
    hi = n_interfaces / air.t_s   # a > 1 here since E[D_s] > T_s
    lo = probe
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if _meets(n_interfaces, mid, n_contenders, activity, params, budget, q):
            lo = mid
        else:
            hi = mid
    return CapacityResult(n_interfaces, lo * params.packet_bits, lo)


def capacity_table(cfg: Mapping) -> list[CapacityResult]:
    params = phy_params(cfg)
    sc = cfg["scenario"]
    cap = cfg["capacity"]
    budget = float(cap["budget_ms"]) * 1e-3 if cap.get("budget_ms") is not None else math.inf
    return [capacity(s, int(sc["contenders"]), float(sc["activity"]), params, budget,
                     float(cfg["quantile"]), float(cap.get("tolerance", 1e-4)))
            for s in interfaces(cfg)]


def write_text(path, text: str) -> None:
    Path(path).write_text(text)
