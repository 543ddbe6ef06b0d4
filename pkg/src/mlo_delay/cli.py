"""``mlo-delay`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 fixed point did not converge,
4 every requested point was unstable.
"""

from __future__ import annotations

import argparse
import math
import sys
from typing import Optional, Sequence

from . import experiments as ex
from .analytic import ConvergenceError
from .phy import InvalidParameterError
from .simulator import SimulationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_UNSTABLE = 4

UNBOUNDED = "unbounded"


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--preset", metavar="NAME", help="shipped configuration, see the presets command")
    common.add_argument("--out", metavar="PATH.csv", help="write results as CSV")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--replications", type=int, help="simulation replications per point")
    common.add_argument("--quantile", type=float, help="delay quantile, default 0.95")
    common.add_argument("--engine", choices=("analytic", "sim", "both"))
    common.add_argument("--interfaces", type=int, nargs="+", metavar="S")
    common.add_argument("--load", type=float, metavar="MBPS", help="offered load in Mb/s")
    common.add_argument("--contenders", type=int, metavar="N")
    common.add_argument("--activity", type=float, metavar="ALPHA")
    common.add_argument("--duration", type=float, metavar="SECONDS", help="simulated time per run")

    p = argparse.ArgumentParser(prog="mlo-delay",
                                description="Delay analysis of multi-link Wi-Fi access points.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="solve the analytic model")
    sub.add_parser("simulate", parents=[common], help="run the discrete-event simulator")
    sub.add_parser("sweep", parents=[common], help="sweep one axis and emit CSV")
    cap = sub.add_parser("capacity", parents=[common], help="largest load within a delay budget")
    cap.add_argument("--budget-ms", type=float, help="delay budget, default 5 ms")
    sub.add_parser("presets", help="list shipped presets")
    return p


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    scen = {k: v for k, v in (("interfaces", args.interfaces), ("load_mbps", args.load),
                              ("contenders", args.contenders), ("activity", args.activity))
            if v is not None}
    if scen:
        o["scenario"] = scen
    sim = {k: v for k, v in (("replications", args.replications), ("duration", args.duration))
           if v is not None}
    if sim:
        o["sim"] = sim
    for key in ("seed", "quantile", "engine"):
        if getattr(args, key) is not None:
            o[key] = getattr(args, key)
    if getattr(args, "budget_ms", None) is not None:
        o["capacity"] = {"budget_ms": args.budget_ms}
    return o


def _config(args: argparse.Namespace) -> dict:
    preset = ex.load_preset(args.preset) if args.preset else None
    user = ex.load_config_file(args.config) if args.config else None
    return ex.resolve_config(preset, user, _overrides(args))


def _fmt_ms(x: float) -> str:
    return UNBOUNDED if math.isinf(x) else f"{x * 1e3:.4g} ms"


def _emit(args: argparse.Namespace, results: list[ex.PointResult]) -> None:
    if args.out:
        ex.write_text(args.out, ex.format_csv(results))


def cmd_analyze(cfg: dict, args: argparse.Namespace) -> int:
    params = ex.phy_params(cfg)
    q = float(cfg["quantile"])
    results = []
    for s in ex.interfaces(cfg):
        sc = ex.scenario_for(cfg, s, params)
        r = ex.analytic_point(sc, params, q)
        r.axis_value = cfg["scenario"]["load_mbps"]
        results.append(r)
        d = r.detail
        print(f"S={s} load={r.axis_value} Mb/s N={sc.n_contenders} alpha={sc.activity}")
        print(f"  a={d['a']:.6g} E[D_s]={d['e_service_ms']:.4g} ms E[B]={d['e_backoff_slots']:.6g} slots"
              f" eta={d['eta']:.6g}")
        print(f"  rho={d['rho']:.6g} p={d['p']:.6g} tau={d['tau']:.6g} tau'={d['tau_cont']:.6g}"
              f" iterations={d['iterations']}")
        print(f"  q{q:g} delay: {_fmt_ms(r.quantile_s)}  mean: {_fmt_ms(r.mean_s)}")
    _emit(args, results)
    return EXIT_OK if any(r.stable for r in results) else EXIT_UNSTABLE


def cmd_simulate(cfg: dict, args: argparse.Namespace) -> int:
    params = ex.phy_params(cfg)
    q = float(cfg["quantile"])
    reps = int(cfg["sim"]["replications"])
    results = []
    for s in ex.interfaces(cfg):
        sc = ex.scenario_for(cfg, s, params)
        load = sc.offered_load_bps(params.packet_bits)
        traffic = ex.traffic_for(cfg, params, load)
        seed = ex.derive_seed(int(cfg["seed"]), 0, s)
        r = ex.sim_point(sc, params, traffic, ex.sim_config(cfg, seed), reps, q)
        r.axis_value = cfg["scenario"]["load_mbps"]
        results.append(r)
        measured = r.detail.get("p95_measured_ms", math.nan)
        print(f"S={s} load={r.axis_value} Mb/s replications={reps} stable={str(r.stable).lower()}")
        print(f"  q{q:g} delay: {measured:.4g} ms  95% CI [{_fmt_ms(r.ci[0])}, {_fmt_ms(r.ci[1])}]"
              f"  mean: {_fmt_ms(r.mean_s)}  throughput: {r.throughput_bps / 1e6:.4g} Mb/s")
    _emit(args, results)
    return EXIT_OK if any(r.stable for r in results) else EXIT_UNSTABLE


def cmd_sweep(cfg: dict, args: argparse.Namespace) -> int:
    if cfg["sweep"] is None:
        raise ex.ConfigError("sweep needs a 'sweep' section (use --preset or --config)")
    results = ex.run_sweep(cfg)
    text = ex.format_csv(results)
    if args.out:
        ex.write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if any(r.error and r.error.startswith("ConvergenceError") for r in results):
        return EXIT_CONVERGENCE
    return EXIT_OK if any(r.stable for r in results) else EXIT_UNSTABLE


def cmd_capacity(cfg: dict, args: argparse.Namespace) -> int:
    table = ex.capacity_table(cfg)
    budget = cfg["capacity"]["budget_ms"]
    base = table[0].load_bps if table and table[0].n_interfaces == 1 else math.nan
    lines = ["S,capacity_mbps,gain_vs_S1"]
    print(f"q={cfg['quantile']:g} budget={budget} ms N={cfg['scenario']['contenders']}"
          f" alpha={cfg['scenario']['activity']}")
    for c in table:
        gain = c.load_bps / base if base > 0 else math.nan
        lines.append(f"{c.n_interfaces},{c.load_bps / 1e6:.6g},{gain:.4g}")
        note = f"  ({c.reason})" if c.reason else ""
        print(f"  S={c.n_interfaces}: {c.load_bps / 1e6:.4f} Mb/s  gain {gain:.3g}x{note}")
    if args.out:
        ex.write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK if any(c.load_bps > 0 for c in table) else EXIT_UNSTABLE


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "capacity": cmd_capacity}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name in ex.preset_names():
            print(f"{name}: {ex.load_preset(name).get('description', '')}")
        return EXIT_OK
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except (ex.ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
