"""Command-line front end.

Usage:
  python app.py validate fixtures/ieee37.json
  python app.py certify fixtures/ieee37.json --sweep-injection 0:5:0.1
  python app.py opf fixtures/tracking.json [--formulation p1|p2] [--experiment]
  python app.py tune fixtures/twofeeder.json
  python app.py stability fixtures/twofeeder.json
  python app.py simulate fixtures/step_noise.json --seed 7 [--counterfactual]

Every command writes its artifacts under --out (default ./out) next to a
manifest.json holding the input hash, seed and package versions.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

import gridvb
from gridvb.control.inter import capacity_shares, output_bounds
from gridvb.control.intra import design_intra_gains
from gridvb.control.model import linearize_feeder
from gridvb.control.tuning import FeederLoop, InterFeederModel, design_pi_gains
from gridvb.errors import ConfigError, GridVBError
from gridvb.io import bus_index, file_sha256, kw, load_feeder, read_json
from gridvb.opf.certificates import c2_sweep, check_c1, project_to_ac
from gridvb.opf.dispatch import dispatch_round, operating_point_input
from gridvb.opf.formulation import P1, P2
from gridvb.powerflow import head_node_power, solve_ac
from gridvb.settings import Settings, configure_logging
from gridvb.sim.loop import run_closed_loop
from gridvb.sim.metrics import metrics
from gridvb.sim.scenario import ScenarioConfig, load_scenario
from gridvb.sim.tracking import load_tracking, run_experiment
from gridvb.stability import region_table

log = logging.getLogger(__name__)

SCHEMA_HINT = "See docs/SCHEMAS.md for the input formats."
DEPENDENCIES = ("numpy", "scipy", "pandas", "networkx")


def _versions() -> dict[str, str]:
    out = {"gridvb": gridvb.__version__, "python": platform.python_version()}
    for name in DEPENDENCIES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "missing"
    return out


def write_manifest(
    out_dir: Path,
    command: str,
    config: Path,
    outputs: Sequence[Path],
    seed: int | None = None,
) -> Path:
    """RunManifest: command, config path + sha256, seed, versions, outputs."""
    manifest = {
        "command": command,
        "config": str(config),
        "config_sha256": file_sha256(config),
        "seed": seed,
        "versions": _versions(),
        "outputs": [p.name for p in outputs],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def _save_json(path: Path, payload: Any) -> Path:
    path.write_text(json.dumps(payload, indent=2, default=float), encoding="utf-8")
    return path


def _save_csv(path: Path, frame: pd.DataFrame) -> Path:
    frame.to_csv(path, index=False, float_format="%.9g")
    return path


def _range(text: str) -> np.ndarray:
    """a:b:step, inclusive of b up to rounding."""
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return np.round(np.arange(a, b + 0.5 * step, step), 12)


def _window(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:end, got {text!r}") from None
    return a, b


# commands


def cmd_validate(args: argparse.Namespace) -> list[Path]:
    g = load_feeder(args.feeder)
    load = sum(b.p_load for b in g.buses)
    vb = g.vb_buses()
    print(f"Feeder:       {g.name}")
    print(f"Buses:        {g.n}")
    print(f"Branches:     {len(g.branches)}")
    print(f"Total load:   {kw(g, load):.1f} kW")
    print(f"VB buses:     {', '.join(g.buses[i].name for i in vb) or '-'}")
    return []


def cmd_solve_ac(args: argparse.Namespace) -> list[Path]:
    g = load_feeder(args.feeder)
    s = g.nominal_injections()
    s[0] = 0.0
    sol = solve_ac(g, s)
    v = sol.voltages_pu()
    frame = pd.DataFrame({"bus": [b.name for b in g.buses], "v_pu": v, "l_pu": sol.l, "p_pu": sol.S.real, "q_pu": sol.S.imag})
    out = _save_csv(args.out / f"{g.name}_ac.csv", frame)
    print(f"Saved: {out}")
    print(f"Head-node import: {kw(g, head_node_power(sol)):.3f} kW")
    print(f"Losses:           {kw(g, sol.loss_total):.3f} kW")
    print(f"Voltage range:    [{v.min():.4f}, {v.max():.4f}] pu")
    print(f"Iterations:       {sol.iterations} (residual {sol.residual:.2e})")
    return [out]


def cmd_certify(args: argparse.Namespace) -> list[Path]:
    g = load_feeder(args.feeder)
    if args.vbs:
        vb_buses = [bus_index(g, b, "--vbs") for b in args.vbs.split(",")]
    else:
        vb_buses = g.vb_buses()
    if not vb_buses:
        raise ConfigError("No VB buses: pass --vbs or list vb_buses in the feeder file.")
    outputs = []
    rows = c2_sweep(g, vb_buses, args.sweep_injection)
    frame = pd.DataFrame(
        {
            "multiple": [r.multiple for r in rows],
            "injection_kw": [kw(g, r.injection_pu) for r in rows],
            "max_v_hat_pu": [float(np.sqrt(r.max_v_hat)) for r in rows],
            "bus": [g.buses[r.bus].name for r in rows],
            "c2_holds": [r.c2_holds for r in rows],
        }
    )
    outputs.append(_save_csv(args.out / f"{g.name}_c2_sweep.csv", frame))

    # C1 at the largest swept injection
    top = float(max(args.sweep_injection)) * sum(b.p_load for b in g.buses) / len(vb_buses)
    p_cap = np.array([b.p_solar - b.p_load for b in g.buses])
    q_cap = np.array([-b.q_load for b in g.buses])
    p_cap[vb_buses] += top
    p_cap[0] = q_cap[0] = 0.0
    c1 = check_c1(g, p_cap, q_cap)
    outputs.append(
        _save_json(
            args.out / f"{g.name}_c1.json",
            {"holds": c1.holds, "min_entry": c1.min_entry, "leaf": c1.leaf, "path": list(c1.path), "s": c1.s, "t": c1.t},
        )
    )
    holds = frame[frame.c2_holds]
    boundary = holds.multiple.max() if not holds.empty else float("nan")
    for p in outputs:
        print(f"Saved: {p}")
    print(f"C1 holds:            {c1.holds} (min entry {c1.min_entry:.4g})")
    print(f"C2 holds up to:      {boundary:g} x demand")
    return outputs


def cmd_opf(args: argparse.Namespace) -> list[Path]:
    cfg = load_tracking(args.config)
    if args.horizon:
        cfg = replace(cfg, opf=replace(cfg.opf, horizon=args.horizon))
    spec = cfg.feeder
    g = spec.graph
    outputs = []

    if args.experiment:
        runs = run_experiment(cfg)
        for name, run in runs.items():
            outputs.append(_save_csv(args.out / f"{cfg.name}_tracking_{name}.csv", run.frame))
        for p in outputs:
            print(f"Saved: {p}")
        for name, run in runs.items():
            print(f"{name.upper()}: rms gap {run.rms_error_kw:.3f} kW, max residual {run.max_residual:.2e}")
        return outputs

    opf = cfg.opf
    step_s = opf.dt_min * 60.0
    s_nom = g.nominal_injections()
    s_nom[0] = 0.0
    p_nominal = head_node_power(solve_ac(g, s_nom))
    ref = [p_nominal + spec.p0_econ_delta.at(h * step_s) for h in range(opf.horizon)]
    p_vb = [spec.p_vb_econ.at(h * step_s) for h in range(opf.horizon)]
    inp = operating_point_input(g, spec.vbs, spec.b0, np.zeros(len(spec.vbs)), ref, p_vb, opf)
    result = dispatch_round(inp, opf, formulation=args.formulation)
    sol = result.solution
    proj = project_to_ac(inp, sol)
    payload = {
        "formulation": args.formulation,
        "status": result.status,
        "objective": sol.objective,
        "setpoints_kw": [kw(g, p) for p in sol.setpoints],
        "p0_kw": [kw(g, p) for p in sol.p0],
        "p0_econ_kw": [kw(g, p) for p in ref],
        "realized_p0_kw": [kw(g, p) for p in proj.realized_p0],
        "soc_kwh": [[kw(g, b) for b in row] for row in sol.B],
        "elapsed_s": result.elapsed_s,
    }
    outputs.append(_save_json(args.out / f"{cfg.name}_{args.formulation}_solution.json", payload))
    outputs.append(_save_json(args.out / f"{cfg.name}_{args.formulation}_report.json", result.report.to_dict()))
    for p in outputs:
        print(f"Saved: {p}")
    print(f"Status:        {result.status}")
    print(f"Objective:     {sol.objective:.6g}")
    print(f"C1 / C2:       {result.report.c1_holds} / {result.report.c2_holds}")
    print(f"Max residual:  {result.report.max_residual:.2e}")
    return outputs


def _linear_feeders(scenario: ScenarioConfig):
    """(feeder spec, linear model, intra gains) at the nominal operating point."""
    cfg = scenario.settings.control
    out = []
    for spec in scenario.feeders:
        if not spec.vbs:
            continue
        s = spec.graph.nominal_injections()
        s[0] = 0.0
        model = linearize_feeder(spec.graph, s, spec.vbs, cfg.noise_pole, cfg.fd_step)
        gains = design_intra_gains(model, t_delay_max=max(p.t_delay for p in spec.vbs))
        out.append((spec, model, gains))
    return out


def cmd_tune(args: argparse.Namespace) -> list[Path]:
    scenario = load_scenario(args.scenario)
    g = scenario.feeders[0].graph
    designed = _linear_feeders(scenario)
    loops = tuple(
        FeederLoop(model.sensitivity, np.array([p.tau for p in spec.vbs]), np.array([p.t_delay for p in spec.vbs]), gains.k)
        for spec, model, gains in designed
    )
    kf = capacity_shares([spec.vbs for spec, _, _ in designed])
    model = InterFeederModel(loops, kf, ts=scenario.cadences.pi_s, sample_hold=scenario.settings.control.sample_hold)
    lo, hi = output_bounds([s.vbs for s, _, _ in designed], [np.zeros(len(s.vbs)) for s, _, _ in designed])
    pi, table = design_pi_gains(model, scenario.settings.control, p_ed=scenario.p_ed, u_min=lo, u_max=hi)

    intra = [
        {
            "feeder": spec.name,
            "sensitivity": [float(a) for a in m.sensitivity],
            "k": [float(k) for k in gains.k],
            "rho": [float(r) for r in gains.rho],
            "h2_cost": gains.cost,
            "crossover_rad_s": gains.crossover,
        }
        for spec, m, gains in designed
    ]
    gains_path = _save_json(
        args.out / f"{scenario.name}_gains.json",
        {
            "intra": intra,
            "pi": {"kp": pi.kp, "ki": pi.ki, "kw": pi.kw, "kf": list(pi.kf), "dead_zone_kw": kw(g, pi.p_ed)},
        },
    )
    sweep_path = _save_csv(args.out / f"{scenario.name}_pi_sweep.csv", table)
    print(f"Saved: {gains_path}")
    print(f"Saved: {sweep_path}")
    for row in intra:
        print(f"{row['feeder']}: k = {np.round(row['k'], 4).tolist()}")
    print(f"PI: kp = {pi.kp:.4g}, ki = {pi.ki:.4g}")
    return [gains_path, sweep_path]


def cmd_stability(args: argparse.Namespace) -> list[Path]:
    scenario = load_scenario(args.scenario)
    block = read_json(args.scenario).get("stability")
    if not isinstance(block, dict):
        raise ConfigError(f"{args.scenario} has no stability block.\n{SCHEMA_HINT}")
    fi = int(block.get("feeder", 0))
    if not 0 <= fi < len(scenario.feeders):
        raise ConfigError(f"stability.feeder {fi} out of range")
    spec = scenario.feeders[fi]
    pick = [int(j) for j in block.get("vbs", [0, 1])]
    if len(pick) != 2 or any(not 0 <= j < len(spec.vbs) for j in pick):
        raise ConfigError("stability.vbs must name two VBs of the feeder")
    cfg = scenario.settings.control
    s = spec.graph.nominal_injections()
    s[0] = 0.0
    a = linearize_feeder(spec.graph, s, spec.vbs, cfg.noise_pole, cfg.fd_step).sensitivity[pick]
    tau = [spec.vbs[j].tau for j in pick]
    points = int(block.get("points", 200))
    k1 = np.linspace(*block.get("k1", [-3.0, 3.0]), points)
    k2 = np.linspace(*block.get("k2", [-3.0, 3.0]), points)
    cases = block.get("delay_cases", [[0.0, 0.0]])
    table = region_table(a, tau, k1, k2, cases, threads=scenario.settings.threads)
    out = _save_csv(args.out / f"{scenario.name}_stability.csv", table)
    print(f"Saved: {out}")
    for case, delays in enumerate(cases):
        share = table[table.delay_case == case].stable.mean()
        print(f"delays {delays}: {100 * share:.1f}% of grid stable")
    return [out]


def cmd_simulate(args: argparse.Namespace) -> list[Path]:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    args.seed = scenario.rng_seed
    controlled = not args.no_control
    ts = run_closed_loop(scenario, control=controlled)
    baseline = run_closed_loop(scenario, control=False) if args.counterfactual and controlled else None
    report = metrics(ts, args.window, baseline)

    stem = scenario.name
    outputs = [
        ts.to_csv(args.out / f"{stem}_timeseries.csv"),
        _save_csv(args.out / f"{stem}_voltages.csv", ts.voltages),
        _save_json(args.out / f"{stem}_events.json", ts.events),
        _save_json(args.out / f"{stem}_metrics.json", report.to_dict()),
    ]
    if baseline is not None:
        outputs.append(baseline.to_csv(args.out / f"{stem}_counterfactual.csv"))
    for p in outputs:
        print(f"Saved: {p}")
    print(f"Tracking error std: {report.error_std_kw:.3f} kW (mean {report.error_mean_kw:.3f} kW)")
    if report.std_reduction is not None:
        print(f"Control-off std:    {report.baseline_std_kw:.3f} kW ({100 * report.std_reduction:.1f}% reduction)")
    if report.v_min_pu is not None:
        print(f"Voltage range:      [{report.v_min_pu:.4f}, {report.v_max_pu:.4f}] pu")
    for r in report.recoveries:
        done = "not recovered" if r.time_to_recover is None else f"recovered after {r.time_to_recover:.1f} s"
        print(f"Attack at {r.attack_s:.1f} s: {done}")
    return outputs


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="gridvb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {gridvb.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="load and check a feeder file")
    p.add_argument("feeder", type=Path)
    p.set_defaults(run=cmd_validate)

    p = sub.add_parser("solve-ac", parents=[common], help="AC power flow at nominal loads")
    p.add_argument("feeder", type=Path)
    p.set_defaults(run=cmd_solve_ac)

    p = sub.add_parser("certify", parents=[common], help="C1 check and C2 injection sweep")
    p.add_argument("feeder", type=Path)
    p.add_argument("--sweep-injection", type=_range, default="0:5:0.1", help="start:stop:step in multiples of demand")
    p.add_argument("--vbs", default="", help="comma-separated VB bus names (default: the feeder's vb_buses)")
    p.set_defaults(run=cmd_certify)

    p = sub.add_parser("opf", parents=[common], help="one dispatch round, or the receding-horizon experiment")
    p.add_argument("config", type=Path)
    p.add_argument("--formulation", choices=[P1, P2], default=P2)
    p.add_argument("--horizon", type=int, default=0, help="override the dispatch horizon (steps)")
    p.add_argument("--experiment", action="store_true", help="replay every formulation on the AC oracle")
    p.set_defaults(run=cmd_opf)

    p = sub.add_parser("tune", parents=[common], help="intra H2 gains and inter PI sweep")
    p.add_argument("scenario", type=Path)
    p.set_defaults(run=cmd_tune)

    p = sub.add_parser("stability", parents=[common], help="two-VB gain stability grid")
    p.add_argument("scenario", type=Path)
    p.set_defaults(run=cmd_stability)

    p = sub.add_parser("simulate", parents=[common], help="closed-loop multi-feeder simulation")
    p.add_argument("scenario", type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-control", action="store_true", help="zero every real-time gain")
    p.add_argument("--counterfactual", action="store_true", help="also run the control-off pass")
    p.add_argument("--window", type=_window, default=None, help="metrics window start:end in s")
    p.set_defaults(run=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        settings = Settings.from_env()
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    configure_logging(args.log_level or settings.log_level)

    config = getattr(args, "feeder", None) or getattr(args, "scenario", None) or getattr(args, "config", None)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        outputs = args.run(args)
        if outputs:
            manifest = write_manifest(args.out, args.command, config, outputs, getattr(args, "seed", None))
            print(f"Saved: {manifest}")
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        print(SCHEMA_HINT, file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        print(SCHEMA_HINT, file=sys.stderr)
        return 2
    except GridVBError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
