"""Command line: curve, lp, validate, simulate, iterate.

Exit status is 0 on success, 1 when a validation check fails and 2 for
usage or configuration errors.  Powers on the command line and in every
output are physical; ``--mu`` is in slots per physical power unit.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InfeasibleConstraint, ModelError
from .lagrangian import policy_iteration
from .lp_oracle import lp_optimal_delay
from .model import SystemModel, ThresholdSpec, threshold_witness
from .simulator import SimulationConfig, simulate_curve_points
from .steady_state import TradeoffPoint, evaluate_policy, evaluate_spec
from .vertex_walk import SegmentLink, TradeoffCurve, shape_violations, trace_curve

CONFIG_FIELDS = ("Q", "arrival", "power", "pth_grid", "mu_grid", "sim")
SIM_FIELDS = ("horizon", "seed", "warmup", "batches")
LP_TOL = 1e-6
EVAL_TOL = 1e-9
MAX_SAMPLES = 10


class ConfigError(Exception):
    """Bad or missing configuration; maps to exit status 2."""


@dataclass
class RunManifest:
    subcommand: str
    config_path: str
    out_path: Optional[str]
    fmt: str
    model: SystemModel
    pth_grid: List[float] = field(default_factory=list)
    mu_grid: List[float] = field(default_factory=list)
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    curve_path: Optional[str] = None

    @property
    def power_scale(self) -> float:
        # normalized power = physical / power_scale inside the solvers
        return self.model.power_scale


def num(x: float) -> str:
    """Shortest decimal that reads back to the same double (at most 17 significant digits)."""
    return repr(float(x))


def _number_list(value, name: str) -> List[float]:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                              for v in value):
        raise ConfigError(f"field '{name}' must be a list of numbers")
    return [float(v) for v in value]


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in raw:
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"{path}: unknown field '{key}'")
    for key in ("Q", "arrival", "power"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required field '{key}'")
    if not isinstance(raw["Q"], int) or isinstance(raw["Q"], bool):
        raise ConfigError(f"{path}: field 'Q' must be an integer")
    cfg = {"Q": raw["Q"]}
    for key in ("arrival", "power", "pth_grid", "mu_grid"):
        cfg[key] = _number_list(raw.get(key, []), key)
    sim = raw.get("sim", {})
    if not isinstance(sim, dict):
        raise ConfigError(f"{path}: field 'sim' must be an object")
    for key in sim:
        if key not in SIM_FIELDS:
            raise ConfigError(f"{path}: unknown field 'sim.{key}'")
        if not isinstance(sim[key], int) or isinstance(sim[key], bool):
            raise ConfigError(f"{path}: field 'sim.{key}' must be an integer")
    cfg["sim"] = sim
    return cfg


def _parse_list(text: Optional[str], name: str) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--{name} must be a comma-separated list of numbers") from None


def build_manifest(args) -> RunManifest:
    cfg = load_config(args.config)
    try:
        model = SystemModel.from_lists(cfg["Q"], cfg["arrival"], cfg["power"])
    except ModelError as exc:
        raise ConfigError(f"{args.config}: invalid model: {exc}") from None
    pth = _parse_list(getattr(args, "pth", None), "pth")
    mu = _parse_list(getattr(args, "mu", None), "mu")
    sim = dict(cfg["sim"])
    if getattr(args, "seed", None) is not None:
        sim["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        sim["horizon"] = args.horizon
    try:
        sim_cfg = SimulationConfig(horizon=sim.get("horizon", 1_000_000), seed=sim.get("seed", 0),
                                   warmup=sim.get("warmup"), batch_count=sim.get("batches", 20))
    except ValueError as exc:
        raise ConfigError(f"{args.config}: field 'sim': {exc}") from None
    return RunManifest(
        subcommand=args.command,
        config_path=args.config,
        out_path=args.out,
        fmt=args.format,
        model=model,
        pth_grid=pth if pth is not None else cfg["pth_grid"],
        mu_grid=mu if mu is not None else cfg["mu_grid"],
        sim=sim_cfg,
        curve_path=getattr(args, "curve", None),
    )


def _emit(manifest: RunManifest, header: Sequence[str], rows: List[list], doc: dict) -> None:
    if manifest.fmt == "doc":
        text = json.dumps(doc, indent=1) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        text = buf.getvalue()
    if manifest.out_path:
        with open(manifest.out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _model_doc(model: SystemModel) -> dict:
    return {"Q": model.Q, "arrival": [float(x) for x in model.alpha], "power": [float(x) for x in model.P]}


def _thresholds(spec: ThresholdSpec) -> str:
    return str(spec)


def curve_doc(curve: TradeoffCurve) -> dict:
    return {
        "model": _model_doc(curve.model),
        "power_scale": curve.model.power_scale,
        "vertices": [
            {"power": v.power, "delay": v.delay, "policies": [list(s.thresholds) for s in specs]}
            for v, specs in zip(curve.vertices, curve.vertex_policies)
        ],
        "links": [{"upper": list(l.upper.thresholds), "lower": list(l.lower.thresholds), "index": l.index}
                  for l in curve.links],
        "segment_slopes": curve.slopes(),
    }


def curve_from_doc(model: SystemModel, doc: dict) -> TradeoffCurve:
    """Rebuild a curve from its structured document (for validation of stored fixtures)."""
    try:
        vertices, policies = [], []
        for v in doc["vertices"]:
            specs = [ThresholdSpec(tuple(t)) for t in v["policies"]]
            vertices.append(TradeoffPoint(float(v["power"]), float(v["delay"]), specs[0]))
            policies.append(specs)
        links = [SegmentLink(ThresholdSpec(tuple(l["upper"])), ThresholdSpec(tuple(l["lower"])), int(l["index"]))
                 for l in doc.get("links", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed curve document: {exc!r}") from None
    if not vertices:
        raise ConfigError("curve document has no vertices")
    # slopes recomputed from the coordinates so a tampered document cannot hide behind stored values
    return TradeoffCurve(model, vertices, policies, links)


def cmd_curve(manifest: RunManifest) -> int:
    curve = trace_curve(manifest.model)
    rows = [[i, num(v.power), num(v.delay), _thresholds(specs[0])]
            for i, (v, specs) in enumerate(zip(curve.vertices, curve.vertex_policies))]
    _emit(manifest, ("vertex", "power", "delay", "thresholds"), rows, curve_doc(curve))
    return 0


def cmd_lp(manifest: RunManifest) -> int:
    if not manifest.pth_grid:
        raise ConfigError("empty P_th grid: pass --pth or set 'pth_grid'")
    rows, doc_rows = [], []
    for pth in manifest.pth_grid:
        try:
            delay, _ = lp_optimal_delay(manifest.model, pth)
            status = "optimal"
        except InfeasibleConstraint:
            delay, status = None, "infeasible"
        rows.append([num(pth), "" if delay is None else num(delay), status])
        doc_rows.append({"pth": pth, "delay": delay, "status": status})
    _emit(manifest, ("pth", "delay", "status"), rows, {"model": _model_doc(manifest.model), "rows": doc_rows})
    return 0


def cmd_iterate(manifest: RunManifest) -> int:
    if not manifest.mu_grid:
        raise ConfigError("empty mu grid: pass --mu or set 'mu_grid'")
    rows, doc_rows = [], []
    for mu in manifest.mu_grid:
        policy = policy_iteration(manifest.model, mu * manifest.power_scale)
        point = evaluate_policy(manifest.model, policy)
        t = threshold_witness(policy)
        rows.append([num(mu), num(point.power), num(point.delay), ";".join(map(str, t))])
        doc_rows.append({"mu": mu, "power": point.power, "delay": point.delay, "thresholds": list(t)})
    _emit(manifest, ("mu", "power", "delay", "thresholds"), rows,
          {"model": _model_doc(manifest.model), "rows": doc_rows})
    return 0


def _default_samples(curve: TradeoffCurve) -> List[float]:
    """Budgets evenly spread over the curve's power range, or slack budgets for a one-point curve."""
    lo, hi = curve.vertices[-1].power, curve.vertices[0].power
    u = np.linspace(0.05, 0.95, MAX_SAMPLES)
    return list(lo + (hi - lo) * u) if hi > lo else [hi, 1.1 * hi]


def cmd_simulate(manifest: RunManifest) -> int:
    curve = trace_curve(manifest.model)
    grid = manifest.pth_grid or _default_samples(curve)
    header = ("pth", "analytic_delay", "power", "delay", "half_width_power", "half_width_delay")
    rows, doc_rows = [], []
    for pth in grid:
        try:
            analytic = curve.delay_at(pth)
        except InfeasibleConstraint:
            # no policy meets this budget: nothing to simulate
            rows.append([num(pth)] + [""] * 5)
            doc_rows.append(dict(zip(header, (pth, None, None, None, None, None))))
            continue
        r = simulate_curve_points(manifest.model, curve, [pth], manifest.sim)[0]
        rows.append([num(pth), num(analytic), num(r.empirical_power), num(r.empirical_delay),
                     num(r.half_width_power), num(r.half_width_delay)])
        doc_rows.append(dict(zip(header, (pth, analytic, r.empirical_power, r.empirical_delay,
                                          r.half_width_power, r.half_width_delay))))
    sim = manifest.sim
    _emit(manifest, header, rows, {"model": _model_doc(manifest.model), "rows": doc_rows,
                                   "sim": {"horizon": sim.horizon, "seed": sim.seed, "warmup": sim.warmup,
                                           "batches": sim.batch_count}})
    return 0


def validate_curve(model: SystemModel, curve: TradeoffCurve, samples: Sequence[float],
                   sim: Optional[SimulationConfig]) -> List[tuple]:
    """(check name, passed, detail) for every validation check."""
    scale = model.power_scale
    checks = []
    broken = shape_violations(curve)
    for name in ("strictly_decreasing", "convex_slopes", "deterministic_vertices", "single_threshold_step"):
        checks.append((name, name not in broken, ""))
    worst = 0.0
    # the reported (first) policy of each vertex; the others coincide only up to the join tolerance
    for v, specs in zip(curve.vertices, curve.vertex_policies):
        pt = evaluate_spec(model, specs[0])
        worst = max(worst, abs(pt.power - v.power) / scale, abs(pt.delay - v.delay))
    checks.append(("vertex_evaluation", worst <= EVAL_TOL, f"max deviation {worst:.3e}"))
    worst, disagree, feasible = 0.0, [], []
    for pth in samples:
        # below the minimum power both oracles must report infeasibility
        try:
            expect = curve.delay_at(pth)
        except InfeasibleConstraint:
            expect = None
        try:
            got, _ = lp_optimal_delay(model, pth)
        except InfeasibleConstraint:
            got = None
        if (expect is None) != (got is None):
            disagree.append(pth)
        elif expect is not None:
            feasible.append(pth)
            worst = max(worst, abs(got - expect))
    checks.append(("lp_agreement", worst <= LP_TOL and not disagree,
                   f"max deviation {worst:.3e} over {len(feasible)} feasible budgets"
                   + (f", feasibility disagrees at {disagree}" if disagree else "")))
    if sim is not None and feasible:
        results = simulate_curve_points(model, curve, feasible, sim)
        worst = 0.0
        for pth, r in zip(feasible, results):
            expect_p = min(pth, curve.vertices[0].power)
            dev_p = abs(r.empirical_power - expect_p) / max(r.half_width_power, EVAL_TOL * scale)
            dev_d = abs(r.empirical_delay - curve.delay_at(pth)) / max(r.half_width_delay, EVAL_TOL)
            worst = max(worst, dev_p, dev_d)
        checks.append(("simulation_agreement", worst <= 3.0, f"max deviation {worst:.2f} half-widths"))
    return checks


def cmd_validate(manifest: RunManifest) -> int:
    model = manifest.model
    if manifest.curve_path:
        try:
            with open(manifest.curve_path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read curve document {manifest.curve_path}: {exc}") from None
        curve = curve_from_doc(model, doc)
    else:
        curve = trace_curve(model)
    samples = manifest.pth_grid or _default_samples(curve)
    checks = validate_curve(model, curve, samples, manifest.sim)
    ok = all(passed for _, passed, _ in checks)
    lines = [f"{'PASS' if passed else 'FAIL'} {name} {detail}".rstrip() for name, passed, detail in checks]
    lines.append("overall " + ("PASS" if ok else "FAIL"))
    text = "\n".join(lines) + "\n"
    if manifest.fmt == "doc":
        text = json.dumps({"passed": ok, "checks": [{"name": n, "passed": p, "detail": d}
                                                    for n, p, d in checks]}, indent=1) + "\n"
    if manifest.out_path:
        with open(manifest.out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if ok else 1


COMMANDS = {"curve": cmd_curve, "lp": cmd_lp, "validate": cmd_validate,
            "simulate": cmd_simulate, "iterate": cmd_iterate}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dptradeoff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="model config (JSON)")
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--format", choices=("csv", "doc"), default="csv")
        if name in ("lp", "validate", "simulate"):
            p.add_argument("--pth", help="comma-separated power budgets (physical units)")
        if name == "iterate":
            p.add_argument("--mu", help="comma-separated multipliers (slots per physical power unit)")
        if name in ("validate", "simulate"):
            p.add_argument("--seed", type=int)
            p.add_argument("--horizon", type=int)
        if name == "validate":
            p.add_argument("--curve", help="curve document to validate instead of tracing one")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        manifest = build_manifest(args)
        return COMMANDS[args.command](manifest)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
