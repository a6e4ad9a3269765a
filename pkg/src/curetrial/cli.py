"""Command-line front end.

Every subcommand writes ``<out>/<command>.<format>`` and prints a short
summary.  JSON results embed the resolved scenario, so passing a result file
back through ``--scenario`` reproduces it exactly.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .design_search import find_min_events, milestone_power, power_grid
from .interim import FutilityRule, operating_characteristics, patient_savings
from .scenario_file import ScenarioBundle, ScenarioError, bundle_to_dict, load_scenario, preset_names
from .stats import minimal_detectable_hr, schoenfeld_events
from .survival_models import hazard_ratio_curve, mechanistic_marginal
from .trial_engine import ResponderClass, cut_at_event_count, simulate_trial

OUT_ENV = "CURETRIAL_OUT"

EXIT_CONFIG = 2
EXIT_UNREACHABLE = 3


class CommandError(Exception):
    def __init__(self, message: str, status: int = EXIT_CONFIG):
        super().__init__(message)
        self.status = status


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return _clean(x.item())
    return x


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _emit(args, command: str, columns: list[str], rows: list[list], extra: dict, bundle: ScenarioBundle | None):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{command}.{args.format}"
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        path.write_text(buf.getvalue())
    else:
        payload = {
            "command": command,
            "seed": args.seed,
            "trials": args.trials,
            "scenario": None if bundle is None else bundle_to_dict(bundle),
            "columns": columns,
            "rows": rows,
            **extra,
        }
        path.write_text(json.dumps(_clean(payload), indent=2) + "\n")
    print(f"wrote {path}")
    return path


def _bundle(args, required: bool = True) -> ScenarioBundle | None:
    if args.scenario is None:
        if required:
            raise CommandError("--scenario: required for this command")
        return None
    return load_scenario(args.scenario)


def _events(args, bundle: ScenarioBundle) -> list[int]:
    if args.events:
        return args.events
    if bundle.events is None:
        raise CommandError("[design] events: not set; pass --events")
    return [bundle.events]


# ---------------------------------------------------------------------------
# subcommands


def cmd_power(args) -> int:
    b = _bundle(args)
    res = power_grid(b.sample_size, _events(args, b), args.trials, args.seed, args.threads)
    cols = ["d", "power", "mc_se", "t25", "t50", "t75", "under_evented_frac"]
    rows = [[e.d, e.power, e.mc_se, e.t25, e.t50, e.t75, e.under_evented_frac] for e in res.entries]
    for e in res.entries:
        print(f"d={e.d}: power {e.power:.4f} (se {e.mc_se:.4f}), median time {e.t50:.1f} months")
    _emit(args, "power", cols, rows, {}, b)
    return 0


def cmd_events_search(args) -> int:
    b = _bundle(args)
    res = find_min_events(
        b.sample_size, args.trials, args.seed, args.target, args.d_lo, args.d_hi, args.threads
    )
    cols = ["d", "power", "mc_se", "t25", "t50", "t75", "under_evented_frac"]
    rows = [[e.d, e.power, e.mc_se, e.t25, e.t50, e.t75, e.under_evented_frac] for e in res.grid.entries]
    extra = {"events": res.d, "reached": res.reached, "target_power": res.target_power, "d_lo": res.d_lo, "d_hi": res.d_hi}
    _emit(args, "events-search", cols, rows, extra, b)
    if not res.reached:
        print(
            f"target power {res.target_power} unreachable within [{res.d_lo}, {res.d_hi}]; "
            f"power at d_hi is {res.power_at_hi:.4f}",
            file=sys.stderr,
        )
        return EXIT_UNREACHABLE
    e = res.grid.entry(res.d)
    print(f"minimal events: {res.d} (power {e.power:.4f}, median time {e.t50:.1f} months)")
    return 0


def cmd_interim_oc(args) -> int:
    b = _bundle(args)
    try:
        null, alt = b.interim_scenarios()
    except ScenarioError as exc:
        raise CommandError(str(exc)) from None
    rule = b.rule or FutilityRule(2.0)
    grid = args.boundaries or list(b.boundary_grid)
    d = _events(args, b)[0]
    oc = operating_characteristics(null, alt, grid, d, args.trials, args.seed, rule, args.threads)
    sav = patient_savings(alt, rule, args.trials, args.seed, args.threads)
    cols = [
        "x_star", "p_stop_alt", "p_continue_null", "p_stop_null", "overall_power",
        "se_p_stop_alt", "se_p_continue_null", "se_p_stop_null", "se_overall_power",
    ]
    rows = [
        [e.x_star, e.p_stop_alt, e.p_continue_null, e.p_stop_null, e.overall_power,
         e.se_p_stop_alt, e.se_p_continue_null, e.se_p_stop_null, e.se_overall_power]
        for e in oc.entries
    ]
    extra = {
        "events": d,
        "power_without_interim": oc.power_without_interim,
        "p_reject_null": oc.p_reject_null,
        "decision_time_quartiles": list(sav.decision_time),
        "recruited_at_decision_quartiles": list(sav.recruited_at_decision),
        "not_recruited_if_stop_quartiles": list(sav.not_recruited_if_stop),
    }
    print(f"power without interim at d={d}: {oc.power_without_interim:.4f}")
    for e in oc.entries:
        if abs(e.x_star - rule.boundary) < 1e-9:
            print(
                f"x*={e.x_star:g}: P(stop|alt) {e.p_stop_alt:.3f}, P(continue|null) {e.p_continue_null:.3f}, "
                f"overall power {e.overall_power:.3f}"
            )
    print(
        f"median decision time {sav.decision_time[1]:.1f} months, "
        f"{sav.recruited_at_decision[1]:.0f} randomized, {sav.not_recruited_if_stop[1]:.0f} spared by a stop"
    )
    _emit(args, "interim-oc", cols, rows, extra, b)
    return 0


def cmd_milestone_power(args) -> int:
    b = _bundle(args)
    d = _events(args, b)[0]
    res = milestone_power(b.sample_size, d, args.t0, args.trials, args.seed, args.transform, args.threads)
    cols = ["t0", "power", "mc_se", "not_estimable_frac"]
    rows = [list(r) for r in zip(res.t0, res.power, res.mc_se, res.not_estimable_frac)]
    for t0, p in zip(res.t0, res.power):
        print(f"t0={t0:g}: power {p:.3f}")
    _emit(args, "milestone-power", cols, rows, {"events": d, "transform": res.transform}, b)
    return 0


def cmd_curves(args) -> int:
    b = _bundle(args)
    sc = b.sample_size
    n = int(round(args.t_max / args.step))
    t = np.arange(n + 1) * args.step
    cols = ["t", "S_control", "S_experimental", "h_control", "h_experimental", "hazard_ratio"]
    series = [t, sc.control.sf(t), sc.experimental.sf(t), sc.control.hazard(t), sc.experimental.hazard(t)]
    series.append(np.asarray(hazard_ratio_curve(sc.experimental, sc.control, t)))
    extra = {
        "cure_proportion_control": sc.control.cure_proportion,
        "cure_proportion_experimental": sc.experimental.cure_proportion,
    }
    if b.mechanistic is not None:
        m_ctl = mechanistic_marginal(b.mechanistic.control)
        m_exp = mechanistic_marginal(b.mechanistic.experimental)
        cols += ["S_control_mechanistic", "S_experimental_mechanistic"]
        series += [m_ctl.sf(t), m_exp.sf(t)]
    rows = [[float(s[i]) for s in series] for i in range(len(t))]
    print(
        f"cure proportions: control {sc.control.cure_proportion:.3f}, "
        f"experimental {sc.experimental.cure_proportion:.3f}"
    )
    _emit(args, "curves", cols, rows, extra, b)
    return 0


def cmd_dataset(args) -> int:
    """Patient-level data of the first ``--trials`` trials, each cut at d events."""
    b = _bundle(args)
    if args.model == "mechanistic":
        if b.mechanistic is None:
            raise CommandError("[mechanistic]: section missing; cannot use --model mechanistic")
        sc = b.mechanistic
    else:
        sc = b.sample_size
    d = _events(args, b)[0]
    cols = ["trial_id", "patient_id", "arm", "responder_class", "cr_flag", "rand_time", "obs_time", "event_flag"]
    rows = []
    for i in range(args.trials):
        data = cut_at_event_count(simulate_trial(sc, args.seed, i), d, sc.horizon)
        cr = data.cr_flag
        for j in range(len(data)):
            rows.append([
                data.trial_id,
                int(data.patient_id[j]),
                int(data.arm[j]),
                ResponderClass(int(data.responder_class[j])).name.lower(),
                int(cr[j]),
                float(data.rand_time[j]),
                float(data.obs_time[j]),
                int(data.event[j]),
            ])
    _emit(args, "dataset", cols, rows, {"events": d, "model": args.model}, b)
    return 0


def cmd_schoenfeld(args) -> int:
    b = _bundle(args, required=False)
    sc = None if b is None else b.sample_size
    alpha = args.alpha if args.alpha is not None else (sc.alpha if sc else 0.05)
    power = args.power if args.power is not None else (sc.target_power if sc else 0.85)
    ratio = args.ratio if args.ratio is not None else (sc.allocation_ratio if sc else 1.0)
    hr = args.hr if args.hr is not None else (sc.planning_hazard_ratio() if sc else None)
    if hr is None:
        raise CommandError("--hr: required when no scenario is given")
    try:
        d = schoenfeld_events(alpha, power, hr, ratio)
    except ValueError as exc:
        raise CommandError(f"--hr: {exc}") from None
    mde = minimal_detectable_hr(d, ratio, alpha)
    print(f"events: {d} (alpha {alpha}, power {power}, hr {hr}, r {ratio}); minimal detectable hr {mde:.4f}")
    cols = ["alpha", "power", "hazard_ratio", "allocation_ratio", "events", "minimal_detectable_hr"]
    _emit(args, "schoenfeld", cols, [[alpha, power, hr, ratio, d, mde]], {"events": d}, b)
    return 0


# ---------------------------------------------------------------------------


def _grid_arg(text: str) -> list[float]:
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            return [round(start + k * step, 10) for k in range(int(round((stop - start) / step)) + 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step or a comma list, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--scenario", help=f"scenario file, JSON result, or preset ({', '.join(preset_names())})"
    )
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--trials", type=_positive_int, default=100_000, help="simulated trials (default 100000)")
    common.add_argument("--out", default=os.environ.get(OUT_ENV, "."), help=f"output directory (env {OUT_ENV})")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker processes; results do not depend on it")

    p = argparse.ArgumentParser(prog="curetrial", description="Cure-proportion trial design by simulation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("power", parents=[common], help="logrank power at given event counts")
    s.add_argument("--events", type=_positive_int, nargs="+")
    s.set_defaults(func=cmd_power)

    s = sub.add_parser("events-search", parents=[common], help="minimal events reaching the target power")
    s.add_argument("--target", type=float)
    s.add_argument("--d-lo", type=_positive_int)
    s.add_argument("--d-hi", type=_positive_int)
    s.set_defaults(func=cmd_events_search)

    s = sub.add_parser("interim-oc", parents=[common], help="futility interim operating characteristics")
    s.add_argument("--boundaries", type=_grid_arg)
    s.add_argument("--events", type=_positive_int, nargs=1)
    s.set_defaults(func=cmd_interim_oc)

    s = sub.add_parser("milestone-power", parents=[common], help="power of fixed-time survival comparisons")
    s.add_argument("--t0", type=float, nargs="+", default=[12.0, 18.0, 24.0, 30.0, 36.0])
    s.add_argument("--transform", choices=("identity", "log", "cloglog", "arcsine"), default="cloglog")
    s.add_argument("--events", type=_positive_int, nargs=1)
    s.set_defaults(func=cmd_milestone_power)

    s = sub.add_parser("curves", parents=[common], help="survival, hazard and hazard-ratio curves")
    s.add_argument("--t-max", type=float, default=60.0)
    s.add_argument("--step", type=float, default=0.5)
    s.set_defaults(func=cmd_curves)

    s = sub.add_parser("dataset", parents=[common], help="patient-level datasets cut at d events")
    s.add_argument("--events", type=_positive_int, nargs=1)
    s.add_argument("--model", choices=("sample-size", "mechanistic"), default="sample-size")
    s.set_defaults(func=cmd_dataset, trials=1)

    s = sub.add_parser("schoenfeld", parents=[common], help="closed-form events under proportional hazards")
    s.add_argument("--alpha", type=float)
    s.add_argument("--power", type=float)
    s.add_argument("--hr", type=float)
    s.add_argument("--ratio", type=float)
    s.set_defaults(func=cmd_schoenfeld)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, CommandError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "status", EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
