"""Command-line entry point: ``firecampaign <command> ...``.

Exit status is 0 on success, 1 when a command fails for a domain reason
(bad input file, unknown run, child failure) and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fds_formats as ff
from . import firesim, monitor, tracker
from ._io import atomic_write_text, load_toml
from .tenability import IncompleteHistory, ShapeMismatch, TenabilityConfig, badness, bin_time_average, write_breakdown

log = logging.getLogger("firecampaign")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="firecampaign", description="Track, supervise, score and optimise fire simulations.")
    p.add_argument("--store", help=f"run store directory (default: ${tracker.STORE_ENV} or ./.firecampaign)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one scenario under supervision")
    r.add_argument("--scenario", required=True, type=Path, help="scenario TOML file")
    r.add_argument("--out", type=Path, help="output directory (default: ./<chid>)")
    r.add_argument("--alert", action="append", default=[], metavar="RULE",
                   help='e.g. "visibility_min below 3 for 1 : abort" (repeatable)')
    r.add_argument("--poll", type=float, default=1.0, help="polling period in seconds")
    r.add_argument("--grace", type=float, default=10.0, help="seconds between SIGTERM and SIGKILL")
    r.add_argument("--name", default=None)
    r.add_argument("--folder", default="/runs")
    r.add_argument("--tag", action="append", default=[])
    r.add_argument("--cores", type=int, default=1)

    i = sub.add_parser("import", help="load a finished simulation directory")
    i.add_argument("--dir", required=True, type=Path)
    i.add_argument("--folder", default="/historic")
    i.add_argument("--name", default=None)

    ls = sub.add_parser("list", help="list runs")
    ls.add_argument("--filter", action="append", default=[], metavar="EXPR",
                    help="tag=X, status=X, folder=/a/b, name=X, meta:key=v or meta:key=lo..hi")
    ls.add_argument("--json", action="store_true", help="one JSON record per line")

    g = sub.add_parser("lineage", help="ancestors or descendants of a run or artifact")
    g.add_argument("node", help="run id, run:<id> or artifact:<sha256>")
    g.add_argument("--direction", choices=("ancestors", "descendants"), default="ancestors")

    s = sub.add_parser("score", help="badness of a visibility slice history")
    s.add_argument("--history", required=True, type=Path)
    s.add_argument("--alpha", type=float, default=10.0)
    s.add_argument("--per-floor", action="store_true")
    s.add_argument("--breakdown", type=Path, help="breakdown CSV path (default: next to the history)")

    o = sub.add_parser("optimize", help="Sobol + GP search for the worst fire location")
    o.add_argument("--config", type=Path, help="campaign TOML file")
    o.add_argument("--init", type=int, default=None)
    o.add_argument("--guided", type=int, default=None)
    o.add_argument("--seed", type=int, default=None)
    o.add_argument("--out", type=Path, default=Path("campaign"))
    o.add_argument("--minimize", action="store_true", help="search for the least bad location instead")

    t = sub.add_parser("trend", help="GP trend of a metric against run metadata")
    t.add_argument("--filter", action="append", default=[], metavar="EXPR")
    t.add_argument("--key", action="append", required=True, help="metadata key (repeatable)")
    t.add_argument("--metric", required=True)
    t.add_argument("--sweep", help="key to sweep (default: first --key)")
    t.add_argument("--points", type=int, default=50)
    t.add_argument("--out", type=Path, default=Path("trend.csv"))

    e = sub.add_parser("emissions", help="energy and carbon estimate for a run")
    e.add_argument("--run", required=True)
    e.add_argument("--zone", required=True)
    e.add_argument("--fallback", type=Path, help="JSON table of zone -> gCO2/kWh")
    return p


def _store(args) -> tracker.RunStore:
    return tracker.RunStore(args.store or os.environ.get(tracker.STORE_ENV) or ".firecampaign")


# --- commands ---------------------------------------------------------------

def cmd_run(args) -> int:
    rules = [monitor.parse_alert_rule(text) for text in args.alert]
    model, scenario, settings, building_ref = firesim.load_scenario_toml(args.scenario)
    problem = firesim.validate_fire_location(model, scenario.x, scenario.y, scenario.floor, scenario.size)
    if problem:
        raise firesim.InvalidLocation(problem)
    out = (args.out or Path(settings.chid)).resolve()
    out.mkdir(parents=True, exist_ok=True)
    input_path = out / f"{settings.chid}.fds"
    firesim.write_input(input_path, scenario, settings, building_ref)

    watch = tracker.WatchSpec.for_chid(out, settings.chid)
    watch.extra.append(firesim.output_paths(out, settings.chid)["slices"])
    store = _store(args)
    command = [sys.executable, "-m", "firecampaign.firesim", input_path.name]
    result = monitor.supervise(
        command, watch, rules, store, name=args.name or settings.chid, folder=args.folder,
        tags=("firesim", *args.tag), poll=args.poll, grace=args.grace, cwd=out, cores=args.cores,
        stdout_path=out / "stdout.log", code_files=[firesim.__file__],
    )
    print(f"run {result.run_id}: {result.status}")
    for rule in result.fired:
        print(f"alert fired: {rule}")
    return 0 if result.status in ("completed", "terminated") else 1


def cmd_import(args) -> int:
    run_id = tracker.import_historic(_store(args), args.dir, folder=args.folder, name=args.name)
    print(run_id)
    return 0


def cmd_list(args) -> int:
    store = _store(args)
    runs = store.query_runs(tracker.RunFilter.parse(args.filter))
    for run in runs:
        if args.json:
            print(json.dumps({"id": run.id, "name": run.name, "folder": run.folder, "status": run.status,
                              "tags": sorted(run.tags), "created": run.created}))
        else:
            print(f"{run.id}  {run.status:<10}  {run.folder:<16}  {run.name}  [{', '.join(sorted(run.tags))}]")
    return 0


def cmd_lineage(args) -> int:
    node = args.node if ":" in args.node else tracker.run_node(args.node)
    graph = _store(args).lineage(node, args.direction)
    for n in sorted(graph.nodes - {node}):
        print(n)
    return 0


def cmd_score(args) -> int:
    hist = firesim.read_slice_history(args.history)
    duration = hist.data.shape[0] * hist.dt_out
    config = TenabilityConfig(alpha=args.alpha).rescaled(duration)
    if hist.data.shape[0] < config.n_bins:
        raise ValueError(f"{args.history} holds {hist.data.shape[0]} samples; at least {config.n_bins} "
                         f"are needed (slice interval at most {duration / config.n_bins:g} s)")
    result = badness(bin_time_average(hist.data, hist.dt_out, config), config, per_floor=args.per_floor)
    path = args.breakdown or args.history.with_name(args.history.stem + "_breakdown.csv")
    write_breakdown(path, result)
    print(f"badness {result.score:.6f}")
    print(f"breakdown written to {path}")
    return 0


def _campaign_settings(cfg: dict, args):
    from .optimizer import AcquisitionConfig, ContinuousDim, ParameterSpace, QuantisedDim

    camp = cfg.get("campaign", {})
    n_init = args.init if args.init is not None else int(camp.get("n_init", 10))
    n_guided = args.guided if args.guided is not None else int(camp.get("n_guided", 10))
    seed = args.seed if args.seed is not None else int(camp.get("seed", 0))
    obj = cfg.get("objective", {})
    building = obj.get("building", "default")
    model = firesim.BuildingModel.default() if building == "default" else firesim.BuildingModel.from_toml(
        Path(args.config).parent / building if args.config else building)
    if "cell" in obj:
        model = model.coarsened(float(obj["cell"]))
    sp = cfg.get("space", {})
    size = float(obj.get("size", 2.0))
    res = float(sp.get("resolution", model.cell))
    xr = sp.get("x", [1.0, model.width - 1.0 - size])
    yr = sp.get("y", [1.0, model.depth - 1.0 - size])
    space = ParameterSpace((
        ContinuousDim("x", float(xr[0]), float(xr[1]), res),
        ContinuousDim("y", float(yr[0]), float(yr[1]), res),
        QuantisedDim("floor", int(sp.get("floors", model.n_floors))),
    ))
    acq = AcquisitionConfig(jitter=float(camp.get("jitter", 0.01)))
    return n_init, n_guided, seed, model, space, acq, obj, size


def cmd_optimize(args) -> int:
    from .optimizer import command_objective, fire_feasibility, firesim_objective, run_campaign, summary_record

    cfg = load_toml(args.config) if args.config else {}
    n_init, n_guided, seed, model, space, acq, obj, size = _campaign_settings(cfg, args)
    kind = obj.get("kind", "firesim")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if kind == "firesim":
        duration = float(obj.get("duration", 1800.0))
        settings = firesim.OutputSettings(dt=float(obj.get("dt", 0.25)),
                                          slice_interval=float(obj.get("slice_interval", 5.0)))
        objective = firesim_objective(model, settings, TenabilityConfig(alpha=float(obj.get("alpha", 10.0)))
                                      .rescaled(duration), duration=duration, size=size)
    elif kind == "command":
        base = Path(args.config).parent if args.config else Path.cwd()
        template = (base / obj["template"]).read_text()
        objective = command_objective(template, list(obj["command"]), obj["score_file"], out / "evals",
                                      obj.get("score_column"), obj.get("timeout"))
    else:
        raise ValueError(f"unknown objective kind {kind!r}")
    sign = -1.0 if args.minimize or cfg.get("campaign", {}).get("orientation") == "minimize" else 1.0
    feasible = fire_feasibility(model, size)
    store = _store(args)
    result = run_campaign(lambda p: sign * objective(p), space, n_init, n_guided, seed, store,
                          feasible=feasible, acq=acq, name=cfg.get("campaign", {}).get("name", "campaign"))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", *space.names, "value", "run_id"])
    for k, o in enumerate(result.observations):
        w.writerow([k, *[o.params[n] for n in space.names], sign * o.value, o.run_id])
    atomic_write_text(out / "observations.csv", buf.getvalue())
    summary = summary_record(result)
    if summary["best"] is not None:
        summary["best"]["value"] *= sign
    summary["orientation"] = "minimize" if sign < 0 else "maximize"
    summary["seed"] = seed
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")

    best = result.best
    if best is None:
        print("no successful evaluations")
        return 1
    labels = model.floor_labels
    floor = int(best.params["floor"])
    print(f"best badness {sign * best.value:.4f} at x={best.params['x']:.4f} m from the left wall, "
          f"y={best.params['y']:.4f} m from the front wall, floor {labels[floor] if floor < len(labels) else floor}")
    print(f"{result.evaluations_used} evaluations, {len(result.failures)} failed; results in {out}")
    return 0


def cmd_trend(args) -> int:
    from .optimizer import fit_trend

    trend = fit_trend(_store(args), tracker.RunFilter.parse(args.filter), args.key, args.metric)
    key = args.sweep or args.key[0]
    if key not in args.key:
        raise ValueError(f"sweep key {key!r} is not one of the --key inputs")
    xs, mean, two_sigma = trend.sweep(key, args.points)
    buf = io.StringIO()
    buf.write(f"{key},mean,lower,upper\n")
    for x, m, s in zip(xs.tolist(), mean.tolist(), two_sigma.tolist()):
        buf.write(f"{x!r},{m!r},{m - s!r},{m + s!r}\n")
    atomic_write_text(args.out, buf.getvalue())
    print(f"fitted {len(trend.run_ids)} runs; lengthscales {np.round(trend.model.lengthscales, 4).tolist()}")
    print(f"sweep of {key} written to {args.out}")
    return 0


def cmd_emissions(args) -> int:
    store = _store(args)
    samples = [monitor.ResourceSample(t, cpu, rss, p) for t, cpu, rss, p in store.resources(args.run)]
    if len(samples) < 2:
        raise ValueError(f"run {args.run} has fewer than two resource samples")
    intensity, source = monitor.get_intensity(args.zone, monitor.CarbonClientConfig.from_env(args.fallback))
    est = monitor.estimate_emissions(samples, intensity, source)
    store.update_metadata(args.run, {"emissions.energy_kwh": est.energy, "emissions.grams": est.emissions,
                                     "emissions.intensity": est.intensity, "emissions.source": source,
                                     "emissions.zone": args.zone.upper()})
    print(f"energy {est.energy:.6g} kWh x {est.intensity:g} gCO2/kWh = {est.emissions:.6g} gCO2 "
          f"(intensity source: {source})")
    return 0


COMMANDS = {
    "run": cmd_run, "import": cmd_import, "list": cmd_list, "lineage": cmd_lineage,
    "score": cmd_score, "optimize": cmd_optimize, "trend": cmd_trend, "emissions": cmd_emissions,
}

DOMAIN_ERRORS = (tracker.TrackerError, monitor.MonitorError, ff.FormatError, IncompleteHistory, ShapeMismatch,
                 ValueError, KeyError, LookupError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (monitor.RuleSyntaxError, tracker.InvalidFilter) as exc:
        print(f"firecampaign {args.command}: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"firecampaign {args.command}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
