"""Command-line front end.

    evsched gen   --evs 200 --seed 7 [--out FILE]
    evsched run   --method csa|dcsa|cost-min|convenience-max [--scenario FILE | --evs N --seed S]
    evsched sweep --evs 100,200 --method csa,dcsa --reps 100
    evsched audit --run-dir DIR

Outputs go to ``--out-dir``, else ``$EVSCHED_OUT_DIR``, else ``./out``.
A config file (``--config``) uses the sectioned text layout of scenario files
with header ``# evsched-config v1`` and sections ``[generator]`` and ``[run]``;
flags given on the command line win over the file.

Exit codes: 0 success, 2 bad arguments or configuration, 3 infeasible
scenario, 4 audit mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .core import (GeneratorConfig, ScenarioError, generate_scenario, load_scenario, parse_pairs,
                   parse_sections, save_scenario)
from .qp import InfeasibleError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_AUDIT = 4

CONFIG_HEADER = "# evsched-config v1"
OUT_ENV = "EVSCHED_OUT_DIR"
METHODS = ("csa", "dcsa", "cost-min", "convenience-max")

log = logging.getLogger("evsched")


class ConfigError(ValueError):
    pass


def read_config(path) -> tuple:
    """``(GeneratorConfig overrides, run defaults)`` from a config file."""
    try:
        sec = parse_sections(Path(path).read_text(), CONFIG_HEADER)
    except (OSError, ScenarioError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(sec) - {"generator", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    gen = parse_pairs(sec.get("generator", []))
    run = parse_pairs(sec.get("run", []))
    fields = {f.name: f for f in dataclasses.fields(GeneratorConfig)}
    overrides = {}
    for k, v in gen.items():
        if k not in fields:
            raise ConfigError(f"unknown generator key {k!r}")
        overrides[k] = _coerce(getattr(GeneratorConfig(), k), v, k)
    return overrides, run


def _coerce(default, text: str, key: str):
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",")]
            return tuple(float(p) for p in parts) if key == "station_shares" else tuple(parts)
        if text == "none":
            return None
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get(OUT_ENV) or "out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def generator_config(args) -> GeneratorConfig:
    overrides = {}
    if getattr(args, "config", None):
        overrides, run = read_config(args.config)
        for k, v in run.items():
            if getattr(args, k, None) is None and k in ("method", "forecaster", "epsilon", "seed", "evs"):
                setattr(args, k, v)
    if getattr(args, "forecaster", None) and args.forecaster != "perfect":
        overrides["forecaster"] = args.forecaster
    try:
        cfg = GeneratorConfig().replace(**overrides)
        cfg.validate()
    except (TypeError, ScenarioError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_gen(args) -> int:
    cfg = generator_config(args)
    scenario = generate_scenario(int(args.seed), int(args.evs), cfg)
    path = Path(args.out) if args.out else out_dir(args) / f"scenario-n{args.evs}-s{args.seed}.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, path)
    print(path)
    return EXIT_OK


def run_method(scenario, method: str, forecaster: str, epsilon: float, strict: bool = False):
    """``(schedule, metrics, ledger)`` for one method on one scenario.

    With ``strict``, a slot that cannot be planned under the peak cap is an error.
    """
    from .centralized import run_csa
    from .distributed import run_csa_ledger, run_dcsa
    from .metrics import run_convenience_max, run_cost_min, summarize

    if method == "csa":
        schedule, _ = run_csa(scenario, forecaster, strict=strict)
        ledger = run_csa_ledger(scenario, schedule)
        return schedule, summarize(schedule, scenario, ledger), ledger
    if method == "dcsa":
        return run_dcsa(scenario, forecaster, epsilon=epsilon, trace=True)
    if method == "cost-min":
        schedule, m = run_cost_min(scenario, forecaster, strict=strict)
        return schedule, m, None
    if method == "convenience-max":
        schedule, m = run_convenience_max(scenario)
        return schedule, m, None
    raise ConfigError(f"unknown method {method!r}")


def ledger_json(ledger) -> str:
    doc = {
        "totals": ledger.totals(),
        "slots": [{"t": s.t, "n_by_station": list(s.n_by_station), "window_lens": list(s.window_lens),
                   "iterations": s.iterations, "counts": dict(sorted(s.counts.items()))}
                  for s in ledger.slots],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def cmd_run(args) -> int:
    from .centralized import schedule_csv
    from .metrics import metrics_json

    cfg = generator_config(args)
    method = args.method or "csa"
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r} (choose from {', '.join(METHODS)})")
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = generate_scenario(int(args.seed or 0), int(args.evs or 200), cfg)
    forecaster = args.forecaster or cfg.forecaster
    epsilon = float(args.epsilon or 1e-4)
    schedule, metrics, ledger = run_method(scenario, method, forecaster, epsilon, args.strict)
    d = out_dir(args)
    _write(d / f"{method}-schedule.csv", schedule_csv(schedule, scenario))
    _write(d / f"{method}-metrics.json", metrics_json(metrics))
    if ledger is not None:
        _write(d / f"{method}-ledger.json", ledger_json(ledger))
        if ledger.trace is not None:
            _write(d / f"{method}-trace.txt", ledger.trace_lines())
    for note in schedule.notes:
        log.warning(note)
    print(f"{method}: cost {metrics.cost:.6f}  convenience {metrics.convenience:.3f}  "
          f"mean charging time {metrics.mean_charging_time_h:.3f} h  missed {metrics.n_missed}")
    return EXIT_OK


def _sweep_one(job):
    n, rep, seed, method, forecaster, epsilon, cfg, rep_dir = job
    from .metrics import metrics_row

    scenario = generate_scenario(seed, n, cfg)
    schedule, metrics, _ = run_method(scenario, method, forecaster, epsilon)
    row = metrics_row(metrics, rep, seed)
    path = Path(rep_dir) / f"{method}-n{n}-r{rep:04d}.csv"
    path.write_text(",".join(str(x) for x in row) + "\n")
    return path


def cmd_sweep(args) -> int:
    from .metrics import METRICS_CSV_COLUMNS

    cfg = generator_config(args)
    try:
        sizes = [int(x) for x in str(args.evs).split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --evs list {args.evs!r}") from exc
    methods = (args.method or "dcsa").split(",")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    d = out_dir(args)
    rep_dir = d / "reps"
    rep_dir.mkdir(exist_ok=True)
    forecaster = args.forecaster or cfg.forecaster
    epsilon = float(args.epsilon or 1e-4)
    jobs = [(n, rep, int(args.seed or 0) + rep, m, forecaster, epsilon, cfg, str(rep_dir))
            for m in methods for n in sizes for rep in range(args.reps)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            paths = list(pool.map(_sweep_one, jobs))
    else:
        paths = [_sweep_one(j) for j in jobs]
    merged = ",".join(METRICS_CSV_COLUMNS) + "\n" + "".join(p.read_text() for p in paths)
    _write(d / "sweep.csv", merged)
    print(d / "sweep.csv")
    return EXIT_OK


def cmd_audit(args) -> int:
    from .distributed import MessageLedger, csa_slot_units, dcsa_slot_units

    run_dir = Path(args.run_dir or out_dir(args))
    method = args.method or "dcsa"
    path = run_dir / f"{method}-ledger.json"
    if not path.exists():
        raise ConfigError(f"no ledger at {path}")
    doc = json.loads(path.read_text())
    problems = []
    summed = dict.fromkeys(MessageLedger.LINKS, 0)
    for s in doc["slots"]:
        if method == "dcsa":
            want = dcsa_slot_units(s["n_by_station"], s["window_lens"], s["iterations"])
        else:
            want = csa_slot_units(s["n_by_station"])
        got = {k: s["counts"].get(k, 0) for k in MessageLedger.LINKS}
        if got != want:
            problems.append(f"slot {s['t']}: logged {got}, closed form {want}")
        for k in summed:
            summed[k] += got[k]
    if summed != doc["totals"]:
        problems.append(f"slot counts sum to {summed}, logged totals {doc['totals']}")
    trace = run_dir / f"{method}-trace.txt"
    if trace.exists():
        from .distributed import _link

        from_trace = dict.fromkeys(MessageLedger.LINKS, 0)
        for line in trace.read_text().splitlines():
            _, sender, receiver, _, count = line.split()
            link = _link(sender, receiver)
            from_trace[link] += int(count) * (2 if link == "sa_sa" else 1)
        if from_trace != doc["totals"]:
            problems.append(f"trace sums to {from_trace}, logged totals {doc['totals']}")
    for p in problems:
        print(p, file=sys.stderr)
    print(f"audit {'FAILED' if problems else 'ok'}: {sum(doc['totals'].values())} units over "
          f"{len(doc['slots'])} slots")
    return EXIT_AUDIT if problems else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evsched", description="EV charge scheduling simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out-dir")
        sp.add_argument("--config")
        sp.add_argument("--forecaster")

    g = sub.add_parser("gen", help="generate a scenario file")
    g.add_argument("--evs", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    common(g)
    g.set_defaults(fn=cmd_gen)

    r = sub.add_parser("run", help="run one method on one scenario")
    r.add_argument("--method")
    r.add_argument("--scenario")
    r.add_argument("--evs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--strict", action="store_true", help="fail instead of relaxing an infeasible peak cap")
    common(r)
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="Monte Carlo sweep over fleet sizes")
    s.add_argument("--evs", default="100,200,300,400")
    s.add_argument("--method")
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--jobs", type=int, default=1)
    common(s)
    s.set_defaults(fn=cmd_sweep)

    a = sub.add_parser("audit", help="check a run's message ledger against the closed form")
    a.add_argument("--run-dir")
    a.add_argument("--method")
    a.add_argument("--out-dir")
    a.set_defaults(fn=cmd_audit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
