"""Command line: ``tumorpf run|validate|presets|version``.

Exit codes: 0 success, 1 usage error, 2 scenario validation failure,
3 solver failure during a run.  ``TUMORPF_OUTPUT_DIR`` overrides the
scenario's output directory; ``--out`` overrides both.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__, engine, io, presets
from .elliptic import SolverError
from .scenario import Scenario, ScenarioError, apply_overrides, load_scenario, parse_scenario, serialize
from .vessel import CFLError, NetworkError, Segment

log = logging.getLogger("tumorpf")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3
OUTPUT_ENV = "TUMORPF_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _events(scenario: Scenario) -> list:
    out = []
    for ev in scenario.data["events"]:
        seg = Segment(**ev["add_segment"])
        nodes = {int(k): tuple(v) for k, v in (ev.get("nodes") or {}).items()}
        out.append((float(ev["t"]), lambda m, s, seg=seg, nodes=nodes: engine.add_segment(m, s, seg, nodes)))
    return out


def run_scenario(scenario: Scenario, out_dir: str) -> dict[str, list[dict]]:
    """Run every variant of ``scenario`` and write its outputs.

    Single runs write into ``out_dir``; sweeps write one subdirectory per
    variant.  Returns the per-step diagnostics keyed by variant name.
    """
    results = {}
    variants = scenario.variants()
    for name, sc in variants:
        target = out_dir if len(variants) == 1 and not scenario.data["sweep"] else os.path.join(out_dir, name)
        os.makedirs(target, exist_ok=True)
        with open(os.path.join(target, "scenario.yaml"), "w", encoding="utf-8") as fh:
            fh.write(serialize(sc))
        out = sc.data["outputs"]
        formats = set(out["formats"])
        model, state = sc.build()
        names = out["fields"] or list(model.species)
        sampled: list[dict] = []
        frame = [0]

        def on_output(st, row):
            sampled.append(row)
            if "vtk" in formats:
                io.write_vtk({k: st.fields[k] for k in names}, model.grid, os.path.join(target, f"fields_{frame[0]:05d}.vtk"))
            frame[0] += 1

        logger = io.DiagnosticsLog(os.path.join(target, "diagnostics.log")) if "log" in formats else None
        try:
            rows = engine.run(
                model, state, sc.data["schedule"]["t_end"], sc.data["schedule"]["dt"],
                every=out["every"], on_output=on_output,
                on_step=(lambda st, row: logger.write(row)) if logger else None,
                events=_events(sc),
            )
        finally:
            if logger:
                logger.close()
        if "csv" in formats:
            io.write_csv(sampled, os.path.join(target, "diagnostics.csv"))
        results[name] = rows
        log.info("%s: %d steps written to %s", sc.name, len(rows) - 1, target)
    return results


def _load(args) -> Scenario:
    if args.scenario in presets.NAMES and not os.path.exists(args.scenario):
        sc = parse_scenario(presets.preset_text(args.scenario))
    else:
        if not os.path.isfile(args.scenario):
            raise UsageError(f"scenario file not found: {args.scenario}")
        sc = load_scenario(args.scenario)
    if args.set:
        sc = apply_overrides(sc, args.set)
    return sc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tumorpf", description="Phase-field tumor growth simulations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_ in (("run", "run a scenario"), ("validate", "check a scenario without running it")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("scenario", help="scenario YAML file or built-in preset name")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted key")
        if name == "run":
            s.add_argument("--out", help="output directory")
    s = sub.add_parser("presets", help="list built-in scenarios or print one")
    s.add_argument("name", nargs="?")
    sub.add_parser("version", help="print the version")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "presets":
        if args.name is None:
            print("\n".join(presets.NAMES))
            return EXIT_OK
        try:
            sys.stdout.write(presets.preset_text(args.name))
        except KeyError as e:
            print(f"usage error: {e.args[0]}", file=sys.stderr)
            return EXIT_USAGE
        return EXIT_OK

    try:
        sc = _load(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as e:
        for err in e.errors:
            print(f"invalid: {err}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(f"{sc.name}: ok")
        return EXIT_OK

    out_dir = args.out or os.environ.get(OUTPUT_ENV) or os.path.join(sc.base_dir, sc.data["outputs"]["dir"])
    try:
        run_scenario(sc, out_dir)
    except (SolverError, CFLError, engine.StateError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (engine.ConfigError, NetworkError, ValueError) as e:
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"output error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{sc.name}: outputs in {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
