"""Command-line entry points: scenario generation and validation, selfplay
reports, the live service, corpus statistics, and replay export."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .analytics import default_lexicon, ingest, write_reports
from .replay_export import ReplayExportError, export_replay
from .scenario import (
    GenerationExhausted,
    ScenarioConfig,
    config_from_doc,
    dumps_scenario,
    generate_scenario,
    parse_scenario,
    validate_scenario,
)
from .selfplay import run_selfplay

logger = logging.getLogger(__name__)


def _load_config(path) -> ScenarioConfig:
    if not path:
        return ScenarioConfig()
    with open(path, encoding="utf-8") as fh:
        return config_from_doc(json.load(fh))


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for seed in range(args.seed, args.seed + args.count):
        try:
            scenario = generate_scenario(seed, config)
        except GenerationExhausted as exc:
            print(f"seed {seed}: generation exhausted ({exc})", file=sys.stderr)
            failures += 1
            continue
        path = out / f"scenario_{seed}.json"
        path.write_text(dumps_scenario(scenario), encoding="utf-8")
        print(path)
    return 1 if failures else 0


def cmd_validate(args) -> int:
    bad = 0
    for name in args.files:
        try:
            scenario = parse_scenario(Path(name).read_text(encoding="utf-8"))
        except Exception as exc:
            print(f"{name}: unreadable ({exc})", file=sys.stderr)
            bad += 1
            continue
        report = validate_scenario(scenario)
        if report.empty:
            print(f"{name}: ok")
        else:
            bad += 1
            print(f"{name}: {len(report.violations)} violations", file=sys.stderr)
            for line in report.summary().splitlines():
                print(f"  {line}", file=sys.stderr)
    return 1 if bad else 0


def cmd_selfplay(args) -> int:
    config = _load_config(args.config)
    if args.scenario_dir:
        scenarios = [
            parse_scenario(p.read_text(encoding="utf-8"))
            for p in sorted(Path(args.scenario_dir).glob("*.json"))
        ]
    else:
        scenarios = [
            generate_scenario(seed, config)
            for seed in range(args.scenario_seed, args.scenario_seed + args.scenario_count)
        ]
    if not scenarios:
        print("no scenarios", file=sys.stderr)
        return 1
    report = run_selfplay(
        args.agent_a, args.agent_b, scenarios, range(args.seed, args.seed + args.games)
    )
    doc = report.as_dict()
    text = json.dumps(doc, indent=2)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(text + "\n", encoding="utf-8")
        print(args.report)
    else:
        print(text)
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    serve(
        port=args.port,
        scenario_dir=args.scenarios,
        log_dir=args.logs,
        pairing=args.pairing,
        host=args.host,
    )
    return 0


def cmd_stats(args) -> int:
    corpus = ingest(args.corpus, fmt=args.format)
    tables = [t.strip() for t in args.tables.split(",") if t.strip()]
    files = write_reports(corpus, tables, args.out, lexicon=default_lexicon())
    for f in files:
        print(f)
    return 0


def cmd_export_replay(args) -> int:
    lines = [
        json.loads(line)
        for line in Path(args.game).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    header = next((r for r in lines if r.get("kind") == "header"), None)
    events = [r for r in lines if r.get("kind") in ("shift", "utterance", "selection", "resolution")]
    if args.scenario:
        scenario = parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
    elif header and header.get("payload", {}).get("scenario"):
        from .scenario import scenario_from_doc

        scenario = scenario_from_doc(header["payload"]["scenario"])
    else:
        print("no scenario: transcript has no header and --scenario not given", file=sys.stderr)
        return 1
    try:
        files = export_replay(scenario, events, args.format, args.out)
    except ReplayExportError as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqref",
        description="Sequential collaborative reference game engine and tools",
    )
    parser.add_argument("--version", action="version", version=f"seqref {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate scenario files")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with generation settings")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="validate scenario files")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("selfplay", help="run scripted selfplay and report")
    p.add_argument("--agent-a", default="random")
    p.add_argument("--agent-b", default="random")
    p.add_argument("--games", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.add_argument("--scenario-dir")
    p.add_argument("--scenario-seed", type=int, default=1)
    p.add_argument("--scenario-count", type=int, default=20)
    p.add_argument("--config")
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("serve", help="run the live game service")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--scenarios", default=os.environ.get("SEQREF_SCENARIO_DIR"))
    p.add_argument("--logs", default=os.environ.get("SEQREF_LOG_DIR", "logs"))
    p.add_argument("--pairing", default="human_bot:template",
                   help="human_human | human_bot:<policy> | bot_bot:<a>,<b>")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("stats", help="compute corpus statistics tables")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tables", default="2,4,5,6",
                   help="comma list: 2/overall, 4/modifiers, 5/stay_leave, 6/turn_level")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="native")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export-replay", help="render a transcript to SVG or JSON")
    p.add_argument("--game", required=True, help="transcript .jsonl file")
    p.add_argument("--format", choices=("svg", "json"), default="svg")
    p.add_argument("--scenario", help="scenario file when the transcript lacks a header")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_replay)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SEQREF_LOG_LEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
