"""Command-line entry point: pipeline stages plus curation operations.

Exit codes: 0 success, 2 configuration error (message names the offending
key), 3 missing upstream stage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .curation import ConflictError
from .extract import ConfigurationError
from .imgqual import ContractError
from .pipeline import CONFIG_DEFAULTS, STAGE_BODIES, StageDependencyError, load_config, run_stage
from .service import DEFAULT_PORT

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING_STAGE = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilecurate", description=__doc__)
    parser.add_argument("--project", type=Path, help="project directory")
    parser.add_argument("--config", type=Path, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=1, help="worker threads for extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one pipeline stage")
    run.add_argument("stage", choices=sorted([*STAGE_BODIES, "serve"]))

    label = sub.add_parser("label", help="assign a tissue class to a cluster")
    label.add_argument("--cluster", type=int, required=True)
    label.add_argument("--tissue", required=True)
    label.add_argument("--reviewer", required=True)
    label.add_argument("--override", action="store_true")

    resolve = sub.add_parser("resolve", help="accept or reject a propagation proposal")
    resolve.add_argument("--proposal", type=int, required=True)
    resolve.add_argument("--decision", choices=["accept", "reject"], required=True)
    resolve.add_argument("--reviewer", required=True)

    proposals = sub.add_parser("proposals", help="list proposals")
    proposals.add_argument("--status", default=None)

    sub.add_parser("progress", help="per-class verified tile tallies vs the cap")

    serve = sub.add_parser("serve", help="start the review service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=DEFAULT_PORT)
    return parser


def _load_project_state(project_dir: Path, cap: int):
    from .service import ReviewProject

    return ReviewProject(project_dir, cap)


def _require(value, name: str):
    if value is None:
        raise ConfigurationError(f"--{name} is required for this command")
    return value


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except StageDependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_STAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConflictError, ContractError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        project = _require(args.project, "project")
        if args.config is not None:
            cfg = load_config(args.config)
        else:
            cfg = dict(CONFIG_DEFAULTS)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.stage == "serve":
            return _serve(project, cfg, "127.0.0.1", DEFAULT_PORT)
        run_stage(args.stage, project, cfg, workers=args.workers)
        return EXIT_OK

    if args.command == "serve":
        project = _require(args.project, "project")
        cfg = load_config(args.config) if args.config else dict(CONFIG_DEFAULTS)
        return _serve(project, cfg, args.host, args.port)

    project = _require(args.project, "project")
    cfg = load_config(args.config) if args.config else dict(CONFIG_DEFAULTS)
    state = _load_project_state(project, cfg["cap_per_class"]).state

    if args.command == "label":
        created = state.assign_cluster_label(args.cluster, args.tissue, args.reviewer, args.override)
        print(json.dumps({
            "cluster": args.cluster,
            "tissue": args.tissue,
            "proposals": [p.proposal_id for p in created],
        }))
        return EXIT_OK

    if args.command == "resolve":
        created = state.resolve_proposal(args.proposal, args.decision, args.reviewer)
        print(json.dumps({
            "proposal": args.proposal,
            "decision": args.decision,
            "new_proposals": [p.proposal_id for p in created],
        }))
        return EXIT_OK

    if args.command == "proposals":
        rows = [
            {"id": p.proposal_id, "source": p.source_cluster, "target": p.target_cluster,
             "tissue": p.tissue, "status": p.status}
            for p in sorted(state.proposals.values(), key=lambda p: p.proposal_id)
            if args.status is None or p.status == args.status
        ]
        print(json.dumps(rows, indent=2))
        return EXIT_OK

    if args.command == "progress":
        tallies = state.tallies()
        cap = cfg["cap_per_class"]
        print(json.dumps({
            "cap_per_class": cap,
            "classes": {name: {"verified": count, "fraction": count / cap}
                        for name, count in tallies.items()},
        }, indent=2))
        return EXIT_OK

    raise ConfigurationError(f"unknown command {args.command!r}")


def _serve(project_dir: Path, cfg: dict, host: str, port: int) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(project_dir, cfg["cap_per_class"])
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
