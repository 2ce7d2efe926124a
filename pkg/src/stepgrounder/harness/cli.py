"""Command-line interface.

Verbs: ``deps build``, ``deps check``, ``run``, ``bench``, ``violations``,
``replay``. Exit codes: 0 success, 1 configuration error, 2 partial failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from ..core import load_annotation, load_task
from ..dependency import (
    analyze_violations,
    build_dependency_chain_oracle,
    load_dependency,
    save_dependency,
    threshold_matrix,
)
from ..errors import ConfigurationError, StepGroundingError
from ..observation.remote import RemoteEndpointConfig, RemotePrerequisiteScorer, RemoteScoringClient
from ..dependency import build_dependency_remote
from .runner import (
    RunConfig,
    VIOLATION_THRESHOLDS,
    run_benchmark,
    run_video,
    run_violation_analysis,
)


def _add_remote_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("remote endpoint")
    group.add_argument("--remote-url", help="base URL of the scoring endpoint")
    group.add_argument("--remote-model", help="model name sent in requests")
    group.add_argument("--remote-auth-env", help="environment variable holding the auth token")
    group.add_argument("--remote-timeout", type=float, default=60.0)
    group.add_argument("--remote-retries", type=int, default=2)
    group.add_argument("--remote-concurrency", type=int, default=4)
    group.add_argument("--remote-dialect", choices=("chat", "completions"), default="chat")
    group.add_argument("--frames-per-segment", type=int, default=8)


def _remote_config(args: argparse.Namespace) -> RemoteEndpointConfig | None:
    if not getattr(args, "remote_url", None):
        return None
    if not args.remote_model:
        raise ConfigurationError("--remote-model is required with --remote-url")
    return RemoteEndpointConfig(
        base_url=args.remote_url,
        model=args.remote_model,
        auth_env=args.remote_auth_env,
        max_concurrent=args.remote_concurrency,
        timeout_s=args.remote_timeout,
        retries=args.remote_retries,
        frames_per_segment=args.frames_per_segment,
        dialect=args.remote_dialect,
    )


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", choices=("remote", "replay", "synthetic"), default="replay")
    parser.add_argument(
        "--dependency-source", choices=("remote-llm", "oracle-chain", "file"), default="file"
    )
    parser.add_argument("--segment-duration", type=float, default=2.0)
    parser.add_argument("--segment-rounding", choices=("ceil", "floor"), default="ceil")
    parser.add_argument("--step-prior", choices=("uniform", "next_step", "propagated"), default="uniform")
    parser.add_argument("--vsg-prompt", choices=("multi-choice", "binary"), default="multi-choice")
    parser.add_argument("--eps", type=float, default=1e-8)
    parser.add_argument("--eps-none", type=float, default=None)
    parser.add_argument("--none-mode", choices=("escape", "neutral"), default="escape")
    parser.add_argument("--no-prereq-rule", choices=("column", "row"), default="column")
    parser.add_argument("--no-localization", action="store_true")
    parser.add_argument("--loc-threshold", type=float, default=1e-3)
    parser.add_argument("--loc-nms-iou", type=float, default=0.5)
    parser.add_argument("--scale-spacing", choices=("log", "linear"), default="log")
    parser.add_argument("--ap-interpolation", choices=("all", "101"), default="all")
    parser.add_argument("--task-pooling", choices=("video-mean", "step-pooled"), default="video-mean")
    parser.add_argument("--dump-transitions", action="store_true")
    parser.add_argument("--deps-dir", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--max-workers", type=int, default=None)
    _add_remote_flags(parser)


def _run_config(args: argparse.Namespace, output_dir: Path | None) -> RunConfig:
    return RunConfig(
        provider=args.provider,
        dependency_source=args.dependency_source,
        segment_duration_s=args.segment_duration,
        segment_rounding=args.segment_rounding,
        step_prior=args.step_prior,
        vsg_prompt=args.vsg_prompt,
        eps=args.eps,
        eps_none=args.eps_none,
        none_mode=args.none_mode,
        no_prereq_rule=args.no_prereq_rule,
        localization_enabled=not args.no_localization,
        response_threshold=args.loc_threshold,
        nms_iou=args.loc_nms_iou,
        scale_spacing=args.scale_spacing,
        interpolation=args.ap_interpolation,
        task_pooling=args.task_pooling,
        dump_transitions=args.dump_transitions,
        output_dir=output_dir,
        deps_dir=args.deps_dir,
        seed=args.seed,
        noise=args.noise,
        max_workers=args.max_workers,
        remote=_remote_config(args),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepgrounder", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    deps = sub.add_parser("deps", help="build or check dependency matrices")
    deps_sub = deps.add_subparsers(dest="deps_command", required=True)

    build = deps_sub.add_parser("build", help="build a dependency matrix for one task")
    build.add_argument("--task", type=Path, required=True)
    build.add_argument("--source", choices=("remote-llm", "oracle-chain"), default="remote-llm")
    build.add_argument("--annotation", type=Path, help="needed for --source oracle-chain")
    build.add_argument("--output", type=Path, required=True)
    _add_remote_flags(build)

    check = deps_sub.add_parser("check", help="violation statistics for one matrix")
    check.add_argument("--dep", type=Path, required=True)
    check.add_argument("--annotation", type=Path, nargs="+", required=True)
    check.add_argument("--thresholds", type=float, nargs="+", default=list(VIOLATION_THRESHOLDS))

    run = sub.add_parser("run", help="process a single video")
    run.add_argument("--task", type=Path, required=True)
    run.add_argument("--annotation", type=Path)
    run.add_argument("--replay", type=Path)
    run.add_argument("--media", help="opaque media reference forwarded to the endpoint")
    run.add_argument("--dependency", type=Path)
    run.add_argument("--output", type=Path, required=True)
    _add_run_flags(run)

    replay = sub.add_parser("replay", help="shortcut: run with the replay provider")
    replay.add_argument("--task", type=Path, required=True)
    replay.add_argument("--annotation", type=Path)
    replay.add_argument("--replay", type=Path, required=True)
    replay.add_argument("--dependency", type=Path)
    replay.add_argument("--output", type=Path, required=True)
    _add_run_flags(replay)

    bench = sub.add_parser("bench", help="run a manifest of videos and aggregate a report")
    bench.add_argument("--manifest", type=Path, required=True)
    bench.add_argument("--output", type=Path, required=True)
    _add_run_flags(bench)

    violations = sub.add_parser("violations", help="threshold sweep of dependency violations")
    violations.add_argument("--manifest", type=Path, required=True)
    violations.add_argument("--output", type=Path, required=True)
    _add_run_flags(violations)

    return parser


def _cmd_deps_build(args: argparse.Namespace) -> int:
    task = load_task(args.task)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    if args.source == "oracle-chain":
        if args.annotation is None:
            raise ConfigurationError("--annotation is required with --source oracle-chain")
        annotation = load_annotation(args.annotation, num_steps=task.num_steps)
        dep = build_dependency_chain_oracle(annotation, task.num_steps)
        save_dependency(args.output, dep)
    else:
        remote = _remote_config(args)
        if remote is None:
            raise ConfigurationError("--remote-url is required with --source remote-llm")
        with RemoteScoringClient(remote) as client:
            dep = build_dependency_remote(
                task,
                RemotePrerequisiteScorer(client),
                max_workers=remote.max_concurrent,
                cache_path=args.output,
            )
    print(f"wrote dependency matrix for task {task.task_id!r} to {args.output}")
    return 0


def _cmd_deps_check(args: argparse.Namespace) -> int:
    dep = load_dependency(args.dep)
    annotations = [load_annotation(path) for path in args.annotation]
    for theta in args.thresholds:
        stats = analyze_violations(threshold_matrix(dep, theta), annotations, theta)
        print(
            f"theta={theta:.2f}  violated={100.0 * stats.violated_dependency_fraction:5.1f}%  "
            f"tasks_with_violation={100.0 * stats.tasks_with_violation_fraction:5.1f}%"
        )
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    if args.command == "replay":
        args.provider = "replay"
    config = _run_config(args, args.output)
    task = load_task(args.task)
    annotation = (
        load_annotation(args.annotation, num_steps=task.num_steps) if args.annotation else None
    )
    dep = None
    if args.dependency is not None:
        dep = load_dependency(args.dependency)
    try:
        result = run_video(
            config,
            task,
            annotation,
            media=getattr(args, "media", None),
            replay_path=args.replay,
            dep=dep,
            output_dir=args.output,
        )
    except StepGroundingError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        print(f"video failed: {exc}", file=sys.stderr)
        return 2
    r1 = "n/a" if result.r1 is None else f"{100.0 * result.r1:.1f}"
    print(f"video {result.video_id}: {result.timeline.num_segments} segments, R@1 {r1}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config = _run_config(args, args.output)
    outcome = run_benchmark(config, args.manifest)
    if outcome.report is not None:
        print(f"report written to {args.output}")
    for task_path, error in outcome.failures:
        print(f"failed: {task_path}: {error}", file=sys.stderr)
    return outcome.exit_code


def _cmd_violations(args: argparse.Namespace) -> int:
    config = _run_config(args, args.output)
    sweep = run_violation_analysis(config, args.manifest)
    for stats in sweep:
        print(
            f"theta={stats.threshold:.2f}  violated={100.0 * stats.violated_dependency_fraction:5.1f}%  "
            f"tasks_with_violation={100.0 * stats.tasks_with_violation_fraction:5.1f}%"
        )
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "deps":
            if args.deps_command == "build":
                return _cmd_deps_build(args)
            return _cmd_deps_check(args)
        if args.command in ("run", "replay"):
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "violations":
            return _cmd_violations(args)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except StepGroundingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
