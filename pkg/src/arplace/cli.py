"""Command-line entry point: ``sample``, ``register``, ``evaluate``, ``heatmap``.

Exit codes: 0 success, 1 usage error, 2 data or algorithm error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import evaluation, geometry, registration, sampling

log = logging.getLogger("arplace")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
_DEFAULTS = registration.IcpParams()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # Subparsers use SUPPRESS so a flag given before the subcommand survives.
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                        help="seed for every random choice (default 0)")
    parser.add_argument("--quiet", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="suppress progress messages")


def _icp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iter", type=int, default=_DEFAULTS.max_iterations, help="ICP iterations per start")
    p.add_argument("--tol", type=float, default=_DEFAULTS.rel_tolerance, help="relative error change that stops ICP")
    p.add_argument("--starts", type=int, default=_DEFAULTS.starts, help="evenly spaced initial yaws")
    p.add_argument("--fix-scale", action="store_true", help="rigid placement, scale held at 1")
    p.add_argument("--no-keep-aspect-ratio", action="store_true",
                   help="fit per-axis scales instead of one uniform scale")
    p.add_argument("--normalization", choices=registration.NORMALIZATIONS,
                   default=_DEFAULTS.normalization)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arplace", description="Sample, place and evaluate 3D scenes as point clouds.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="sample a point cloud from an OBJ scene")
    _global_flags(p, suppress=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--n", type=int, default=1000, help="surface points to draw")
    p.add_argument("--method", choices=("surface", "support", "mixed"), default="surface")
    p.add_argument("--layer-spec", default="",
                   help="per-layer methods for --method mixed, e.g. a=surface,b=support,c=ignore")
    p.add_argument("--include-layers", help="comma-separated layers to keep")
    p.add_argument("--exclude-layers", help="comma-separated layers to drop (wins over include)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("register", help="place a virtual cloud into a physical cloud")
    _global_flags(p, suppress=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    _icp_flags(p)
    p.add_argument("--out", required=True, help="transform JSON")
    p.add_argument("--heatmap", help="also write a per-point error heatmap PLY")

    p = sub.add_parser("evaluate", help="register against every cloud in a directory")
    _global_flags(p, suppress=True)
    p.add_argument("--source", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--pattern", default="*.ply")
    p.add_argument("--downsample", type=int, default=1000, help="points kept from source and each scene")
    _icp_flags(p)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--heatmap-dir", help="write one heatmap PLY per scene here")

    p = sub.add_parser("heatmap", help="color a placed cloud by per-point error")
    _global_flags(p, suppress=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--transform", required=True)
    p.add_argument("--normalization", choices=registration.NORMALIZATIONS,
                   default=_DEFAULTS.normalization)
    p.add_argument("--out", required=True)
    return parser


def _params(args) -> registration.IcpParams:
    try:
        return registration.IcpParams(
            max_iterations=args.max_iter,
            rel_tolerance=args.tol,
            fix_scale=args.fix_scale,
            keep_aspect_ratio=not args.no_keep_aspect_ratio,
            starts=args.starts,
            normalization=args.normalization,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _cmd_sample(args) -> None:
    mesh = sampling.load_mesh(args.mesh)
    flt = sampling.LayerFilter(
        include=sampling.parse_layer_list(args.include_layers),
        exclude=sampling.parse_layer_list(args.exclude_layers) or frozenset(),
    )
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    if args.method == "surface":
        cloud = sampling.surface_sample(mesh, args.n, args.seed, flt)
    elif args.method == "support":
        cloud = sampling.support_points(mesh, flt)
    else:
        try:
            methods = sampling.parse_layer_spec(args.layer_spec)
        except ValueError as exc:
            raise UsageError(f"--layer-spec: {exc}") from None
        cloud = sampling.sample_scene(mesh, methods, args.n, args.seed, flt)
    geometry.save_point_cloud(cloud, args.out)
    log.info("wrote %d points to %s", len(cloud), args.out)


def _cmd_register(args) -> None:
    params = _params(args)
    source = geometry.load_point_cloud(args.source)
    target = geometry.load_point_cloud(args.target)
    result = registration.multi_start_icp(source, target, params)
    registration.write_transform(result.transform, args.out)
    log.info(
        "error %.6g after %d iterations (start %d, converged=%s)",
        result.error, result.iterations, result.start_index, result.converged,
    )
    if args.heatmap:
        _, per_point = registration.rescore(source, target, result.transform, params.normalization)
        evaluation.export_heatmap(source, result.transform, per_point, args.heatmap)


def _cmd_evaluate(args) -> None:
    params = _params(args)
    if args.downsample < 0:
        raise UsageError("--downsample must be >= 0")
    source = geometry.load_point_cloud(args.source)
    manifest = evaluation.scan_dataset(args.dataset, args.pattern)
    report = evaluation.evaluate_dataset(
        source, manifest, params, args.downsample, args.seed,
        heatmap_dir=args.heatmap_dir, source_path=args.source,
    )
    evaluation.write_report(report, args.out)
    log.info("best %s, worst %s", report.best, report.worst)


def _cmd_heatmap(args) -> None:
    source = geometry.load_point_cloud(args.source)
    target = geometry.load_point_cloud(args.target)
    transform = registration.read_transform(args.transform)
    err, per_point = registration.rescore(source, target, transform, args.normalization)
    evaluation.export_heatmap(source, transform, per_point, args.out)
    log.info("error %.6g", err)


COMMANDS = {
    "sample": _cmd_sample,
    "register": _cmd_register,
    "evaluate": _cmd_evaluate,
    "heatmap": _cmd_heatmap,
}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"arplace {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"arplace {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())
