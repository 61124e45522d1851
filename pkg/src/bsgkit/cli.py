"""Command-line interface.

Exit codes: 0 success, 1 validation violations present, 2 usage error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import docio
from .analyzer import analyze
from .artifacts import BusinessRuleInventory, LegacyArtifactBundle, Status, load_bundle
from .bsg import deserialize_bsg, describe, diff_bsg, serialize_bsg, to_dot, validate_bsg
from .evalkit import METHODS, ScenarioError, load_scenario, load_scenarios, run_fair_eval
from .orchestrator import ConfigError, PipelineConfig, run_pipeline
from .provider import ProviderSettings
from .specgen import generate_bsg
from .transformer import package_from_doc, package_to_doc, transform
from .validator import ExternalRunner, InProcessRunner, esm_handler, execute, generate_suite, serve_lines

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_VIOLATIONS, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _open_bundle(path: str, scenario_id: Optional[str] = None) -> LegacyArtifactBundle:
    """A bundle directory, or a scenario directory whose bundle is used."""
    root = Path(path)
    if (root / "scenario.json").is_file():
        return load_scenario(root).bundle()
    parent = root.resolve().parent
    if scenario_id is None and (parent / "scenario.json").is_file():
        scenario_id = docio.read(parent / "scenario.json").get("id")
    return load_bundle(root, scenario_id=scenario_id)


def _emit(doc, output: Optional[str]) -> None:
    if output:
        docio.write(output, doc)
        print(f"wrote {output}")
    else:
        sys.stdout.write(docio.dumps(doc))


def _provider(args) -> ProviderSettings:
    return ProviderSettings(base_url=args.base_url, model=args.model, token_env=args.token_env)


def cmd_analyze(args) -> int:
    bundle = _open_bundle(args.bundle, args.scenario_id)
    inventory = analyze(bundle, args.temperature).inventory
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docio.write(out / "bri.json", inventory.to_doc())
    print(f"wrote {out / 'bri.json'} ({len(inventory)} rules)")
    return EXIT_OK


def cmd_specify(args) -> int:
    bundle = _open_bundle(args.bundle, args.scenario_id)
    bri = BusinessRuleInventory.from_doc(docio.read(args.bri))
    context = analyze(bundle)
    bsg = generate_bsg(bri, context.structure, context.ast, bundle=bundle)
    _emit(serialize_bsg(bsg), args.output)
    return EXIT_OK


def cmd_transform(args) -> int:
    bsg = deserialize_bsg(docio.read(args.bsg))
    _emit(package_to_doc(transform(bsg)), args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    bsg = deserialize_bsg(docio.read(args.bsg))
    if args.runner == "external":
        if not args.manifest:
            raise UsageError("--runner external needs --manifest")
        runner = ExternalRunner(docio.read(args.manifest), timeout=args.timeout)
    else:
        package = package_from_doc(docio.read(args.package))
        if package.esm is None:
            raise UsageError("package has no ESM; use --runner external --manifest")
        runner = InProcessRunner(package.esm)
    report = execute(generate_suite(bsg), runner, nodes=[n.id for n in bsg.nodes])
    _emit(report.to_doc(), args.output)
    print(f"BER {report.ber_percent} ({report.passed}/{report.total}, {len(report.vacuous)} vacuous)",
          file=sys.stderr)
    return EXIT_VIOLATIONS if report.failures or report.runner_error else EXIT_OK


def _mode(value: str) -> str:
    return value.replace("-", "_")


def cmd_run(args) -> int:
    bundle = _open_bundle(args.bundle, args.scenario_id)
    config = PipelineConfig(max_iterations=args.max_iterations, backend=args.backend, mode=_mode(args.mode),
                            provider=_provider(args), best_iteration_retention=args.best_iteration)
    state = run_pipeline(bundle, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docio.write(out / "state.json", state.to_doc())
    print(f"wrote {out / 'state.json'}: {state.status.value}, history {state.history}")
    if state.status is not Status.COMPLETED:
        print(f"pipeline failed: {state.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    report = state.equiv_report
    return EXIT_VIOLATIONS if report is not None and report.failures else EXIT_OK


def cmd_eval(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    methods = [m.strip().replace("-", "_") for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise UsageError(f"--methods: unknown method(s) {', '.join(unknown) or '(none)'}")
    config = PipelineConfig(max_iterations=args.max_iterations, backend=args.backend, provider=_provider(args))
    scenarios = load_scenarios(args.scenarios)
    summary = run_fair_eval(scenarios, methods, args.trials, config, args.out_dir, sample_sigma=args.sample_sigma)
    for cell in summary.cells:
        print(f"{cell['scenario']:<10} {cell['method']:<15} BER {cell['ber_mean']:5.1f} ± {cell['ber_sigma']:.1f}"
              f"  BRPS {cell['brps_mean']:5.1f} ± {cell['brps_sigma']:.1f}")
    return EXIT_OK


def cmd_bsg(args) -> int:
    if args.action == "inspect":
        if len(args.files) != 1:
            raise UsageError("bsg inspect takes exactly one file")
        bsg = deserialize_bsg(docio.read(args.files[0]))
        sys.stdout.write(to_dot(bsg) if args.dot else describe(bsg))
        problems = validate_bsg(bsg)
        for p in problems:
            print(f"violation: {p}", file=sys.stderr)
        return EXIT_VIOLATIONS if problems else EXIT_OK
    if len(args.files) != 2:
        raise UsageError("bsg diff takes exactly two files")
    a, b = (deserialize_bsg(docio.read(f)) for f in args.files)
    entries = diff_bsg(a, b)
    if not entries:
        print("no differences")
        return EXIT_OK
    for e in entries:
        print(e)
    return EXIT_VIOLATIONS


def cmd_serve(args) -> int:
    package = package_from_doc(docio.read(args.package))
    if package.esm is None:
        raise UsageError("only ESM packages can be served")
    serve_lines(esm_handler(package.esm), sys.stdin, lambda s: (sys.stdout.write(s), sys.stdout.flush()))
    return EXIT_OK


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    defaults = ProviderSettings()
    p.add_argument("--backend", choices=("deterministic", "provider"), default="deterministic")
    p.add_argument("--base-url", default=defaults.base_url)
    p.add_argument("--model", default=defaults.model)
    p.add_argument("--token-env", default=defaults.token_env, help="environment variable holding the API token")
    p.add_argument("--max-iterations", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsgkit", description="Legacy-to-service modernization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="extract a business rule inventory")
    p.add_argument("bundle")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--temperature", type=float, default=0.2)
    p.add_argument("--scenario-id")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("specify", help="build a BSG from an inventory")
    p.add_argument("bri")
    p.add_argument("bundle")
    p.add_argument("-o", "--output")
    p.add_argument("--scenario-id")
    p.set_defaults(func=cmd_specify)

    p = sub.add_parser("transform", help="derive an executable service model")
    p.add_argument("bsg")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("validate", help="run the generated suite against a package")
    p.add_argument("bsg")
    p.add_argument("package", nargs="?")
    p.add_argument("--runner", choices=("in-process", "external"), default="in-process")
    p.add_argument("--manifest")
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the whole pipeline on a bundle")
    p.add_argument("bundle")
    p.add_argument("--mode", choices=("full", "no-feedback", "sp-llm", "cot-llm"), default="full")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--best-iteration", action="store_true", help="keep the best-scoring iteration")
    p.add_argument("--scenario-id")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="fair evaluation against withheld gold suites")
    p.add_argument("--scenarios", help="scenario directory (default: bundled scenarios)")
    p.add_argument("--methods", default="am_full")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--sample-sigma", action="store_true", help="report sample rather than population sigma")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bsg", help="inspect or diff BSG documents")
    p.add_argument("action", choices=("inspect", "diff"))
    p.add_argument("files", nargs="+")
    p.add_argument("--dot", action="store_true", help="render inspect output as DOT")
    p.set_defaults(func=cmd_bsg)

    p = sub.add_parser("serve", help="serve an ESM package over the stdio wire protocol")
    p.add_argument("package")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
