"""``dpl`` command line entry point."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from . import checks
from .data import Scenario, SyntheticSpec, gen_synthetic, simulate_missing, write_features
from .errors import ConfigInvalid, DPLError
from .harness import ExperimentConfig, FeatureSource, emit_results, expand_grid, load_config, run_grid, set_path
from .losses import LossConfig
from .optim import OptimConfig

log = logging.getLogger("dpl")

# nested fields exposed as top-level flags; seeds are derived from --master-seed
_NESTED = {"loss": LossConfig, "optim": OptimConfig, "data": SyntheticSpec}
_SKIP = {("optim", "seed"), ("data", "seed")}
_TOP_SKIP = {"loss", "optim", "data"}


def _flag(name: str) -> str:
    return "--" + name.rstrip("_").replace("_", "-").lower()


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _type_for(field: dataclasses.Field):
    kind = field.type if isinstance(field.type, str) else getattr(field.type, "__name__", str(field.type))
    if kind.startswith("bool"):
        return _bool
    if kind.startswith("int"):
        return int
    if kind.startswith("float"):
        return float
    return str


def _add_override_flags(parser: argparse.ArgumentParser) -> list[tuple[str, str]]:
    """Register one flag per config field; returns (argparse dest, dotted path) pairs."""
    mapping = []
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in _TOP_SKIP:
            continue
        dest = f"ov_{f.name}"
        group.add_argument(_flag(f.name), dest=dest, type=_type_for(f), default=None)
        mapping.append((dest, f.name))
    for section, cls in _NESTED.items():
        for f in dataclasses.fields(cls):
            if (section, f.name) in _SKIP:
                continue
            key = "lambda" if f.name == "lambda_" else f.name
            dest = f"ov_{section}_{f.name}"
            group.add_argument(_flag(f.name), dest=dest, type=_type_for(f), default=None,
                               help=f"{section}.{key}")
            mapping.append((dest, f"{section}.{key}"))
    group.add_argument("--features", dest="ov_features", default=None,
                       help="DPLF feature file used instead of synthetic data")
    group.add_argument("--test-features", dest="ov_test_features", default=None)
    return mapping


def _scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_grid(items: list[str]) -> dict:
    grid = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep:
            raise ConfigInvalid(f"--grid expects key=v1,v2,..., got {item!r}")
        grid[key] = [_scalar(v) for v in values.split(",")]
    return grid


def cmd_run(args, mapping) -> int:
    values = load_config(args.config) if args.config else {}
    for dest, path in mapping:
        val = getattr(args, dest)
        if val is not None:
            set_path(values, path, val)
    if args.ov_features:
        data = {"path": args.ov_features}
        if args.ov_test_features:
            data["test_path"] = args.ov_test_features
        values["data"] = data
    elif isinstance(values.get("data"), dict) and "path" in values["data"]:
        for key in list(values["data"]):
            if key not in {f.name for f in dataclasses.fields(FeatureSource)}:
                values["data"].pop(key)
    if args.grid:
        values.setdefault("grid", {}).update(_parse_grid(args.grid))
    cells = expand_grid(values)
    results = run_grid(cells)
    first = cells[0][1]
    paths = emit_results(results, first.output_dir, first.record_timing)
    if first.plots:
        from .plotting import render_report

        paths += render_report(results, first.output_dir)
    for r in results:
        print(f"{r.fingerprint} seed={r.seed} {r.head} {r.scenario} {r.train_eta:g}/{r.test_eta:g} "
              f"{r.metric_name}={r.value:.4f}")
    for p in paths:
        log.info("wrote %s", p)
    return 0


def cmd_gradcheck(args) -> int:
    reports = checks.gradcheck_losses(args.instances, args.seed, args.step)
    ok = True
    for r in reports:
        passed = r.max_relative_error < args.tolerance
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {r.loss}: max relative error {r.max_relative_error:.3e} "
              f"over {r.instances} instances")
    return 0 if ok else 1


def cmd_oracle_prc(args) -> int:
    worst = checks.prc_oracle_check(args.instances, args.seed)
    sym = checks.symmetric_prc_value()
    ok_oracle = worst < 1e-10
    ok_sym = abs(sym - 30 * np.log(5)) < 1e-9
    print(f"{'PASS' if ok_oracle else 'FAIL'} vectorized vs brute force: max abs diff {worst:.3e} "
          f"over {args.instances} banks")
    print(f"{'PASS' if ok_sym else 'FAIL'} identical components, K=1: {sym:.12f} (30 ln 5 = {30 * np.log(5):.12f})")
    return 0 if ok_oracle and ok_sym else 1


def cmd_gen(args) -> int:
    with open(args.spec) as fh:
        raw = json.load(fh)
    try:
        spec = SyntheticSpec(**raw)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc
    samples = gen_synthetic(spec)
    if args.eta:
        samples = simulate_missing(samples, Scenario(args.scenario), args.eta, args.seed)
    write_features(samples, args.out, K=spec.K, d_img=spec.d, d_txt=spec.d)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dpl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid and write CSVs and figures")
    run.add_argument("--config", help="JSON config mirroring ExperimentConfig")
    run.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                     help="sweep a dotted field over values (repeatable)")
    mapping = _add_override_flags(run)

    gc = sub.add_parser("gradcheck", help="compare analytic loss gradients to central differences")
    gc.add_argument("--instances", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--step", type=float, default=checks.FD_STEP)
    gc.add_argument("--tolerance", type=float, default=1e-4)

    op = sub.add_parser("oracle-prc", help="compare the relational loss to a brute-force evaluation")
    op.add_argument("--instances", type=int, default=50)
    op.add_argument("--seed", type=int, default=0)

    gen = sub.add_parser("gen", help="export a synthetic dataset as a DPLF feature file")
    gen.add_argument("--spec", required=True, help="JSON file with SyntheticSpec fields")
    gen.add_argument("--out", required=True)
    gen.add_argument("--scenario", default="mixed", choices=[s.value for s in Scenario])
    gen.add_argument("--eta", type=float, default=0.0, help="simulate this missing rate before export")
    gen.add_argument("--seed", type=int, default=0)
    return parser, mapping


def main(argv=None) -> int:
    parser, mapping = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, mapping)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "oracle-prc":
            return cmd_oracle_prc(args)
        return cmd_gen(args)
    except DPLError as exc:
        print(f"dpl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dpl: {exc}", file=sys.stderr)
        return 7


if __name__ == "__main__":
    sys.exit(main())
