"""Command-line interface: ``scbnet {train,eval,sweep,gradcheck,predict}``.

Errors print one line ``error[<code>]: <message>`` to stderr. Usage errors exit
with status 2, every other failure with status 1.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .architecture import REGISTRY, build_architecture, predict_proba, spec_from_config
from .checkpoint import load_model, save_model
from .data import assert_disjoint, ingest_directory, load_image
from .errors import ScbnetError, ShapeError
from .report import render_table, run_sweep
from .tensor import precision
from .training import TrainConfig, evaluate, train

EVAL_HEADER = "model,test_data,accuracy,tp,tn,fp,fn,n"
GRADCHECK_FC = (8, 4)
GRADCHECK_MIN_RESOLUTION = 8


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _resolve_arch(arg: str):
    """Registry id, or a path to a JSON config file."""
    path = Path(arg)
    if path.suffix == ".json" or path.is_file():
        return spec_from_config(path.read_text())
    return build_architecture(arg)


def _write_or_print(text: str, out: str | None) -> None:
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text)


# -- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    spec = _resolve_arch(args.arch)
    if args.resolution is not None:
        spec = spec.with_overrides(input_resolution=args.resolution)
    cfg = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                      learning_rate=args.lr, optimizer=args.optimizer, augment=args.augment)
    data = ingest_directory(args.train_data, spec.input_resolution)
    if len(data) == 0:
        raise ShapeError(f"no decodable images under {args.train_data}")
    print(data.report.render(), file=sys.stderr)

    def progress(rec):
        print(f"epoch {rec.epoch}/{cfg.epochs} loss {rec.loss:.5f} train_acc {rec.train_acc:.4f}",
              file=sys.stderr)

    params, history = train(spec, data, cfg, on_epoch=progress)
    save_model(spec, params, args.out)
    history_path = args.history or f"{args.out}.history.csv"
    Path(history_path).write_text(history.to_csv())
    print(f"saved {args.out}")
    print(f"history {history_path}")
    return 0


def cmd_eval(args) -> int:
    spec, params = load_model(args.model)
    if args.resolution is not None and args.resolution != spec.input_resolution:
        raise ShapeError(
            f"--resolution {args.resolution} does not match model input resolution {spec.input_resolution}"
        )
    data = ingest_directory(args.test_data, spec.input_resolution)
    res = evaluate(spec, params, data)
    print(f"accuracy: {res.percent}")
    print(f"tp={res.tp} tn={res.tn} fp={res.fp} fn={res.fn} n={res.n}")
    if args.append:
        path = Path(args.append)
        new = not path.exists() or path.stat().st_size == 0
        with path.open("a") as fh:
            if new:
                fh.write(EVAL_HEADER + "\n")
            fh.write(f"{args.model},{args.test_data},{res.percent},{res.tp},{res.tn},{res.fp},{res.fn},{res.n}\n")
    return 0


def cmd_sweep(args) -> int:
    archs = args.archs.split(",") if args.archs else list(REGISTRY)
    for a in archs:
        build_architecture(a)
    train_ds = test_ds = None
    if not args.dry_run:
        if not args.train_data or not args.test_data:
            raise UsageError("sweep: --train-data and --test-data are required unless --dry-run is given")
        train_ds = ingest_directory(args.train_data, args.resolution)
        test_ds = ingest_directory(args.test_data, args.resolution)
        assert_disjoint(train_ds, test_ds)
    result = run_sweep(train_ds, test_ds, master_seed=args.seed, resolution=args.resolution,
                       epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       archs=archs, dry_run=args.dry_run)
    text = render_table(result, 1, args.format) + "\n" + render_table(result, 2, args.format)
    _write_or_print(text, args.out)
    if args.results:
        Path(args.results).write_text(result.to_csv())
    return 0


def _gradcheck_resolution(spec) -> int:
    # each conv block halves the side; keep at least one pixel after the last pool
    return max(GRADCHECK_MIN_RESOLUTION, 2 ** len(spec.conv_filters))


def cmd_gradcheck(args) -> int:
    fault = tuple(args.inject_fault.split(":", 1)) if args.inject_fault else None
    dtype = np.float64 if args.float64 else np.float32
    tol = args.tolerance if args.tolerance is not None else (1e-5 if args.float64 else gc.DEFAULT_TOLERANCE)
    archs = args.archs.split(",") if args.archs else list(REGISTRY)
    with precision(dtype):
        step = gc.default_step(dtype) if args.step is None else args.step
        reports = gc.layer_suite(tolerance=tol, step=step, seed=args.seed, fault=fault)
        for a in archs:
            spec = build_architecture(a)
            spec = spec.with_overrides(fc_sizes=GRADCHECK_FC, input_resolution=_gradcheck_resolution(spec))
            block = fault[1] if fault and fault[0] == a else None
            reports.append(gc.network_check(spec, tolerance=tol, step=step, seed=args.seed,
                                            max_checks=args.max_checks or None, fault=block))
    for rep in reports:
        print(rep.render())
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return 1 if failed else 0


def cmd_predict(args) -> int:
    spec, params = load_model(args.model)
    for path in args.image:
        x = load_image(path, spec.input_resolution)
        p = float(predict_proba(spec, params, x)[0])
        print(f"{path},{p:.4f},{'tumor' if p > 0.5 else 'no-tumor'}", flush=True)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scbnet", description="Brain-MRI tumor CNNs with skip-connection blocks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one architecture and write a checkpoint")
    t.add_argument("--arch", required=True, help="registry id (arch-1..arch-10) or JSON config path")
    t.add_argument("--train-data", required=True, help="directory with yes/ and no/ subdirectories")
    t.add_argument("--resolution", type=int, default=None, help="input side R (default: from the architecture, 64)")
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--batch-size", type=int, default=15)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--augment", action="store_true", help="add horizontal and vertical flips (3x data)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--history", default=None, help="history CSV path (default: <out>.history.csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a labeled directory")
    e.add_argument("--model", required=True)
    e.add_argument("--test-data", required=True)
    e.add_argument("--resolution", type=int, default=None, help="must match the model when given")
    e.add_argument("--append", default=None, help="append a result row to this CSV file")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train the architecture grid and print both accuracy tables")
    s.add_argument("--train-data")
    s.add_argument("--test-data")
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--epochs", type=int, default=60)
    s.add_argument("--batch-size", type=int, default=15)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0, help="master seed; per-cell seeds derive from it")
    s.add_argument("--archs", default=None, help="comma-separated subset of architecture ids")
    s.add_argument("--dry-run", action="store_true", help="render the tables without training")
    s.add_argument("--format", choices=("text", "csv"), default="text")
    s.add_argument("--out", default=None, help="also write the rendered tables here")
    s.add_argument("--results", default=None, help="write per-cell results CSV here")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference check of every layer and architecture")
    g.add_argument("--tolerance", type=float, default=None, help="max relative error (default 1e-2, 1e-5 with --float64)")
    g.add_argument("--step", type=float, default=None)
    g.add_argument("--float64", action="store_true", help="run in 64-bit precision")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-checks", type=int, default=24, help="sampled entries per block (0: all)")
    g.add_argument("--archs", default=None, help="comma-separated subset of architecture ids")
    g.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    pr = sub.add_parser("predict", help="tumor probability for individual images")
    pr.add_argument("--model", required=True)
    pr.add_argument("--image", required=True, nargs="+", action="extend")
    pr.set_defaults(func=cmd_predict)
    return p


def _fail(code: str, message: str) -> None:
    print(f"error[{code}]: {' '.join(str(message).split())}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        _fail(exc.code, exc)
        return 2
    except ScbnetError as exc:
        _fail(exc.code, exc)
        return 1
    except OSError as exc:
        _fail("io", exc)
        return 1
    except ValueError as exc:
        _fail("value", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
