"""``mcdnn`` command line.

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import arch as arch_mod
from . import data_io, ensemble, imageprep, nn, trainer

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _order(text: str):
    if text == "none":
        return None
    try:
        return imageprep.Order(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"order must be one of {[o.value for o in imageprep.Order]}") from None


def _int_list(text: str):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(args, order=None) -> imageprep.PreprocessConfig:
    try:
        return imageprep.PreprocessConfig(box=args.box, canvas=args.canvas,
                                          order=order or args.order, fill=args.fill)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from None


def _load_dataset(path) -> data_io.Dataset:
    try:
        return data_io.read_container(path)
    except FileNotFoundError:
        raise CommandError(f"no such dataset: {path}", EXIT_DATA) from None
    except data_io.DataFormatError as exc:
        raise CommandError(f"{path}: {exc}", EXIT_DATA) from None


def _prepared(args, path) -> data_io.Dataset:
    ds = _load_dataset(path)
    if args.order is None:
        return ds
    return data_io.preprocess_dataset(ds, _config(args))


def _load_columns(paths: str):
    cols = {}
    for p in paths.split(","):
        try:
            cols[p] = nn.load_column(p)
        except FileNotFoundError:
            raise CommandError(f"no such column file: {p}", EXIT_DATA) from None
        except (nn.ColumnFormatError, arch_mod.ArchError) as exc:
            raise CommandError(f"{p}: {exc}", EXIT_DATA) from None
    return cols


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# -- commands ----------------------------------------------------------------

def cmd_parse_arch(args):
    try:
        spec = arch_mod.parse_arch(args.arch)
    except arch_mod.ArchError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from None
    plan = arch_mod.infer_shapes(spec)
    if args.json:
        rows = [{"layer": arch_mod.render_layer(s.layer),
                 "maps": s.maps, "h": s.h, "w": s.w, "params": s.params, "madds": s.madds}
                for s in plan.layers]
        print(json.dumps({"arch": arch_mod.render_arch(spec), "tag": spec.tag,
                          "input": [1, spec.input_h, spec.input_w], "layers": rows,
                          "total_params": plan.total_params,
                          "total_madds": plan.total_madds}, indent=2))
        return
    print(f"{'layer':>8}  {'output':>14}  {'params':>12}  {'madds':>14}")
    print(f"{'input':>8}  {arch_mod.describe_shape(plan.input):>14}")
    for layer, s in zip(spec.layers, plan.layers):
        name = arch_mod.render_layer(layer)
        print(f"{name:>8}  {arch_mod.describe_shape(s):>14}  {s.params:>12}  {s.madds:>14}")
    print(f"total params={plan.total_params} madds={plan.total_madds}")
    trace = [arch_mod.describe_shape(plan.input)]
    trace += [arch_mod.describe_shape(s) for s in plan.layers]
    print(" → ".join(trace))


def cmd_preprocess(args):
    cfg = _config(args)
    try:
        img = imageprep.read_pgm(args.input)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read {args.input}: {exc}", EXIT_DATA) from None
    imageprep.write_pgm(args.output, imageprep.preprocess(img, cfg))


def _corpus(path: Path):
    if path.is_dir():
        files = sorted(path.glob("*.pgm"))
        try:
            return [imageprep.read_pgm(f) for f in files]
        except ValueError as exc:
            raise CommandError(str(exc), EXIT_DATA) from None
    if path.is_file():
        return [s.image for s in _load_dataset(path).samples]
    raise CommandError(f"no such corpus: {path}", EXIT_DATA)


def cmd_skew_report(args):
    images = _corpus(Path(args.corpus))
    if not images:
        raise CommandError("empty corpus", EXIT_DATA)
    a = _config(args, args.order_a)
    b = _config(args, args.order_b)
    report = imageprep.compare_pipelines(images, a, b)
    sys.stdout.write(f"order_a={a.order.value}\norder_b={b.order.value}\n" + report.to_text())
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_synth_data(args):
    ds = data_io.synth_glyphs(args.classes, args.per_class, args.writers, args.seed)
    data_io.write_container(args.output, ds)
    if args.pgm_dir:
        out = Path(args.pgm_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(ds.samples):
            imageprep.write_pgm(out / f"{i:06d}_c{s.label}_w{s.writer}.pgm", s.image)
    print(f"samples={len(ds)} classes={ds.class_count} sha256={ds.digest()}")


def cmd_gnt_convert(args):
    try:
        table = data_io.read_code_table(args.code_table)
    except OSError as exc:
        raise CommandError(f"cannot read code table: {exc}", EXIT_DATA) from None
    except data_io.DataFormatError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    samples = []
    for writer, path in enumerate(args.streams, start=args.writer_start):
        try:
            data = Path(path).read_bytes()
            samples += data_io.read_writer_stream(data, table, writer, args.unknown)
        except OSError as exc:
            raise CommandError(f"cannot read {path}: {exc}", EXIT_DATA) from None
        except data_io.DataFormatError as exc:
            raise CommandError(f"{path}: {exc}", EXIT_DATA) from None
    class_count = args.classes or (max(table.values()) + 1 if table else 0)
    try:
        ds = data_io.Dataset(samples, class_count)
    except data_io.LabelRangeError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    data_io.write_container(args.output, ds)
    print(f"samples={len(ds)} classes={class_count}")


def _self_test(seed: int) -> float:
    rng = np.random.default_rng(seed)
    col = nn.init_column(arch_mod.parse_arch("8x8-2C3-MP2-4N-3N"), seed, np.float64)
    return nn.grad_check(col, rng.uniform(-1, 1, (1, 8, 8)), int(rng.integers(3)))


def cmd_train(args):
    if args.self_test:
        err = _self_test(args.seed)
        print(f"self_test_max_rel_error={_fmt(err)}")
        if not err < 1e-4:
            raise CommandError("gradient self-test failed", EXIT_NUMERIC)
    try:
        spec = arch_mod.parse_arch(args.arch)
    except arch_mod.ArchError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from None
    train = _prepared(args, args.data)
    val = _prepared(args, args.val) if args.val else None
    deform = trainer.DeformParams(max_translate=args.max_translate, max_rotate=args.max_rotate,
                                  scale_range=(args.scale_min, args.scale_max),
                                  enabled=not args.no_deform)
    try:
        hp = trainer.Hyperparams(epochs=args.epochs, lr0=args.lr0, lr_decay=args.lr_decay,
                                 deform=deform, eval_every=args.eval_every,
                                 momentum=args.momentum, weight_decay=args.weight_decay,
                                 fill=args.fill)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from None
    out = Path(args.output)
    log_path = Path(args.log) if args.log else out.with_suffix(".log")
    log_path.write_text("")
    if args.checkpoint_dir:
        Path(args.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    try:
        col, tlog = trainer.train_column(spec, train, val, hp, args.seed, log_path=log_path,
                                         checkpoint_dir=args.checkpoint_dir, name=out.stem)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    if not all(np.isfinite(a).all() for a in col.parameter_arrays()):
        raise CommandError("training diverged (non-finite parameters)", EXIT_NUMERIC)
    nn.save_column(col, out)
    last = tlog.records[-1]
    print(f"saved={out} best_epoch={tlog.best_epoch} final_loss={_fmt(last.loss)}")


def cmd_eval(args):
    cols = _load_columns(args.columns)
    ds = _prepared(args, args.data)
    spec = ensemble.EnsembleSpec(tuple(cols))
    try:
        report = ensemble.evaluate(cols, spec, ds, ks=args.k, threads=args.threads)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    for k in sorted(report.topk_counts):
        label = "First" if k == 1 else f"Best {k}"
        print(f"{label:>8}: error={_fmt(100 * report.topk_errors[k])}% "
              f"({report.topk_counts[k]}/{report.n_samples})")
    print(f"latency_ms_per_char={_fmt(report.mean_latency)}")
    if args.report:
        Path(args.report).write_text(report.to_text(timing=args.timing))
    if args.json:
        Path(args.json).write_text(report.to_json(timing=args.timing))


def cmd_bench(args):
    cols = _load_columns(args.columns)
    ds = _prepared(args, args.data)
    if args.limit:
        ds = data_io.Dataset(ds.samples[:args.limit], ds.class_count)
    spec = ensemble.EnsembleSpec(tuple(cols))
    try:
        check = ensemble.benchmark(cols, spec, ds, warmup=args.warmup, repeats=args.repeats)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    from . import kernels
    print(f"backend={kernels.BACKEND} samples={len(ds)}")
    for name, ms in zip(cols, check.member_ms):
        print(f"member_ms_per_char[{name}]={_fmt(ms)}")
    print(f"member_sum_ms_per_char={_fmt(check.member_sum_ms)}")
    print(f"ensemble_ms_per_char={_fmt(check.ensemble_ms)}")
    print(f"additivity_ratio={_fmt(check.ratio)}")


# -- parser ------------------------------------------------------------------

def _prep_flags(p, order_default="contrast-then-scale", with_order=True):
    if with_order:
        p.add_argument("--order", type=_order, default=_order(order_default),
                       help="preprocessing order, or 'none' for already-preprocessed data")
    p.add_argument("--box", type=int, default=40)
    p.add_argument("--canvas", type=int, default=48)
    p.add_argument("--fill", type=int, default=255)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcdnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("parse-arch", help="show layer shapes, params and madds")
    p.add_argument("arch")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_parse_arch)

    p = sub.add_parser("preprocess", help="preprocess one PGM image")
    p.add_argument("input")
    p.add_argument("output")
    _prep_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("skew-report", help="compare two preprocessing orders on a corpus")
    p.add_argument("corpus", help="directory of PGM files or a dataset container")
    p.add_argument("--order-a", type=_order, default=imageprep.Order.CONTRAST_THEN_SCALE)
    p.add_argument("--order-b", type=_order, default=imageprep.Order.SCALE_THEN_CONTRAST)
    p.add_argument("--report", help="write a JSON report here")
    _prep_flags(p, with_order=False)
    p.set_defaults(func=cmd_skew_report, order=None)

    p = sub.add_parser("synth-data", help="generate a synthetic glyph dataset")
    p.add_argument("output")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=250)
    p.add_argument("--writers", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pgm-dir", help="also dump every sample as PGM here")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("gnt-convert", help="convert writer-stream files to a container")
    p.add_argument("streams", nargs="+", help="one stream file per writer")
    p.add_argument("--code-table", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--unknown", choices=("skip", "error"), default="skip")
    p.add_argument("--writer-start", type=int, default=0)
    p.add_argument("--classes", type=int, default=0, help="class count (default: from table)")
    p.set_defaults(func=cmd_gnt_convert)

    p = sub.add_parser("train", help="train one column")
    p.add_argument("--arch", required=True)
    p.add_argument("--data", required=True, help="training container")
    p.add_argument("--val", help="validation container")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--log")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr0", type=float, default=0.001)
    p.add_argument("--lr-decay", type=float, default=0.993)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--no-deform", action="store_true")
    p.add_argument("--max-translate", type=float, default=4.0)
    p.add_argument("--max-rotate", type=float, default=10.0)
    p.add_argument("--scale-min", type=float, default=0.9)
    p.add_argument("--scale-max", type=float, default=1.1)
    p.add_argument("--self-test", action="store_true", help="gradient-check before training")
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for symmetry; one column trains sequentially, so results "
                        "never depend on it")
    _prep_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "evaluate an ensemble"),
                             ("bench", cmd_bench, "time members and the ensemble")):
        p = sub.add_parser(name, help=text)
        p.add_argument("columns", help="comma-separated column files")
        p.add_argument("--data", required=True)
        p.add_argument("--threads", type=int, default=1)
        _prep_flags(p)
        p.set_defaults(func=func)
    evalp, benchp = sub.choices["eval"], sub.choices["bench"]
    evalp.add_argument("--k", type=_int_list, default=[1, 10])
    evalp.add_argument("--report", help="key=value report file")
    evalp.add_argument("--json", help="JSON report file")
    evalp.add_argument("--timing", action="store_true",
                       help="include wall-clock latency in report files (not byte-stable)")
    benchp.add_argument("--warmup", type=int, default=5)
    benchp.add_argument("--repeats", type=int, default=3)
    benchp.add_argument("--limit", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CommandError as exc:
        print(f"mcdnn {args.command}: {exc}", file=sys.stderr)
        return exc.status
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
