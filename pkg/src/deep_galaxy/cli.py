"""deep-galaxy command line.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
divergence during training.
"""

import argparse
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from . import _kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config
from .data import (
    SPLITS,
    Dataset,
    GalaxyClass,
    SplitSpec,
    load_dataset_dir,
    load_image,
    prepare_image,
    read_manifest,
    scan_dataset_dir,
    split_assignments,
    split_counts,
    write_dataset_dir,
    write_manifest,
)
from .errors import CheckpointError, ConfigError, DataError, NonFiniteError, NumericDivergenceError
from .metrics import CLASS_NAMES, render_comparison, render_report, report_to_csv
from .network import OptimizerState, build_network, evaluate, forward, run_protocol, train
from .viz import (
    export_fc_activations,
    export_feature_maps,
    export_training_curve,
    read_training_curve,
    read_validation_curve,
    validation_path,
)

log = logging.getLogger("deep_galaxy")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _counts(text):
    try:
        counts = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}") from None
    if len(counts) != 3 or min(counts) < 0:
        raise argparse.ArgumentTypeError("counts must be three non-negative integers E,S,I")
    return counts


def _artifact_paths(model):
    model = Path(model)
    stem = model.with_suffix("")
    return {
        "curve": stem.with_name(stem.name + "_curve.csv"),
        "eval": stem.with_name(stem.name + "_eval.csv"),
    }


def _train_overrides(args):
    return {
        "profile": getattr(args, "profile", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "momentum": getattr(args, "momentum", None),
        "batch_size": getattr(args, "batch_size", None),
        "epochs": getattr(args, "epochs", None),
        "seed": getattr(args, "seed", None),
    }


def _load_splits(data_dir, manifest, net_cfg):
    """Dataset split per the manifest, as {split name: Dataset}."""
    rows = read_manifest(manifest)
    if not rows:
        raise DataError(f"manifest {manifest} lists no samples")
    on_disk = {sid: cls for sid, cls, _ in scan_dataset_dir(data_dir)}
    for sid, cls, _ in rows:
        if sid in on_disk and on_disk[sid] != cls:
            raise DataError(f"{sid}: manifest says {cls.dirname}, directory says {on_disk[sid].dirname}")
    ds = load_dataset_dir(data_dir, net_cfg.input_height, net_cfg.input_width, net_cfg.input_channels,
                          ids=[r[0] for r in rows])
    position = {sid: i for i, sid in enumerate(ds.ids)}
    out = {}
    for name in SPLITS:
        idx = [position[sid] for sid, _, split in rows if split == name]
        out[name] = ds.subset(idx) if idx else Dataset([], ds.images[:0], [])
    return out


def _split_table(counts_by_class):
    out = [f"{'class':<12}{'total':>7}{'train':>7}{'val':>7}{'test':>7}"]
    totals = [0, 0, 0, 0]
    for name, (tr, va, te) in counts_by_class:
        row = [tr + va + te, tr, va, te]
        totals = [a + b for a, b in zip(totals, row)]
        out.append(f"{name:<12}" + "".join(f"{v:>7}" for v in row))
    out.append(f"{'total':<12}" + "".join(f"{v:>7}" for v in totals))
    return "\n".join(out)


# --------------------------------------------------------------------------
# commands

def cmd_generate(args):
    counts = write_dataset_dir(args.out, args.counts, args.size, args.seed)
    for cls, n in zip(GalaxyClass, counts):
        print(f"{cls.dirname}: {n}")
    print(f"total: {sum(counts)} images in {args.out}")
    return EXIT_OK


def cmd_split(args):
    spec = SplitSpec(args.train_fraction, args.val_fraction, args.seed)
    entries = scan_dataset_dir(args.data)
    ds = Dataset([e[0] for e in entries], [[[[0.0]]]] * len(entries), [int(e[1]) for e in entries])
    for cls, n in zip(GalaxyClass, ds.class_counts()):
        if n == 0:
            raise DataError(f"class {cls.dirname} has no images under {args.data}")
    assignments = split_assignments(ds, spec)
    write_manifest(args.out, ds, assignments)
    table = [(cls.dirname, split_counts(n, spec)) for cls, n in zip(GalaxyClass, ds.class_counts())]
    for name, (_, va, te) in table:
        if va == 0 or te == 0:
            print(f"warning: class {name} has an empty validation or test split", file=sys.stderr)
    print(_split_table(table))
    print(f"manifest written to {args.out}")
    return EXIT_OK


def cmd_train(args):
    run = load_run_config(args.config, _train_overrides(args))
    splits = _load_splits(args.data, args.manifest, run.network)
    train_set, val_set = splits["train"], splits["val"]
    if len(train_set) == 0:
        raise DataError("the manifest assigns no samples to the train split")
    net = build_network(run.network, run.train.seed)
    print(f"profile {run.profile}: {len(train_set)} train / {len(val_set)} val samples, "
          f"{run.train.epochs} epochs, backend {_kernels.backend()}")
    opt = OptimizerState(net)
    net, records, validation = train(net, train_set, val_set, run.train, opt=opt)
    save_checkpoint(net, args.out, opt)
    paths = _artifact_paths(args.out)
    export_training_curve(records, paths["curve"], validation)
    train_acc = evaluate(net, train_set).accuracy
    print(f"iterations: {len(records)}")
    print(f"final batch loss: {records[-1].batch_loss:.6f}")
    print(f"train accuracy: {train_acc:.6f}")
    if len(val_set):
        report = evaluate(net, val_set)
        paths["eval"].write_text(report_to_csv(report), encoding="utf-8", newline="\n")
        print("validation report:")
        print(render_report(report), end="")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    if args.split not in SPLITS:
        raise ConfigError(f"unknown split {args.split!r}; choose from {', '.join(SPLITS)}")
    if args.protocol:
        if args.config is None:
            raise ConfigError("--protocol median5 needs --config")
        run = load_run_config(args.config, _train_overrides(args))
        splits = _load_splits(args.data, args.manifest, run.network)
        if len(splits[args.split]) == 0:
            raise DataError(f"split {args.split} is empty")

        def on_run(i, acc):
            print(f"run {i + 1}: seed {run.train.seed + i}, {args.split} accuracy {100 * acc:.3f}%")

        result = run_protocol((splits["train"], splits["val"], splits[args.split]), run.network, run.train,
                              n_runs=5, on_run=on_run)
        print(f"median accuracy over 5 runs: {100 * result.median_accuracy:.3f}%")
        return EXIT_OK

    if args.model is None:
        raise ConfigError("--model is required unless --protocol is given")
    net = load_checkpoint(args.model)
    split = _load_splits(args.data, args.manifest, net.config)[args.split]
    if len(split) == 0:
        raise DataError(f"split {args.split} is empty")
    report = evaluate(net, split)
    if args.report:
        Path(args.report).write_text(report_to_csv(report), encoding="utf-8", newline="\n")
    print(render_report(report), end="")
    print()
    print(render_comparison(report, args.data_kind), end="")
    return EXIT_OK


def _load_input(model, image_path):
    net = load_checkpoint(model)
    cfg = net.config
    img = prepare_image(load_image(image_path), cfg.input_height, cfg.input_width, cfg.input_channels)
    return net, img


def cmd_predict(args):
    net, img = _load_input(args.model, args.image)
    probs = forward(net, img[None])[0]
    best = int(probs.argmax())
    print(f"class: {CLASS_NAMES[best]}")
    for name, p in zip(CLASS_NAMES, probs):
        print(f"{name}: {float(p)!r}")
    return EXIT_OK


def cmd_viz(args):
    net, img = _load_input(args.model, args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shape = export_feature_maps(net, img, "conv", out / "conv_maps.pgm")
    print(f"conv_maps.pgm: {shape[1]}x{shape[0]}")
    shape = export_feature_maps(net, img, "relu", out / "relu_maps.pgm")
    print(f"relu_maps.pgm: {shape[1]}x{shape[0]}")
    shape = export_fc_activations(net, img, out / "fc1_strip.pgm")
    print(f"fc1_strip.pgm: {shape[1]}x{shape[0]}")
    curve = _artifact_paths(args.model)["curve"]
    if curve.exists():
        read_training_curve(curve)
        shutil.copyfile(curve, out / curve.name)
        vpath = validation_path(curve)
        if vpath.exists():
            read_validation_curve(vpath)
            shutil.copyfile(vpath, out / vpath.name)
        print(f"copied training curves from {curve.parent}")
    return EXIT_OK


# --------------------------------------------------------------------------

def _train_flags(p):
    p.add_argument("--profile", choices=["default64", "fast32"])
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="deep-galaxy", description="Galaxy morphology CNN (elliptical / spiral / irregular).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic galaxy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--counts", type=_counts, default=[617, 513, 216], help="E,S,I image counts")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="write a stratified train/val/test manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--train-fraction", type=float, default=0.60)
    p.add_argument("--val-fraction", type=float, default=0.19)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a network and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or run the median-of-5 protocol")
    p.add_argument("--model")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--protocol", choices=["median5"])
    p.add_argument("--config")
    p.add_argument("--report", help="also write the report as CSV")
    p.add_argument("--data-kind", default="synthetic", choices=["synthetic", "real"])
    _train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one PGM/PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("viz", help="export feature-map grids and the dense-layer strip")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help/--version exit 0; parse errors already exit 1 via _Parser
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericDivergenceError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
