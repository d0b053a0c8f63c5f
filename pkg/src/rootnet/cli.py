"""Command-line entry point binding the modules into runnable workflows:

    rootnet synth|train|eval|segment|slic|transfer-experiment ...

Every command is deterministic given its config and seed (threads 1); all
artifacts of a run land in one output directory with the resolved config
echoed alongside.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _limit_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _out_dir(args, cfg_name: str) -> str:
    out = args.out or getattr(args, "cfg", None) and args.cfg.out_dir
    if not out:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        out = os.path.join("runs", f"{cfg_name}-{stamp}")
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg, out: str):
    if cfg.raw_text:
        with open(os.path.join(out, "config.ini"), "w") as f:
            f.write(cfg.raw_text)


def _load_or_gen_samples(cfg, seed: int, which: str = "target"):
    from . import data, synth

    if which == "source":
        if cfg.source_dataset:
            return data.load_sampleset(cfg.source_dataset)
        params = synth.SOURCE_PARAMS
        if cfg.gen is not None:
            from dataclasses import replace

            params = replace(
                synth.SOURCE_PARAMS, height=cfg.gen.height, width=cfg.gen.width, target_density=cfg.gen.target_density
            )
        return synth._make_set(params, 200, seed + 1, "src")
    if cfg.dataset:
        return data.load_sampleset(cfg.dataset)
    if cfg.gen is None:
        from .config import ConfigFileError

        raise ConfigFileError("config needs either [data] dataset or a [gen] section")
    return synth._make_set(cfg.gen, cfg.gen_count, seed, "img")


def cmd_synth(args) -> int:
    from . import data, synth
    from .config import ConfigFileError

    cfg = args.cfg
    if cfg.gen is None:
        raise ConfigFileError("synth requires a [gen] section")
    seed = args.seed if args.seed is not None else cfg.seed
    out = _out_dir(args, cfg.name)
    manifest = {"seed": seed, "count": cfg.gen_count}
    if args.pair or cfg.gen_pair:
        source, target = synth.gen_domain_pair(seed + 1, seed, n_target=cfg.gen_count)
        data.save_sampleset(source, os.path.join(out, "source"))
        data.save_sampleset(target, os.path.join(out, "target"))
        manifest["layout"] = "pair"
    else:
        samples = synth._make_set(cfg.gen, cfg.gen_count, seed, "img")
        data.save_sampleset(samples, out)
        manifest["layout"] = "single"
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    _echo_config(cfg, out)
    print(f"wrote {manifest['layout']} dataset ({cfg.gen_count} images) to {out}")
    return EXIT_OK


def _prepare_train_sets(cfg, samples, seed):
    from . import data

    if cfg.tile_rows > 1 or cfg.tile_cols > 1:
        tiled = []
        for s in samples:
            tiled.extend(data.tile_image(s, cfg.tile_rows, cfg.tile_cols))
        samples = tiled
    return data.stratified_split(samples, cfg.train_frac, seed)


def cmd_train(args) -> int:
    from . import checkpoint, train
    from .transfer import InitMode

    cfg = args.cfg
    seed = args.seed if args.seed is not None else cfg.seed
    out = _out_dir(args, cfg.name)
    samples = _load_or_gen_samples(cfg, seed)
    train_set, eval_set = _prepare_train_sets(cfg, samples, seed)
    tc = train.TrainConfig(
        arch=cfg.arch,
        lr=cfg.lr,
        momentum=cfg.momentum,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        pos_weight=cfg.pos_weight,
        seed=seed,
        init_mode=InitMode(cfg.init_mode, cfg.init_source),
        eval_every=cfg.eval_every,
        hist_bins=cfg.bins,
    )
    reports, summary = train.run_trials(tc, cfg.trials, train_set, eval_set)
    for i, rep in enumerate(reports):
        checkpoint.save(rep.params, cfg.arch, os.path.join(out, f"trial{i}.ckpt"))
    train.write_metrics_csv(os.path.join(out, "metrics.csv"), reports)
    from .metrics import write_summary_csv

    summary = dict(summary, model=cfg.name)
    write_summary_csv(os.path.join(out, "summary.csv"), [summary])
    _echo_config(cfg, out)
    print(
        f"{cfg.name}: ROC-AUC {summary['mean_roc_auc']:.4f} +- {summary['std_roc_auc']:.4f}, "
        f"PR-AUC {summary['mean_pr_auc']:.4f} +- {summary['std_pr_auc']:.4f} ({cfg.trials} trials)"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import checkpoint, data, metrics, train

    spec, params = checkpoint.load(args.checkpoint)
    samples = data.load_sampleset(args.dataset)
    out = _out_dir(args, "eval")
    hist = train.evaluate(spec, params, samples, args.bins)
    roc = metrics.roc_curve(hist)
    pr = metrics.pr_curve(hist)
    roc.write_csv(os.path.join(out, "roc.csv"), "fpr", "tpr")
    pr.write_csv(os.path.join(out, "pr.csv"), "recall", "precision")
    if args.svg:
        metrics.curve_svg(roc, os.path.join(out, "roc.svg"), "FPR", "TPR")
        metrics.curve_svg(pr, os.path.join(out, "pr.svg"), "Recall", "Precision")
    row = metrics.summary_csv_row(os.path.basename(args.checkpoint), [roc.auc], [pr.auc])
    metrics.write_summary_csv(os.path.join(out, "summary.csv"), [row])
    print("Model | ROC AUC | PR AUC")
    print(f"{row['model']} | {roc.auc:.4f} | {pr.auc:.4f}")
    return EXIT_OK


def cmd_segment(args) -> int:
    import numpy as np
    from PIL import Image

    from . import checkpoint, data, metrics, train, unet
    from .tensor import Tensor

    spec, params = checkpoint.load(args.checkpoint)
    if args.at_fpr is not None:
        calib = data.load_sampleset(args.calibration)
        hist = train.evaluate(spec, params, calib)
        threshold, realized = metrics.threshold_at_fpr(hist, args.at_fpr)
        print(f"threshold {threshold:.6f} at realized FPR {realized:.6f}")
    else:
        threshold = args.threshold
    out = _out_dir(args, "segment")
    for path in args.images:
        img = np.asarray(Image.open(path).convert("RGB"))
        batch = img.transpose(2, 0, 1)[None].astype(np.float32) / 255.0
        probs = unet.forward(spec, params, Tensor(batch)).data[0, 0]
        mask = data.binarize(probs, threshold)
        name = os.path.splitext(os.path.basename(path))[0] + "_mask.png"
        Image.fromarray(mask * np.uint8(255)).save(os.path.join(out, name))
    print(f"wrote {len(args.images)} masks to {out}")
    return EXIT_OK


def cmd_slic(args) -> int:
    import numpy as np
    from PIL import Image

    from . import slic as sp

    out = _out_dir(args, "slic")
    for path in args.images:
        img = np.asarray(Image.open(path).convert("RGB"))
        spmap = sp.slic(img, args.target_size, args.compactness, args.iterations)
        name = os.path.splitext(os.path.basename(path))[0] + "_superpixels.png"
        sp.save_label_png(spmap, os.path.join(out, name))
        print(f"{path}: {spmap.count} superpixels")
    return EXIT_OK


REGIME_ORDER = ("S", "I", "P-En", "P-EnDe")


def cmd_transfer_experiment(args) -> int:
    from . import checkpoint, data, metrics, synth, train, transfer
    from .train import TrainConfig
    from .transfer import InitMode

    cfg = args.cfg
    seed = args.seed if args.seed is not None else cfg.seed
    out = _out_dir(args, cfg.name)
    regimes = cfg.regimes or REGIME_ORDER

    target = _load_or_gen_samples(cfg, seed)
    train_set, eval_set = data.stratified_split(target, cfg.train_frac, seed)

    source_ckpt = cfg.source_checkpoint
    if source_ckpt is None and any(r in regimes for r in ("P-En", "P-EnDe")):
        source = _load_or_gen_samples(cfg, seed, which="source")
        src_cfg = TrainConfig(
            arch=cfg.arch,
            lr=cfg.lr_scratch,
            momentum=cfg.momentum,
            batch_size=cfg.batch_size,
            epochs=cfg.source_epochs,
            pos_weight=cfg.pos_weight,
            seed=seed + 7919,
            eval_every=max(cfg.source_epochs, 1),
        )
        report = train.train(src_cfg, source, [])
        source_ckpt = os.path.join(out, "source.ckpt")
        checkpoint.save(report.params, cfg.arch, source_ckpt)
        print(f"pre-trained source model ({cfg.source_epochs} epochs) -> {source_ckpt}")

    classifier_ckpt = cfg.classifier_checkpoint
    if classifier_ckpt is None and "I" in regimes:
        patches, labels = synth.gen_classification_set(classes=4, n_per_class=32, seed=seed + 13)
        classifier_ckpt = os.path.join(out, "classifier.ckpt")
        acc = transfer.train_surrogate_classifier(patches, labels, cfg.arch, epochs=10, path=classifier_ckpt, seed=seed + 13)
        print(f"surrogate classifier accuracy {acc:.3f} -> {classifier_ckpt}")

    modes = {
        "S": (InitMode(transfer.SCRATCH), cfg.lr_scratch),
        "I": (InitMode(transfer.ENCODER_FROM_CLASSIFIER, classifier_ckpt), cfg.lr_pretrained),
        "P-En": (InitMode(transfer.ENCODER_FROM_CHECKPOINT, source_ckpt), cfg.lr_pretrained),
        "P-EnDe": (InitMode(transfer.ENCODER_DECODER_FROM_CHECKPOINT, source_ckpt), cfg.lr_pretrained),
    }
    rows = []
    print("Model | ROC AUC (mean +- std) | PR AUC (mean +- std)")
    for regime in REGIME_ORDER:
        if regime not in regimes:
            continue
        mode, lr = modes[regime]
        tc = TrainConfig(
            arch=cfg.arch,
            lr=lr,
            momentum=cfg.momentum,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            pos_weight=cfg.pos_weight,
            seed=seed,
            init_mode=mode,
            eval_every=cfg.eval_every,
            hist_bins=cfg.bins,
        )
        reports, summary = train.run_trials(tc, cfg.trials, train_set, eval_set)
        summary = dict(summary, model=regime)
        rows.append(summary)
        train.write_metrics_csv(os.path.join(out, f"metrics_{regime}.csv"), reports)
        print(
            f"{regime}-model | {summary['mean_roc_auc']:.4f} +- {summary['std_roc_auc']:.4f} | "
            f"{summary['mean_pr_auc']:.4f} +- {summary['std_pr_auc']:.4f}"
        )
    metrics.write_summary_csv(os.path.join(out, "summary.csv"), rows)
    _echo_config(cfg, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rootnet", description="Root segmentation experiment runner")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("--config", required=True, help="run configuration file (INI)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (default: timestamped under runs/)")
        sp.add_argument("--threads", type=int, default=1, help="compute threads (determinism guaranteed at 1)")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--pair", action="store_true", help="generate a source/target domain pair")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("train", help="train one model configuration over N trials")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="streaming ROC/PR evaluation of a checkpoint")
    common(sp, config_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--bins", type=int, default=65536)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("segment", help="write binary segmentation masks")
    common(sp, config_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--images", nargs="+", required=True)
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--threshold", type=float)
    group.add_argument("--at-fpr", type=float, dest="at_fpr")
    sp.add_argument("--calibration", help="labeled dataset dir (required with --at-fpr)")
    sp.set_defaults(fn=cmd_segment)

    sp = sub.add_parser("slic", help="superpixel label maps")
    common(sp, config_required=False)
    sp.add_argument("--images", nargs="+", required=True)
    sp.add_argument("--target-size", type=float, default=100.0)
    sp.add_argument("--compactness", type=float, default=10.0)
    sp.add_argument("--iterations", type=int, default=10)
    sp.set_defaults(fn=cmd_slic)

    sp = sub.add_parser("transfer-experiment", help="compare the four weight-initialization regimes")
    common(sp)
    sp.set_defaults(fn=cmd_transfer_experiment)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--threads" in argv:
        try:
            _limit_threads(int(argv[argv.index("--threads") + 1]))
        except (IndexError, ValueError):
            pass
    else:
        _limit_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)

    from .config import ConfigFileError, load_config

    try:
        if getattr(args, "config", None):
            args.cfg = load_config(args.config)
        else:
            args.cfg = None
        if args.fn is cmd_segment and args.at_fpr is not None and not args.calibration:
            parser.error("--at-fpr requires --calibration DATASET")
        return args.fn(args)
    except ConfigFileError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit:
        raise
    except Exception as e:  # map remaining failures onto the exit-code contract
        from . import checkpoint, data, metrics, train, transfer

        if isinstance(e, (train.DivergenceError, FloatingPointError)):
            print(f"divergence: {e}", file=sys.stderr)
            return EXIT_DIVERGED
        if isinstance(e, (data.DataError, checkpoint.CheckpointError, metrics.MetricError, FileNotFoundError)):
            print(f"data error: {e}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(e, (transfer.TransferError, ValueError)):
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
