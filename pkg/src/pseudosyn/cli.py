"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing dependency
(prerequisite artifact, config entry or library).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import pipeline
from .balancer import plan_balance, verify_extension
from .catalog import (
    Catalog,
    ClassDistribution,
    ImageRecord,
    Provenance,
    Split,
    class_distribution,
    load_manifest,
    split_cv,
    write_manifest,
)
from .classifier import (
    DEVICE_ENV,
    PRESETS,
    ImageClassifier,
    TrainingConfig,
    predict,
    train,
)
from .edgemask import CannyParams, canny, read_mask_manifest, write_mask_manifest
from .ensemble import (
    AveragingEnsemble,
    decide_all,
    ensemble_files,
    read_predictions,
    write_predictions,
)
from .explain import LimeImageExplainer, format_summary, prediction_summary
from .imageio import as_image, load_mask, save_image
from .labels import CLASS_NAMES, ClassLabel
from .metrics import evaluate, format_table, write_reports
from .pseudolabel import (
    extend_with_pseudo,
    extension_stats,
    filter_confident,
    format_stats,
)
from .synthesis import (
    EdgeToImageGAN,
    GanConfig,
    synthetic_filename,
    synthetic_id,
    train_gan,
)
from .toy import make_toy_dataset, write_toy_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEPENDENCY = 0, 1, 2, 3

logger = logging.getLogger("pseudosyn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _counts(text: str) -> ClassDistribution:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != len(ClassLabel):
        raise argparse.ArgumentTypeError(f"expected {len(ClassLabel)} comma-separated counts")
    return ClassDistribution(tuple(int(p) for p in parts))


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = yaml.safe_load(value)
    return out


# ---------------------------------------------------------------- commands


def cmd_prepare(args):
    if args.toy:
        out = Path(args.toy)
        manifest = make_toy_dataset(out, seed=args.seed)
        config = write_toy_config(out / "pipeline.yaml", manifest="manifest.csv", output_dir="run", seed=args.seed)
        print(f"wrote {manifest} and {config}")
        return
    root = Path(args.folders)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    records = []
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
    for split in Split:
        base = root / split.value
        if not base.is_dir():
            continue
        for path in sorted(p for p in base.rglob("*") if p.suffix.lower() in exts):
            rel = path.relative_to(root)
            parts = path.relative_to(base).parts
            label = ClassLabel.parse(parts[0]) if len(parts) > 1 else None
            records.append(ImageRecord(rel.with_suffix("").as_posix(), rel.as_posix(), split, label))
    if not records:
        raise ValueError(f"no images under {root}/<split>/")
    out = write_manifest(Catalog(tuple(records), root=root.resolve()), args.out or root / "manifest.csv")
    catalog = load_manifest(out)
    print(f"wrote {out}: {len(catalog)} records")
    for split, dist in catalog.distributions.items():
        if catalog.select(split=split):
            print(f"  {split.value}: {len(catalog.select(split=split))} images, labels {dist.as_dict()}")


def cmd_train(args):
    if args.preset:
        config = PRESETS[args.preset]
    elif args.config:
        config = TrainingConfig.load(args.config)
    else:
        raise UsageError("train needs --config or --preset")
    overrides = _overrides(args.set)
    if overrides:
        config = TrainingConfig(**{**config.to_dict(), **overrides})
    catalog = load_manifest(args.manifest)
    folds = split_cv(catalog, k=args.cv, seed=args.cv_seed) if args.cv else None
    if args.cv and args.fold is None:
        raise UsageError("--cv needs --fold")
    model, log = train(config, catalog, folds=folds, held_out=args.fold, checkpoint_dir=args.out, run_id=args.run_id)
    run_dir = Path(args.out) / args.run_id
    config.save(run_dir / "config.yaml")
    log.to_csv(run_dir / "training_log.csv")
    last = log.epochs[-1] if log.epochs else None
    print(f"saved {run_dir / f'epoch_{config.total_epochs}.ckpt'}" + (f" (final loss {last.loss:.4f})" if last else ""))
    if last is not None and last.val_macro_f1 is not None:
        print(f"held-out fold {args.fold}: macro F1 {100 * last.val_macro_f1:.2f} %")


def cmd_predict(args):
    catalog = load_manifest(args.manifest)
    records = catalog.select(split=args.split)
    if not records:
        raise ValueError(f"no records in split(s) {', '.join(args.split)}")
    model = ImageClassifier.load(args.checkpoint)
    probs, failures = predict(model, [catalog.resolve(r) for r in records])
    for i, msg in failures:
        print(f"warning: skipped {records[i].id}: {msg}", file=sys.stderr)
    keep = [i for i in range(len(records)) if not np.isnan(probs[i]).any()]
    write_predictions([records[i].id for i in keep], probs[keep], args.out)
    print(f"wrote {len(keep)} predictions to {args.out}")


def cmd_ensemble(args):
    ids, probs = ensemble_files(args.predictions)
    write_predictions(ids, probs, args.out)
    print(f"averaged {len(args.predictions)} files over {len(ids)} images into {args.out}")


def cmd_pseudolabel(args):
    catalog = load_manifest(args.manifest)
    ids, probs = read_predictions(args.predictions)
    batch = filter_confident(ids, probs, args.threshold)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    batch.to_csv(out / "pseudo_labels.csv")
    extended = extend_with_pseudo(catalog, batch, allow_test=args.allow_test)
    write_manifest(extended, out / "catalog_pseudo.csv")
    print(f"accepted {len(batch.accepted)} of {batch.n_inputs} at threshold {args.threshold}")
    print(format_stats(extension_stats(class_distribution(catalog), class_distribution(extended))))


def cmd_masks(args):
    catalog = load_manifest(args.manifest)
    params = CannyParams(args.radius, args.sigma, args.low, args.high, args.threshold_mode)
    records = catalog.select(split=Split.TRAIN_LABELED, label=args.label_filter or None)
    masks, failures = [], 0
    for r in records:
        try:
            image = as_image(catalog.resolve(r))
        except ValueError as exc:
            print(f"warning: skipped {r.id}: {exc}", file=sys.stderr)
            failures += 1
            continue
        if args.size:
            image = pipeline.fit_size(image, args.size)
        masks.append(canny(image, params, source_id=r.id, source_class=r.label))
    manifest = write_mask_manifest(masks, args.out_dir)
    print(f"wrote {len(masks)} masks to {manifest}" + (f" ({failures} unreadable)" if failures else ""))


def _load_pairs(masks_csv, manifest, label):
    catalog = load_manifest(manifest)
    pairs = []
    for path, source_id, source_class in read_mask_manifest(masks_csv):
        if source_class is not label:
            continue
        mask = load_mask(path)
        image = pipeline.fit_size(as_image(catalog.resolve(catalog.get(source_id))), mask.shape[0])
        pairs.append((mask, image))
    return pairs


def cmd_train_gan(args):
    label = ClassLabel.parse(args.label)
    params = {}
    if args.config:
        params = yaml.safe_load(Path(args.config).read_text()) or {}
        params.pop("class_label", None)
    params.update(_overrides(args.set))
    pairs = _load_pairs(args.masks, args.manifest, label)
    if not pairs:
        raise ValueError(f"no masks of class {label.key} in {args.masks}")
    params.setdefault("load_size", pairs[0][0].shape[0])
    config = GanConfig.for_class(label, **params)
    model, log = train_gan(config, pairs, output_dir=args.out_dir, sample_every=args.sample_every)
    out = Path(args.out_dir) / label.key
    config.save(out / "config.yaml")
    log.to_csv(out / "losses.csv")
    print(f"trained {label.key} for {config.total_epochs} epochs; checkpoint in {out}")


def cmd_plan(args):
    if args.manifest:
        catalog = load_manifest(args.manifest)
        baseline = class_distribution(catalog, provenance=Provenance.REAL)
        after = class_distribution(catalog, provenance=[Provenance.REAL, Provenance.PSEUDO])
    elif args.baseline:
        baseline = args.baseline
        after = baseline + args.pseudo if args.pseudo else baseline
    else:
        raise UsageError("plan needs --manifest or --baseline")
    plan = plan_balance(after, baseline)
    print(plan.format_table())
    if args.out:
        plan.to_csv(args.out)


def cmd_synthesize(args):
    catalog = load_manifest(args.manifest)
    masks = [(load_mask(p), sid, sc) for p, sid, sc in read_mask_manifest(args.masks)]
    out = Path(args.out_dir)
    records = []
    for checkpoint in args.checkpoint:
        model = EdgeToImageGAN.load(checkpoint)
        label = model.config.class_label
        sources = [m for m in masks if m[2] is not label]
        fakes = model.synthesize([m[0] for m in sources], seed=args.seed)
        for (_, source_id, source_class), fake in zip(sources, fakes):
            path = save_image(fake, out / label.key / synthetic_filename(source_id))
            records.append(
                ImageRecord(
                    synthetic_id(label, source_id),
                    os.path.relpath(path.resolve(), catalog.root),
                    Split.TRAIN_LABELED,
                    label,
                    Provenance.SYNTHETIC,
                    source_class=source_class,
                )
            )
        print(f"{label.key}: {len(sources)} images")
    manifest = write_manifest(catalog.extend(records), out / "catalog_extended.csv")
    print(f"wrote {manifest}")


def cmd_verify(args):
    catalog = load_manifest(args.manifest)
    baseline = class_distribution(catalog, provenance=Provenance.REAL)
    after = class_distribution(catalog, provenance=[Provenance.REAL, Provenance.PSEUDO])
    result = verify_extension(plan_balance(after, baseline), catalog)
    print(result)
    return EXIT_OK if result.ok else EXIT_DATA


def cmd_evaluate(args):
    if args.compare:
        print(pipeline.compare_evaluations(*args.compare))
        return
    if not (args.predictions and args.manifest):
        raise UsageError("evaluate needs --predictions and --manifest (or --compare A B)")
    catalog = load_manifest(args.manifest)
    reports = {}
    for path in args.predictions:
        ids, probs = read_predictions(path)
        truth = [catalog.get(i).label for i in ids]
        if any(t is None for t in truth):
            raise ValueError(f"{path}: predictions include images without a ground-truth label")
        labels, _ = decide_all(probs)
        reports[Path(path).stem] = evaluate(truth, labels)
    print(format_table({n: r.row() for n, r in reports.items()}))
    if args.out:
        write_reports(reports, args.out)


def cmd_explain(args):
    models = [ImageClassifier.load(c) for c in args.checkpoint]
    predictor = models[0] if len(models) == 1 else AveragingEnsemble(models).fit()
    explainer = LimeImageExplainer(
        num_samples=args.samples, top_k=args.k, n_segments=args.segments, random_state=args.seed
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = [as_image(p) for p in args.image]
    ids = [Path(p).stem for p in args.image]
    for image, image_id in zip(images, ids):
        exp = explainer.explain(predictor, image, image_id=image_id)
        exp.to_csv(out / f"{image_id}_weights.csv")
        exp.save_overlay(image, out / f"{image_id}_explanation.png")
        print(f"{image_id}: {exp.predicted_class.key} ({100 * exp.confidence:.2f} %), top superpixels {exp.top_k}")
    named = {Path(c).parent.name or f"model{i}": m for i, (c, m) in enumerate(zip(args.checkpoint, models))}
    probs = {name: m.predict_proba(images) for name, m in named.items()}
    if len(models) > 1:
        probs["ensemble"] = predictor.predict_proba(images)
    rows = prediction_summary(probs, ids, truth=args.truth)
    text = format_summary(rows, ids)
    (out / "summary.txt").write_text(text + "\n")
    print(text)


def cmd_report(args):
    print(pipeline.report(args.run_dir), end="")


def cmd_run(args):
    config = pipeline.PipelineConfig.load(args.config)
    phases = pipeline.PHASES if args.phase == "all" else (args.phase,)
    for phase in phases:
        result = pipeline.run_phase(config, phase)
        print(f"[{phase}] {len(result.artifacts)} artifacts, manifest {result.manifest}")
        if result.summary:
            print(result.summary)
    if args.phase == "all":
        pipeline.report(config.output_dir)
        print(f"report: {config.output_dir / 'report.txt'}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pseudosyn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--device", help=f"torch device (default: ${DEVICE_ENV} or auto)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="build a manifest from folders, or write the toy dataset")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--toy", metavar="DIR", help="write the toy dataset and a desk-scale pipeline config")
    g.add_argument("--folders", metavar="ROOT", help="ROOT/<split>/[<class>/]*.png")
    p.add_argument("--out", help="manifest path (default ROOT/manifest.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="override config fields")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--run-id", default="model")
    p.add_argument("--cv", type=int, default=0, metavar="K")
    p.add_argument("--fold", type=int)
    p.add_argument("--cv-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="class probabilities for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", nargs="+", default=["test"], choices=[s.value for s in Split])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="average prediction files")
    p.add_argument("predictions", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("pseudolabel", help="keep confident predictions as labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.70)
    p.add_argument("--allow-test", action="store_true", help="accept pseudo-labels for test images")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("masks", help="Canny edge masks of labeled training images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="label_filter", nargs="*", choices=CLASS_NAMES)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--radius", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--low", type=float, default=10.0, help="low threshold, percent")
    p.add_argument("--high", type=float, default=30.0, help="high threshold, percent")
    p.add_argument("--threshold-mode", choices=["max", "percentile"], default="max")
    p.add_argument("--size", type=int, help="resize images to SIZE x SIZE first")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("train-gan", help="train the mask-to-image model of one class")
    p.add_argument("--masks", required=True, help="masks.csv")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="label", required=True, choices=CLASS_NAMES)
    p.add_argument("--config", help="YAML with GAN settings")
    p.add_argument("--set", nargs="*", metavar="KEY=VALUE")
    p.add_argument("--sample-every", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("plan", help="synthetic quotas that balance the classes")
    p.add_argument("--manifest", help="catalog with real and pseudo records")
    p.add_argument("--baseline", type=_counts, metavar="N,I,S,B")
    p.add_argument("--pseudo", type=_counts, metavar="N,I,S,B")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("synthesize", help="generate images from other classes' masks")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="check synthetic records against the plan")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="score prediction files")
    p.add_argument("--predictions", nargs="+")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--compare", nargs=2, metavar=("BASELINE_CSV", "EXTENDED_CSV"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="superpixel explanations for images")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--image", nargs="+", required=True)
    p.add_argument("--truth", nargs="+", choices=CLASS_NAMES)
    p.add_argument("--samples", type=int, default=3000)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--segments", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("report", help="consolidated report of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run pipeline phases from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--phase", required=True, choices=[*pipeline.PHASES, "all"])
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.device:
        os.environ[DEVICE_ENV] = args.device
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (pipeline.DependencyError, ImportError) as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (ValueError, KeyError, OSError, RuntimeError, yaml.YAMLError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
