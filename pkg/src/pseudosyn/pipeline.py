"""Three-phase workflow: baseline training, data extension, extended training.

Every phase reads its inputs from files written by earlier phases and
writes everything it produces under ``<output_dir>/<phase>/``, ending with
an ``artifacts.csv`` manifest. Re-running a phase first clears its own
directory and never touches another phase's files.

Seeds: each stage derives its seed from the global seed plus a stable hash
of the stage name (see :func:`stage_seed`), so any stage can be re-run on
its own and still reproduce.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import os
import shutil
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch
import yaml

from .balancer import plan_balance, verify_extension
from .catalog import (
    Catalog,
    ImageRecord,
    Provenance,
    Split,
    class_distribution,
    load_manifest,
    split_cv,
    write_manifest,
)
from .classifier import TrainingConfig, predict, train
from .edgemask import CannyParams, canny, write_mask_manifest
from .ensemble import (
    average_probabilities,
    decide_all,
    read_predictions,
    write_predictions,
)
from .imageio import as_image, save_image
from .labels import CLASS_NAMES, ClassLabel, round_half_up
from .metrics import evaluate, format_table, improvement, read_reports, write_reports
from .pseudolabel import (
    extend_with_pseudo,
    extension_stats,
    filter_confident,
    format_stats,
)
from .synthesis import GanConfig, synthetic_filename, synthetic_id, train_gan

logger = logging.getLogger(__name__)

PHASES = ("baseline", "extend", "extended")
ARTIFACT_MANIFEST = "artifacts.csv"
PREDICT_SPLITS = (Split.TRAIN_UNLABELED, Split.TEST, Split.VALIDATION)


class DependencyError(RuntimeError):
    """A prerequisite artifact or named config is missing."""


class DataError(ValueError):
    """Input data cannot support the requested stage."""


def stage_seed(seed: int, stage: str) -> int:
    """``seed`` offset by the first four bytes of SHA-256 of ``stage``, mod 2**31."""
    offset = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "big")
    return (int(seed) + offset) % 2**31


@dataclass
class PipelineConfig:
    manifest: Path
    output_dir: Path
    seed: int = 0
    classifiers: dict[str, TrainingConfig] = field(default_factory=dict)
    baseline_members: list[str] = field(default_factory=list)
    extended_base: str = "auto"
    extended_members: dict[str, str] = field(
        default_factory=lambda: {"e1": "efficientnet-b0", "e2": "efficientnet-b1", "e3": "efficientnet-b2"}
    )
    extended_overrides: dict = field(default_factory=dict)
    pseudo_threshold: float = 0.70
    pseudo_sources: list[str] = field(default_factory=lambda: ["train_unlabeled"])
    canny: CannyParams = field(default_factory=CannyParams)
    gan_defaults: dict = field(default_factory=dict)
    gan_per_class: dict[str, dict] = field(default_factory=dict)
    strict_balance: bool = True
    evaluation_split: str = "validation"
    cv_folds: int = 0

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.output_dir = Path(self.output_dir)
        self.classifiers = {
            name: cfg if isinstance(cfg, TrainingConfig) else TrainingConfig(**cfg)
            for name, cfg in self.classifiers.items()
        }
        if isinstance(self.canny, dict):
            self.canny = CannyParams(**self.canny)
        self.validate()

    def validate(self):
        if not self.baseline_members:
            raise ValueError("ensemble.baseline must name at least one classifier")
        missing = [n for n in self.baseline_members if n not in self.classifiers]
        if self.extended_base != "auto" and self.extended_base not in self.classifiers:
            missing.append(self.extended_base)
        if missing:
            raise DependencyError(f"unknown classifier config(s): {', '.join(missing)}")
        if not self.extended_members:
            raise ValueError("ensemble.extended_members must not be empty")
        if not 0.0 <= self.pseudo_threshold <= 1.0:
            raise ValueError("pseudo threshold must lie in [0, 1]")
        for s in self.pseudo_sources:
            if Split(s) not in (Split.TRAIN_UNLABELED, Split.TEST):
                raise ValueError(f"pseudo-label source must be train_unlabeled or test, got {s!r}")
        Split(self.evaluation_split)
        for key in self.gan_per_class:
            ClassLabel.parse(key)
        sizes = {self.gan_config(c).load_size for c in ClassLabel}
        if len(sizes) != 1:
            raise ValueError("all classes must share one GAN load_size (masks are exchanged across classes)")
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ValueError("cv_folds must be 0 (off) or at least 2")

    def gan_config(self, label) -> GanConfig:
        label = ClassLabel.parse(label)
        overrides = dict(self.gan_defaults)
        for key, value in self.gan_per_class.items():
            if ClassLabel.parse(key) is label:
                overrides.update(value)
        overrides["seed"] = stage_seed(self.seed, f"gan/{label.key}")
        return GanConfig.for_class(label, **overrides)

    def classifier_config(self, name: str, stage: str, **overrides) -> TrainingConfig:
        base = self.classifiers[name]
        return dataclasses.replace(base, seed=stage_seed(self.seed, stage), **overrides)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "PipelineConfig":
        data = dict(data)
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        known = {"manifest", "output_dir", "seed", "classifiers", "ensemble", "pseudo", "canny", "gan", "balance", "evaluation"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        for key in ("manifest", "output_dir"):
            if key not in data:
                raise ValueError(f"config needs {key!r}")
        ensemble = data.get("ensemble", {})
        pseudo = data.get("pseudo", {})
        gan = data.get("gan", {})
        evaluation = data.get("evaluation", {})
        kwargs = dict(
            manifest=_under(base_dir, data["manifest"]),
            output_dir=_under(base_dir, data["output_dir"]),
            seed=int(data.get("seed", 0)),
            classifiers=data.get("classifiers", {}),
            baseline_members=list(ensemble.get("baseline", [])),
            extended_base=ensemble.get("extended_base", "auto"),
            extended_overrides=dict(ensemble.get("extended_overrides", {})),
            pseudo_threshold=float(pseudo.get("threshold", 0.70)),
            pseudo_sources=list(pseudo.get("sources", ["train_unlabeled"])),
            canny=data.get("canny", {}),
            gan_defaults=dict(gan.get("defaults", {})),
            gan_per_class=dict(gan.get("per_class", {})),
            strict_balance=bool(data.get("balance", {}).get("strict", True)),
            evaluation_split=evaluation.get("split", "validation"),
            cv_folds=int(evaluation.get("cv_folds", 0)),
        )
        if "extended_members" in ensemble:
            kwargs["extended_members"] = dict(ensemble["extended_members"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        return cls.from_dict(yaml.safe_load(path.read_text()) or {}, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "manifest": str(self.manifest),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "classifiers": {n: c.to_dict() for n, c in self.classifiers.items()},
            "ensemble": {
                "baseline": list(self.baseline_members),
                "extended_base": self.extended_base,
                "extended_members": dict(self.extended_members),
                "extended_overrides": dict(self.extended_overrides),
            },
            "pseudo": {"threshold": self.pseudo_threshold, "sources": list(self.pseudo_sources)},
            "canny": dataclasses.asdict(self.canny),
            "gan": {"defaults": dict(self.gan_defaults), "per_class": dict(self.gan_per_class)},
            "balance": {"strict": self.strict_balance},
            "evaluation": {"split": self.evaluation_split, "cv_folds": self.cv_folds},
        }


def _under(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------- artifacts


@dataclass
class PhaseResult:
    phase: str
    directory: Path
    artifacts: list[tuple[str, str, Path]]  # (name, kind, path)
    summary: str = ""

    @property
    def manifest(self) -> Path:
        return self.directory / ARTIFACT_MANIFEST


class _Artifacts:
    def __init__(self, directory: Path):
        self.directory = directory
        self.items: list[tuple[str, str, Path]] = []

    def add(self, name: str, kind: str, path: Path) -> Path:
        self.items.append((name, kind, Path(path)))
        return Path(path)

    def write(self) -> Path:
        path = self.directory / ARTIFACT_MANIFEST
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["artifact", "kind", "path"])
            for name, kind, p in self.items:
                writer.writerow([name, kind, Path(p).relative_to(self.directory).as_posix()])
        return path


def read_artifacts(phase_dir) -> dict[str, Path]:
    phase_dir = Path(phase_dir)
    with (phase_dir / ARTIFACT_MANIFEST).open(newline="") as fh:
        return {row["artifact"]: phase_dir / row["path"] for row in csv.DictReader(fh)}


def _require(phase_dir: Path, *names: str) -> dict[str, Path]:
    manifest = phase_dir / ARTIFACT_MANIFEST
    if not manifest.exists():
        raise DependencyError(f"missing prerequisite artifact: {manifest}")
    artifacts = read_artifacts(phase_dir)
    for name in names:
        if name not in artifacts:
            raise DependencyError(f"missing prerequisite artifact {name!r} in {manifest}")
        if not artifacts[name].exists():
            raise DependencyError(f"missing prerequisite artifact: {artifacts[name]}")
    return artifacts


def _fresh_dir(path: Path) -> Path:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


# ---------------------------------------------------------------- helpers


def _train_and_predict(cfg: TrainingConfig, name: str, catalog: Catalog, out: Path, arts: _Artifacts) -> dict:
    """Train one model, save it, and write predictions for every non-training split."""
    model_dir = out / "models" / name
    model, log = train(cfg, catalog, checkpoint_dir=out / "models", run_id=name)
    arts.add(f"checkpoint/{name}", "checkpoint", model_dir / f"epoch_{cfg.total_epochs}.ckpt")
    arts.add(f"config/{name}", "config", cfg.save(model_dir / "config.yaml"))
    arts.add(f"training_log/{name}", "log", log.to_csv(model_dir / "training_log.csv"))
    produced = {}
    for split in PREDICT_SPLITS:
        records = catalog.select(split=split)
        if not records:
            continue
        probs, failures = predict(model, [catalog.resolve(r) for r in records])
        for i, msg in failures:
            logger.warning("%s: skipping %s: %s", name, records[i].id, msg)
        bad = {i for i, _ in failures}
        keep = [i for i in range(len(records)) if i not in bad]
        path = out / "predictions" / f"{name}_{split.value}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_predictions([records[i].id for i in keep], probs[keep], path)
        produced[split] = arts.add(f"predictions/{name}/{split.value}", "predictions", path)
    return produced


def _ensemble(member_files: dict[str, dict], out: Path, arts: _Artifacts) -> dict:
    produced = {}
    splits = set.intersection(*(set(files) for files in member_files.values()))
    for split in PREDICT_SPLITS:
        if split not in splits:
            continue
        loaded = [read_predictions(files[split]) for files in member_files.values()]
        common = [i for i in loaded[0][0] if all(i in set(ids) for ids, _ in loaded[1:])]
        aligned = []
        for ids, probs in loaded:
            index = {record_id: k for k, record_id in enumerate(ids)}
            aligned.append(probs[[index[i] for i in common]])
        path = out / "predictions" / f"ensemble_{split.value}.csv"
        write_predictions(common, average_probabilities(aligned), path)
        produced[split] = arts.add(f"predictions/ensemble/{split.value}", "predictions", path)
    return produced


def _evaluate(config: PipelineConfig, catalog: Catalog, files: dict[str, Path], out: Path, arts: _Artifacts):
    split = Split(config.evaluation_split)
    truth = {r.id: r.label for r in catalog.select(split=split) if r.label is not None}
    if not truth:
        logger.info("no labeled %s records; skipping evaluation", split.value)
        return None
    reports = {}
    for name, path in files.items():
        ids, probs = read_predictions(path)
        scored = [k for k, i in enumerate(ids) if i in truth]
        labels, _ = decide_all(probs[scored])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reports[name] = evaluate([truth[ids[k]] for k in scored], labels)
        reports[name].confusion_to_csv(out / f"confusion_{name}.csv")
        arts.add(f"confusion/{name}", "evaluation", out / f"confusion_{name}.csv")
    path = write_reports(reports, out / "evaluation.csv")
    arts.add("evaluation", "evaluation", path)
    return reports


def _cross_validate(config: PipelineConfig, catalog: Catalog, out: Path, arts: _Artifacts) -> Path:
    folds = split_cv(catalog, k=config.cv_folds, seed=stage_seed(config.seed, "cv"))
    rows = []
    for name in config.baseline_members:
        for fold in range(config.cv_folds):
            cfg = config.classifier_config(name, f"cv/{name}/{fold}")
            model, _ = train(cfg, catalog, folds=folds)
            held = set(folds.held_out(fold))
            records = [r for r in catalog.select(split=Split.TRAIN_LABELED) if r.id in held]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = evaluate([r.label for r in records], model.predict([catalog.resolve(r) for r in records]))
            rows.append((name, fold, rep.macro_f1))
    path = out / "cv.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fold", "macro_f1"])
        writer.writerows([(n, f, repr(v)) for n, f, v in rows])
    return arts.add("cv", "evaluation", path)


def _echo_config(config: PipelineConfig, out: Path, arts: _Artifacts) -> None:
    path = out / "pipeline_config.yaml"
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    arts.add("config/pipeline", "config", path)


def fit_size(image: np.ndarray, size: int) -> np.ndarray:
    """Resize to ``size`` x ``size`` (area interpolation) unless already that size."""
    if image.shape[:2] == (size, size):
        return image
    return cv2.resize(image, (size, size), interpolation=cv2.INTER_AREA)


# ---------------------------------------------------------------- phases


def run_baseline(config: PipelineConfig) -> PhaseResult:
    out = _fresh_dir(config.output_dir / "baseline")
    arts = _Artifacts(out)
    _echo_config(config, out, arts)
    catalog = load_manifest(config.manifest)
    member_files = {}
    for name in config.baseline_members:
        cfg = config.classifier_config(name, f"baseline/{name}")
        member_files[name] = _train_and_predict(cfg, name, catalog, out, arts)
    ensemble_files = _ensemble(member_files, out, arts)

    split = Split(config.evaluation_split)
    eval_files = {n: f[split] for n, f in member_files.items() if split in f}
    if split in ensemble_files:
        eval_files["ensemble"] = ensemble_files[split]
    reports = _evaluate(config, catalog, eval_files, out, arts) if eval_files else None
    if config.cv_folds:
        _cross_validate(config, catalog, out, arts)

    lines = [f"baseline models: {', '.join(config.baseline_members)}"]
    if reports:
        lines.append(format_table({n: r.row() for n, r in reports.items()}))
    return _finish("baseline", out, arts, "\n".join(lines))


def run_extend(config: PipelineConfig) -> PhaseResult:
    base_dir = config.output_dir / "baseline"
    sources = [Split(s) for s in config.pseudo_sources]
    needed = [f"predictions/ensemble/{s.value}" for s in sources]
    _require(base_dir)
    catalog = load_manifest(config.manifest)
    needed = [n for n, s in zip(needed, sources) if catalog.select(split=s)]
    base_arts = _require(base_dir, *needed)

    out = _fresh_dir(config.output_dir / "extend")
    arts = _Artifacts(out)
    _echo_config(config, out, arts)

    # pseudo-labels
    ids, probs = [], []
    for name in needed:
        i, p = read_predictions(base_arts[name])
        ids.extend(i)
        probs.append(p)
    probs = np.concatenate(probs) if probs else np.zeros((0, len(CLASS_NAMES)))
    batch = filter_confident(ids, probs, config.pseudo_threshold)
    arts.add("pseudo_labels", "pseudo", batch.to_csv(out / "pseudo_labels.csv"))
    pseudo_catalog = extend_with_pseudo(catalog, batch, allow_test=Split.TEST in sources)
    arts.add("catalog_pseudo", "manifest", write_manifest(pseudo_catalog, out / "catalog_pseudo.csv"))
    before = class_distribution(catalog)
    after = class_distribution(pseudo_catalog)
    stats_text = format_stats(extension_stats(before, after))
    (out / "pseudo_stats.txt").write_text(stats_text + "\n")
    arts.add("pseudo_stats", "report", out / "pseudo_stats.txt")

    # edge masks from every labeled training image (real and pseudo)
    size = config.gan_config(ClassLabel.NONE).load_size
    training = pseudo_catalog.select(split=Split.TRAIN_LABELED)
    images, masks = {}, []
    for record in training:
        image = fit_size(as_image(pseudo_catalog.resolve(record)), size)
        images[record.id] = image
        masks.append(canny(image, config.canny, source_id=record.id, source_class=record.label))
    arts.add("masks", "manifest", write_mask_manifest(masks, out / "masks"))

    # balance plan
    plan = plan_balance(after, before)
    arts.add("accounting", "report", plan.to_csv(out / "accounting.csv"))
    (out / "accounting.txt").write_text(plan.format_table() + "\n")
    arts.add("accounting_table", "report", out / "accounting.txt")

    # one synthesis model per class, fed masks of every other class
    synthetic = []
    for label in ClassLabel:
        own = [m for m in masks if m.source_class is label]
        others = [m for m in masks if m.source_class is not label]
        if plan.quotas[label] == 0:
            continue
        if not own:
            raise DataError(f"class {label.key} has no training images to fit a synthesis model on")
        gan_cfg = config.gan_config(label)
        gan_dir = out / "gan"
        model, log = train_gan(gan_cfg, [(m, images[m.source_id]) for m in own], output_dir=gan_dir)
        arts.add(f"gan/{label.key}", "checkpoint", gan_dir / label.key / f"gan_epoch_{gan_cfg.total_epochs}.ckpt")
        arts.add(f"gan_config/{label.key}", "config", gan_cfg.save(gan_dir / label.key / "config.yaml"))
        arts.add(f"gan_losses/{label.key}", "log", log.to_csv(gan_dir / label.key / "losses.csv"))
        fakes = model.synthesize(others, seed=stage_seed(config.seed, f"synthesize/{label.key}"))
        for mask, fake in zip(others, fakes):
            rel = Path("synthetic") / label.key / synthetic_filename(mask.source_id)
            save_image(fake, out / rel)
            synthetic.append(
                ImageRecord(
                    id=synthetic_id(label, mask.source_id),
                    path=os.path.relpath((out / rel).resolve(), pseudo_catalog.root),
                    split=Split.TRAIN_LABELED,
                    label=label,
                    provenance=Provenance.SYNTHETIC,
                    source_class=mask.source_class,
                    width=size,
                    height=size,
                )
            )
    extended = pseudo_catalog.extend(synthetic)
    arts.add("catalog_extended", "manifest", write_manifest(extended, out / "catalog_extended.csv"))

    verification = verify_extension(plan, extended)
    (out / "verification.txt").write_text(str(verification) + "\n")
    arts.add("verification", "report", out / "verification.txt")
    if not verification.ok and config.strict_balance:
        _finish("extend", out, arts, "")
        raise DataError(f"extension does not match plan:\n{verification}")

    summary = "\n".join(
        [
            f"pseudo-labels accepted: {len(batch.accepted)} of {batch.n_inputs} at threshold {config.pseudo_threshold}",
            stats_text,
            plan.format_table(),
            f"verification: {verification}",
        ]
    )
    return _finish("extend", out, arts, summary)


def _best_baseline(config: PipelineConfig) -> str:
    if config.extended_base != "auto":
        return config.extended_base
    path = config.output_dir / "baseline" / "evaluation.csv"
    if path.exists():
        rows = read_reports(path)
        scored = [(rows[n]["macro_f1"], -k, n) for k, n in enumerate(config.baseline_members) if n in rows]
        if scored:
            return max(scored)[2]
    return config.baseline_members[0]


def run_extended(config: PipelineConfig) -> PhaseResult:
    ext_arts = _require(config.output_dir / "extend", "catalog_extended")
    catalog = load_manifest(ext_arts["catalog_extended"])
    out = _fresh_dir(config.output_dir / "extended")
    arts = _Artifacts(out)
    _echo_config(config, out, arts)
    base = _best_baseline(config)
    (out / "base_config.txt").write_text(f"{base}\n")
    arts.add("base_config", "config", out / "base_config.txt")

    member_files = {}
    for name, backbone in config.extended_members.items():
        cfg = config.classifier_config(base, f"extended/{name}", backbone=backbone, **config.extended_overrides)
        member_files[name] = _train_and_predict(cfg, name, catalog, out, arts)
    ensemble_files = _ensemble(member_files, out, arts)

    split = Split(config.evaluation_split)
    eval_files = {n: f[split] for n, f in member_files.items() if split in f}
    if split in ensemble_files:
        eval_files["ensemble"] = ensemble_files[split]
    reports = _evaluate(config, catalog, eval_files, out, arts) if eval_files else None
    lines = [f"extended models: {', '.join(config.extended_members)} (hyperparameters of {base})"]
    if reports:
        lines.append(format_table({n: r.row() for n, r in reports.items()}))
    return _finish("extended", out, arts, "\n".join(lines))


def _finish(phase: str, out: Path, arts: _Artifacts, summary: str) -> PhaseResult:
    (out / "summary.txt").write_text(summary + "\n")
    arts.add("summary", "report", out / "summary.txt")
    arts.write()
    return PhaseResult(phase, out, list(arts.items), summary)


_RUNNERS = {"baseline": run_baseline, "extend": run_extend, "extended": run_extended}


def run_phase(config: PipelineConfig, phase: str) -> PhaseResult:
    if phase not in _RUNNERS:
        raise ValueError(f"unknown phase {phase!r}; expected one of {', '.join(PHASES)}")
    torch.use_deterministic_algorithms(True, warn_only=True)
    start = time.perf_counter()
    result = _RUNNERS[phase](config)
    logger.info("phase %s finished in %.1f s", phase, time.perf_counter() - start)
    return result


# ---------------------------------------------------------------- report


def compare_evaluations(baseline_csv, extended_csv, model: str = "ensemble") -> str:
    """Side-by-side evaluation tables plus the gain of ``model`` in each score."""
    a, b = read_reports(baseline_csv), read_reports(extended_csv)
    rows = {f"baseline/{n}": r for n, r in a.items()}
    rows.update({f"extended/{n}": r for n, r in b.items()})
    lines = [format_table(rows)]
    if model in a and model in b:
        lines.append(f"gain of extended/{model} over baseline/{model}:")
        for metric in ("macro_f1", "weighted_f1", "accuracy"):
            delta = improvement(b[model][metric] / 100, a[model][metric] / 100)
            lines.append(f"  {metric:<12} {delta}")
    return "\n".join(lines)


def report(run_dir) -> str:
    """Consolidate whatever phases have run into ``<run_dir>/report.txt``."""
    run_dir = Path(run_dir)
    present = [p for p in PHASES if (run_dir / p / ARTIFACT_MANIFEST).exists()]
    if not present:
        missing = ", ".join(f"{p}/{ARTIFACT_MANIFEST}" for p in PHASES)
        raise DependencyError(f"no phase manifests in {run_dir}; missing: {missing}")
    sections = ["phases: " + ", ".join(f"{p} ({'done' if p in present else 'missing'})" for p in PHASES)]

    ext = run_dir / "extend"
    if "extend" in present:
        arts = read_artifacts(ext)
        pseudo = load_manifest(arts["catalog_pseudo"])
        before = class_distribution(pseudo, provenance=Provenance.REAL)
        after = class_distribution(pseudo)
        plan = plan_balance(after, before)
        sections.append("== pseudo-label accounting ==\n" + format_stats(extension_stats(before, after)))
        sections.append("== extension accounting ==\n" + plan.format_table())
        sections.append("== plan verification ==\n" + (ext / "verification.txt").read_text().strip())

    evals = {p: run_dir / p / "evaluation.csv" for p in ("baseline", "extended")}
    evals = {p: f for p, f in evals.items() if f.exists()}
    if len(evals) == 2:
        sections.append("== evaluation ==\n" + compare_evaluations(evals["baseline"], evals["extended"]))
    elif evals:
        phase, path = next(iter(evals.items()))
        sections.append(f"== evaluation ({phase}) ==\n" + format_table(read_reports(path)))

    cv = run_dir / "baseline" / "cv.csv"
    if cv.exists():
        with cv.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        lines = ["== cross-validation (macro F1, mean +- std over folds) =="]
        for name in dict.fromkeys(r["model"] for r in rows):
            vals = np.array([float(r["macro_f1"]) for r in rows if r["model"] == name]) * 100
            lines.append(f"{name}: {round_half_up(vals.mean())} +- {round_half_up(vals.std())}")
        lines.append(
            "note: near-duplicate images of one wound may fall into different folds, "
            "so fold scores can be optimistic"
        )
        sections.append("\n".join(lines))

    base_choice = run_dir / "extended" / "base_config.txt"
    if base_choice.exists():
        sections.append(f"extended models reuse the hyperparameters of: {base_choice.read_text().strip()}")
    for phase in present:
        echo = run_dir / phase / "pipeline_config.yaml"
        if echo.exists():
            sections.append(f"== config ({phase}) ==\n" + echo.read_text().strip())
            break
    text = "\n\n".join(sections) + "\n"
    (run_dir / "report.txt").write_text(text)
    return text
