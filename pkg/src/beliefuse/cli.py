"""Command-line entry point for the late-fusion pipeline.

Commands: generate a synthetic benchmark, build trust models, train
baseline models, fuse detections, evaluate detection files, and sweep the
best-possible-detector exponent. All commands are deterministic given their
config, and every output file embeds the resolved config as provenance.

Exit codes: 0 success, 2 config error, 3 data error, 4 missing model.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import baselines as bl
from . import datagen, evaluation, io, pipeline
from .datagen import ConfigError, SyntheticDetectorProfile
from .io import DataError
from .trust import TrustModel

log = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4


@dataclass
class RunConfig:
    detections_dir: str = ""
    annotations: str = ""
    models_dir: str = ""
    out: str = ""
    bpd_exponent: float = 2.0
    match_iou: float = 0.5
    vector_iou: float = 0.5
    nms_iou: float = 0.5
    absent_policy: str = "vacuous"
    duplicate_policy: str = "undecided"
    ap_interpolation: str = "all-points"
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        for name in ("match_iou", "vector_iou", "nms_iou"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must be in (0,1), got {v}")
        if not self.bpd_exponent > 0:
            raise ConfigError(f"n must be positive or 'inf', got {self.bpd_exponent}")
        if self.absent_policy not in ("vacuous", "recall_one"):
            raise ConfigError(f"bad absent_policy {self.absent_policy!r}")
        if self.duplicate_policy not in ("undecided", "false_positive"):
            raise ConfigError(f"bad duplicate_policy {self.duplicate_policy!r}")
        if self.ap_interpolation not in ("all-points", "11-point"):
            raise ConfigError(f"bad ap_interpolation {self.ap_interpolation!r}")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(self.bpd_exponent):
            d["bpd_exponent"] = "inf"
        return d


def _parse_n(raw: str) -> float:
    if raw.strip().lower() == "inf":
        return math.inf
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse n value {raw!r}")


def _resolve_config(config_file: str | None, **flags) -> RunConfig:
    """Precedence: CLI flags > config file > defaults."""
    cfg = RunConfig()
    if config_file:
        try:
            file_values = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}")
        for key, value in file_values.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config key {key!r}")
            if key == "bpd_exponent":
                value = _parse_n(str(value))
            setattr(cfg, key, value)
    for key, value in flags.items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.jobs == 0:
        cfg.jobs = int(os.environ.get("BELIEFUSE_JOBS", "1"))
    cfg.validate()
    return cfg


def _load_detections_dir(detections_dir: str) -> dict[str, dict[str, list]]:
    """-> class -> detector_id -> detections."""
    root = Path(detections_dir)
    if not root.is_dir():
        raise DataError(f"detections dir {detections_dir} does not exist")
    # Split directories keep their ground truth alongside the detector files.
    files = sorted(f for f in root.glob("*.jsonl") if f.name != "annotations.jsonl")
    if not files:
        raise DataError(f"no .jsonl detection files in {detections_dir}")
    per_class: dict[str, dict[str, list]] = {}
    for f in files:
        for cls, dets in io.read_detections_by_class(f).items():
            bucket = per_class.setdefault(cls, {})
            for d in dets:
                bucket.setdefault(d.detector_id, []).append(d)
    return per_class


def _trust_model_path(models_dir: Path, detector_id: str, class_label: str) -> Path:
    return models_dir / f"trust__{detector_id}__{class_label}.json"


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Late fusion of object-detector outputs via dynamic belief assignment."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _common_options(fn):
    options = [
        click.option("--detections-dir", type=str, default=None),
        click.option("--annotations", type=str, default=None),
        click.option("--models-dir", type=str, default=None),
        click.option("--out", type=str, default=None),
        click.option("--config", "config_file", type=str, default=None,
                     help="JSON config file; CLI flags take precedence."),
        click.option("--n", "n_raw", type=str, default=None,
                     help="Best-possible-detector exponent (positive or 'inf')."),
        click.option("--seed", type=int, default=None),
        click.option("--absent-policy", type=click.Choice(["vacuous", "recall_one"]), default=None),
        click.option("--duplicate-policy", type=click.Choice(["undecided", "false_positive"]), default=None),
        click.option("--ap-interp", "ap_interpolation", type=click.Choice(["all-points", "11-point"]), default=None),
        click.option("--jobs", type=int, default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _build_cfg(config_file, n_raw, **flags) -> RunConfig:
    if n_raw is not None:
        flags["bpd_exponent"] = _parse_n(n_raw)
    return _resolve_config(config_file, **flags)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@main.command("generate")
@click.option("--out-dir", required=True, type=str)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--num-images", type=int, default=300, show_default=True)
@click.option("--num-detectors", type=int, default=3, show_default=True)
def cmd_generate(out_dir: str, seed: int, num_images: int, num_detectors: int):
    """Generate a complementary synthetic benchmark on disk."""
    try:
        profiles = default_profiles(num_detectors)
        dataset = datagen.generate(seed, num_images, profiles)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    root = Path(out_dir)
    (root / "validation").mkdir(parents=True, exist_ok=True)
    (root / "test").mkdir(parents=True, exist_ok=True)
    provenance = {"seed": seed, "num_images": num_images, "num_detectors": num_detectors}
    for det_id in sorted(dataset.detections):
        for split, ids in (
            ("validation", dataset.validation_image_ids),
            ("test", dataset.test_image_ids),
        ):
            io.write_detections(
                dataset.detections_for(det_id, ids),
                root / split / f"{det_id}.jsonl",
                class_label=dataset.class_label,
                config=provenance,
            )
    io.write_annotations(dataset.ground_truths(), root / "annotations.jsonl", config=provenance)
    io.write_annotations(
        dataset.ground_truths(dataset.validation_image_ids),
        root / "validation" / "annotations.jsonl",
        config=provenance,
    )
    io.write_annotations(
        dataset.ground_truths(dataset.test_image_ids),
        root / "test" / "annotations.jsonl",
        config=provenance,
    )
    click.echo(f"wrote synthetic benchmark to {out_dir}")


def default_profiles(num_detectors: int) -> list[SyntheticDetectorProfile]:
    """Complementary profiles: each detector is strong on its own object group."""
    if num_detectors < 1:
        raise ConfigError("need at least one detector")
    profiles = []
    for k in range(num_detectors):
        profiles.append(
            SyntheticDetectorProfile(
                detector_id=f"det_{chr(ord('a') + k)}",
                tp_score_mean=6.0 + 0.4 * k,
                tp_score_std=1.2,
                fp_score_mean=3.0,
                fp_score_std=1.2,
                detection_rate=0.35,
                easy_group=k,
                easy_detection_rate=0.9,
                fp_rate=1.5,
                localization_jitter=3.0,
            )
        )
    return profiles


@main.command("build-trust")
@_common_options
def cmd_build_trust(config_file, n_raw, **flags):
    """Build one trust model file per (detector, class) from validation data."""
    try:
        cfg = _build_cfg(config_file, n_raw, **flags)
        per_class = _load_detections_dir(cfg.detections_dir)
        gts = io.read_annotations(cfg.annotations)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    models_dir = Path(cfg.models_dir)
    models_dir.mkdir(parents=True, exist_ok=True)
    built = 0
    for cls in sorted(per_class):
        class_gts = [g for g in gts if g.class_label == cls]
        models = pipeline.build_trust_models(
            per_class[cls], class_gts, cls, cfg.bpd_exponent,
            cfg.match_iou, cfg.duplicate_policy,
        )
        for det_id, model in sorted(models.items()):
            payload = model.to_dict()
            payload["config"] = cfg.as_dict()
            path = _trust_model_path(models_dir, det_id, cls)
            path.write_text(json.dumps(payload, indent=2) + "\n")
            built += 1
            click.echo(
                f"{det_id}/{cls}: {len(model.table)} rows, "
                f"{model.num_validation_positives} positives, "
                f"max precision {max(p.precision for p in model.table):.3f}"
            )
    if built == 0:
        _fail(EXIT_DATA, "no trust model could be built from the validation data")


@main.command("build-baselines")
@_common_options
def cmd_build_baselines(config_file, n_raw, **flags):
    """Train Platt, weighted-sum, and naive-Bayes models from validation data."""
    try:
        cfg = _build_cfg(config_file, n_raw, **flags)
        per_class = _load_detections_dir(cfg.detections_dir)
        gts = io.read_annotations(cfg.annotations)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    models_dir = Path(cfg.models_dir)
    models_dir.mkdir(parents=True, exist_ok=True)
    for cls in sorted(per_class):
        class_gts = [g for g in gts if g.class_label == cls]
        models = pipeline.fit_baselines(
            per_class[cls], class_gts, cfg.match_iou, cfg.duplicate_policy, cfg.vector_iou
        )
        for det_id in sorted(models.platt):
            bl.save_model(models.platt[det_id], models_dir / f"platt__{det_id}__{cls}.json")
            bl.save_model(
                models.likelihoods[det_id], models_dir / f"bayes__{det_id}__{cls}.json"
            )
        if models.weights is not None:
            bl.save_model(models.weights, models_dir / f"ws__{cls}.json")
        click.echo(f"{cls}: {len(models.platt)} Platt models, ws={'yes' if models.weights else 'no'}")


def _load_trust_models(models_dir: Path, cls: str, detector_ids: list[str]) -> dict[str, TrustModel]:
    models = {}
    for det_id in detector_ids:
        path = _trust_model_path(models_dir, det_id, cls)
        if path.exists():
            models[det_id] = TrustModel.load(path)
    return models


def _load_baseline_models(models_dir: Path, cls: str, detector_ids: list[str], method: str) -> pipeline.BaselineModels:
    models = pipeline.BaselineModels()
    for det_id in detector_ids:
        platt_path = models_dir / f"platt__{det_id}__{cls}.json"
        if platt_path.exists():
            models.platt[det_id] = bl.load_model(platt_path)
        bayes_path = models_dir / f"bayes__{det_id}__{cls}.json"
        if bayes_path.exists():
            models.likelihoods[det_id] = bl.load_model(bayes_path)
    if not models.platt:
        raise FileNotFoundError(f"no Platt model files for class {cls} in {models_dir}")
    if method == "ws":
        ws_path = models_dir / f"ws__{cls}.json"
        if not ws_path.exists():
            raise FileNotFoundError(f"missing weighted-sum weights file {ws_path}")
        models.weights = bl.load_model(ws_path)
    if method == "bayes" and not models.likelihoods:
        raise FileNotFoundError(f"no Bayes likelihood files for class {cls} in {models_dir}")
    return models


@main.command("fuse")
@click.option("--method", type=click.Choice(["dbf", "static-dst", "platt", "ws", "bayes"]), default="dbf", show_default=True)
@_common_options
def cmd_fuse(method, config_file, n_raw, **flags):
    """Fuse a detections directory into one JSON-lines output file."""
    try:
        cfg = _build_cfg(config_file, n_raw, **flags)
        per_class = _load_detections_dir(cfg.detections_dir)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    models_dir = Path(cfg.models_dir)
    fused_all = []
    try:
        for cls in sorted(per_class):
            detector_ids = sorted(per_class[cls])
            if method in ("dbf", "static-dst"):
                models = _load_trust_models(models_dir, cls, detector_ids)
                if not models:
                    raise FileNotFoundError(
                        f"no trust model files for class {cls} in {models_dir}"
                    )
                fused_all.extend(
                    pipeline.fuse_corpus(
                        per_class[cls], models, cls, method,
                        cfg.vector_iou, cfg.nms_iou, cfg.absent_policy, cfg.jobs,
                    )
                )
            else:
                models = _load_baseline_models(models_dir, cls, detector_ids, method)
                fused_all.extend(
                    pipeline.fuse_corpus_baseline(
                        per_class[cls], models, cls, method, cfg.vector_iou, cfg.nms_iou
                    )
                )
    except FileNotFoundError as exc:
        _fail(EXIT_MODEL, str(exc))
    fused_all.sort(key=lambda f: (f.class_label, f.image_id, -f.score, f.box.as_tuple()))
    provenance = cfg.as_dict()
    provenance["method"] = method
    io.write_fused(fused_all, cfg.out, config=provenance)
    click.echo(f"wrote {len(fused_all)} fused detections to {cfg.out}")


@main.command("eval")
@click.option("--inputs", "-i", "inputs", multiple=True, required=True,
              help="name=path pairs of fused or raw detection files to score.")
@_common_options
def cmd_eval(inputs, config_file, n_raw, **flags):
    """Evaluate detection files against annotations (AP / mAP, JSON + CSV)."""
    try:
        cfg = _build_cfg(config_file, n_raw, **flags)
        gts = io.read_annotations(cfg.annotations)
        methods = {}
        for item in inputs:
            if "=" not in item:
                raise ConfigError(f"--inputs expects name=path, got {item!r}")
            name, path = item.split("=", 1)
            methods[name] = _read_any_detections(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    reports = evaluation.evaluate_methods(
        methods, gts, cfg.match_iou, cfg.ap_interpolation
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_reports_json(reports, out / "report.json", config=cfg.as_dict())
    evaluation.write_reports_csv(reports, out / "report.csv")
    for name in sorted(reports):
        click.echo(f"{name}: mAP {reports[name].map_score:.4f}")


def _read_any_detections(path: str):
    """Fused files carry a class per line; raw detector files do too."""
    text = Path(path).read_text().strip().splitlines()
    for line in text:
        obj = json.loads(line)
        if "_header" in obj:
            continue
        if "detector_id" in obj:
            return io.read_detections(path)
        return io.read_fused(path)
    return []


@main.command("sweep-n")
@click.option("--n-values", required=True, type=str,
              help="Comma-separated exponents, e.g. '1,2,4,8,inf'.")
@click.option("--method", type=click.Choice(["dbf", "static-dst"]), default="dbf", show_default=True)
@click.option("--test-detections-dir", type=str, default=None,
              help="Detections to fuse and score; defaults to --detections-dir.")
@click.option("--test-annotations", type=str, default=None,
              help="Ground truth for scoring; defaults to --annotations.")
@_common_options
def cmd_sweep_n(n_values, method, test_detections_dir, test_annotations, config_file, n_raw, **flags):
    """Rebuild trust models and refuse for each exponent; CSV of AP per class."""
    try:
        cfg = _build_cfg(config_file, n_raw, **flags)
        values = [_parse_n(v) for v in n_values.split(",") if v.strip()]
        if not values:
            raise ConfigError("empty n-values list")
        per_class_val = _load_detections_dir(cfg.detections_dir)
        gts = io.read_annotations(cfg.annotations)
        per_class_test = (
            _load_detections_dir(test_detections_dir)
            if test_detections_dir
            else per_class_val
        )
        test_gts = (
            io.read_annotations(test_annotations) if test_annotations else gts
        )
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))

    rows = []
    for n in values:
        per_class_ap = {}
        for cls in sorted(per_class_val):
            class_gts = [g for g in gts if g.class_label == cls]
            models = pipeline.build_trust_models(
                per_class_val[cls], class_gts, cls, n, cfg.match_iou, cfg.duplicate_policy
            )
            fused = pipeline.fuse_corpus(
                per_class_test.get(cls, {}), models, cls, method,
                cfg.vector_iou, cfg.nms_iou, cfg.absent_policy, cfg.jobs,
            )
            report = evaluation.evaluate_method(
                fused,
                [g for g in test_gts if g.class_label == cls],
                cfg.match_iou,
                cfg.ap_interpolation,
            )
            per_class_ap[cls] = report.per_class_ap.get(cls, 0.0)
        n_label = "inf" if math.isinf(n) else f"{n:g}"
        for cls in sorted(per_class_ap):
            rows.append((n_label, cls, per_class_ap[cls]))
        rows.append((n_label, "mAP", sum(per_class_ap.values()) / len(per_class_ap)))

    with open(cfg.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# config", json.dumps(cfg.as_dict(), sort_keys=True)])
        writer.writerow(["n", "class", "ap"])
        for n_label, cls, ap in rows:
            writer.writerow([n_label, cls, f"{ap:.6f}"])
    click.echo(f"wrote sweep results to {cfg.out}")


if __name__ == "__main__":
    main()
