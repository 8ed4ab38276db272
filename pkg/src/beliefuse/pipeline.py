"""End-to-end wiring: validation labeling, model training, corpus fusion."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import baselines, fusion
from .baselines import PlattModel, ScoreLikelihood, WeightVector
from .fusion import FusedDetection, build_detection_vectors
from .geometry import Detection, GroundTruthObject, MatchLabel, match_detections
from .trust import InsufficientData, TrustModel, build_trust_model

log = logging.getLogger(__name__)


def group_by_image(dets: list[Detection]) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for d in dets:
        out.setdefault(d.image_id, []).append(d)
    return out


def label_detections(
    dets: list[Detection],
    gts: list[GroundTruthObject],
    iou_threshold: float = 0.5,
    duplicate_policy: str = "undecided",
) -> list[tuple[Detection, MatchLabel]]:
    """Match one detector's detections image by image."""
    gts_by_image: dict[str, list[GroundTruthObject]] = {}
    for g in gts:
        gts_by_image.setdefault(g.image_id, []).append(g)
    labeled: list[tuple[Detection, MatchLabel]] = []
    for image_id, image_dets in sorted(group_by_image(dets).items()):
        labeled.extend(
            match_detections(
                image_dets,
                gts_by_image.get(image_id, []),
                iou_threshold,
                duplicate_policy,
            )
        )
    return labeled


def num_positives(gts: list[GroundTruthObject]) -> int:
    return sum(1 for g in gts if not g.difficult)


def build_trust_models(
    per_detector: dict[str, list[Detection]],
    gts: list[GroundTruthObject],
    class_label: str,
    bpd_exponent: float,
    iou_threshold: float = 0.5,
    duplicate_policy: str = "undecided",
) -> dict[str, TrustModel]:
    """One trust model per detector; detectors without usable data are
    skipped with a warning and simply do not participate in fusion."""
    n_pos = num_positives(gts)
    models: dict[str, TrustModel] = {}
    for det_id in sorted(per_detector):
        labeled = label_detections(
            per_detector[det_id], gts, iou_threshold, duplicate_policy
        )
        try:
            models[det_id] = build_trust_model(
                labeled, n_pos, det_id, class_label, bpd_exponent
            )
        except InsufficientData as exc:
            log.warning("skipping detector %s: %s", det_id, exc)
    return models


@dataclass
class BaselineModels:
    platt: dict[str, PlattModel] = field(default_factory=dict)
    weights: WeightVector | None = None
    likelihoods: dict[str, ScoreLikelihood] = field(default_factory=dict)
    prior_target: float = 0.5


def fit_baselines(
    per_detector: dict[str, list[Detection]],
    gts: list[GroundTruthObject],
    iou_threshold: float = 0.5,
    duplicate_policy: str = "undecided",
    overlap_threshold: float = 0.5,
) -> BaselineModels:
    """Fit Platt calibrators, the weighted-sum separator, and naive-Bayes
    likelihoods from the validation split."""
    out = BaselineModels()
    labeled_by_detector: dict[str, list[tuple[Detection, MatchLabel]]] = {}
    for det_id in sorted(per_detector):
        labeled = label_detections(
            per_detector[det_id], gts, iou_threshold, duplicate_policy
        )
        labeled_by_detector[det_id] = labeled
        scores = [(d.score, lab) for d, lab in labeled]
        try:
            out.platt[det_id] = baselines.fit_platt(scores, detector_id=det_id)
        except InsufficientData as exc:
            log.warning("skipping Platt model for %s: %s", det_id, exc)
            continue
        out.likelihoods[det_id] = baselines.fit_score_likelihood(
            scores, out.platt[det_id], detector_id=det_id
        )

    # Weighted sum trains on detection vectors labeled by their subject.
    labels_by_key = {
        (d.image_id, det_id, d.box.as_tuple()): lab
        for det_id, labeled in labeled_by_detector.items()
        for d, lab in labeled
    }
    training: list[tuple[fusion.DetectionVector, bool]] = []
    calibrated = {k: v for k, v in per_detector.items() if k in out.platt}
    for image_id, image_dets in sorted(
        group_by_image([d for dets in calibrated.values() for d in dets]).items()
    ):
        per_det = group_by_detector(image_dets)
        for vec in build_detection_vectors(per_det, overlap_threshold):
            s = vec.subject
            lab = labels_by_key[(s.image_id, s.detector_id, s.box.as_tuple())]
            if lab is MatchLabel.UNDECIDED:
                continue
            training.append((vec, lab is MatchLabel.TRUE_POSITIVE))
    try:
        out.weights = baselines.fit_weighted_sum(training, out.platt)
    except InsufficientData as exc:
        log.warning("weighted-sum training skipped: %s", exc)
    return out


def group_by_detector(dets: list[Detection]) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for d in dets:
        out.setdefault(d.detector_id, []).append(d)
    return out


def _fuse_one_image(args) -> list[FusedDetection]:
    per_det, models, class_label, method, thresholds, absent_policy = args
    overlap, nms_thr = thresholds
    return fusion.fuse_image(
        per_det,
        models,
        class_label,
        method=method,
        overlap_threshold=overlap,
        nms_threshold=nms_thr,
        absent_policy=absent_policy,
    )


def fuse_corpus(
    per_detector: dict[str, list[Detection]],
    models: dict[str, TrustModel],
    class_label: str,
    method: str = "dbf",
    overlap_threshold: float = 0.5,
    nms_threshold: float = 0.5,
    absent_policy: str = "vacuous",
    jobs: int = 1,
) -> list[FusedDetection]:
    """Fuse every image independently; results merged in image order."""
    all_dets = [d for dets in per_detector.values() for d in dets]
    work = [
        (
            group_by_detector(image_dets),
            models,
            class_label,
            method,
            (overlap_threshold, nms_threshold),
            absent_policy,
        )
        for _, image_dets in sorted(group_by_image(all_dets).items())
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fuse_one_image, work))
    else:
        results = [_fuse_one_image(w) for w in work]
    return [fd for image_result in results for fd in image_result]


def fuse_corpus_baseline(
    per_detector: dict[str, list[Detection]],
    models: BaselineModels,
    class_label: str,
    method: str,
    overlap_threshold: float = 0.5,
    nms_threshold: float = 0.5,
) -> list[FusedDetection]:
    """Run a baseline fusion method over a corpus, mirroring fuse_corpus.

    Baseline detections carry no joint mass function; only .score is set.
    """
    from .geometry import nms as nms_op

    if method not in ("platt", "ws", "bayes"):
        raise ValueError(f"unknown baseline method {method!r}")
    if method == "ws" and models.weights is None:
        raise InsufficientData("weighted-sum weights have not been trained")
    calibrated = {k: v for k, v in per_detector.items() if k in models.platt}
    all_dets = [d for dets in calibrated.values() for d in dets]
    fused: list[FusedDetection] = []
    for image_id, image_dets in sorted(group_by_image(all_dets).items()):
        per_det = group_by_detector(image_dets)
        rescored: list[Detection] = []
        for vec in build_detection_vectors(per_det, overlap_threshold):
            if method == "platt":
                score = baselines.platt_fuse(vec, models.platt)
            elif method == "ws":
                score = baselines.weighted_sum_fuse(vec, models.platt, models.weights)
            else:
                score = baselines.bayes_fuse(
                    vec, models.platt, models.likelihoods, models.prior_target
                )
            rescored.append(
                Detection(vec.subject.image_id, vec.subject.detector_id, vec.subject.box, score)
            )
        for d in nms_op(rescored, nms_threshold):
            fused.append(
                FusedDetection(
                    box=d.box,
                    image_id=d.image_id,
                    class_label=class_label,
                    score=d.score,
                    source_detector_id=d.detector_id,
                )
            )
    return fused
