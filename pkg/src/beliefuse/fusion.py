"""Combined detection vectors and the fused-detection pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import dst
from .dst import Bpa, FusedVerdict, TotalConflict, combine_all
from .geometry import BoundingBox, Detection, iou, nms
from .trust import TrustModel

log = logging.getLogger(__name__)

# Degenerate trust tables can produce certain-and-contradictory masses;
# pipeline policy is to smooth and retry rather than fail the run.
conflict_smoothing_count = 0

_EPS = 1e-6


@dataclass(frozen=True)
class DetectionVector:
    """Per-subject-window vector of matched scores, one slot per detector.

    Only present slots appear in the mapping; the subject's own slot is
    always present and equal to its raw score.
    """

    subject: Detection
    slots: dict[str, float]

    def __post_init__(self):
        own = self.slots.get(self.subject.detector_id)
        if own != self.subject.score:
            raise ValueError("subject's own slot must hold its raw score")


@dataclass(frozen=True)
class FusedDetection:
    """A consolidated window with its fused score.

    ``verdict`` carries the joint mass function for belief-based methods;
    baseline methods set the score directly and leave it None.
    """

    box: BoundingBox
    image_id: str
    class_label: str
    score: float
    verdict: FusedVerdict | None = None
    source_detector_id: str = ""


def build_detection_vectors(
    per_detector: dict[str, list[Detection]],
    overlap_threshold: float = 0.5,
) -> list[DetectionVector]:
    """One vector per input detection; every detection is a subject once.

    For each other detector the slot holds the maximum score among its
    windows overlapping the subject beyond the threshold; the slot is
    absent when no such window exists.
    """
    vectors: list[DetectionVector] = []
    detector_ids = sorted(per_detector)
    for det_id in detector_ids:
        for subject in per_detector[det_id]:
            slots: dict[str, float] = {det_id: subject.score}
            for other_id in detector_ids:
                if other_id == det_id:
                    continue
                best = None
                for cand in per_detector[other_id]:
                    if iou(subject.box, cand.box) > overlap_threshold:
                        if best is None or cand.score > best:
                            best = cand.score
                if best is not None:
                    slots[other_id] = best
            vectors.append(DetectionVector(subject=subject, slots=slots))
    return vectors


def _smooth(b: Bpa) -> Bpa:
    masses = [min(max(m, _EPS), 1.0 - _EPS) for m in b.as_tuple()]
    total = sum(masses)
    return Bpa(*(m / total for m in masses))


def _combine_with_recovery(bpas: list[Bpa]) -> Bpa:
    global conflict_smoothing_count
    try:
        return combine_all(bpas)
    except TotalConflict:
        conflict_smoothing_count += 1
        log.warning("total conflict during combination; smoothing masses")
        return combine_all([_smooth(b) for b in bpas])


def _fuse_bpas(bpas: list[Bpa]) -> FusedVerdict:
    informative = [b for b in bpas if not b.is_vacuous()]
    if not informative:
        return FusedVerdict(dst.vacuous())
    return FusedVerdict(_combine_with_recovery(informative))


def dbf_fuse(
    vector: DetectionVector,
    models: dict[str, TrustModel],
    absent_policy: str = "vacuous",
) -> FusedVerdict:
    """Dynamic belief fusion of one detection vector.

    Present slots map through their detector's trust model; absent slots
    contribute the vacuous mass (combination identity) by default, or the
    full-recall assignment under ``absent_policy="recall_one"``.
    """
    if absent_policy not in ("vacuous", "recall_one"):
        raise ValueError(f"unknown absent_policy {absent_policy!r}")
    bpas: list[Bpa] = []
    for det_id, model in sorted(models.items()):
        if det_id in vector.slots:
            bpas.append(model.score_to_bpa(vector.slots[det_id]))
        elif absent_policy == "recall_one":
            bpas.append(model.assignment_at(1.0, model.table[-1].precision))
    return _fuse_bpas(bpas)


def static_dst_fuse(
    vector: DetectionVector,
    models: dict[str, TrustModel],
    recall_anchor: float = 0.2,
) -> FusedVerdict:
    """Static assignment baseline: each present slot contributes its
    detector's fixed mass at the anchor-recall table row, score ignored."""
    bpas = [
        model.static_bpa(recall_anchor)
        for det_id, model in sorted(models.items())
        if det_id in vector.slots
    ]
    return _fuse_bpas(bpas)


def fuse_image(
    per_detector: dict[str, list[Detection]],
    models: dict[str, TrustModel],
    class_label: str,
    method: str = "dbf",
    overlap_threshold: float = 0.5,
    nms_threshold: float = 0.5,
    absent_policy: str = "vacuous",
) -> list[FusedDetection]:
    """Rescore one image's windows by fusion, then consolidate with NMS."""
    if method not in ("dbf", "static-dst"):
        raise ValueError(f"unknown fusion method {method!r}")
    vectors = build_detection_vectors(per_detector, overlap_threshold)
    rescored: list[Detection] = []
    verdicts: dict[tuple, FusedVerdict] = {}
    for vec in vectors:
        if method == "dbf":
            verdict = dbf_fuse(vec, models, absent_policy)
        else:
            verdict = static_dst_fuse(vec, models)
        d = Detection(
            image_id=vec.subject.image_id,
            detector_id=vec.subject.detector_id,
            box=vec.subject.box,
            score=verdict.score,
        )
        rescored.append(d)
        verdicts[(d.detector_id, d.box.as_tuple())] = verdict
    survivors = nms(rescored, nms_threshold)
    return [
        FusedDetection(
            box=d.box,
            image_id=d.image_id,
            class_label=class_label,
            score=d.score,
            verdict=verdicts[(d.detector_id, d.box.as_tuple())],
            source_detector_id=d.detector_id,
        )
        for d in survivors
    ]
