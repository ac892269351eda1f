"""Detection evaluation math.

IoU, greedy detection-to-ground-truth matching, precision/recall,
interpolated average precision (area under the monotone precision-recall
envelope, or the 11-point variant), and the per-image class-set score used
to grade diagnosis quality from chat logs (true positive points).
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from .domain import BoundingBox, Detection, DiseaseClass, GroundTruthBox

AP_MODES = ("all_points", "eleven_point")


class MetricsError(ValueError):
    pass


class EmptyGroundTruth(MetricsError):
    """Score requested against no ground truth at all."""


@dataclass(frozen=True)
class MatchResult:
    """Counts from matching one class's detections against its ground truth.

    ``flags`` holds (confidence, is_tp) per detection, sorted by descending
    confidence with stable input order on ties.
    """

    tp: int
    fp: int
    fn: int
    flags: tuple[tuple[float, bool], ...]


@dataclass(frozen=True)
class PRCurve:
    """(recall, precision) after each detection in rank order."""

    points: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class APReport:
    """Per-class average precision over a test set.

    Classes that appear only in predictions have no defined AP; they are
    listed in ``undefined_classes`` and excluded from the mean rather than
    silently scored 0.
    """

    per_class_ap: dict[str, float]
    mean_ap: float
    per_class_counts: dict[str, tuple[int, int, int]]  # (tp, fp, fn)
    undefined_classes: tuple[str, ...] = ()


@dataclass(frozen=True)
class AtpRow:
    image_count: int
    point_sum: float

    @property
    def percent(self) -> float:
        return 100.0 * self.point_sum / self.image_count if self.image_count else 0.0


@dataclass(frozen=True)
class ATPReport:
    """Per-class image counts, point sums and percentages, plus a total row
    summing counts and points across the class rows."""

    per_class: dict[str, AtpRow]
    total: AtpRow


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0.0 for disjoint boxes."""
    ix_min = max(a.x_min, b.x_min)
    iy_min = max(a.y_min, b.y_min)
    ix_max = min(a.x_max, b.x_max)
    iy_max = min(a.y_max, b.y_max)
    if ix_min >= ix_max or iy_min >= iy_max:
        return 0.0
    inter = (ix_max - ix_min) * (iy_max - iy_min)
    union = a.area + b.area - inter
    return inter / union


def match_detections(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruthBox],
    cls: DiseaseClass,
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Greedy matching for one class.

    Detections are visited in descending confidence (stable on ties); each
    claims the still-unmatched ground truth with the highest IoU at or above
    the threshold. Duplicate hits on an already-claimed ground truth and
    detections that match nothing count as FP; unclaimed ground truths as FN.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise MetricsError(f"iou_threshold must be in (0,1), got {iou_threshold}")

    dets = [d for d in detections if d.cls == cls]
    gts = [g for g in ground_truths if g.cls == cls]
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)

    claimed: set[int] = set()
    flags: list[tuple[float, bool]] = []
    tp = 0
    for i in order:
        det = dets[i]
        best_j = -1
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if j in claimed:
                continue
            overlap = iou(det.box, gt.box)
            if overlap < iou_threshold:
                continue
            # Strict improvement keeps the earliest gt on IoU ties.
            if overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0:
            claimed.add(best_j)
            tp += 1
            flags.append((det.confidence, True))
        else:
            flags.append((det.confidence, False))

    fp = len(dets) - tp
    fn = len(gts) - tp
    return MatchResult(tp=tp, fp=fp, fn=fn, flags=tuple(flags))


def precision_recall(m: MatchResult) -> tuple[float, float]:
    """TP/(TP+FP) and TP/(TP+FN), each 0.0 when its denominator is 0."""
    precision = m.tp / (m.tp + m.fp) if (m.tp + m.fp) else 0.0
    recall = m.tp / (m.tp + m.fn) if (m.tp + m.fn) else 0.0
    return precision, recall


def pr_curve(flags: Sequence[tuple[float, bool]], total_gt: int) -> PRCurve:
    """Cumulative precision/recall after each ranked detection.

    ``flags`` must already be sorted by descending confidence.
    """
    if total_gt < 0:
        raise MetricsError(f"total_gt must be >= 0, got {total_gt}")
    if total_gt == 0:
        if flags:
            raise EmptyGroundTruth("AP is undefined with detections but no ground truth")
        return PRCurve(points=())
    for (conf_a, _), (conf_b, _) in zip(flags, flags[1:]):
        if conf_a < conf_b:
            raise MetricsError("flags must be sorted by descending confidence")
    points: list[tuple[float, float]] = []
    tp = 0
    for rank, (_, is_tp) in enumerate(flags, start=1):
        if is_tp:
            tp += 1
        points.append((tp / total_gt, tp / rank))
    return PRCurve(points=tuple(points))


def average_precision(curve: PRCurve, mode: str = "all_points") -> float:
    """Interpolated AP of a precision-recall curve.

    all_points: area under the monotone envelope, where precision at recall
    r is replaced by the maximum precision at any recall >= r.
    eleven_point: mean of the interpolated precision at recalls 0, 0.1 ... 1.
    """
    if mode not in AP_MODES:
        raise MetricsError(f"mode must be one of {AP_MODES}, got {mode!r}")
    if not curve.points:
        return 0.0

    recalls = [r for r, _ in curve.points]
    precisions = [p for _, p in curve.points]

    if mode == "eleven_point":
        total = 0.0
        for r in (i / 10 for i in range(11)):
            candidates = [p for rec, p in curve.points if rec >= r - 1e-12]
            total += max(candidates) if candidates else 0.0
        return total / 11.0

    # Monotone envelope with sentinels at recall 0 and 1.
    mrec = [0.0, *recalls, 1.0]
    mpre = [0.0, *precisions, 0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        if mrec[i] != mrec[i - 1]:
            ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return ap


def map_report(
    predictions: Mapping[str, Sequence[Detection]],
    ground_truths: Mapping[str, Sequence[GroundTruthBox]],
    iou_threshold: float = 0.5,
    mode: str = "all_points",
) -> APReport:
    """Per-class AP aggregated over all images, mean over ground-truth classes.

    ``predictions`` and ``ground_truths`` map image id to that image's boxes.
    Detections never compete across images. Classes with predictions but no
    ground truth anywhere are reported as undefined instead of entering the
    mean.
    """
    image_ids = sorted(set(predictions) | set(ground_truths))
    gt_classes: dict[str, DiseaseClass] = {}
    pred_classes: dict[str, DiseaseClass] = {}
    for image_id in image_ids:
        for gt in ground_truths.get(image_id, ()):
            gt_classes.setdefault(gt.cls.name, gt.cls)
        for det in predictions.get(image_id, ()):
            pred_classes.setdefault(det.cls.name, det.cls)

    per_class_ap: dict[str, float] = {}
    per_class_counts: dict[str, tuple[int, int, int]] = {}
    for name in sorted(gt_classes):
        cls = gt_classes[name]
        flags: list[tuple[float, bool]] = []
        total_gt = 0
        tp = fp = fn = 0
        for image_id in image_ids:
            m = match_detections(
                predictions.get(image_id, ()),
                ground_truths.get(image_id, ()),
                cls,
                iou_threshold,
            )
            flags.extend(m.flags)
            tp += m.tp
            fp += m.fp
            fn += m.fn
            total_gt += m.tp + m.fn
        flags.sort(key=lambda f: -f[0])
        per_class_ap[name] = average_precision(pr_curve(flags, total_gt), mode)
        per_class_counts[name] = (tp, fp, fn)

    undefined = tuple(sorted(set(pred_classes) - set(gt_classes)))
    mean_ap = sum(per_class_ap.values()) / len(per_class_ap) if per_class_ap else 0.0
    return APReport(
        per_class_ap=per_class_ap,
        mean_ap=mean_ap,
        per_class_counts=per_class_counts,
        undefined_classes=undefined,
    )


def atp_image_point(gt_classes: Iterable[str], pred_classes: Iterable[str]) -> float:
    """Score one image's predicted class set against its true class set.

    With n predicted classes present in the truth and m predicted classes
    absent from it, the image scores n/(n+m); no prediction at all scores 0.
    This single ratio covers the whole case analysis: all-correct gives 1,
    all-wrong or silent gives 0, a mix gives the correct fraction.
    """
    gt = {c.strip().lower() for c in gt_classes}
    pred = {c.strip().lower() for c in pred_classes}
    if not gt:
        raise EmptyGroundTruth("image has no ground-truth classes")
    n = len(pred & gt)
    m = len(pred - gt)
    if n + m == 0:
        return 0.0
    return n / (n + m)


def atp_report(samples: Sequence[tuple[Iterable[str], Iterable[str]]]) -> ATPReport:
    """Aggregate per-image points into per-class rows and a total row.

    Each sample is (ground-truth class set, predicted class set). An image's
    point is credited to every class in its ground-truth set, so per-class
    denominators stay equal to the number of images containing that class.
    The total row sums the class rows.
    """
    counts: dict[str, int] = {}
    points: dict[str, float] = {}
    for gt_classes, pred_classes in samples:
        gt = {c.strip().lower() for c in gt_classes}
        point = atp_image_point(gt, pred_classes)
        for name in gt:
            counts[name] = counts.get(name, 0) + 1
            points[name] = points.get(name, 0.0) + point

    per_class = {
        name: AtpRow(image_count=counts[name], point_sum=points[name])
        for name in sorted(counts)
    }
    total = AtpRow(
        image_count=sum(row.image_count for row in per_class.values()),
        point_sum=sum(row.point_sum for row in per_class.values()),
    )
    return ATPReport(per_class=per_class, total=total)
