"""Segmentation evaluation: pixel IoU family and instance-level mAP.

Class means cover the six instrument classes only; the background class
is tracked in the accumulator but excluded from every reported mean.
Classes absent from both prediction and ground truth across a whole
split are excluded from means rather than counted as zero.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionError, LabelError

CLASS_NAMES = ("BG", "LAV", "RAV", "LNH", "RNH", "ND", "WR")
NUM_CLASSES = len(CLASS_NAMES)
MIN_INSTANCE_AREA = 10

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int32)


class ConfusionAccumulator:
    """Streaming per-class pixel counts plus per-image presence records."""

    def __init__(self, num_classes=NUM_CLASSES):
        self.num_classes = num_classes
        self.intersection = np.zeros(num_classes, dtype=np.int64)
        self.pred_pixels = np.zeros(num_classes, dtype=np.int64)
        self.target_pixels = np.zeros(num_classes, dtype=np.int64)
        # per-image IoU sums over images where the class appears in
        # prediction or ground truth, for the presence-filtered mean
        self.image_iou_sum = np.zeros(num_classes, dtype=np.float64)
        self.image_presence = np.zeros(num_classes, dtype=np.int64)

    def update(self, pred, gt):
        """Accumulate one image pair; a 3-D batch is looped per image so
        the presence records stay per-image."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise DimensionError(
                f"prediction shape {pred.shape} != ground truth shape {gt.shape}"
            )
        if pred.ndim == 3:
            for i in range(pred.shape[0]):
                self.update(pred[i], gt[i])
            return self
        c = self.num_classes
        if pred.min() < 0 or pred.max() >= c or gt.min() < 0 or gt.max() >= c:
            raise LabelError(f"labels must lie in 0..{c - 1}")
        cm = np.bincount(
            (pred.reshape(-1) * c + gt.reshape(-1)).astype(np.int64),
            minlength=c * c,
        ).reshape(c, c)
        inter = np.diag(cm)
        pred_px = cm.sum(axis=1)
        gt_px = cm.sum(axis=0)
        self.intersection += inter
        self.pred_pixels += pred_px
        self.target_pixels += gt_px
        union = pred_px + gt_px - inter
        present = union > 0
        self.image_iou_sum[present] += inter[present] / union[present]
        self.image_presence += present
        return self

    def merge(self, other):
        self.intersection += other.intersection
        self.pred_pixels += other.pred_pixels
        self.target_pixels += other.target_pixels
        self.image_iou_sum += other.image_iou_sum
        self.image_presence += other.image_presence
        return self

    @property
    def union(self):
        return self.pred_pixels + self.target_pixels - self.intersection


def accumulate(pred, gt, acc: ConfusionAccumulator) -> ConfusionAccumulator:
    return acc.update(pred, gt)


def _instrument_values(acc, numer, denom):
    """Per-class ratio over instrument classes; absent classes -> None."""
    out = []
    for c in range(1, acc.num_classes):
        out.append(float(numer[c] / denom[c]) if denom[c] > 0 else None)
    return out


def iou_per_class(acc: ConfusionAccumulator):
    """Instrument-class IoUs as fractions; None where the class never occurs."""
    return _instrument_values(acc, acc.intersection, acc.union)


def _mean_pct(values):
    present = [v for v in values if v is not None]
    return 100.0 * float(np.mean(present)) if present else 0.0


def mciou(acc: ConfusionAccumulator) -> float:
    """Mean IoU over instrument classes that occur in the split, percent."""
    return _mean_pct(iou_per_class(acc))


def mdice(acc: ConfusionAccumulator) -> float:
    """Mean Dice over instrument classes that occur in the split, percent."""
    return _mean_pct(_instrument_values(
        acc, 2 * acc.intersection, acc.pred_pixels + acc.target_pixels))


def isi_iou(acc: ConfusionAccumulator) -> float:
    """Presence-filtered IoU: per class, the mean of per-image IoUs over
    images where the class appears in prediction or ground truth; then the
    mean over instrument classes, percent."""
    values = []
    for c in range(1, acc.num_classes):
        if acc.image_presence[c] > 0:
            values.append(acc.image_iou_sum[c] / acc.image_presence[c])
    return 100.0 * float(np.mean(values)) if values else 0.0


@dataclass
class Instance:
    label: int
    mask: np.ndarray  # bool (H, W)
    score: float

    @property
    def area(self):
        return int(self.mask.sum())


@dataclass
class InstanceSet:
    instances: list = field(default_factory=list)

    def of_class(self, label):
        return [i for i in self.instances if i.label == label]


def extract_instances(pred, prob=None, min_area=MIN_INSTANCE_AREA,
                      num_classes=NUM_CLASSES) -> InstanceSet:
    """8-connected components per instrument class, small ones dropped.

    ``prob`` is the (C, H, W) probability map used for confidence scoring
    (mean class probability over the component); without it every
    instance scores 1.0, which suits ground-truth masks.
    """
    pred = np.asarray(pred)
    out = InstanceSet()
    for c in range(1, num_classes):
        binary = pred == c
        if not binary.any():
            continue
        labeled, count = ndimage.label(binary, structure=_EIGHT_CONNECTED)
        for comp in range(1, count + 1):
            mask = labeled == comp
            if mask.sum() < min_area:
                continue
            score = float(prob[c][mask].mean()) if prob is not None else 1.0
            out.instances.append(Instance(c, mask, score))
    return out


def _mask_iou(a, b):
    inter = np.logical_and(a, b).sum()
    if inter == 0:
        return 0.0
    return inter / np.logical_or(a, b).sum()


def _average_precision(scores, is_tp, num_gt):
    """All-points interpolated area under the precision-recall curve."""
    if num_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.cumsum(np.asarray(is_tp, dtype=np.int64)[order])
    fp = np.cumsum(1 - np.asarray(is_tp, dtype=np.int64)[order])
    recall = tp / num_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def map_at(pred_sets, gt_sets, tau, num_classes=NUM_CLASSES) -> float:
    """Mean average precision at mask-IoU threshold tau, percent.

    Per class, predictions across all images are ranked by score and
    greedily matched one-to-one against unmatched ground-truth instances
    of the same image; the mean covers classes with at least one
    ground-truth instance.
    """
    if len(pred_sets) != len(gt_sets):
        raise DimensionError(
            f"{len(pred_sets)} prediction sets vs {len(gt_sets)} ground-truth sets"
        )
    aps = []
    for c in range(1, num_classes):
        entries = []  # (score, image index, instance)
        num_gt = 0
        gt_by_image = []
        for img, (ps, gs) in enumerate(zip(pred_sets, gt_sets)):
            gts = gs.of_class(c)
            gt_by_image.append(gts)
            num_gt += len(gts)
            for inst in ps.of_class(c):
                entries.append((inst.score, img, inst))
        if num_gt == 0:
            continue
        entries.sort(key=lambda e: -e[0])
        matched = [np.zeros(len(g), dtype=bool) for g in gt_by_image]
        scores, is_tp = [], []
        for score, img, inst in entries:
            best_iou, best_j = 0.0, -1
            for j, gt_inst in enumerate(gt_by_image[img]):
                if matched[img][j]:
                    continue
                iou = _mask_iou(inst.mask, gt_inst.mask)
                if iou > best_iou:
                    best_iou, best_j = iou, j
            hit = best_iou >= tau
            if hit:
                matched[img][best_j] = True
            scores.append(score)
            is_tp.append(hit)
        aps.append(_average_precision(scores, is_tp, num_gt))
    return 100.0 * float(np.mean(aps)) if aps else 0.0


@dataclass
class MetricsReport:
    """Split-level metric values, all as percentages."""

    iou_per_class: dict  # instrument class name -> percent or None
    mcIoU: float
    isi_iou: float
    mdice: float
    map50: float
    map95: float

    def to_dict(self):
        per_class = {name: self.iou_per_class[name]
                     for name in sorted(self.iou_per_class)}
        return {
            "mcIoU": self.mcIoU,
            "ISI-IoU": self.isi_iou,
            "mDice": self.mdice,
            "mAP50": self.map50,
            "mAP95": self.map95,
            "per_class": per_class,
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)


def build_report(acc: ConfusionAccumulator, pred_sets, gt_sets) -> MetricsReport:
    per_class = {}
    for name, iou in zip(CLASS_NAMES[1:], iou_per_class(acc)):
        per_class[name] = None if iou is None else 100.0 * iou
    return MetricsReport(
        iou_per_class=per_class,
        mcIoU=mciou(acc),
        isi_iou=isi_iou(acc),
        mdice=mdice(acc),
        map50=map_at(pred_sets, gt_sets, 0.50),
        map95=map_at(pred_sets, gt_sets, 0.95),
    )
