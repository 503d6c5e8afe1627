"""Class weighting and the composite training objective.

The objective combines a class-weighted cross entropy, a soft Dice term,
and a focal Tversky term on the final pass, plus an auxiliary per-pass
term (weighted CE + soft IoU) that supervises every feedback iteration
with linearly growing weights.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateFrequencyError, LabelError
from .model import iteration_weights
from .tensor import Tensor, clamp_min, softmax_channel, take_channel, tlog

EPS = 1e-6
LOG_FLOOR = 1e-12

WEIGHT_MODES = ("uniform", "mfb", "nmfb")


@dataclass
class ClassWeights:
    w_cls: np.ndarray  # (C,) float64, all >= 0
    mode: str

    def __len__(self):
        return len(self.w_cls)


@dataclass
class LossBundle:
    """Component values of one objective evaluation plus its coefficients."""

    L_CE: float = 0.0
    L_Dice: float = 0.0
    L_FTL: float = 0.0
    L_SEG: float = 0.0
    L_IFL: float = 0.0
    L_total: float = 0.0
    lambda_ce: float = 10.0
    lambda_dice: float = 4.0
    lambda_ftl: float = 0.3
    alpha: float = 0.3
    beta: float = 0.7
    gamma: float = 4.0 / 3.0
    ifl_lambda_ce: float = 1.0
    ifl_lambda_iou: float = 1.0


def compute_class_weights(masks, mode, num_classes=7) -> ClassWeights:
    """Median-frequency-balancing weights from a set of label masks.

    The frequency of class c is its total pixel count divided by the
    total pixel count of the images that contain c. Mode ``mfb`` divides
    the median frequency by each class frequency; ``nmfb`` rescales those
    weights to mean 1.
    """
    if mode not in WEIGHT_MODES:
        raise ContractError(f"weight mode must be one of {WEIGHT_MODES}, got {mode!r}")
    if mode == "uniform":
        return ClassWeights(np.ones(num_classes, dtype=np.float64), mode)
    class_pixels = np.zeros(num_classes, dtype=np.int64)
    containing_pixels = np.zeros(num_classes, dtype=np.int64)
    for mask in masks:
        m = np.asarray(mask)
        counts = np.bincount(m.reshape(-1), minlength=num_classes)
        if len(counts) > num_classes:
            bad = int(np.max(m))
            raise LabelError(f"mask label {bad} outside 0..{num_classes - 1}")
        class_pixels += counts
        containing_pixels += (counts > 0) * m.size
    absent = np.nonzero(containing_pixels == 0)[0]
    if len(absent):
        raise DegenerateFrequencyError(
            f"class {int(absent[0])} appears in no mask; "
            f"frequency weighting is undefined"
        )
    freq = class_pixels / containing_pixels
    w = np.median(freq) / freq
    if mode == "nmfb":
        w = w / w.mean()
    return ClassWeights(w, mode)


def one_hot(y: np.ndarray, num_classes: int) -> np.ndarray:
    """Label mask (N,H,W) to float32 one-hot planes (N,C,H,W)."""
    y = np.asarray(y)
    if y.min() < 0 or y.max() >= num_classes:
        raise LabelError(
            f"labels must lie in 0..{num_classes - 1}, "
            f"found range {int(y.min())}..{int(y.max())}"
        )
    out = np.zeros((y.shape[0], num_classes) + y.shape[1:], dtype=np.float32)
    np.put_along_axis(out, y[:, None].astype(np.int64), 1.0, axis=1)
    return out


def _check_labels(y, num_classes):
    y = np.asarray(y)
    if y.min() < 0 or y.max() >= num_classes:
        raise LabelError(
            f"labels must lie in 0..{num_classes - 1}, "
            f"found range {int(y.min())}..{int(y.max())}"
        )
    return y.astype(np.int64)


def weighted_ce(z: Tensor, y: np.ndarray, weights: ClassWeights) -> Tensor:
    """Mean over pixels of -w(y_i) * log softmax(z)_{y_i}, log floored at 1e-12."""
    num_classes = z.data.shape[1]
    if len(weights) != num_classes:
        raise ContractError(
            f"{len(weights)} class weights for {num_classes} logit channels"
        )
    y = _check_labels(y, num_classes)
    p = softmax_channel(z)
    py = take_channel(p, y)
    wmap = Tensor(weights.w_cls[y].astype(z.data.dtype))
    return -((wmap * tlog(clamp_min(py, LOG_FLOOR))).mean())


def _class_sums(t: Tensor) -> Tensor:
    return t.sum(axis=(0, 2, 3))


def dice_loss(p: Tensor, y_onehot) -> Tensor:
    """1 - mean over classes of 2|p.y| / (|p| + |y| + eps)."""
    y = y_onehot if isinstance(y_onehot, Tensor) else Tensor(y_onehot)
    inter = _class_sums(p * y)
    denom = _class_sums(p) + _class_sums(y) + EPS
    return 1.0 - (2.0 * inter / denom).mean()


def focal_tversky(p: Tensor, y_onehot, weights: ClassWeights,
                  alpha=0.3, beta=0.7, gamma=4.0 / 3.0) -> Tensor:
    """Mean over classes of w_c * (1 - Tversky index)^gamma.

    The Tversky index penalizes false positives by alpha and false
    negatives by beta; gamma > 1 focuses the loss on poorly segmented
    classes.
    """
    y = y_onehot if isinstance(y_onehot, Tensor) else Tensor(y_onehot)
    tp = _class_sums(p * y)
    fp = _class_sums(p * (1.0 - y))
    fn = _class_sums((1.0 - p) * y)
    ti = tp / (tp + alpha * fp + beta * fn + EPS)
    w = Tensor(weights.w_cls.astype(p.data.dtype))
    return (w * (1.0 - ti) ** gamma).mean()


def seg_loss(z_final: Tensor, y: np.ndarray, weights: ClassWeights,
             lambda_ce=10.0, lambda_dice=4.0, lambda_ftl=0.3) -> Tensor:
    """Final-pass objective: 10*CE + 4*Dice + 0.3*FTL."""
    p = softmax_channel(z_final)
    yoh = one_hot(y, z_final.data.shape[1])
    return (lambda_ce * weighted_ce(z_final, y, weights)
            + lambda_dice * dice_loss(p, yoh)
            + lambda_ftl * focal_tversky(p, yoh, weights))


def soft_miou(p: Tensor, y_onehot) -> Tensor:
    """Mean over classes of soft intersection / soft union."""
    y = y_onehot if isinstance(y_onehot, Tensor) else Tensor(y_onehot)
    inter = _class_sums(p * y)
    union = _class_sums(p + y - p * y) + EPS
    return (inter / union).mean()


def ifl(z_all, y: np.ndarray, weights: ClassWeights, eta) -> Tensor:
    """Per-pass auxiliary loss: sum_t eta_t * (CE^(t) + 1 - soft mIoU^(t))."""
    if len(eta) != len(z_all):
        raise ContractError(
            f"got {len(eta)} iteration weights for {len(z_all)} logit sets"
        )
    yoh = one_hot(y, z_all[0].data.shape[1])
    total = None
    for eta_t, z in zip(eta, z_all):
        miou = soft_miou(softmax_channel(z), yoh)
        term = eta_t * (weighted_ce(z, y, weights) + (1.0 - miou))
        total = term if total is None else total + term
    return total


def total_loss(outputs, y: np.ndarray, weights: ClassWeights,
               use_ftl=True, use_ifl=True, iter_w=0.1):
    """Full objective over an IterationOutputs; returns (loss, LossBundle).

    The returned Tensor backpropagates; the bundle carries float component
    values for logging. Disabled terms log as zero and do not contribute.
    """
    z_final = outputs.logits[-1]
    num_classes = z_final.data.shape[1]
    bundle = LossBundle()

    ce = weighted_ce(z_final, y, weights)
    p = softmax_channel(z_final)
    yoh = one_hot(y, num_classes)
    dice = dice_loss(p, yoh)
    seg = bundle.lambda_ce * ce + bundle.lambda_dice * dice
    if use_ftl:
        ftl = focal_tversky(p, yoh, weights,
                            bundle.alpha, bundle.beta, bundle.gamma)
        seg = seg + bundle.lambda_ftl * ftl
        bundle.L_FTL = ftl.item()
    total = seg
    if use_ifl:
        eta = iteration_weights(len(outputs.logits) - 1, iter_w)
        aux = ifl(outputs.logits, y, weights, eta)
        total = seg + aux
        bundle.L_IFL = aux.item()

    bundle.L_CE = ce.item()
    bundle.L_Dice = dice.item()
    bundle.L_SEG = seg.item()
    bundle.L_total = total.item()
    return total, bundle
