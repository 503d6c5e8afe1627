"""Training loop, checkpoint I/O, evaluation, and single-image inference.

Determinism: the parameter init stream and the shuffle stream are derived
from the config seed, preprocessing is pure, and all math is single
threaded float32, so a fixed (seed, config, dataset) reproduces the loss
log and the checkpoint bytes exactly.
"""

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .archive import load_archive, save_archive
from .errors import ConfigurationError, DataError, NumericError
from .losses import compute_class_weights, total_loss
from .metrics import ConfusionAccumulator, build_report, extract_instances
from .model import FeedbackUNet, ModelConfig
from .optim import AdamW, clip_global_norm
from .preprocess import build_five_channel, pad_to_multiple
from .rng import Rng, derive_seed
from .synthdata import load_split
from .tensor import Tensor, no_grad

CSV_HEADER = "step,L_CE,L_Dice,L_FTL,L_SEG,L_IFL,L_total"
CLIP_NORM = 5.0

_INIT_STREAM = 1
_SHUFFLE_STREAM = 2


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-3
    epochs: int = 100
    batch_size: int = 4
    T: int = 3
    w: float = 0.1  # per-pass supervision weight step
    class_weight_mode: str = "nmfb"
    use_ftl: bool = True
    use_ifl: bool = True
    num_classes: int = 7
    base_width: int = 48
    use_luma_channels: bool = True
    skip_attention_mode: str = "default"
    use_ifm: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "weight_decay", "epochs", "batch_size", "w"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(
                    f"{name} must be positive, got {getattr(self, name)}"
                )
        self.model_config()  # validates the model-side fields

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_classes=self.num_classes,
            base_width=self.base_width,
            T=self.T,
            use_luma_channels=self.use_luma_channels,
            skip_attention_mode=self.skip_attention_mode,
            use_ifm=self.use_ifm,
        )

    @classmethod
    def desk(cls, **overrides):
        """Small-model preset sized for 64x64 scenes on one CPU core."""
        values = {"epochs": 30, "base_width": 16}
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, optimizer, config: TrainConfig, epoch,
                    rng_state):
    """Tensor archive (parameters, BN stats, optimizer moments) plus a
    JSON sidecar `<path>.json` holding the scalar state."""
    arrays = {f"model/{n}": a for n, a in model.state_arrays().items()}
    arrays.update(
        {f"opt/{n}": a for n, a in optimizer.state_arrays().items()})
    save_archive(path, arrays)
    sidecar = {
        "config": asdict(config),
        "epoch": epoch,
        "opt_step": optimizer.t,
        "rng_state": list(rng_state),
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    """Rebuild (model, optimizer, config, epoch, rng_state) from disk."""
    arrays = load_archive(path)
    sidecar_path = path + ".json"
    if not os.path.exists(sidecar_path):
        raise DataError(f"missing checkpoint sidecar {sidecar_path}")
    with open(sidecar_path) as f:
        sidecar = json.load(f)
    config = TrainConfig.from_dict(sidecar["config"])
    model = FeedbackUNet(config.model_config(),
                         Rng(derive_seed(config.seed, _INIT_STREAM)))
    model.load_state_arrays(
        {n[len("model/"):]: a for n, a in arrays.items()
         if n.startswith("model/")})
    optimizer = AdamW(list(model.named_parameters()), lr=config.lr,
                      weight_decay=config.weight_decay)
    optimizer.load_state_arrays(
        {n[len("opt/"):]: a for n, a in arrays.items()
         if n.startswith("opt/")})
    optimizer.t = int(sidecar["opt_step"])
    return model, optimizer, config, int(sidecar["epoch"]), sidecar["rng_state"]


# ----------------------------------------------------------------------
# data plumbing


def scene_inputs(scenes, use_luma_channels=True):
    """Stacked network inputs (N,5|3,H,W) and int64 label stack (N,H,W)."""
    xs = np.stack([build_five_channel(s.image).values for s in scenes])
    if not use_luma_channels:
        xs = xs[:, :3]
    ys = np.stack([s.mask for s in scenes]).astype(np.int64)
    return xs, ys


@dataclass
class TrainResult:
    checkpoint_path: str
    csv_path: str
    initial_loss: float
    final_loss: float
    steps: int
    seconds: float
    clip_events: int


def train(config: TrainConfig, data_root, out_dir, log=None) -> TrainResult:
    """Train on the manifest's train split; writes loss.csv, a rolling
    per-epoch checkpoint (ckpt-last.msra), and ckpt-final.msra."""
    t0 = time.time()
    say = log or (lambda msg: None)
    os.makedirs(out_dir, exist_ok=True)
    scenes = load_split(data_root, "train")
    if not scenes:
        raise DataError(f"empty training split under {data_root}")
    xs, ys = scene_inputs(scenes, config.use_luma_channels)
    weights = compute_class_weights([s.mask for s in scenes],
                                    config.class_weight_mode,
                                    config.num_classes)
    model = FeedbackUNet(config.model_config(),
                         Rng(derive_seed(config.seed, _INIT_STREAM)))
    optimizer = AdamW(list(model.named_parameters()), lr=config.lr,
                      weight_decay=config.weight_decay)
    shuffle = Rng(derive_seed(config.seed, _SHUFFLE_STREAM))

    n = len(xs)
    csv_path = os.path.join(out_dir, "loss.csv")
    last_path = os.path.join(out_dir, "ckpt-last.msra")
    final_path = os.path.join(out_dir, "ckpt-final.msra")
    step = 0
    initial = final = None
    clip_events = 0
    with open(csv_path, "w") as csv:
        csv.write(CSV_HEADER + "\n")
        for epoch in range(config.epochs):
            order = shuffle.permutation(n)
            for lo in range(0, n, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                x = Tensor(xs[idx])
                y = ys[idx]
                outputs = model(x)
                loss, bundle = total_loss(
                    outputs, y, weights,
                    use_ftl=config.use_ftl, use_ifl=config.use_ifl,
                    iter_w=config.w)
                if not np.isfinite(bundle.L_total):
                    raise NumericError(
                        f"non-finite loss at step {step} (epoch {epoch}): "
                        f"CE={bundle.L_CE} Dice={bundle.L_Dice} "
                        f"FTL={bundle.L_FTL} IFL={bundle.L_IFL}"
                    )
                model.zero_grad()
                loss.backward()
                norm, clipped = clip_global_norm(model.parameters(), CLIP_NORM)
                if clipped:
                    clip_events += 1
                    say(f"step {step}: gradient norm {norm:.3f} clipped "
                        f"to {CLIP_NORM}")
                optimizer.step()
                csv.write(
                    f"{step},{bundle.L_CE:.9g},{bundle.L_Dice:.9g},"
                    f"{bundle.L_FTL:.9g},{bundle.L_SEG:.9g},"
                    f"{bundle.L_IFL:.9g},{bundle.L_total:.9g}\n")
                if initial is None:
                    initial = bundle.L_total
                final = bundle.L_total
                step += 1
            csv.flush()
            save_checkpoint(last_path, model, optimizer, config, epoch,
                            shuffle.state)
            say(f"epoch {epoch + 1}/{config.epochs}: L_total {final:.4f}")
    save_checkpoint(final_path, model, optimizer, config,
                    config.epochs - 1, shuffle.state)
    return TrainResult(final_path, csv_path, initial, final, step,
                       time.time() - t0, clip_events)


def evaluate_model(model, scenes):
    """Metrics report over a list of scenes (model runs in eval mode)."""
    model.eval()
    acc = ConfusionAccumulator(model.config.num_classes)
    pred_sets, gt_sets = [], []
    with no_grad():
        for scene in scenes:
            xs, _ = scene_inputs([scene], model.config.use_luma_channels)
            out = model(Tensor(xs))
            pred = out.prediction[0]
            acc.update(pred, scene.mask.astype(np.int64))
            pred_sets.append(extract_instances(pred, out.probs[-1].data[0]))
            gt_sets.append(extract_instances(scene.mask))
    return build_report(acc, pred_sets, gt_sets)


def evaluate(checkpoint_path, data_root, split="val"):
    model, _, _, _, _ = load_checkpoint(checkpoint_path)
    return evaluate_model(model, load_split(data_root, split))


def infer(model, image, per_iteration=False):
    """Segment one RGB image; returns (final mask, per-pass masks or None).

    Images whose extents are not multiples of 8 are padded symmetrically
    with zeros and the predictions cropped back.
    """
    model.eval()
    padded, (top, left, h, w) = pad_to_multiple(np.asarray(image))
    x = build_five_channel(padded).values
    if not model.config.use_luma_channels:
        x = x[:3]
    with no_grad():
        out = model(Tensor(x[None]))
    crop = lambda m: m[top:top + h, left:left + w]
    final = crop(out.prediction[0]).astype(np.uint8)
    if not per_iteration:
        return final, None
    per_pass = [crop(p.data[0].argmax(axis=0)).astype(np.uint8)
                for p in out.probs]
    return final, per_pass
