"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (click usage errors also exit 2).
"""

import functools
import json
import os
import sys

import click
import numpy as np
from PIL import Image

from .errors import ConfigurationError, DataError, NumericError, ThinsegError
from .preprocess import SIZE_MULTIPLE, build_five_channel, pad_to_multiple
from .synthdata import (
    SceneSpec,
    dataset_stats,
    load_split,
    read_manifest,
    write_dataset,
    write_mask_png,
)
from .training import (
    TrainConfig,
    evaluate_model,
    infer,
    load_checkpoint,
    train,
)


def _exit_code(exc):
    if isinstance(exc, ConfigurationError):
        return 2
    if isinstance(exc, DataError):
        return 3
    if isinstance(exc, NumericError):
        return 4
    return 1


def _mapped(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ThinsegError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))
    return wrapper


def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        return h, w
    except ValueError:
        raise ConfigurationError(f"size must look like 64x64, got {text!r}")


@click.group()
def main():
    """Thin-structure segmentation toolkit."""


@main.command("gen-synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", default=500, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--size", default="64x64", show_default=True)
@click.option("--split", default=0.81, show_default=True, type=float)
@_mapped
def gen_synth(out_dir, count, seed, size, split):
    """Generate a synthetic scene dataset with masks and a manifest."""
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    if not 0.0 < split < 1.0:
        raise ConfigurationError(f"split must be in (0,1), got {split}")
    h, w = _parse_size(size)
    spec = SceneSpec(seed=seed, height=h, width=w)
    manifest = write_dataset(out_dir, spec, count, split)
    click.echo(f"wrote {count} scenes to {out_dir} "
               f"({len(manifest['train'])} train / {len(manifest['val'])} val)")


@main.command()
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--pad/--no-pad", default=False,
              help="Zero-pad extents to the next multiple of 8 instead of "
                   "rejecting.")
@click.option("--dump-channels/--no-dump-channels", default=True,
              help="Write each of the 5 input channels as a grayscale PNG.")
@_mapped
def preprocess(image_path, out_dir, pad, dump_channels):
    """Build the 5-channel network input from an RGB image."""
    image = np.asarray(Image.open(image_path).convert("RGB"))
    if pad:
        image, _ = pad_to_multiple(image, SIZE_MULTIPLE)
    five = build_five_channel(image)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(image_path))[0]
    if dump_channels:
        for i, name in enumerate(("r", "g", "b", "eroded", "dilated")):
            plane = np.clip(np.round(five.values[i] * 255), 0, 255)
            Image.fromarray(plane.astype(np.uint8), mode="L").save(
                os.path.join(out_dir, f"{stem}_ch{i}_{name}.png"))
    np.save(os.path.join(out_dir, f"{stem}_input.npy"), five.values)
    click.echo(f"5-channel input {five.values.shape} written under {out_dir}")


@main.command("train")
@click.option("--data", "data_root", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file mirroring TrainConfig field names.")
@click.option("--preset", type=click.Choice(["paper", "desk"]),
              default="paper", show_default=True,
              help="Base defaults the config file overrides.")
@_mapped
def train_cmd(data_root, out_dir, config_path, preset):
    """Train a model on a generated dataset's train split."""
    overrides = {}
    if config_path:
        with open(config_path) as f:
            try:
                overrides = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"bad config JSON: {exc}")
    if preset == "desk":
        config = TrainConfig.desk(**overrides)
    else:
        config = TrainConfig.from_dict(overrides)
    result = train(config, data_root, out_dir, log=click.echo)
    click.echo(
        f"trained {result.steps} steps in {result.seconds:.0f}s; "
        f"L_total {result.initial_loss:.4f} -> {result.final_loss:.4f}; "
        f"checkpoint {result.checkpoint_path}")


@main.command("eval")
@click.option("--ckpt", "ckpt_path", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_root", required=True,
              type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--split", default="val", show_default=True,
              type=click.Choice(["train", "val"]))
@_mapped
def eval_cmd(ckpt_path, data_root, report_path, split):
    """Evaluate a checkpoint on a dataset split; writes a JSON report."""
    model, _, _, _, _ = load_checkpoint(ckpt_path)
    report = evaluate_model(model, load_split(data_root, split))
    with open(report_path, "w") as f:
        f.write(report.to_json())
        f.write("\n")
    click.echo(report.to_json())


@main.command("infer")
@click.option("--ckpt", "ckpt_path", required=True,
              type=click.Path(exists=True))
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--per-iteration", is_flag=True, default=False,
              help="Also write the mask after every feedback pass.")
@_mapped
def infer_cmd(ckpt_path, image_path, out_path, per_iteration):
    """Segment one RGB image into an indexed-palette mask PNG."""
    model, _, _, _, _ = load_checkpoint(ckpt_path)
    image = np.asarray(Image.open(image_path).convert("RGB"))
    final, per_pass = infer(model, image, per_iteration=per_iteration)
    write_mask_png(out_path, final)
    written = [out_path]
    if per_pass is not None:
        stem, ext = os.path.splitext(out_path)
        for t, mask in enumerate(per_pass):
            path = f"{stem}-t{t}{ext or '.png'}"
            write_mask_png(path, mask)
            written.append(path)
    click.echo("wrote " + ", ".join(written))


@main.command()
@click.option("--data", "data_root", required=True,
              type=click.Path(exists=True))
@click.option("--split", default=None,
              type=click.Choice(["train", "val"]),
              help="Restrict to one split (default: whole dataset).")
@_mapped
def stats(data_root, split):
    """Per-class pixel fractions of a generated dataset."""
    manifest = read_manifest(data_root)
    names = (manifest["train"] + manifest["val"]) if split is None \
        else manifest[split]
    from .synthdata import read_scene
    masks = [read_scene(data_root, n).mask for n in names]
    fractions = dataset_stats(masks)
    click.echo(json.dumps(fractions, indent=2))


if __name__ == "__main__":
    main()
