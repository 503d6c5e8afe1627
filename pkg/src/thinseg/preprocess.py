"""Five-channel input assembly from RGB images.

An input frame is converted to grayscale, eroded and dilated with a flat
4x4 structuring element, and the two extrema maps are min-max normalized
and stacked behind the [0,1]-scaled RGB planes. The extrema channels
brighten thin dark structures against their local surroundings, which is
what the downstream network consumes them for.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SizingError

EPS = 1e-6
SIZE_MULTIPLE = 8

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class FiveChannelInput:
    """Network input planes: R, G, B in [0,1], then eroded and dilated extrema."""

    values: np.ndarray  # float32, shape (5, H, W), all values in [0, 1]

    @property
    def shape(self):
        return self.values.shape


def _check_rgb(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(
            f"expected an HxWx3 RGB array, got shape {arr.shape}"
        )
    return arr


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Luma grayscale (0.299 R + 0.587 G + 0.114 B), float64 in [0,255]."""
    arr = _check_rgb(image).astype(np.float64)
    r, g, b = GRAY_WEIGHTS
    return r * arr[:, :, 0] + g * arr[:, :, 1] + b * arr[:, :, 2]


def _windows(gray: np.ndarray) -> np.ndarray:
    # anchor at offset (1,1): the window for output (i,j) spans rows
    # i-1..i+2 and cols j-1..j+2, with replicate borders
    padded = np.pad(gray, ((1, 2), (1, 2)), mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, (4, 4))


def morph_erode(gray: np.ndarray) -> np.ndarray:
    """Flat 4x4 minimum filter, anchor (1,1), replicate padding."""
    return _windows(gray).min(axis=(2, 3))


def morph_dilate(gray: np.ndarray) -> np.ndarray:
    """Flat 4x4 maximum filter, anchor (1,1), replicate padding."""
    return _windows(gray).max(axis=(2, 3))


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Whole-map affine rescale (x - min) / (max - min + 1e-6).

    A constant map rescales to all zeros; the guard epsilon keeps the
    maximum just below 1.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = x.min()
    return (x - lo) / (x.max() - lo + EPS)


def build_five_channel(image: np.ndarray) -> FiveChannelInput:
    """Stack RGB / 255 with the normalized erosion and dilation maps."""
    arr = _check_rgb(image)
    h, w = arr.shape[:2]
    if h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
        raise SizingError(
            f"image extents {h}x{w} must each be a multiple of {SIZE_MULTIPLE}; "
            f"pad symmetrically with zeros first"
        )
    gray = rgb_to_gray(arr)
    eroded = minmax_normalize(morph_erode(gray))
    dilated = minmax_normalize(morph_dilate(gray))
    rgb = arr.astype(np.float32).transpose(2, 0, 1) / 255.0
    planes = np.stack([rgb[0], rgb[1], rgb[2],
                       eroded.astype(np.float32), dilated.astype(np.float32)])
    return FiveChannelInput(values=planes)


def pad_to_multiple(image: np.ndarray, multiple: int = SIZE_MULTIPLE):
    """Zero-pad an RGB image symmetrically to the next extent multiple.

    Returns the padded image and the (top, left, height, width) box of the
    original content so predictions can be cropped back.
    """
    arr = _check_rgb(image)
    h, w = arr.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    top, left = ph // 2, pw // 2
    padded = np.pad(arr, ((top, ph - top), (left, pw - left), (0, 0)),
                    mode="constant")
    return padded, (top, left, h, w)
