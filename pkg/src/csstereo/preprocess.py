"""Color conversion and resolution changes ahead of cost-volume construction.

RGB is converted to full-range YUV (BT.601 analog matrix) and the pair is
halved with 2x2 box averaging before any matching happens. Odd trailing
rows/columns are edge-replicated first so no pixels are dropped.
"""

import numpy as np

from .pnm import RawImage

# Y/U/V rows of the BT.601 analog full-range matrix; inputs are floats in [0, 255].
_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.169, -0.331, 0.5],
        [0.5, -0.419, -0.081],
    ],
    dtype=np.float32,
)


class PlanarImage:
    """Float32 image stored as per-channel planes, shape (channels, H, W)."""

    __slots__ = ("planes",)

    def __init__(self, planes: np.ndarray):
        planes = np.asarray(planes, dtype=np.float32)
        if planes.ndim != 3 or planes.shape[0] not in (1, 3):
            raise ValueError(f"expected (1|3, H, W) planes, got {planes.shape}")
        self.planes = planes

    @property
    def channels(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


def rgb_to_yuv(img: RawImage) -> PlanarImage:
    """Convert interleaved uint8 RGB to planar float YUV (Y in [0,255], U/V signed)."""
    rgb = img.pixels.astype(np.float32)
    yuv = np.einsum("cr,hwr->chw", _YUV, rgb)
    return PlanarImage(yuv)


def _pad_to_even(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return np.pad(plane, ((0, h % 2), (0, w % 2)), mode="edge")


def downsample2x(img: PlanarImage) -> PlanarImage:
    """Halve resolution by 2x2 box averaging; output dims are ceil(dim / 2)."""
    if img.height < 2 or img.width < 2:
        raise ValueError("downsample2x needs at least 2x2 input")
    out = []
    for plane in img.planes:
        p = _pad_to_even(plane)
        h2, w2 = p.shape[0] // 2, p.shape[1] // 2
        out.append(p.reshape(h2, 2, w2, 2).mean(axis=(1, 3), dtype=np.float32))
    return PlanarImage(np.stack(out))


def pad_amounts(height: int, width: int, multiple: int) -> tuple[int, int]:
    """Bottom/right padding that lifts (height, width) to the next multiples."""
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    pad_b = (-height) % multiple
    pad_r = (-width) % multiple
    return pad_b, pad_r


def pad_to_multiple(x, multiple: int):
    """Replicate-pad a tensor's spatial dims up to the next multiple.

    Returns (padded tensor, crop record); cropping back to the record undoes
    the padding exactly. Differentiable, so it can sit inside the network.
    """
    from . import autodiff as ad

    h, w = x.shape[2], x.shape[3]
    pb, pr = pad_amounts(h, w, multiple)
    if pb == 0 and pr == 0:
        return x, (h, w)
    return ad.pad_replicate(x, pb, pr), (h, w)
