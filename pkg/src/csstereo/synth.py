"""Layered synthetic stereo pairs with exact dense ground truth.

Scenes are fronto-parallel: a background plane plus K textured rectangles,
each at its own integer disparity. Textures are 3x3 box-blurred uniform RGB
noise. The right view renders every layer shifted left by its disparity, so
left(x, y) == right(x - d, y) holds exactly at non-occluded pixels and the
census volume's winner-take-all is verifiable against the ground truth.
"""

import os
from dataclasses import dataclass

import numpy as np

from .pnm import DisparityMap, RawImage, encode_disp16, encode_ppm


def _rng(seed, salt: int) -> np.random.Generator:
    parts = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    return np.random.default_rng([*parts, salt])


@dataclass(frozen=True)
class Layer:
    x: int
    y: int
    width: int
    height: int
    disparity: int
    texture_seed: int


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    background_disparity: int
    layers: tuple[Layer, ...] = ()
    seed: int | tuple = 0

    def __post_init__(self):
        if self.background_disparity < 0:
            raise ValueError("background disparity must be >= 0")
        for l in self.layers:
            if l.disparity <= self.background_disparity:
                raise ValueError("layer disparities must exceed the background disparity")
            if l.x < 0 or l.y < 0 or l.x + l.width > self.width or l.y + l.height > self.height:
                raise ValueError("layer rectangle exceeds image bounds")
            if l.width < 1 or l.height < 1:
                raise ValueError("layer rectangles must be non-empty")


@dataclass
class StereoSample:
    """One training sample: rectified pair plus per-view ground truth.

    Ground truth may be sparse (invalid pixels); the right-view map is
    optional and only needed for swap-flip augmentation.
    """

    left: RawImage
    right: RawImage
    gt_left: DisparityMap
    gt_right: DisparityMap | None = None

    def __post_init__(self):
        dims = (self.left.height, self.left.width)
        for other, name in ((self.right, "right"), (self.gt_left, "gt_left"), (self.gt_right, "gt_right")):
            if other is not None and (other.height, other.width) != dims:
                raise ValueError(f"{name} dims {(other.height, other.width)} do not match left {dims}")


def _texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Smoothed colored noise: 3x3 box blur over per-pixel uniform RGB."""
    noise = rng.uniform(0.0, 255.0, size=(height, width, 3)).astype(np.float32)
    padded = np.pad(noise, ((1, 1), (1, 1), (0, 0)), mode="edge")
    acc = np.zeros_like(noise)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy : dy + height, dx : dx + width]
    return np.clip(np.rint(acc / 9.0), 0, 255).astype(np.uint8)


def generate_scene(spec: SceneSpec) -> StereoSample:
    """Render both views and exact per-view ground truth for one scene."""
    h, w = spec.height, spec.width
    rng = _rng(spec.seed, 0x5CE2E)

    # background texture extends right by its disparity so the right view
    # (and any disoccluded holes) read real texture, never fill values
    bg = _texture(rng, h, w + spec.background_disparity)

    left = np.empty((h, w, 3), np.uint8)
    right = np.empty((h, w, 3), np.uint8)
    gt_l = np.empty((h, w), np.float32)
    gt_r = np.empty((h, w), np.float32)

    d0 = spec.background_disparity
    left[:] = bg[:, :w]
    xs = np.arange(w)
    right[:] = bg[:, xs + d0]
    gt_l[:] = d0
    gt_r[:] = d0

    # nearest-disparity-on-top: paint in ascending disparity order
    for layer in sorted(spec.layers, key=lambda l: l.disparity):
        lrng = _rng(spec.seed, layer.texture_seed)
        tex = _texture(lrng, layer.height, layer.width)
        ys = slice(layer.y, layer.y + layer.height)
        left[ys, layer.x : layer.x + layer.width] = tex
        gt_l[ys, layer.x : layer.x + layer.width] = layer.disparity
        rx0 = layer.x - layer.disparity
        tx0 = max(0, -rx0)  # clip where the layer shifts off the left edge
        rx_lo = max(0, rx0)
        rx_hi = min(w, rx0 + layer.width)
        if rx_hi > rx_lo:
            right[ys, rx_lo:rx_hi] = tex[:, tx0 : tx0 + (rx_hi - rx_lo)]
            gt_r[ys, rx_lo:rx_hi] = layer.disparity

    valid = np.ones((h, w), bool)
    return StereoSample(
        left=RawImage(left),
        right=RawImage(right),
        gt_left=DisparityMap(gt_l, valid),
        gt_right=DisparityMap(gt_r, valid.copy()),
    )


def occlusion_mask(sample: StereoSample) -> np.ndarray:
    """True where a left-view pixel is NOT visible in the right view."""
    gt_l = sample.gt_left.values
    gt_r = sample.gt_right.values
    h, w = gt_l.shape
    xs = np.arange(w)[None, :].repeat(h, axis=0)
    rx = xs - gt_l.astype(np.int32)
    inside = rx >= 0
    rxc = np.clip(rx, 0, w - 1)
    same = gt_r[np.arange(h)[:, None], rxc] == gt_l
    return ~(inside & same)


def random_scene(
    width: int,
    height: int,
    seed,
    max_disparity: int = 14,
    max_layers: int = 3,
    even_only: bool = True,
) -> SceneSpec:
    """Draw a reproducible scene spec with modest disparities.

    even_only keeps all disparities even, so the half-resolution ground truth
    stays integral and winner-take-all checks are exact.
    """
    rng = _rng(seed, 0xD15)
    step = 2 if even_only else 1
    bg = int(rng.integers(1, max(2, max_disparity // (2 * step)))) * step
    n_layers = int(rng.integers(1, max_layers + 1))
    layers = []
    lo = bg // step + 1
    hi = max_disparity // step
    for i in range(n_layers):
        if lo > hi:
            break
        d = int(rng.integers(lo, hi + 1)) * step
        lw = int(rng.integers(width // 5, width // 2))
        lh = int(rng.integers(height // 5, height // 2))
        lx = int(rng.integers(0, width - lw))
        ly = int(rng.integers(0, height - lh))
        layers.append(Layer(lx, ly, lw, lh, d, texture_seed=i + 1))
    return SceneSpec(width=width, height=height, background_disparity=bg, layers=tuple(layers), seed=seed)


def generate_dataset(count: int, width: int, height: int, seed: int, out_dir: str, **scene_kw) -> list[str]:
    """Write `count` samples as PPM pairs + PGM16 ground truths, reproducibly.

    Layout: left/NNNN.ppm, right/NNNN.ppm, disp_left/NNNN.pgm,
    disp_right/NNNN.pgm; identical seeds produce bit-identical trees.
    """
    for sub in ("left", "right", "disp_left", "disp_right"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    names = []
    for i in range(count):
        sample = generate_scene(random_scene(width, height, seed=(seed, i), **scene_kw))
        name = f"{i:04d}"
        with open(os.path.join(out_dir, "left", name + ".ppm"), "wb") as f:
            f.write(encode_ppm(sample.left))
        with open(os.path.join(out_dir, "right", name + ".ppm"), "wb") as f:
            f.write(encode_ppm(sample.right))
        with open(os.path.join(out_dir, "disp_left", name + ".pgm"), "wb") as f:
            f.write(encode_disp16(sample.gt_left))
        with open(os.path.join(out_dir, "disp_right", name + ".pgm"), "wb") as f:
            f.write(encode_disp16(sample.gt_right))
        names.append(name)
    return names
