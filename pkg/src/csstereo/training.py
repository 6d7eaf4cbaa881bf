"""Robust loss, augmentations, and the end-to-end optimization loop.

The loss is max(tau, |gt - pred|)**(1/8) averaged over valid ground-truth
pixels: clipped inside tau so gradients stay bounded, heavily sub-linear
outside so outliers cannot dominate. Supervision happens at full resolution
after nearest-neighbor upsampling of the half-res network output.

Every iteration derives its RNG from (seed, iteration), so a checkpointed
run resumed mid-stream is bit-identical to an uninterrupted one.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .costvolume import StatsAccumulator, build_volumes, normalize_volume
from .network import (
    ModelConfig,
    ModelWeights,
    cost_input,
    half_res_forward,
    image_feature,
    save_weights,
)
from .pnm import DisparityMap, RawImage, decode_disp16, decode_ppm
from .preprocess import downsample2x, rgb_to_yuv
from .synth import StereoSample


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_schedule: tuple[tuple[int, float], ...] = ((2000, 1e-4),)
    batch_size: int = 4
    tau: float = 1.0
    weight_decay: float = 1e-5
    seed: int = 0
    swap_flip: bool = True
    scale_aug: bool = True
    scale_min: float = 1.0
    scale_max: float = 1.5
    checkpoint_interval: int = 500
    stats_samples: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if any(lr <= 0 or n < 0 for n, lr in self.lr_schedule):
            raise ValueError("schedule entries must have n >= 0 and lr > 0")
        if self.scale_min < 1.0 or self.scale_max < self.scale_min:
            raise ValueError("scale range must satisfy 1.0 <= min <= max")

    @property
    def total_iters(self) -> int:
        return sum(n for n, _ in self.lr_schedule)

    def lr_at(self, iteration: int) -> float:
        upto = 0
        for n, lr in self.lr_schedule:
            upto += n
            if iteration < upto:
                return lr
        return self.lr_schedule[-1][1]


def robust_loss(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray, tau: float = 1.0):
    """Mean of max(tau, |gt - pred|)**(1/8) over valid pixels, plus d(loss)/d(pred).

    The gradient is zero on the clipped branch (|error| <= tau) and
    (1/8)|e|^(-7/8) * sign(pred - gt) / n_valid outside it; invalid pixels
    contribute nothing to either.
    """
    if pred.shape != gt.shape or pred.shape != valid.shape:
        raise ValueError("pred/gt/valid shapes must match")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no valid ground-truth pixels")
    err = pred.astype(np.float64) - gt.astype(np.float64)
    a = np.abs(err)
    per_pixel = np.maximum(tau, a) ** 0.125
    loss = float(per_pixel[valid].sum() / n_valid)
    grad = np.zeros(pred.shape, dtype=np.float32)
    m = valid & (a > tau)
    grad[m] = (0.125 * a[m] ** -0.875 * np.sign(err[m]) / n_valid).astype(np.float32)
    return loss, grad


def augment_swap_flip(s: StereoSample) -> StereoSample:
    """Swap the views and mirror everything; needs right-view ground truth.

    The flipped right image becomes the new left (and vice versa); disparity
    magnitudes are unchanged. Applying it twice returns the original sample.
    """
    if s.gt_right is None:
        raise ValueError("swap-flip augmentation needs ground truth for the right image")
    flip = lambda a: np.ascontiguousarray(a[:, ::-1])
    return StereoSample(
        left=RawImage(flip(s.right.pixels)),
        right=RawImage(flip(s.left.pixels)),
        gt_left=DisparityMap(flip(s.gt_right.values), flip(s.gt_right.valid)),
        gt_right=DisparityMap(flip(s.gt_left.values), flip(s.gt_left.valid)),
    )


def _resize_grid(n_out: int, n_in: int) -> np.ndarray:
    return (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5


def _bilinear_resize_u8(img: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.clip(_resize_grid(h_out, h), 0, h - 1)
    xs = np.clip(_resize_grid(w_out, w), 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    p = img.astype(np.float32)
    out = (
        p[y0][:, x0] * (1 - fy) * (1 - fx)
        + p[y0][:, x1] * (1 - fy) * fx
        + p[y1][:, x0] * fy * (1 - fx)
        + p[y1][:, x1] * fy * fx
    )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _nearest_idx(n_out: int, n_in: int) -> np.ndarray:
    return np.clip(np.rint(_resize_grid(n_out, n_in)).astype(int), 0, n_in - 1)


def augment_scale(s: StereoSample, factor: float) -> StereoSample:
    """Zoom out by `factor`: images bilinear to dims/factor, disparities divided.

    Validity (and the sparse disparity values themselves) resample by nearest
    neighbor so invalid pixels never blend into valid ones.
    """
    if not (1.0 <= factor <= 1.5):
        raise ValueError("scale factor must lie in [1.0, 1.5]")
    if factor == 1.0:
        return s
    h, w = s.left.height, s.left.width
    h_out, w_out = int(round(h / factor)), int(round(w / factor))
    if h_out < 64 or w_out < 64:
        raise ValueError(f"scaled dims {w_out}x{h_out} fall below 64x64")
    yi = _nearest_idx(h_out, h)
    xi = _nearest_idx(w_out, w)

    def scale_gt(d: DisparityMap | None):
        if d is None:
            return None
        vals = d.values[yi][:, xi] / np.float32(factor)
        valid = d.valid[yi][:, xi]
        vals = vals.copy()
        vals[~valid] = 0.0
        return DisparityMap(vals, valid)

    return StereoSample(
        left=RawImage(_bilinear_resize_u8(s.left.pixels, h_out, w_out)),
        right=RawImage(_bilinear_resize_u8(s.right.pixels, h_out, w_out)),
        gt_left=scale_gt(s.gt_left),
        gt_right=scale_gt(s.gt_right),
    )


class DiskDataset:
    """Samples stored as left/right PPM pairs plus PGM16 ground truth.

    Decoded samples are cached in memory; right-view ground truth is loaded
    when the disp_right directory exists (needed for swap-flip).
    """

    def __init__(self, root: str):
        self.root = root
        left_dir = os.path.join(root, "left")
        if not os.path.isdir(left_dir):
            raise FileNotFoundError(f"no left/ directory under {root}")
        self.names = sorted(os.path.splitext(n)[0] for n in os.listdir(left_dir) if n.endswith(".ppm"))
        if not self.names:
            raise ValueError(f"no samples under {root}")
        self.has_right_gt = os.path.isdir(os.path.join(root, "disp_right"))
        self._cache: dict[int, StereoSample] = {}

    def __len__(self):
        return len(self.names)

    def load(self, idx: int) -> StereoSample:
        if idx in self._cache:
            return self._cache[idx]
        name = self.names[idx]

        def read(sub, ext):
            with open(os.path.join(self.root, sub, name + ext), "rb") as f:
                return f.read()

        sample = StereoSample(
            left=decode_ppm(read("left", ".ppm")),
            right=decode_ppm(read("right", ".ppm")),
            gt_left=decode_disp16(read("disp_left", ".pgm")),
            gt_right=decode_disp16(read("disp_right", ".pgm")) if self.has_right_gt else None,
        )
        self._cache[idx] = sample
        return sample


def fit_cost_stats(data, w: ModelWeights, samples: int, threads: int = 1) -> None:
    """Compute per-cost normalization stats over the first `samples` samples.

    Statistics stream through accumulators, so memory stays flat no matter
    how many samples contribute.
    """
    cfg = w.config
    acc = {c: StatsAccumulator() for c in cfg.costs}
    for i in range(min(samples, len(data))):
        s = data.load(i)
        ly = downsample2x(rgb_to_yuv(s.left))
        ry = downsample2x(rgb_to_yuv(s.right))
        for cost, vol in zip(cfg.costs, build_volumes(ly, ry, cfg.max_disp, cfg.costs, threads)):
            acc[cost].update(vol)
    for cost, a in acc.items():
        w.set_stats(cost, a.result())


def batch_forward(batch: list[StereoSample], w: ModelWeights, threads: int = 1):
    """Train-mode forward for a batch of same-size samples.

    Returns the full-resolution prediction Tensor plus stacked gt/valid
    arrays; the prediction is cropped back to the original dims after
    nearest-neighbor 2x upsampling.
    """
    cfg = w.config
    h, wd = batch[0].left.height, batch[0].left.width
    a0s, imgs = [], []
    for s in batch:
        if (s.left.height, s.left.width) != (h, wd):
            raise ValueError("batch samples must share dimensions")
        ly = downsample2x(rgb_to_yuv(s.left))
        ry = downsample2x(rgb_to_yuv(s.right))
        vols = build_volumes(ly, ry, cfg.max_disp, cfg.costs, threads)
        vols = [normalize_volume(v, w.get_stats(c)) for v, c in zip(vols, cfg.costs)]
        a0s.append(cost_input(vols))
        imgs.append(image_feature(ly.planes))
    a0 = Tensor(np.stack(a0s))
    img = Tensor(np.stack(imgs))
    half = half_res_forward(a0, img, w, training=True)
    full = ad.nearest_upsample2x(half)
    full = ad.crop(full, h, wd)
    gt = np.stack([s.gt_left.values for s in batch])[:, None]
    valid = np.stack([s.gt_left.valid for s in batch])[:, None]
    return full, gt, valid


def assemble_batch(data, cfg: TrainConfig, iteration: int) -> list[StereoSample]:
    """Draw and augment one batch; swap-flip twins ride in the same batch."""
    rng = np.random.default_rng([cfg.seed, iteration])
    idx = rng.integers(0, len(data), size=cfg.batch_size)
    factor = float(rng.uniform(cfg.scale_min, cfg.scale_max)) if cfg.scale_aug else 1.0
    batch = []
    for i in idx:
        s = data.load(int(i))
        if cfg.scale_aug:
            s = augment_scale(s, factor)
        batch.append(s)
        if cfg.swap_flip and s.gt_right is not None:
            batch.append(augment_swap_flip(s))
    return batch


def _adam_to_tensors(w: ModelWeights, state: AdamState, iteration: int) -> ModelWeights:
    out = ModelWeights(w.config, dict(w.tensors))
    out.tensors["adam.step"] = Tensor(np.array([state.step], np.float32))
    out.tensors["train.iter"] = Tensor(np.array([iteration], np.float32))
    for name in w.params():
        if name in state.m:
            out.tensors[f"adam.m.{name}"] = Tensor(state.m[name])
            out.tensors[f"adam.v.{name}"] = Tensor(state.v[name])
    return out


def _adam_from_tensors(w: ModelWeights, cfg: TrainConfig) -> tuple[AdamState, int]:
    state = AdamState(weight_decay=cfg.weight_decay)
    start = 0
    if "adam.step" in w.tensors:
        state.step = int(w.tensors.pop("adam.step").data[0])
        start = int(w.tensors.pop("train.iter").data[0])
        for name in list(w.tensors):
            if name.startswith("adam.m."):
                state.m[name[len("adam.m.") :]] = w.tensors.pop(name).data
            elif name.startswith("adam.v."):
                state.v[name[len("adam.v.") :]] = w.tensors.pop(name).data
    return state, start


def train_loop(
    data,
    cfg: TrainConfig,
    w: ModelWeights,
    checkpoint_path: str | None = None,
    log_path: str | None = None,
    resume: bool = False,
) -> list[tuple[int, float, float]]:
    """Run the optimization; returns the loss log as (iteration, loss, lr) rows.

    Checkpoints (weights + Adam state + iteration counter) land at
    checkpoint_path every checkpoint_interval iterations, written to a temp
    file and renamed. With resume=True, training continues from the state
    embedded in `w` (as loaded from a checkpoint) and is bit-identical to the
    uninterrupted run.
    """
    if len(data) == 0:
        raise ValueError("empty data source")
    state, start = _adam_from_tensors(w, cfg)  # also strips optimizer tensors from w
    if not resume:
        state = AdamState(weight_decay=cfg.weight_decay)
        start = 0
    params = w.params()
    rows = []
    for it in range(start, cfg.total_iters):
        lr = cfg.lr_at(it)
        batch = assemble_batch(data, cfg, it)
        with ad.Tape() as tape:
            pred, gt, valid = batch_forward(batch, w, cfg.threads)
            loss, grad = robust_loss(pred.data, gt, valid, cfg.tau)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at iteration {it} (lr {lr})")
            tape.backward(pred, grad)
        state.lr = lr
        adam_step(params, state)
        rows.append((it, loss, lr))
        if checkpoint_path and (it + 1) % cfg.checkpoint_interval == 0:
            write_checkpoint(w, state, it + 1, checkpoint_path)
    if log_path:
        write_loss_log(rows, log_path)
    return rows


def write_checkpoint(w: ModelWeights, state: AdamState, iteration: int, path: str) -> None:
    save_weights(_adam_to_tensors(w, state, iteration), path)  # atomic inside


def write_loss_log(rows, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write("iter,loss,lr\n")
        for it, loss, lr in rows:
            f.write(f"{it},{loss!r},{lr!r}\n")
    os.replace(tmp, path)


# plain "key = value" config files


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_train_config(text: str) -> TrainConfig:
    kv = parse_kv(text)
    cfg = TrainConfig()
    kwargs = {}
    if "lr_schedule" in kv:
        segs = []
        for part in kv["lr_schedule"].split(","):
            n, lr = part.split(":")
            segs.append((int(n), float(lr)))
        kwargs["lr_schedule"] = tuple(segs)
    for key, conv in (
        ("batch_size", int),
        ("tau", float),
        ("weight_decay", float),
        ("seed", int),
        ("scale_min", float),
        ("scale_max", float),
        ("checkpoint_interval", int),
        ("stats_samples", int),
        ("threads", int),
    ):
        if key in kv:
            kwargs[key] = conv(kv[key])
    for key in ("swap_flip", "scale_aug"):
        if key in kv:
            kwargs[key] = _BOOL[kv[key].lower()]
    return replace(cfg, **kwargs)


def parse_model_config(text: str) -> ModelConfig:
    kv = parse_kv(text)
    kwargs = {}
    for key, conv in (
        ("max_disp", int),
        ("stem_layers", int),
        ("stem_channels", int),
        ("levels", int),
        ("base_channels", int),
        ("channel_step", int),
        ("convs_per_scale", int),
    ):
        if key in kv:
            kwargs[key] = conv(kv[key])
    if "costs" in kv:
        kwargs["costs"] = tuple(c.strip() for c in kv["costs"].split(","))
    if "signature_dims" in kv:
        kwargs["signature_dims"] = tuple(int(v) for v in kv["signature_dims"].split(","))
    return ModelConfig(**kwargs)
