"""Model assembly: cost-signature reduction plus the spatial encoder-decoder.

The signature stage maps the concatenated per-pixel cost vector (census, U, V
order, disparity ascending) through 1x1 conv + batch-norm + ReLU layers down
to a compact per-pixel feature. The spatial stage concatenates the half-res
left image, runs a three-layer 3x3 stem, re-concatenates the image, and sends
everything through a UNet-style encoder-decoder whose channel count grows by
a fixed step per scale; max-pool down, learned 2x2 transposed-conv up, skips
joined by concatenation, no batch-norm inside the encoder-decoder, and a
linear 1x1 head. Output disparities are in full-resolution pixel units.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .costvolume import COST_NAMES, CostStats, CostVolume, build_volumes, normalize_volume
from .pnm import DisparityMap, RawImage
from .preprocess import downsample2x, pad_to_multiple, rgb_to_yuv

TRAINABLE_SUFFIXES = (".w", ".b", ".gamma", ".beta")


class WeightFormatError(ValueError):
    """Raised for bad magic, wrong version, or a corrupt shape table."""


@dataclass(frozen=True)
class ModelConfig:
    max_disp: int = 128
    costs: tuple[str, ...] = COST_NAMES
    signature_dims: tuple[int, ...] = (192, 96, 48, 32)
    stem_layers: int = 3
    stem_channels: int = 32
    levels: int = 5
    base_channels: int = 32
    channel_step: int = 16
    convs_per_scale: int = 2

    def __post_init__(self):
        if not self.costs or any(c not in COST_NAMES for c in self.costs):
            raise ValueError(f"cost set must be a non-empty subset of {COST_NAMES}")
        if any(a <= b for a, b in zip(self.signature_dims, self.signature_dims[1:])):
            raise ValueError("signature dims must be strictly decreasing")
        if self.levels not in (3, 5):
            raise ValueError("encoder-decoder levels must be 3 or 5")
        if self.max_disp < 1 or self.base_channels < 1 or self.stem_layers < 1:
            raise ValueError("config counts must be positive")

    @property
    def signature_in(self) -> int:
        return len(self.costs) * self.max_disp

    @property
    def signature_out(self) -> int:
        return self.signature_dims[-1]

    @property
    def encoder_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels + self.channel_step * s for s in range(self.levels + 1))

    @property
    def pad_multiple(self) -> int:
        return 2 ** self.levels


class ModelWeights:
    """Ordered name -> Tensor map: kernels, biases, batch-norm and cost stats."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor] | None = None):
        self.config = config
        self.tensors: dict[str, Tensor] = tensors if tensors is not None else {}

    def add(self, name: str, data: np.ndarray, trainable: bool) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate tensor name {name!r}")
        t = Tensor(data, requires_grad=trainable)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def params(self) -> dict[str, Tensor]:
        """Trainable tensors only (excludes running stats, norm stats, cfg)."""
        return {n: t for n, t in self.tensors.items() if t.requires_grad}

    def get_stats(self, cost: str) -> CostStats:
        return CostStats(
            mean=float(self.tensors[f"norm.{cost}.mean"].data[0]),
            std=float(self.tensors[f"norm.{cost}.std"].data[0]),
        )

    def set_stats(self, cost: str, stats: CostStats) -> None:
        self.tensors[f"norm.{cost}.mean"].data[0] = stats.mean
        self.tensors[f"norm.{cost}.std"].data[0] = stats.std


_COST_BITS = {"census": 1, "u": 2, "v": 4}


def _conv_bn_names(prefix: str, i: int):
    p = f"{prefix}.{i}"
    return f"{p}.w", f"{p}.b", f"{p}.gamma", f"{p}.beta", f"{p}.rmean", f"{p}.rvar"


def build_model(config: ModelConfig, seed: int = 0) -> ModelWeights:
    """Deterministically initialize all weights for the given configuration.

    Conv kernels get He fan-in normals, biases zeros, batch-norm gamma 1 and
    beta 0, cost normalization identity (mean 0, std 1) until stats are
    computed from data. Channel bookkeeping is the single source of truth
    here; forward passes just consume the shapes.
    """
    rng = np.random.default_rng(seed)
    w = ModelWeights(config)

    def he(cout, cin, kh, kw):
        std = np.sqrt(2.0 / (cin * kh * kw))
        return rng.normal(0.0, std, size=(cout, cin, kh, kw)).astype(np.float32)

    def add_conv_bn(prefix, i, cin, cout, k):
        # no conv bias: batch-norm subtracts the channel mean, so a bias here
        # would be a dead parameter (beta supplies the shift)
        wn, _, gn, btn, rmn, rvn = _conv_bn_names(prefix, i)
        w.add(wn, he(cout, cin, k, k), True)
        w.add(gn, np.ones(cout, np.float32), True)
        w.add(btn, np.zeros(cout, np.float32), True)
        w.add(rmn, np.zeros(cout, np.float32), False)
        w.add(rvn, np.ones(cout, np.float32), False)

    def add_conv(prefix, cin, cout, k):
        w.add(f"{prefix}.w", he(cout, cin, k, k), True)
        w.add(f"{prefix}.b", np.zeros(cout, np.float32), True)

    # per-pixel signature reduction
    cin = config.signature_in
    for i, cout in enumerate(config.signature_dims):
        add_conv_bn("sig", i, cin, cout, 1)
        cin = cout

    # stem over signature + image
    cin = config.signature_out + 3
    for i in range(config.stem_layers):
        add_conv_bn("stem", i, cin, config.stem_channels, 3)
        cin = config.stem_channels

    # encoder: scale 0 consumes the stem output re-concatenated with the image
    enc = config.encoder_channels
    cin = config.stem_channels + 3
    for s in range(config.levels + 1):
        for j in range(config.convs_per_scale):
            add_conv(f"enc.{s}.{j}", cin, enc[s], 3)
            cin = enc[s]

    # decoder mirrors the encoder with concatenated skips
    for s in range(config.levels - 1, -1, -1):
        std = np.sqrt(2.0 / (cin * 4))
        w.add(f"dec.{s}.up.w", rng.normal(0.0, std, size=(cin, enc[s], 2, 2)).astype(np.float32), True)
        cin = enc[s] * 2  # upsampled features + skip
        for j in range(config.convs_per_scale):
            add_conv(f"dec.{s}.{j}", cin, enc[s], 3)
            cin = enc[s]

    add_conv("head", config.base_channels, 1, 1)

    for cost in config.costs:
        w.add(f"norm.{cost}.mean", np.zeros(1, np.float32), False)
        w.add(f"norm.{cost}.std", np.ones(1, np.float32), False)

    w.add("cfg.max_disp", np.array([config.max_disp], np.float32), False)
    w.add("cfg.costs", np.array([sum(_COST_BITS[c] for c in config.costs)], np.float32), False)
    w.add("cfg.signature_dims", np.array(config.signature_dims, np.float32), False)
    w.add("cfg.stem_layers", np.array([config.stem_layers], np.float32), False)
    w.add("cfg.stem_channels", np.array([config.stem_channels], np.float32), False)
    w.add("cfg.levels", np.array([config.levels], np.float32), False)
    w.add("cfg.base_channels", np.array([config.base_channels], np.float32), False)
    w.add("cfg.channel_step", np.array([config.channel_step], np.float32), False)
    w.add("cfg.convs_per_scale", np.array([config.convs_per_scale], np.float32), False)
    return w


def _conv_bn_relu(x: Tensor, w: ModelWeights, prefix: str, i: int, training: bool) -> Tensor:
    wn, _, gn, btn, rmn, rvn = _conv_bn_names(prefix, i)
    x = ad.conv2d(x, w[wn], None, pad="same")
    x = ad.batchnorm(x, w[gn], w[btn], w[rmn], w[rvn], training)
    return ad.relu(x)


def cost_input(volumes: list[CostVolume]) -> np.ndarray:
    """Concatenate normalized volumes into the per-pixel cost vector, channel first.

    Channel c of the result is volume c // D at disparity c % D, i.e. the
    fixed census, U, V order with disparities ascending inside each volume.
    """
    stacked = np.concatenate([v.costs for v in volumes], axis=2)
    return np.ascontiguousarray(stacked.transpose(2, 0, 1))


def signature_forward(x: Tensor, w: ModelWeights, training: bool = False) -> Tensor:
    """Reduce (N, |costs|*D, H, W) cost vectors to per-pixel signatures."""
    cfg = w.config
    if x.shape[1] != cfg.signature_in:
        raise ValueError(f"expected {cfg.signature_in} input channels, got {x.shape[1]}")
    for i in range(len(cfg.signature_dims)):
        x = _conv_bn_relu(x, w, "sig", i, training)
    return x


def spatial_forward(
    sig: Tensor,
    img: Tensor,
    w: ModelWeights,
    training: bool = False,
    crop_to: tuple[int, int] | None = None,
) -> Tensor:
    """Stem + encoder-decoder over padded signature/image maps.

    Inputs must already be padded to a multiple of 2**levels (see
    pad_to_multiple); crop_to restores the pre-padding dims on the way out.
    """
    cfg = w.config
    if sig.shape[2:] != img.shape[2:] or sig.shape[0] != img.shape[0]:
        raise ValueError("signature and image must share batch and spatial dims")
    if sig.shape[2] % cfg.pad_multiple or sig.shape[3] % cfg.pad_multiple:
        raise ValueError(
            f"spatial dims {sig.shape[2]}x{sig.shape[3]} not padded to a multiple of {cfg.pad_multiple}"
        )

    x = ad.concat_channels(sig, img)
    for i in range(cfg.stem_layers):
        x = _conv_bn_relu(x, w, "stem", i, training)
    x = ad.concat_channels(x, img)

    skips = []
    for s in range(cfg.levels + 1):
        for j in range(cfg.convs_per_scale):
            x = ad.relu(ad.conv2d(x, w[f"enc.{s}.{j}.w"], w[f"enc.{s}.{j}.b"], pad="same"))
        if s < cfg.levels:
            skips.append(x)
            x = ad.maxpool2x2(x)

    for s in range(cfg.levels - 1, -1, -1):
        x = ad.transposed_conv2x2(x, w[f"dec.{s}.up.w"])
        x = ad.concat_channels(x, skips[s])
        for j in range(cfg.convs_per_scale):
            x = ad.relu(ad.conv2d(x, w[f"dec.{s}.{j}.w"], w[f"dec.{s}.{j}.b"], pad="same"))

    x = ad.conv2d(x, w["head.w"], w["head.b"], pad="same")
    if crop_to is not None and crop_to != (x.shape[2], x.shape[3]):
        x = ad.crop(x, crop_to[0], crop_to[1])
    return x


def image_feature(yuv_half: np.ndarray) -> np.ndarray:
    """Half-res YUV planes rescaled to roughly unit range for concatenation."""
    return (yuv_half.astype(np.float32) / 255.0) - 0.5


def half_res_forward(a0: Tensor, img: Tensor, w: ModelWeights, training: bool = False) -> Tensor:
    """Full network at half resolution: signature stage then spatial stage."""
    sig = signature_forward(a0, w, training)
    sig_p, rec = pad_to_multiple(sig, w.config.pad_multiple)
    img_p, _ = pad_to_multiple(img, w.config.pad_multiple)
    return spatial_forward(sig_p, img_p, w, training, crop_to=rec)


def upsample_nearest(half: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(half, 2, axis=0), 2, axis=1)


def upsample_bilinear(half: np.ndarray) -> np.ndarray:
    """Top-left-aligned 2x bilinear: even outputs copy samples, odd ones average."""
    h, w = half.shape
    rows = np.empty((2 * h, w), dtype=np.float32)
    rows[0::2] = half
    nxt = np.vstack([half[1:], half[-1:]])
    rows[1::2] = 0.5 * (half + nxt)
    out = np.empty((2 * h, 2 * w), dtype=np.float32)
    out[:, 0::2] = rows
    nxt = np.hstack([rows[:, 1:], rows[:, -1:]])
    out[:, 1::2] = 0.5 * (rows + nxt)
    return out


def upsample_disparity(half: np.ndarray, mode: str) -> np.ndarray:
    """Lift a half-res map to 2x dims.

    Training uses plain nearest neighbor. Test mode keeps the interpolated
    value only where it stays within 1 px of the nearest-neighbor value, so
    genuine depth discontinuities are not blurred across.
    """
    near = upsample_nearest(half)
    if mode == "train":
        return near
    if mode != "test":
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    bil = upsample_bilinear(half)
    return np.where(np.abs(bil - near) < 1.0, bil, near)


def prepare_half_res(left: RawImage, right: RawImage, w: ModelWeights, threads: int = 1):
    """Shared front half of the pipeline: YUV, downsample, volumes, normalize."""
    if (left.height, left.width) != (right.height, right.width):
        raise ValueError(
            f"left {left.width}x{left.height} and right {right.width}x{right.height} dims differ"
        )
    cfg = w.config
    lyuv = downsample2x(rgb_to_yuv(left))
    ryuv = downsample2x(rgb_to_yuv(right))
    volumes = build_volumes(lyuv, ryuv, cfg.max_disp, cfg.costs, threads)
    volumes = [normalize_volume(v, w.get_stats(c)) for v, c in zip(volumes, cfg.costs)]
    return volumes, lyuv


def predict_disparity(
    left: RawImage, right: RawImage, w: ModelWeights, mode: str = "test", threads: int = 1
) -> DisparityMap:
    """Run the whole pipeline on one pair; output is full-resolution, all valid."""
    volumes, lyuv = prepare_half_res(left, right, w, threads)
    a0 = Tensor(cost_input(volumes)[None])
    img = Tensor(image_feature(lyuv.planes)[None])
    half = half_res_forward(a0, img, w, training=False)
    full = upsample_disparity(half.data[0, 0], mode)
    full = full[: left.height, : left.width]
    # the head is linear and may go negative; DisparityMap requires valid >= 0
    return DisparityMap(np.maximum(full, 0.0), np.ones_like(full, dtype=bool))


# ---------------------------------------------------------------------------
# serialization: magic "FDSC", version 1, then named tensors


def save_weights(w: ModelWeights, path: str) -> None:
    blob = [b"FDSC", struct.pack("<II", 1, len(w.tensors))]
    for name, t in w.tensors.items():
        nb = name.encode("utf-8")
        blob.append(struct.pack("<I", len(nb)))
        blob.append(nb)
        blob.append(struct.pack("<I", t.data.ndim))
        blob.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        blob.append(t.data.astype("<f4").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(blob))
    os.replace(tmp, path)


def _config_from_tensors(tensors: dict[str, np.ndarray]) -> ModelConfig:
    def geti(name):
        return int(tensors[name][0])

    bits = geti("cfg.costs")
    costs = tuple(c for c in COST_NAMES if bits & _COST_BITS[c])
    return ModelConfig(
        max_disp=geti("cfg.max_disp"),
        costs=costs,
        signature_dims=tuple(int(v) for v in tensors["cfg.signature_dims"]),
        stem_layers=geti("cfg.stem_layers"),
        stem_channels=geti("cfg.stem_channels"),
        levels=geti("cfg.levels"),
        base_channels=geti("cfg.base_channels"),
        channel_step=geti("cfg.channel_step"),
        convs_per_scale=geti("cfg.convs_per_scale"),
    )


def load_weights(path: str) -> ModelWeights:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != b"FDSC":
        raise WeightFormatError("bad magic (not a weight file)")
    if len(data) < 12:
        raise WeightFormatError("truncated header")
    version, count = struct.unpack("<II", data[4:12])
    if version != 1:
        raise WeightFormatError(f"unsupported version {version}")
    pos = 12
    raw: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise WeightFormatError("truncated tensor table")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    try:
        for _ in range(count):
            (nlen,) = struct.unpack("<I", take(4))
            name = take(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", take(4))
            dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
            n = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(take(4 * n), dtype="<f4")
            raw[name] = arr.reshape(dims).copy()
    except (struct.error, UnicodeDecodeError) as e:
        raise WeightFormatError(f"corrupt shape table: {e}") from None
    if len(raw) != count:
        raise WeightFormatError("duplicate tensor names")

    config = _config_from_tensors(raw)
    w = ModelWeights(config)
    for name, arr in raw.items():
        w.add(name, arr, trainable=name.endswith(TRAINABLE_SUFFIXES) and not name.startswith("adam."))
    validate_weights(w)
    return w


GRADCHECK_CONFIG = ModelConfig(
    max_disp=8,
    signature_dims=(48, 32),
    levels=3,
    base_channels=16,
    channel_step=16,
    stem_channels=16,
)


def network_gradcheck(seed: int = 0, coords_per_tensor: int = 6) -> float:
    """Finite-difference check of the assembled network on a 16x16 toy input.

    Runs the train-mode forward (batch statistics, the path training uses)
    with running-stat updates frozen, and probes a bounded random sample of
    coordinates in every parameter tensor. Returns the worst relative error.
    """
    w = build_model(GRADCHECK_CONFIG, seed=seed)
    rng = np.random.default_rng(seed)
    a0 = Tensor(rng.standard_normal((1, GRADCHECK_CONFIG.signature_in, 16, 16)).astype(np.float32))
    img = Tensor((rng.standard_normal((1, 3, 16, 16)) * 0.3).astype(np.float32))
    running = tuple(t for n, t in w.tensors.items() if n.endswith((".rmean", ".rvar")))
    return ad.finite_diff_check(
        lambda: half_res_forward(a0, img, w, training=True),
        list(w.params().values()),
        np.random.default_rng(seed + 1),
        max_coords=coords_per_tensor,
        state_tensors=running,
    )


def validate_weights(w: ModelWeights) -> None:
    """Recompute the expected shape plan from the config and compare."""
    ref = build_model(w.config, seed=0)
    for name, t in ref.tensors.items():
        if name not in w.tensors:
            raise WeightFormatError(f"missing tensor {name!r}")
        if w.tensors[name].data.shape != t.data.shape:
            raise WeightFormatError(
                f"tensor {name!r} has shape {w.tensors[name].data.shape}, expected {t.data.shape}"
            )
