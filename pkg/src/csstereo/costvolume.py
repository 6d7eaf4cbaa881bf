"""Traditional matching-cost volumes: census/Hamming on Y, absolute U/V differences.

All volumes live at half resolution with layout (H, W, D), disparity fastest,
so the per-pixel concatenation of several volumes is a plain reinterpretation
of memory. Entries for x - d < 0 copy the first in-range column for that
disparity. Construction parallelizes over disparity chunks; the numpy ufuncs
involved release the GIL, so plain threads scale.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .preprocess import PlanarImage

CENSUS_BITS = 24  # 5x5 window minus the center

COST_NAMES = ("census", "u", "v")


@dataclass(frozen=True)
class CostStats:
    """Per-volume normalization statistics (population std, floored at 1e-6)."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std < 1e-6:
            object.__setattr__(self, "std", 1e-6)


class CostVolume:
    """H x W x D float32 matching costs for one cost type, disparity fastest."""

    __slots__ = ("costs",)

    def __init__(self, costs: np.ndarray):
        costs = np.ascontiguousarray(costs, dtype=np.float32)
        if costs.ndim != 3:
            raise ValueError(f"expected (H, W, D) costs, got {costs.shape}")
        self.costs = costs

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def disparities(self) -> int:
        return self.costs.shape[2]


def census_transform(plane: np.ndarray) -> np.ndarray:
    """5x5 census codes of a single-channel float plane.

    Bit k covers the k-th non-center window position in row-major order
    (bit 0 = top-left) and is set iff that neighbor is strictly less than the
    center; ties give 0. Borders read edge-replicated pixels.
    """
    plane = np.asarray(plane, dtype=np.float32)
    if plane.ndim != 2:
        raise ValueError("census_transform expects a single 2-d plane")
    h, w = plane.shape
    padded = np.pad(plane, 2, mode="edge")
    codes = np.zeros((h, w), dtype=np.uint32)
    bit = 0
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            if dy == 0 and dx == 0:
                continue
            neigh = padded[2 + dy : 2 + dy + h, 2 + dx : 2 + dx + w]
            codes |= (neigh < plane).astype(np.uint32) << np.uint32(bit)
            bit += 1
    return codes


_CHUNK = 16  # disparities per block: one f32 cache line per pixel on store


def _fill_volume(width: int, disparities: int, out: np.ndarray, slice_fn, threads: int):
    """Fill (H, W, D) by computing (chunk, H, W) blocks and storing transposed.

    Slices are computed contiguous per disparity, the fill rule for x < d is
    applied in place, and each chunk lands in the output as runs of `chunk`
    floats per pixel, which keeps the stores cache-friendly. Chunks are
    independent, so threads split them without sharing written regions.
    """
    if disparities < 1:
        raise ValueError("need at least one disparity")
    if disparities > width:
        raise ValueError(
            f"D={disparities} exceeds width {width}: no in-range pixel exists for the largest shifts"
        )
    height = out.shape[0]

    def run(d0):
        d1 = min(d0 + _CHUNK, disparities)
        tmp = np.empty((d1 - d0, height, width), dtype=np.float32)
        for j, d in enumerate(range(d0, d1)):
            slice_fn(d, tmp[j])
            if d > 0:
                tmp[j, :, :d] = tmp[j, :, d : d + 1]
        out[:, :, d0:d1] = tmp.transpose(1, 2, 0)

    starts = range(0, disparities, _CHUNK)
    if threads <= 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    return out


def hamming_cost_volume(left_codes: np.ndarray, right_codes: np.ndarray, disparities: int, threads: int = 1) -> CostVolume:
    """Popcount of XOR between left census codes and right codes shifted by d."""
    if left_codes.shape != right_codes.shape:
        raise ValueError("census maps must share dimensions")
    h, w = left_codes.shape
    out = np.empty((h, w, disparities), dtype=np.float32)

    def fill(d, dst):
        dst[:, d:] = np.bitwise_count(left_codes[:, d:] ^ right_codes[:, : w - d])

    _fill_volume(w, disparities, out, fill, threads)
    return CostVolume(out)


def chroma_cost_volume(left_ch: np.ndarray, right_ch: np.ndarray, disparities: int, threads: int = 1) -> CostVolume:
    """Absolute difference of one chroma channel at each candidate disparity."""
    if left_ch.shape != right_ch.shape:
        raise ValueError("channels must share dimensions")
    left_ch = np.asarray(left_ch, dtype=np.float32)
    right_ch = np.asarray(right_ch, dtype=np.float32)
    h, w = left_ch.shape
    out = np.empty((h, w, disparities), dtype=np.float32)

    def fill(d, dst):
        np.subtract(left_ch[:, d:], right_ch[:, : w - d], out=dst[:, d:])
        np.abs(dst[:, d:], out=dst[:, d:])

    _fill_volume(w, disparities, out, fill, threads)
    return CostVolume(out)


def build_volumes(
    left: PlanarImage,
    right: PlanarImage,
    disparities: int,
    costs: tuple[str, ...] = COST_NAMES,
    threads: int = 1,
) -> list[CostVolume]:
    """Construct the configured volumes from half-resolution YUV pairs.

    Order is fixed as census, U, V regardless of the subset requested.
    """
    if left.planes.shape != right.planes.shape:
        raise ValueError("left/right images must share dimensions")
    out = []
    for name in COST_NAMES:
        if name not in costs:
            continue
        if name == "census":
            lc = census_transform(left.planes[0])
            rc = census_transform(right.planes[0])
            out.append(hamming_cost_volume(lc, rc, disparities, threads))
        else:
            ch = 1 if name == "u" else 2
            out.append(chroma_cost_volume(left.planes[ch], right.planes[ch], disparities, threads))
    if not out:
        raise ValueError(f"cost set {costs!r} selects no volumes")
    return out


class StatsAccumulator:
    """Streaming accumulator for CostStats; volumes are not retained."""

    def __init__(self):
        self.count = 0
        self.total = 0.0
        self.total_sq = 0.0

    def update(self, v: CostVolume) -> None:
        c = v.costs.astype(np.float64, copy=False)
        self.count += c.size
        self.total += float(c.sum())
        self.total_sq += float(np.square(c).sum())

    def result(self) -> CostStats:
        if self.count == 0:
            raise ValueError("no volumes accumulated")
        mean = self.total / self.count
        var = max(self.total_sq / self.count - mean * mean, 0.0)
        return CostStats(mean=mean, std=float(np.sqrt(var)))


def compute_cost_stats(volumes) -> CostStats:
    """Streaming mean and population std over every entry of the given volumes."""
    acc = StatsAccumulator()
    for v in volumes:
        acc.update(v)
    return acc.result()


def normalize_volume(v: CostVolume, s: CostStats) -> CostVolume:
    """Map every entry through (c - mean) / std."""
    return CostVolume((v.costs - np.float32(s.mean)) / np.float32(s.std))


def wta_disparity(v: CostVolume) -> np.ndarray:
    """Winner-take-all: per-pixel argmin over d (first minimum wins)."""
    return v.costs.argmin(axis=2).astype(np.int32)


# FVOL dump: "FVOL", u32 H, W, D, then H*W*D little-endian float32, d fastest.


def write_fvol(volumes: list[CostVolume]) -> bytes:
    """Serialize volumes as one FVOL blob with the per-pixel vectors concatenated.

    For several volumes the header D is their total disparity count, matching
    the per-pixel concatenation order used by the network input.
    """
    h, w = volumes[0].height, volumes[0].width
    for v in volumes[1:]:
        if (v.height, v.width) != (h, w):
            raise ValueError("volumes must share spatial dims")
    stacked = np.concatenate([v.costs for v in volumes], axis=2)
    header = b"FVOL" + struct.pack("<III", h, w, stacked.shape[2])
    return header + stacked.astype("<f4").tobytes()


def read_fvol(data: bytes) -> CostVolume:
    if data[:4] != b"FVOL":
        raise ValueError("bad FVOL magic")
    h, w, d = struct.unpack("<III", data[4:16])
    n = h * w * d
    payload = np.frombuffer(data[16 : 16 + 4 * n], dtype="<f4")
    if payload.size != n:
        raise ValueError("truncated FVOL payload")
    return CostVolume(payload.reshape(h, w, d).copy())
