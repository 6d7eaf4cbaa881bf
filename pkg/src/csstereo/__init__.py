"""CPU stereo depth estimation with cost signatures.

Pipeline: census + chroma cost volumes at half resolution, a per-pixel 1x1
reduction of the concatenated costs to a compact signature, and a small
encoder-decoder that turns the signature map into a dense disparity map.
Training runs end to end on the built-in reverse-mode tensor engine.
"""

from .costvolume import (
    CostStats,
    CostVolume,
    build_volumes,
    census_transform,
    chroma_cost_volume,
    compute_cost_stats,
    hamming_cost_volume,
    normalize_volume,
    wta_disparity,
)
from .network import (
    ModelConfig,
    ModelWeights,
    build_model,
    load_weights,
    predict_disparity,
    save_weights,
)
from .pnm import (
    DisparityMap,
    RawImage,
    colorize_disparity,
    decode_disp16,
    decode_ppm,
    encode_disp16,
    encode_ppm,
)
from .preprocess import PlanarImage, downsample2x, rgb_to_yuv
from .synth import SceneSpec, StereoSample, generate_dataset, generate_scene
from .training import TrainConfig, augment_scale, augment_swap_flip, robust_loss, train_loop

__version__ = "0.1.0"
