"""Channel-train augmentation: split rendered images into channels, stack
random channel triples into new images, and feed their luminance back in.

The loop can run indefinitely; capacity bounds the train by evicting the
oldest generated luminance channel while the six base channels persist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    NegativeWeightError,
    TrainTooSmallError,
)
from .render import RasterImage

STANDARD_WEIGHTS = (0.3, 0.59, 0.11)

BASE_TAGS = (
    "texture-R",
    "texture-G",
    "texture-B",
    "texture-gray",
    "depth",
    "depth-sharp",
)


def derived_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Independent, reproducible RNG stream for a (sequence, frame, view) slot."""
    return np.random.default_rng([int(master_seed), *map(int, path)])


@dataclass(frozen=True)
class AugmentConfig:
    seed: int = 0
    weight_mode: str = "standard"
    capacity: int = 10
    count: int = 5

    def __post_init__(self):
        if self.weight_mode not in ("standard", "random"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.capacity < 6:
            raise ValueError("capacity must hold the 6 base channels")
        if self.count < 0:
            raise ValueError("count must be >= 0")


@dataclass
class ChannelTrain:
    """Ordered single-channel rasters with provenance tags; worker-confined."""

    channels: list[RasterImage] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)
    capacity: int = 10

    def __post_init__(self):
        if self.capacity < 6:
            raise ValueError("capacity must be >= 6")
        if len(self.channels) != len(self.tags):
            raise ValueError("channels and tags must align")
        if len(self.channels) > self.capacity:
            raise ValueError("train exceeds capacity")
        sizes = {c.data.shape for c in self.channels}
        if len(sizes) > 1:
            raise DimensionMismatchError(f"mixed channel shapes {sizes}")

    def __len__(self) -> int:
        return len(self.channels)

    def append_luminance(self, img: RasterImage, generation: int) -> None:
        """Add a generated luminance channel, evicting the oldest generated
        one when full.  Base channels are never evicted."""
        if img.channels != 1 or (self.channels and img.data.shape != self.channels[0].data.shape):
            raise DimensionMismatchError("luminance channel shape mismatch")
        if len(self.channels) >= self.capacity:
            for k, tag in enumerate(self.tags):
                if tag.startswith("luminance-generation-"):
                    del self.channels[k]
                    del self.tags[k]
                    break
            else:
                raise TrainTooSmallError("capacity filled by base channels")
        self.channels.append(img)
        self.tags.append(f"luminance-generation-{generation}")


def luminance(img: RasterImage, weights) -> RasterImage:
    """Pixelwise weighted channel sum, clamped to [0, 1].

    When the weights sum to exactly 1.0, pixels with equal channels pass
    through unchanged (the naive weighted sum loses an ulp there).
    """
    if img.channels != 3:
        raise ValueError("luminance expects a 3-channel raster")
    w1, w2, w3 = (float(w) for w in weights)
    if w1 < 0 or w2 < 0 or w3 < 0:
        raise NegativeWeightError(f"weights must be nonnegative, got {weights}")
    if w1 == w2 == w3 == 0.0:
        raise ValueError("weights must not all be zero")
    r, g, b = img.data[..., 0], img.data[..., 1], img.data[..., 2]
    out = w1 * r + w2 * g + w3 * b
    if math.fsum((w1, w2, w3)) == 1.0:
        out = np.where((r == g) & (g == b), r, out)
    return RasterImage(np.clip(out, 0.0, 1.0))


def build_channel_train(
    texture: RasterImage,
    depth: RasterImage,
    depth_sharp: RasterImage,
    capacity: int = 10,
) -> ChannelTrain:
    """Train = [R, G, B, gray, depth, depth-sharp]; gray uses the standard
    luminance weights."""
    if texture.channels != 3:
        raise DimensionMismatchError("texture must have 3 channels")
    if depth.channels != 1 or depth_sharp.channels != 1:
        raise DimensionMismatchError("depth rasters must be single-channel")
    if not (texture.size == depth.size == depth_sharp.size):
        raise DimensionMismatchError("all rasters must share the raster size")
    gray = luminance(texture, STANDARD_WEIGHTS)
    channels = [
        RasterImage(texture.data[..., 0]),
        RasterImage(texture.data[..., 1]),
        RasterImage(texture.data[..., 2]),
        gray,
        depth,
        depth_sharp,
    ]
    return ChannelTrain(channels=channels, tags=list(BASE_TAGS), capacity=capacity)


def generate_augmented(
    train: ChannelTrain, rng: np.random.Generator
) -> tuple[RasterImage, tuple[int, int, int]]:
    """Stack a uniformly random ordered triple of distinct channels as R,G,B."""
    if len(train) < 3:
        raise TrainTooSmallError(f"need >= 3 channels, have {len(train)}")
    idx = tuple(int(i) for i in rng.permutation(len(train))[:3])
    stacked = np.stack([train.channels[i].data for i in idx], axis=-1)
    return RasterImage(stacked), idx


def _draw_weights(mode: str, rng: np.random.Generator) -> tuple[float, float, float]:
    if mode == "standard":
        return STANDARD_WEIGHTS
    u = rng.uniform(size=3)
    s = u.sum()
    w1, w2 = u[0] / s, u[1] / s
    # re-close so the weights sum to exactly 1.0 in floating point
    w3 = max(0.0, 1.0 - (w1 + w2))
    return float(w1), float(w2), w3


def augment_stream(
    texture: RasterImage,
    depth: RasterImage,
    depth_sharp: RasterImage,
    cfg: AugmentConfig,
    train: ChannelTrain | None = None,
) -> list[RasterImage]:
    """Emit cfg.count augmented 3-channel images, feeding luminance back.

    Passing an existing train continues it in place (the caller owns it);
    otherwise a fresh train is built from the three rasters.
    """
    if train is None:
        train = build_channel_train(texture, depth, depth_sharp, cfg.capacity)
    rng = np.random.default_rng(cfg.seed)
    out = []
    for g in range(cfg.count):
        img, _ = generate_augmented(train, rng)
        weights = _draw_weights(cfg.weight_mode, rng)
        train.append_luminance(luminance(img, weights), g)
        out.append(img)
    return out
