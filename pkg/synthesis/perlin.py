"""
Perlin noise masks.
Generates organic blob-shaped binary masks used as synthetic anomaly regions.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class PerlinParams:
    """
    Parameters of one Perlin mask draw.

    Attributes:
        height: Mask rows (feature resolution H_F)
        width: Mask columns (feature resolution W_F)
        scale_range: (lower, upper) lattice resolutions, powers of two
        threshold: Cut applied to the min-max normalized field, in (0, 1)
        seed: Seed of the draw
    """

    height: int = 64
    width: int = 64
    scale_range: tuple[int, int] = (1, 16)
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"Mask size must be positive, got {self.height}x{self.width}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        lower, upper = self.scale_range
        if not (_is_power_of_two(lower) and _is_power_of_two(upper)):
            raise ValueError(f"scale_range entries must be powers of two, got {self.scale_range}")
        if lower > upper:
            raise ValueError(f"scale_range lower bound exceeds upper bound: {self.scale_range}")


def _fade(t: np.ndarray) -> np.ndarray:
    return ((6 * t - 15) * t + 10) * t * t * t


def rand_perlin_2d(shape: tuple[int, int], res: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """
    Gradient noise on a res[0] x res[1] lattice sampled at shape.

    The shape does not need to be a multiple of the lattice resolution.
    """
    ys = np.arange(shape[0]) * res[0] / shape[0]
    xs = np.arange(shape[1]) * res[1] / shape[1]
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    cell_y = np.floor(grid_y).astype(int)
    cell_x = np.floor(grid_x).astype(int)
    frac_y = grid_y - cell_y
    frac_x = grid_x - cell_x

    angles = 2 * math.pi * rng.random((res[0] + 1, res[1] + 1))
    gradients = np.stack((np.cos(angles), np.sin(angles)), axis=-1)

    def corner(dy: int, dx: int) -> np.ndarray:
        grad = gradients[cell_y + dy, cell_x + dx]
        return grad[..., 0] * (frac_y - dy) + grad[..., 1] * (frac_x - dx)

    t_y = _fade(frac_y)
    t_x = _fade(frac_x)
    n0 = corner(0, 0) + t_y * (corner(1, 0) - corner(0, 0))
    n1 = corner(0, 1) + t_y * (corner(1, 1) - corner(0, 1))
    return math.sqrt(2) * (n0 + t_x * (n1 - n0))


def normalized_noise(params: PerlinParams) -> np.ndarray:
    """
    Rotated, min-max normalized Perlin field in [0, 1] for params.

    A constant field normalizes to all zeros.
    """
    rng = np.random.default_rng(params.seed)
    low_exp = int(math.log2(params.scale_range[0]))
    high_exp = int(math.log2(params.scale_range[1]))
    res_y = 2 ** int(rng.integers(low_exp, high_exp + 1))
    res_x = 2 ** int(rng.integers(low_exp, high_exp + 1))

    noise = rand_perlin_2d((params.height, params.width), (res_y, res_x), rng)

    # quarter turns keep the grid exact; non-square masks only allow half turns
    if params.height == params.width:
        turns = int(rng.integers(0, 4))
    else:
        turns = 2 * int(rng.integers(0, 2))
    noise = np.rot90(noise, turns)

    low, high = noise.min(), noise.max()
    if high - low <= 0:
        return np.zeros_like(noise)
    return np.ascontiguousarray((noise - low) / (high - low))


def binarize_noise(field: np.ndarray, threshold: float) -> np.ndarray:
    """1 where the normalized field exceeds threshold, else 0 (uint8)."""
    return (field > threshold).astype(np.uint8)


def perlin_mask(params: PerlinParams) -> np.ndarray:
    """
    Draw a binary Perlin mask (1 = anomalous region).

    Returns:
        (height, width) uint8 array of {0, 1}, deterministic in params.seed.
    """
    mask = binarize_noise(normalized_noise(params), params.threshold)
    logger.debug(f"Perlin mask seed={params.seed}: {mask.mean():.3f} anomalous fraction")
    return mask
