"""Shared fixtures-in-spirit: brute-force oracles and a miniature profile."""

import numpy as np

from egowm.embeddings import ScaleProfile
from egowm.tensor import Parameter
from egowm.worldmodel import ModelConfig

MINI = ScaleProfile(
    name="mini",
    frames=5,
    image_size=16,
    token_width=16,
    hand_hidden=4,
    ref_hidden=4,
    motion_down_channels=8,
    motion_stage_channels=(8, 8),
    latent_channels=4,
)

MINI_CFG = ModelConfig(
    profile=MINI, blocks=2, adapter_depth=1, heads=2, mlp_ratio=2, codec_channels=(6, 8, 10)
)


def brute_centroid(mask):
    """Pure-python enumeration of foreground pixel coordinates."""
    total_x = total_y = count = 0
    for y in range(mask.shape[0]):
        for x in range(mask.shape[1]):
            if mask[y, x] > 0.5:
                total_x += x
                total_y += y
                count += 1
    if count == 0:
        return None
    return total_x / count, total_y / count


def brute_orientation(mask):
    """Loop-based central moments, eigenvalues via the quadratic formula."""
    cen = brute_centroid(mask)
    if cen is None:
        return None
    cx, cy = cen
    mu20 = mu02 = mu11 = 0.0
    count = 0
    for y in range(mask.shape[0]):
        for x in range(mask.shape[1]):
            if mask[y, x] > 0.5:
                mu20 += (x - cx) ** 2
                mu02 += (y - cy) ** 2
                mu11 += (x - cx) * (y - cy)
                count += 1
    mu20, mu02, mu11 = mu20 / count, mu02 / count, mu11 / count
    theta = 0.5 * np.arctan2(2 * mu11, mu20 - mu02)
    tr = mu20 + mu02
    det = mu20 * mu02 - mu11 * mu11
    disc = np.sqrt(max(tr * tr / 4 - det, 0.0))
    lam1, lam2 = tr / 2 + disc, tr / 2 - disc
    alpha = (lam1 - lam2) / (lam1 + lam2 + 1e-12)
    return theta, alpha, count


def random_mask(rng):
    mask = np.zeros((24, 30), np.float32)
    n_blobs = rng.integers(1, 4)
    for _ in range(n_blobs):
        cy, cx = rng.integers(2, 22), rng.integers(2, 28)
        ry, rx = rng.integers(1, 6), rng.integers(1, 6)
        ys, xs = np.ogrid[:24, :30]
        mask[((ys - cy) / max(ry, 1)) ** 2 + ((xs - cx) / max(rx, 1)) ** 2 <= 1.0] = 1.0
    return mask


class TiedSlice(Parameter):
    """Expose the first k elements of a parameter for finite differencing."""

    def __new__(cls, base: Parameter, k: int):
        return object.__new__(cls)

    def __init__(self, base: Parameter, k: int):
        self._base = base
        self._k = k
        self.name = base.name + f"[:{k}]"

    @property
    def data(self):
        return self._base.data.reshape(-1)[: self._k]

    @data.setter
    def data(self, value):
        self._base.data.reshape(-1)[: self._k] = value

    @property
    def grad(self):
        if self._base.grad is None:
            return None
        return self._base.grad.reshape(-1)[: self._k]

    def zero_grad(self):
        self._base.zero_grad()
