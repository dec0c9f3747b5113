"""Shared helpers for the test suite."""

import numpy as np

from rpg.conditioning import CondEmbedding
from rpg.denoisers import parse_gmm_world
from rpg.latents import LatentGrid


def two_cond_world(spread=0.8, var=0.05):
    """Two well-separated single-Gaussian conditionings plus background."""
    return parse_gmm_world(
        f"""
        A | 1.0,{spread},{var}
        B | 1.0,{-spread},{var}
        background | 1.0,0.0,{var}
        """
    )


class ConstDenoiser:
    """Per-cell denoiser that predicts a constant grid per conditioning.

    The constant map makes branch arithmetic easy to verify by hand;
    being elementwise, it also commutes with cropping.
    """

    def __init__(self, values: dict[str, float]):
        self.values = values
        self.calls = []

    def predict_x0(self, z_t: LatentGrid, t: int, cond: CondEmbedding) -> LatentGrid:
        self.calls.append((t, cond.id, z_t.data.shape))
        value = np.float32(self.values[cond.id])
        return LatentGrid(np.full(z_t.data.shape, value, dtype=np.float32))


class EchoDenoiser:
    """Predicts the input unchanged; useful for bit-tracking tests."""

    def predict_x0(self, z_t: LatentGrid, t: int, cond: CondEmbedding) -> LatentGrid:
        return z_t
