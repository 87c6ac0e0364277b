from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform arc-length sampling ``s_k = s0 + k * ds`` for ``k = 0 .. K-1``."""

    s0: float = 0.0
    ds: float = 0.5
    K: int = 250

    def __post_init__(self) -> None:
        if self.ds <= 0.0:
            raise ValueError(f"grid spacing must be positive, got {self.ds}")
        if self.K < 2:
            raise ValueError(f"grid needs at least 2 samples, got {self.K}")

    @classmethod
    def from_horizon(cls, horizon: float, ds: float = 0.5, s0: float = 0.0) -> "SpatialGrid":
        return cls(s0=s0, ds=ds, K=int(round(horizon / ds)))

    @property
    def s(self) -> np.ndarray:
        return self.s0 + self.ds * np.arange(self.K)

    @property
    def horizon(self) -> float:
        return self.ds * self.K

    @property
    def s_end(self) -> float:
        return self.s0 + self.ds * (self.K - 1)

    def nearest(self, s: float) -> int | None:
        """Index of the sample nearest to ``s``; ``None`` outside the grid by more than ds/2."""
        k = int(np.floor((s - self.s0) / self.ds + 0.5))
        if k < 0 or k >= self.K:
            return None
        return k
