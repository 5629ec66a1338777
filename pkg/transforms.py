"""
Orthonormal multi-level 2D Haar transform in the Mallat layout.

Coefficient layout of a rows×cols array with L levels (block sizes h = rows/2^ℓ, w = cols/2^ℓ):
the coarsest LL block sits top-left at [0:h_L, 0:w_L]; at level ℓ (1 = finest) the detail
blocks are LH at [0:h, w:2w], HL at [h:2h, 0:w] and HH at [h:2h, w:2w]. The first letter is the
filter applied along rows of the image (axis 0), the second along columns (axis 1). The
array is flattened row-major.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator

logger = logging.getLogger(__name__)

ORIENTATIONS = ("LH", "HL", "HH")
_SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class WaveletLayout:
    rows: int
    cols: int
    levels: int

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be positive, got {self.levels}")
        step = 2 ** self.levels
        if self.rows < step or self.cols < step or self.rows % step or self.cols % step:
            raise ValueError(f"{self.rows}x{self.cols} is not divisible by 2^{self.levels}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def block_shape(self, level: int):
        return self.rows >> level, self.cols >> level

    def _offset(self, level: int, orientation: str):
        if not 1 <= level <= self.levels:
            raise ValueError(f"level must be in [1, {self.levels}], got {level}")
        h, w = self.block_shape(level)
        if orientation == "LL":
            if level != self.levels:
                raise ValueError("LL coefficients only exist at the coarsest level")
            return 0, 0
        offsets = {"LH": (0, w), "HL": (h, 0), "HH": (h, w)}
        if orientation not in offsets:
            raise ValueError(f"unknown orientation {orientation!r}")
        return offsets[orientation]

    def index(self, level: int, orientation: str, r, c):
        """Flat coefficient index; r and c may be integer arrays."""
        row0, col0 = self._offset(level, orientation)
        return (row0 + np.asarray(r)) * self.cols + col0 + np.asarray(c)

    def block_indices(self, level: int, orientation: str) -> np.ndarray:
        """(h, w) array of the flat indices of one orientation block."""
        h, w = self.block_shape(level)
        r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        return self.index(level, orientation, r, c)

    def children(self, level: int, orientation: str) -> np.ndarray:
        """(h, w, 4) indices of the level-1 finer coefficients under each coefficient of a block."""
        if level < 2:
            raise ValueError("finest-level coefficients have no children")
        h, w = self.block_shape(level)
        r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        kids = [self.index(level - 1, orientation, 2 * r + i, 2 * c + j) for i in (0, 1) for j in (0, 1)]
        return np.stack(kids, axis=-1)


def _check_length(vector, layout: WaveletLayout):
    vector = np.asarray(vector, dtype=float).ravel()
    if vector.size != layout.size:
        raise ValueError(f"expected {layout.size} values for a {layout.rows}x{layout.cols} layout, got {vector.size}")
    return vector


def haar_forward(image, layout: WaveletLayout) -> np.ndarray:
    out = _check_length(image, layout).reshape(layout.rows, layout.cols).copy()
    h, w = layout.rows, layout.cols
    for _ in range(layout.levels):
        block = out[:h, :w]
        even, odd = block[:, 0::2], block[:, 1::2]
        block = np.hstack([(even + odd) * _SQRT_HALF, (even - odd) * _SQRT_HALF])
        even, odd = block[0::2], block[1::2]
        out[:h, :w] = np.vstack([(even + odd) * _SQRT_HALF, (even - odd) * _SQRT_HALF])
        h, w = h // 2, w // 2
    return out.ravel()


def haar_inverse(coeffs, layout: WaveletLayout) -> np.ndarray:
    out = _check_length(coeffs, layout).reshape(layout.rows, layout.cols).copy()
    for level in range(layout.levels, 0, -1):
        h, w = layout.block_shape(level)
        block = out[:2 * h, :2 * w]
        low, high = block[:h], block[h:]
        rows = np.empty_like(block)
        rows[0::2] = (low + high) * _SQRT_HALF
        rows[1::2] = (low - high) * _SQRT_HALF
        low, high = rows[:, :w], rows[:, w:]
        cols = np.empty_like(rows)
        cols[:, 0::2] = (low + high) * _SQRT_HALF
        cols[:, 1::2] = (low - high) * _SQRT_HALF
        out[:2 * h, :2 * w] = cols
    return out.ravel()


def haar_synthesis_operator(layout: WaveletLayout) -> LinearOperator:
    """Ψ⁻¹ as an operator: matvec synthesizes an image, rmatvec (= Ψ) analyzes it."""
    return LinearOperator((layout.size, layout.size),
                          matvec=lambda z: haar_inverse(z, layout),
                          rmatvec=lambda x: haar_forward(x, layout),
                          dtype=np.float64)
