import logging
import math
from dataclasses import dataclass

import numpy as np

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import frozen_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentationMap:
    seg: np.ndarray

    def __post_init__(self):
        seg = np.asarray(self.seg)
        if seg.ndim != 2 or seg.size == 0:
            raise ValidationError(f"segmentation must be a non-empty H x W map, got {seg.shape}")
        if not np.issubdtype(seg.dtype, np.integer):
            if not np.all(np.isfinite(seg)) or np.any(seg != np.round(seg)):
                raise ValidationError("segmentation ids must be integers")
        seg = seg.astype(np.int64)
        if seg.min() < 0:
            raise ValidationError("segmentation ids must be non-negative")
        counts = np.bincount(seg.ravel())
        missing = np.flatnonzero(counts == 0)
        if missing.size:
            raise ValidationError(
                f"segmentation ids must cover [0, {counts.size}); missing {missing[:10].tolist()}"
            )
        object.__setattr__(self, "seg", frozen_array(seg, dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.seg.shape

    @property
    def num_superpixels(self) -> int:
        return int(self.seg.max()) + 1

    def sizes(self) -> np.ndarray:
        return np.bincount(self.seg.ravel(), minlength=self.num_superpixels)

    def region_means(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.shape:
            raise ValidationError(f"image shape {image.shape} does not match segmentation {self.shape}")
        sums = np.bincount(self.seg.ravel(), weights=image.ravel(), minlength=self.num_superpixels)
        return sums / self.sizes()

    def paint(self, values) -> np.ndarray:
        """Broadcast one value per superpixel onto the pixel grid."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.num_superpixels,):
            raise ValidationError(f"{values.shape} values for {self.num_superpixels} superpixels")
        return values[self.seg]


def grid_superpixels(h: int, w: int, cell: int) -> SegmentationMap:
    """Square cells in row-major order; edge cells are truncated."""
    if cell < 1:
        raise ValidationError(f"cell must be >= 1, got {cell}")
    if h < 1 or w < 1:
        raise ValidationError(f"image size must be positive, got {h} x {w}")
    if cell > min(h, w):
        logger.warning(f"Cell {cell} exceeds image size {h} x {w}; using a single superpixel")
        return SegmentationMap(np.zeros((h, w), dtype=np.int64))
    rows = np.arange(h)[:, None] // cell
    cols = np.arange(w)[None, :] // cell
    return SegmentationMap(rows * math.ceil(w / cell) + cols)
