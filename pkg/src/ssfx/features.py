"""Per-category layout statistics extracted from segmentation masks.

For each category present in a mask, five statistics are computed: the
fraction of pixels covered, the mean column/row of those pixels, and the
population standard deviation of column/row. Positions are 1-based during
accumulation and normalized by the mask width (x) or height (y), so every
entry lands in [0, 1] and is comparable across mask sizes. Categories with
zero pixels get an all-zero row.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mask import SegmentationMask, ValidationError

__all__ = [
    "COLUMNS",
    "FeatureSubset",
    "SsfMatrix",
    "compute_pixel_counts",
    "normalize_pixel_counts",
    "compute_mean_positions",
    "compute_std_positions",
    "normalize_positions",
    "extract_ssf",
    "select_subset",
]

# Canonical column order of the feature matrix.
COLUMNS = ("pc", "mu_x", "mu_y", "sigma_x", "sigma_y")

# Radicands of the single-pass variance identity may undershoot zero by a few
# ulps through cancellation; anything below this is a genuine arithmetic bug.
_NEG_RADICAND_TOL = -1e-9


@lru_cache(maxsize=8)
def _coordinate_grids(h: int, w: int) -> tuple[np.ndarray, ...]:
    """Flattened 1-based row/column coordinates (and squares) for an h x w grid."""
    jj = np.tile(np.arange(1.0, w + 1.0), h)
    ii = np.repeat(np.arange(1.0, h + 1.0), w)
    jj2 = jj * jj
    ii2 = ii * ii
    for a in (ii, jj, ii2, jj2):
        a.setflags(write=False)
    return ii, jj, ii2, jj2


@dataclass(frozen=True)
class FeatureSubset:
    """Which statistic groups to keep: counts (pc), means (ap), deviations (sd)."""

    pc: bool = True
    ap: bool = True
    sd: bool = True

    def __post_init__(self) -> None:
        if not (self.pc or self.ap or self.sd):
            raise ValidationError("feature subset must enable at least one group")

    @classmethod
    def parse(cls, text: str) -> "FeatureSubset":
        """Parse a comma-separated group list such as ``"pc,ap"``."""
        picked = {"pc": False, "ap": False, "sd": False}
        for token in text.split(","):
            token = token.strip().lower()
            if token not in picked:
                raise ValidationError(f"unknown feature group {token!r}; expected pc, ap, sd")
            picked[token] = True
        return cls(**picked)

    @property
    def num_columns(self) -> int:
        return (1 if self.pc else 0) + (2 if self.ap else 0) + (2 if self.sd else 0)

    def column_indices(self) -> tuple[int, ...]:
        """Indices into the canonical column order, ascending."""
        idx: list[int] = []
        if self.pc:
            idx.append(0)
        if self.ap:
            idx.extend((1, 2))
        if self.sd:
            idx.extend((3, 4))
        return tuple(idx)

    def label(self) -> str:
        if self.pc and self.ap and self.sd:
            return "SSFs"
        return "&".join(
            name for name, on in (("PC", self.pc), ("AP", self.ap), ("SD", self.sd)) if on
        )

    def spec_string(self) -> str:
        return ",".join(
            name for name, on in (("pc", self.pc), ("ap", self.ap), ("sd", self.sd)) if on
        )


@dataclass(frozen=True)
class SsfMatrix:
    """L x 5 feature matrix plus the raw per-category pixel counts."""

    values: np.ndarray
    raw_counts: np.ndarray
    num_categories: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        counts = np.asarray(self.raw_counts, dtype=np.int64)
        if values.shape != (self.num_categories, len(COLUMNS)):
            raise ValidationError(
                f"feature matrix shape {values.shape} does not match "
                f"({self.num_categories}, {len(COLUMNS)})"
            )
        if counts.shape != (self.num_categories,):
            raise ValidationError(f"raw_counts shape {counts.shape} does not match ({self.num_categories},)")
        values.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "raw_counts", counts)

    @property
    def pc(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def mu_x(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def mu_y(self) -> np.ndarray:
        return self.values[:, 2]

    @property
    def sigma_x(self) -> np.ndarray:
        return self.values[:, 3]

    @property
    def sigma_y(self) -> np.ndarray:
        return self.values[:, 4]


def compute_pixel_counts(mask: SegmentationMask) -> np.ndarray:
    """Per-category pixel counts, index n-1 holding the count for category n."""
    vals = mask.category_values().ravel()
    L = mask.num_categories
    return np.bincount(vals, minlength=L + 1)[1 : L + 1].astype(np.int64)


def normalize_pixel_counts(counts: np.ndarray, height: int, width: int) -> np.ndarray:
    """Counts divided by the total pixel count (void included in the total)."""
    if height < 1 or width < 1:
        raise ValidationError(f"invalid mask dimensions {height}x{width}")
    counts = np.asarray(counts)
    total = height * width
    if (counts < 0).any() or (counts > total).any():
        raise ValidationError("pixel counts must lie in [0, height*width]")
    return counts / float(total)


def compute_mean_positions(mask: SegmentationMask, counts: np.ndarray | None = None) -> np.ndarray:
    """Per-category mean (column, row) of member pixels, 1-based; zeros when absent."""
    if counts is None:
        counts = compute_pixel_counts(mask)
    vals = mask.category_values().ravel()
    L = mask.num_categories
    ii, jj, _, _ = _coordinate_grids(mask.height, mask.width)
    sum_j = np.bincount(vals, weights=jj, minlength=L + 1)[1 : L + 1]
    sum_i = np.bincount(vals, weights=ii, minlength=L + 1)[1 : L + 1]
    present = counts > 0
    out = np.zeros((L, 2))
    np.divide(sum_j, counts, out=out[:, 0], where=present)
    np.divide(sum_i, counts, out=out[:, 1], where=present)
    return out


def compute_std_positions(
    mask: SegmentationMask,
    counts: np.ndarray | None = None,
    means: np.ndarray | None = None,
) -> np.ndarray:
    """Per-category population std of (column, row), via a second pass over deviations."""
    if counts is None:
        counts = compute_pixel_counts(mask)
    if means is None:
        means = compute_mean_positions(mask, counts)
    vals = mask.category_values().ravel()
    L = mask.num_categories
    ii, jj, _, _ = _coordinate_grids(mask.height, mask.width)
    # Deviation of each pixel from its own category's mean; void (bin 0) is
    # sliced off, so its bogus deviations never contribute.
    mean_j = np.concatenate(([0.0], means[:, 0]))[vals]
    mean_i = np.concatenate(([0.0], means[:, 1]))[vals]
    dev_j2 = np.bincount(vals, weights=(jj - mean_j) ** 2, minlength=L + 1)[1 : L + 1]
    dev_i2 = np.bincount(vals, weights=(ii - mean_i) ** 2, minlength=L + 1)[1 : L + 1]
    present = counts > 0
    out = np.zeros((L, 2))
    np.divide(dev_j2, counts, out=out[:, 0], where=present)
    np.divide(dev_i2, counts, out=out[:, 1], where=present)
    return np.sqrt(out)


def normalize_positions(pairs: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scale (x, y) pairs by 1/width and 1/height respectively."""
    if height < 1 or width < 1:
        raise ValidationError(f"invalid mask dimensions {height}x{width}")
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValidationError(f"expected an (L, 2) array of pairs, got shape {pairs.shape}")
    return pairs / np.array([float(width), float(height)])


def extract_ssf(mask: SegmentationMask) -> SsfMatrix:
    """Extract the full L x 5 feature matrix in a single pass over the pixels.

    One traversal accumulates, per category, the pixel count and the sums of
    column, row, column^2 and row^2. Standard deviations come out of the
    sum-of-squares identity sigma^2 = E[v^2] - E[v]^2, whose radicand is
    clamped to zero when cancellation leaves it a few ulps negative.
    """
    h, w, L = mask.height, mask.width, mask.num_categories
    vals = mask.category_values().ravel()
    ii, jj, ii2, jj2 = _coordinate_grids(h, w)

    span = L + 1  # bin 0 collects void pixels and is sliced away
    counts = np.bincount(vals, minlength=span)[1:span]
    sum_j = np.bincount(vals, weights=jj, minlength=span)[1:span]
    sum_i = np.bincount(vals, weights=ii, minlength=span)[1:span]
    sum_j2 = np.bincount(vals, weights=jj2, minlength=span)[1:span]
    sum_i2 = np.bincount(vals, weights=ii2, minlength=span)[1:span]

    present = counts > 0
    mu_x = np.zeros(L)
    mu_y = np.zeros(L)
    np.divide(sum_j, counts, out=mu_x, where=present)
    np.divide(sum_i, counts, out=mu_y, where=present)

    var_x = np.zeros(L)
    var_y = np.zeros(L)
    np.divide(sum_j2, counts, out=var_x, where=present)
    np.divide(sum_i2, counts, out=var_y, where=present)
    var_x -= mu_x * mu_x
    var_y -= mu_y * mu_y
    lowest = min(var_x.min(), var_y.min()) if L else 0.0
    if lowest < _NEG_RADICAND_TOL:
        raise ArithmeticError(f"variance radicand {lowest} below clamp threshold {_NEG_RADICAND_TOL}")
    np.maximum(var_x, 0.0, out=var_x)
    np.maximum(var_y, 0.0, out=var_y)

    values = np.empty((L, len(COLUMNS)))
    values[:, 0] = counts / float(h * w)
    values[:, 1] = mu_x / w
    values[:, 2] = mu_y / h
    values[:, 3] = np.sqrt(var_x) / w
    values[:, 4] = np.sqrt(var_y) / h
    return SsfMatrix(values=values, raw_counts=counts, num_categories=L)


def select_subset(matrix: SsfMatrix, subset: FeatureSubset) -> np.ndarray:
    """L x k column selection in canonical order; k = subset.num_columns."""
    return matrix.values[:, list(subset.column_indices())]
