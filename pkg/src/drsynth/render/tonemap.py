"""Linear radiance to display-referred 8-bit sRGB."""

from __future__ import annotations

import numpy as np

from ..material import linear_to_srgb


def tone_map(hdr: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Reinhard curve x / (1 + x) after exposure, then the sRGB transfer, rounded to uint8."""
    x = np.nan_to_num(np.asarray(hdr, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0)
    x = np.maximum(x * exposure, 0.0)
    mapped = linear_to_srgb(x / (1.0 + x))
    return np.clip(np.rint(mapped * 255.0), 0, 255).astype(np.uint8)
