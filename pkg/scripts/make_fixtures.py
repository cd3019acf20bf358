"""Regenerate the bundled 64x64 fixture crops from scikit-image sample data.

All sources are public domain or CC0. Requires scikit-image (not a runtime
dependency of the package).
"""

from pathlib import Path

import numpy as np
import skimage.data

from mlcsc.io import write_image

# name: (loader, downscale factor, [(row, col), ...]) in downscaled pixels.
# The train crop (_0) and held-out crop (_1) of a source never overlap.
SOURCES = {
    "astronaut": ("astronaut", 4, [(10, 0), (10, 64)]),
    "coffee": ("coffee", 4, [(20, 10), (30, 80)]),
    "chelsea": ("chelsea", 3, [(20, 10), (30, 80)]),
    "rocket": ("rocket", 4, [(20, 20), (30, 90)]),
    "ihc": ("immunohistochemistry", 4, [(0, 0), (64, 64)]),
    "retina": ("retina", 8, [(40, 20), (60, 100)]),
}

OUT = Path(__file__).resolve().parents[1] / "src" / "mlcsc" / "data"


def downscale(img, k):
    h, w = (img.shape[0] // k) * k, (img.shape[1] // k) * k
    img = img[:h, :w].astype(np.float64) / 255.0
    return img.reshape(h // k, k, w // k, k, 3).mean(axis=(1, 3))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (loader, k, corners) in SOURCES.items():
        (r0, c0), (r1, c1) = corners
        assert abs(r0 - r1) >= 64 or abs(c0 - c1) >= 64, f"{name} crops overlap"
        small = downscale(getattr(skimage.data, loader)(), k)
        for j, (r, c) in enumerate(corners):
            crop = small[r:r + 64, c:c + 64]
            assert crop.shape == (64, 64, 3), (name, crop.shape)
            write_image(OUT / f"{name}_{j}.ppm", np.transpose(crop, (2, 0, 1)))


if __name__ == "__main__":
    main()
