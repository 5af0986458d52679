"""Regenerate tests/data/corpus: 224x224 RGB crops of scikit-image sample images.

Dev-only helper; scikit-image is not a runtime dependency.
"""
import os
import sys

import numpy as np
from skimage import data, transform

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from napmat import netpbm  # noqa: E402

NAMES = ["astronaut", "camera", "coffee", "chelsea", "rocket", "moon", "coins",
         "immunohistochemistry", "grass", "gravel", "brick", "cat", "hubble_deep_field",
         "colorwheel", "clock", "retina", "cell"]
SIDE = 224


def square_crop(img):
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top:top + s, left:left + s]


def to_rgb(img):
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return img[..., :3]


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name in NAMES:
        img = to_rgb(square_crop(getattr(data, name)()))
        small = transform.resize(img, (SIDE, SIDE), anti_aliasing=True, preserve_range=True)
        small = np.clip(np.rint(small), 0, 255).astype(np.uint8)
        netpbm.write(os.path.join(out_dir, f"{name}.ppm"), small)
        print(name)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else
         os.path.join(os.path.dirname(__file__), "..", "tests", "data", "corpus"))
