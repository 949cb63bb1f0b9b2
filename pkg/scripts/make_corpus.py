"""Regenerate tests/data/corpus from scikit-image sample data (not a runtime dependency)."""

from pathlib import Path

import numpy as np
import skimage.data
import skimage.transform

from lowrank.io import write_pgm

NAMES = ("camera", "brick", "moon")
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "corpus"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        x = getattr(skimage.data, name)().astype(float)
        x = skimage.transform.resize(x, (256, 256), anti_aliasing=True, preserve_range=True)
        write_pgm(np.clip(x, 0, 255), OUT / f"{name}.pgm")


if __name__ == "__main__":
    main()
