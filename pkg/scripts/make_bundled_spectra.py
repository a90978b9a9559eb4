#!/usr/bin/env python3
"""Regenerate the bundled needle/bark/soil spectra CSV.

The library ships three synthetic reflectance spectra on a 10 nm grid over
400-2500 nm with the qualitative structure the toolkit's demos and tests
rely on: needle and bark strongly correlated (~0.95), soil carrying the
highest mean energy, bark the lowest.  Regenerating with the same seed
reproduces the committed file bit for bit.
"""

import csv
import pathlib

import numpy as np

from mslunmix.spectral_library import synth_library

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "mslunmix" / "data" / "needle_bark_soil.csv"

SEED = 7
TARGET_CORR = np.array([[1.0, 0.95, 0.35], [0.95, 1.0, 0.35], [0.35, 0.35, 1.0]])
LEVEL_RANGES = [(0.08, 0.45), (0.03, 0.20), (0.30, 0.72)]


def main():
    lib = synth_library(
        3,
        211,
        TARGET_CORR,
        seed=SEED,
        names=["needle", "bark", "soil"],
        level_ranges=LEVEL_RANGES,
    )
    with open(OUT, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength_nm"] + lib.material_names)
        for i, wl in enumerate(lib.band_wavelengths):
            writer.writerow([repr(float(wl))] + [repr(float(v)) for v in lib.M[i]])
    print(f"wrote {OUT} ({lib.n_bands} rows, {lib.n_materials} materials)")


if __name__ == "__main__":
    main()
