"""Extended-precision direct-sum DFT oracle for the spectral tests.

Writes crates/core/tests/fixtures/dft_oracle.json. Kernel values are stored
with 17 significant digits so they round-trip exactly to f64.
"""
import json
import pathlib

import mpmath
import numpy as np

mpmath.mp.dps = 40
rng = np.random.RandomState(7)


def dft_mag(k):
    rows, cols = k.shape
    out = []
    for u in range(rows):
        for v in range(cols):
            acc = mpmath.mpc(0)
            for y in range(rows):
                for x in range(cols):
                    phase = -2 * mpmath.pi * (mpmath.mpf(u * y) / rows + mpmath.mpf(v * x) / cols)
                    acc += mpmath.mpf(float(k[y, x])) * mpmath.expj(phase)
            out.append(abs(acc))
    return out


def shift(grid, rows, cols):
    out = [None] * (rows * cols)
    for u in range(rows):
        for v in range(cols):
            out[((u + rows // 2) % rows) * cols + (v + cols // 2) % cols] = grid[u * cols + v]
    return out


def fmt(x):
    return float(mpmath.nstr(x, 25))


kernels = []
for _ in range(200):
    rows, cols = rng.randint(1, 8), rng.randint(1, 8)
    k = rng.uniform(-1, 1, size=(rows, cols))
    mags = dft_mag(k)
    kernels.append({
        "rows": int(rows),
        "cols": int(cols),
        "values": [float(v) for v in k.ravel()],
        "magnitude": [fmt(m) for m in mags],
        "energy": fmt(sum(m * m for m in mags)),
    })

t = rng.uniform(-1, 1, size=(8, 3, 3, 3))
slices = [dft_mag(t[o, i]) for o in range(8) for i in range(3)]
mean = [sum(s[j] for s in slices) / len(slices) for j in range(9)]
centered = shift(mean, 3, 3)
total = sum(m * m for m in centered)
within = sum(centered[r * 3 + c] ** 2 for r in range(3) for c in range(3) if (r - 1) ** 2 + (c - 1) ** 2 <= 1)
average = {
    "shape": [8, 3, 3, 3],
    "values": [float(v) for v in t.ravel()],
    "centered_mean": [fmt(m) for m in centered],
    "dc_fraction": fmt(centered[4] ** 2 / total),
    "low_frequency_ratio_r1": fmt(within / total),
}

out = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/dft_oracle.json"
out.write_text(json.dumps({"kernels": kernels, "average": average}, indent=1) + "\n")
print("wrote", out)
