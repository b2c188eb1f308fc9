"""Derive ``airquality_synthetic.golden.json`` for the fixture.

Naive and phase slopes come from oracles written independently of the
package: plain-Python parsing and de-trending, no-intercept least squares,
and a dense-trapezoid double-sine-sum objective minimised on a fine slope
grid.  GMM and bootstrap values are frozen package outputs.
"""

import json
import math
import subprocess
import sys

import numpy as np

SRC = "airquality_synthetic.csv"


def parse():
    rows = []
    with open(SRC) as fh:
        next(fh)
        for line in fh:
            _, _, co, s1, h = line.strip().split(";")
            co, s1 = float(co.replace(",", ".")), float(s1.replace(",", "."))
            if co == -200 or s1 == -200:
                continue
            rows.append((co, s1 / 100.0, int(h)))
    return rows


def detrend(vals, hours):
    out = []
    means = {}
    for k in set(hours):
        sel = [v for v, h in zip(vals, hours) if h == k]
        means[k] = math.fsum(sel) / len(sel)
    for v, h in zip(vals, hours):
        out.append(v - means[h])
    return np.array(out)


rows = parse()
hours = [r[2] for r in rows]
y = detrend([r[0] for r in rows], hours)
w = detrend([r[1] for r in rows], hours)
n = y.size
naive = float(np.dot(w, y) / np.dot(w, w))

# truncation frequency: first point of a 2048-step mesh on (0, 50/IQR] where |ecf| <= n^-1/4
q = np.percentile(y, [25, 75])
tmax = 50.0 / (q[1] - q[0])
mesh = tmax / 2048 * np.arange(1, 2049)
mod = np.abs(np.exp(1j * np.outer(mesh, y)).mean(axis=1))
t_star = float(mesh[np.argmax(mod <= n ** -0.25 + 1e-12)])

tt = np.linspace(0.0, t_star, 4001)
kern = (1.0 - tt / t_star) ** 2


ey = np.exp(1j * np.outer(tt, y)).sum(axis=1)


def trap(f, t):
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t)))


def D(b1):
    # double sine sum as the imaginary part of the factorised double exponential sum
    s = (ey * np.exp(-1j * np.outer(tt, b1 * w)).sum(axis=1)).imag
    return trap(s * s * kern, tt)


def D_literal(b1, m=201):
    t = np.linspace(0.0, t_star, m)
    s = np.array([np.sin(tk * (y[:, None] - b1 * w[None, :])).sum() for tk in t])
    return trap(s * s * (1.0 - t / t_star) ** 2, t)


def D_coarse(b1, m=201):
    t = np.linspace(0.0, t_star, m)
    s = (np.exp(1j * np.outer(t, y)).sum(axis=1) * np.exp(-1j * np.outer(t, b1 * w)).sum(axis=1)).imag
    return trap(s * s * (1.0 - t / t_star) ** 2, t)


for probe in (0.5, 0.7):
    assert abs(D_literal(probe) - D_coarse(probe)) <= 1e-8 * D_literal(probe)


grid = np.linspace(0.3, 1.2, 91)
vals = [D(b) for b in grid]
b = grid[int(np.argmin(vals))]
fine = np.linspace(b - 0.01, b + 0.01, 81)
phase_oracle = float(fine[int(np.argmin([D(v) for v in fine]))])

common = ["--input", SRC, "--delimiter", ";", "--decimal", ",", "--y-col", "CO(GT)", "--w-cols", "PT08.S1(CO)",
          "--w-divisor", "100", "--hour-col", "hour", "--no-intercept", "--quiet"]


def cli(*args):
    out = subprocess.run([sys.executable, "-m", "phaseeiv", *args, *common], capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout)


fit = cli("fit")
gmm = cli("gmm")
boot = cli("bootstrap", "--bootstrap", "plugin", "--block-length", "24", "--B", "50", "--seed", "7")

golden = {
    "n_complete": n,
    "t_star": t_star,
    "naive_slope": naive,
    "phase_slope_oracle": phase_oracle,
    "phase_slope_oracle_step": float(fine[1] - fine[0]),
    "phase_slope": fit["coefficients"]["b1"][0],
    "gmm_slope": gmm["coefficients"]["b1"][0],
    "plugin_block_se": boot["covariance"]["standard_errors"][1],
}
with open("airquality_synthetic.golden.json", "w") as fh:
    json.dump(golden, fh, indent=2)
    fh.write("\n")
print(json.dumps(golden, indent=2))
