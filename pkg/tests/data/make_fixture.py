"""Regenerate ``airquality_synthetic.csv``: 500 hourly rows shaped like the
public air-quality file (semicolon delimiter, decimal comma, -200 for missing).

The latent series is a skewed stationary process with a daily cycle; the
sensor column is on a x100 scale.  Run from this directory.
"""

import numpy as np

N = 500
rng = np.random.default_rng(20040310)

hour = np.arange(N) % 24 + 1
cycle = 0.8 * np.sin(2 * np.pi * (hour - 8) / 24) + 0.4 * np.sin(4 * np.pi * (hour - 6) / 24)
a = np.empty(N)
a[0] = 0.0
for t in range(1, N):
    a[t] = 0.8 * a[t - 1] + 0.6 * rng.standard_normal()
x = np.exp(0.5 * a)
co = 1.5 + cycle + 0.7 * x + 0.25 * rng.standard_normal(N)
sensor = 100.0 * (2.0 + 0.5 * cycle + x + 0.45 * rng.standard_normal(N))

co = np.round(co, 1)
sensor = np.round(sensor, 0)
co[rng.choice(N, 18, replace=False)] = -200
sensor[rng.choice(N, 12, replace=False)] = -200


def cell(v):
    return ("%g" % v).replace(".", ",")


with open("airquality_synthetic.csv", "w") as fh:
    fh.write("Date;Time;CO(GT);PT08.S1(CO);hour\n")
    for t in range(N):
        day, h = divmod(t, 24)
        fh.write(f"{day + 1:02d}/01/2004;{h:02d}.00.00;{cell(co[t])};{cell(sensor[t])};{hour[t]}\n")
