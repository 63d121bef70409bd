"""Vanishing bias of the self-normalized batch target.

The batch target is a self-normalized importance-sampling estimate of the
exact score, so it carries an O(1/n) mean shift plus a 1/sqrt(n)-per-draw
fluctuation.  This script measures the RMS deviation of the brute-force
minimizer from the exact score on the 8-mode ring at a fixed noisy point,
with the trial budget growing linearly in n so both components enter at the
same 1/n rate, and fits the log-log slope (expect about -1).

Run:  python demos/bias_decay_ring.py
"""

import numpy as np

from stf_lab import brute_force_stf_minimizer, make_ring, marginal_score, ve

ring = make_ring(8, 2.0, 0.05)
schedule = ve(0.01, 50.0)
t = 0.5
xt = np.array([2.5, 0.0])
truth = marginal_score(ring, schedule, xt, t)
print(f"xt = {xt}, t = {t}, exact score = {truth}")

rng = np.random.default_rng(0)
base_trials, repeats = 150, 6
rows = []
for n in (2, 8, 32, 128, 512):
    sq = 0.0
    for _ in range(repeats):
        est = brute_force_stf_minimizer(ring, schedule, xt, t, n, base_trials * n, rng)
        sq += float(np.sum((est - truth) ** 2))
    rows.append((n, np.sqrt(sq / repeats)))
    print(f"n={n:4d}  rms deviation = {rows[-1][1]:.3e}")

ns = np.array([r[0] for r in rows], dtype=float)
es = np.array([r[1] for r in rows])
slope = np.polyfit(np.log(ns), np.log(es), 1)[0]
print(f"\nlog-log slope: {slope:.3f}  (asymptotic unbiasedness shows as ~ -1)")
