"""Every sampler, driven by the exact score oracle on the 8-mode ring.

Generation needs no trained network here: the analytic score source removes
training error from the loop, so differences between methods are purely
integrator properties.  Prints per-method mode occupancy, the worst distance
to a mode center, and energy distance against fresh data draws.

Run:  python demos/sampler_gallery.py
"""

import numpy as np

from stf_lab import (
    AnalyticScore,
    energy_distance,
    make_ring,
    sample_data,
    sample_euler,
    sample_euler_maruyama,
    sample_heun,
    sample_pc,
    sample_rk45,
    ve,
)

ring = make_ring(8, 2.0, 0.05)
schedule = ve(0.01, 50.0)
source = AnalyticScore(ring, schedule)
batch = 4000
reference = sample_data(ring, batch, np.random.default_rng(99))

runs = {
    "heun N=18 (NFE 35)": lambda rng: (sample_heun(source, schedule, 18, batch, rng), 35),
    "heun N=64": lambda rng: (sample_heun(source, schedule, 64, batch, rng), 127),
    "euler N=128": lambda rng: (sample_euler(source, schedule, 128, batch, rng), 128),
    "rk45 tol=1e-5": lambda rng: sample_rk45(source, schedule, 1e-5, 1e-5, batch, rng),
    "euler-maruyama N=1000": lambda rng: (sample_euler_maruyama(source, schedule, 1000, batch, rng), 1000),
    "pc N=500 snr=0.16": lambda rng: (sample_pc(source, schedule, 500, 0.16, 1, batch, rng), 1000),
}

print(f"{'method':>24} {'nfe/sample':>11} {'worst mode dist':>16} {'min/max occupancy':>18} {'energy dist':>12}")
for name, fn in runs.items():
    out = fn(np.random.default_rng(0))
    samples, nfe = out
    nfe_per = nfe / batch if nfe > 2000 else nfe
    d = np.linalg.norm(samples[:, None, :] - ring.means[None], axis=2)
    occupancy = np.bincount(d.argmin(axis=1), minlength=8) / batch
    ed = energy_distance(samples, reference)
    print(f"{name:>24} {nfe_per:11.1f} {d.min(axis=1).max():16.3f} "
          f"{occupancy.min():8.3f}/{occupancy.max():5.3f} {ed:12.4f}")
