"""Per-sample vs batch objective, trained head to head on the ring.

A scaled-down version of the training-speed comparison: same data, same
network, same seeds; only the target computation differs.  Writes a combined
comparison CSV (one block per objective/seed) and prints the medians.
Budgets here are demo-sized; the acceptance suite runs the full 20k-step
protocol.

Run:  python demos/train_ring_comparison.py [out.csv]
"""

import sys

import numpy as np

from stf_lab import NetScore, TrainConfig, energy_distance, make_ring, sample_data, sample_heun, train, ve
from stf_lab.config import write_csv
from stf_lab.kernels import TimeSampler

ring = make_ring(8, 2.0, 0.05)
schedule = ve(0.01, 50.0)
sampler = TimeSampler(kind="uniform", t_min=1e-5)
steps, seeds = 4000, (0, 1)

rows = []
for label, objective, n in [("dsm", "dsm", 1), ("stf_n256", "stf", 256)]:
    finals = []
    for seed in seeds:
        cfg = TrainConfig(dataset=ring, schedule=schedule, time_sampler=sampler,
                          objective=objective, n=n, batch_size=128, steps=steps,
                          eval_every=1000, probes_per_t=256)
        net, log = train(cfg, np.random.default_rng(seed))
        gen = sample_heun(NetScore(net), schedule, 64, 2048, np.random.default_rng(7))
        ref = sample_data(ring, 2048, np.random.default_rng(8))
        ed = energy_distance(gen, ref)
        finals.append((log.rows[-1]["score_mse"], ed))
        for r in log.rows:
            rows.append([label, seed, r["step"], r["loss"], r["score_mse"]])
        print(f"{label} seed {seed}: final score_mse={finals[-1][0]:.4f} "
              f"energy_distance={ed:.4f}")
    med = np.median([f[0] for f in finals]), np.median([f[1] for f in finals])
    print(f"== {label}: median score_mse={med[0]:.4f} median energy_distance={med[1]:.4f}\n")

out = sys.argv[1] if len(sys.argv) > 1 else "ring_comparison.csv"
write_csv(out, ["objective", "seed", "step", "loss", "score_mse"], rows, fingerprint="demo")
print(f"wrote {out}")
