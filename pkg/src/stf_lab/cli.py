"""Experiment driver.

Usage:

    stf-lab variance-scan --config two_gaussians_64d [--seed N] [--out DIR]
    stf-lab train         --config ring8_2d [--resume CKPT]
    stf-lab sample        --config CFG (--analytic | --checkpoint CKPT)
    stf-lab eval          --config CFG --a SAMPLES.csv [--b OTHER.csv]
    stf-lab verify        --out DIR

Configs are JSON (bundled names: two_gaussians_64d, ring8_2d,
empirical_demo); flags override config keys.  Every output file carries a
fingerprint of the resolved config and all subcommands are deterministic
given the seed.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import model as model_mod
from .config import (
    ConfigError,
    build_dataset,
    build_schedule,
    build_time_sampler,
    canonical_fingerprint,
    load_config,
    read_csv_fingerprint,
    resolve,
    write_csv,
    write_sidecar,
)
from .datasets import sample_data
from .kernels import NoiseSchedule
from .metrics import energy_distance, moment_diagnostics
from .samplers import (
    AnalyticScore,
    NetScore,
    StepSizeUnderflow,
    sample_euler,
    sample_euler_maruyama,
    sample_heun,
    sample_pc,
    sample_rk45,
)
from .variance import phase_scan


def _fingerprint_of(resolved: dict) -> str:
    return canonical_fingerprint({k: v for k, v in resolved.items() if k not in ("out", "threads")})


def _prepare(args) -> tuple[dict, str]:
    cfg = load_config(args.config)
    resolved = resolve(cfg, {"seed": args.seed, "out": args.out, "threads": args.threads})
    os.makedirs(resolved["out"], exist_ok=True)
    return resolved, _fingerprint_of(resolved)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_variance_scan(args) -> int:
    cfg, fp = _prepare(args)
    dist = build_dataset(cfg)
    schedule = build_schedule(cfg)
    sec = cfg.get("variance_scan", {})
    t_grid = sec.get("t_grid", [round(0.05 + 0.1 * i, 2) for i in range(10)])
    n_list = sec.get("n_list", [1, 16, 64, 256])
    outer = int(sec.get("outer", 512))
    inner = int(sec.get("inner", 64))
    rng = np.random.default_rng(cfg["seed"])
    report = phase_scan(dist, schedule, t_grid, n_list, outer, inner, rng, fingerprint=fp)
    out = cfg["out"]
    report.to_csv(os.path.join(out, "variance_scan.csv"))
    norm = {k: v.tolist() for k, v in report.normalized().items()}
    write_sidecar(os.path.join(out, "variance_scan.json"), cfg, fp,
                  extra={"normalized": norm, "peak_t": report.peak_t()})
    peak = report.peak_t()
    interior = min(t_grid) < peak < max(t_grid)
    print(f"v_dsm peak at t={peak:g} (interior: {interior})")
    dpp = report.d_post_p0
    dec = bool(np.all(dpp[1:] <= dpp[:-1] + 2 * np.where(np.isfinite(report.d_post_p0_se[:-1]),
                                                         report.d_post_p0_se[:-1], np.inf)))
    print(f"d(t) posterior||p0 nonincreasing (2 se): {dec}")
    print(f"wrote {out}/variance_scan.csv")
    return 0


def _train_config(cfg: dict, dist, schedule, tsampler) -> model_mod.TrainConfig:
    obj = cfg.get("objective", {})
    tr = cfg.get("trainer", {})
    try:
        return model_mod.TrainConfig(
            dataset=dist,
            schedule=schedule,
            time_sampler=tsampler,
            objective=obj.get("kind", "dsm"),
            n=int(obj.get("n", obj.get("batch", 128))),
            batch_size=int(obj.get("batch", 128)),
            steps=int(tr.get("steps", 1000)),
            lr=float(tr.get("lr", 1e-3)),
            betas=tuple(tr.get("betas", (0.9, 0.999))),
            eps=float(tr.get("eps", 1e-8)),
            eval_every=int(tr.get("eval_every", 500)),
            hidden=tuple(tr.get("hidden", (128, 128, 128))),
            probes_per_t=int(tr.get("probes_per_t", 512)),
        )
    except ValueError as exc:
        raise ConfigError(f"objective/trainer: {exc}") from exc


def cmd_train(args) -> int:
    cfg, fp = _prepare(args)
    dist = build_dataset(cfg)
    schedule = build_schedule(cfg)
    tsampler = build_time_sampler(cfg)
    tconf = _train_config(cfg, dist, schedule, tsampler)
    tr = cfg.get("trainer", {})
    quick = int(tr.get("quick_samples", 2048))
    heun_steps = int(cfg.get("sampler", {}).get("steps", 64))
    seed = cfg["seed"]

    def hook(net, step):
        gen = sample_heun(NetScore(net), schedule, heun_steps, quick,
                          np.random.default_rng([seed, 7, step]))
        ref = sample_data(dist, quick, np.random.default_rng([seed, 8, step]))
        return {"energy_distance": energy_distance(gen, ref)}

    out = cfg["out"]
    ckpt = os.path.join(out, "checkpoint.json")
    rng = np.random.default_rng(seed)
    try:
        net, log = model_mod.train(
            tconf, rng, eval_hook=hook, checkpoint_path=ckpt,
            checkpoint_every=int(tr.get("checkpoint_every", 0)),
            resume_from=args.resume,
        )
    except model_mod.TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    names = ["step", "loss", "score_mse", "energy_distance"]
    rows = [[r[c] for c in names] for r in log.rows]
    write_csv(os.path.join(out, "train_log.csv"), names, rows, fingerprint=fp)
    write_sidecar(os.path.join(out, "train.json"), cfg, fp,
                  extra={"final_score_mse": log.rows[-1]["score_mse"],
                         "final_energy_distance": log.rows[-1]["energy_distance"]})
    print(f"final score_mse={log.rows[-1]['score_mse']:.6g} "
          f"energy_distance={log.rows[-1]['energy_distance']:.6g}")
    print(f"wrote {out}/train_log.csv and {ckpt}")
    return 0


def _build_source(args, cfg, dist, schedule):
    if args.analytic:
        return AnalyticScore(dist, schedule)
    if not args.checkpoint:
        raise ConfigError("sample needs --analytic or --checkpoint")
    net, _, _, _ = model_mod.load_checkpoint(args.checkpoint)
    if net.dim != dist.dim:
        raise ConfigError(f"checkpoint dimension {net.dim} != dataset dimension {dist.dim}")
    return NetScore(net)


def cmd_sample(args) -> int:
    cfg, fp = _prepare(args)
    dist = build_dataset(cfg)
    schedule = build_schedule(cfg)
    sec = cfg.get("sampler", {})
    method = sec.get("method", "heun")
    steps = int(sec.get("steps", 18))
    batch = int(sec.get("batch", 1000))
    t_end = sec.get("t_end")
    snr = float(sec.get("snr", 0.16))
    corrector_steps = int(sec.get("corrector_steps", 1))
    if method == "pc" and snr <= 0:
        raise ConfigError("sampler.snr must be positive")
    source = _build_source(args, cfg, dist, schedule)
    rng = np.random.default_rng(cfg["seed"])

    if method == "heun":
        samples = sample_heun(source, schedule, steps, batch, rng)
        nfe_total = (2 * steps - 1) * batch
    elif method == "euler":
        samples = sample_euler(source, schedule, steps, batch, rng, t_end=t_end)
        nfe_total = steps * batch
    elif method == "rk45":
        samples, nfe_total = sample_rk45(source, schedule, float(sec.get("atol", 1e-5)),
                                         float(sec.get("rtol", 1e-5)), batch, rng, t_end=t_end)
    elif method == "euler_maruyama":
        samples = sample_euler_maruyama(source, schedule, steps, batch, rng, t_end=t_end)
        nfe_total = steps * batch
    elif method == "pc":
        samples = sample_pc(source, schedule, steps, snr, corrector_steps, batch, rng, t_end=t_end)
        nfe_total = steps * (1 + corrector_steps) * batch
    else:
        raise ConfigError(f"sampler.method: unknown method {method!r}")

    out = cfg["out"]
    names = [f"x{i}" for i in range(samples.shape[1])]
    write_csv(os.path.join(out, "samples.csv"), names, samples, fingerprint=fp)
    nfe = {"total": int(nfe_total), "per_sample": nfe_total / batch, "batch": batch}
    write_sidecar(os.path.join(out, "samples.json"), cfg, fp, extra={"nfe": nfe})
    print(f"wrote {batch} samples to {out}/samples.csv (NFE per sample: {nfe['per_sample']:g})")
    return 0


def _load_samples(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("x0"):
                continue
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ConfigError(f"{path}: no samples")
    return np.asarray(rows)


def cmd_eval(args) -> int:
    cfg, fp = _prepare(args)
    a = _load_samples(args.a)
    if args.b:
        b = _load_samples(args.b)
    else:
        dist = build_dataset(cfg)
        b = sample_data(dist, a.shape[0], np.random.default_rng(cfg["seed"]))
    if a.shape[1] != b.shape[1]:
        raise ConfigError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    metrics = {"energy_distance": energy_distance(a, b)}
    metrics.update(moment_diagnostics(a, b))
    path = os.path.join(cfg["out"], "eval.json")
    write_sidecar(path, cfg, fp, extra={"metrics": metrics})
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return 0


def cmd_verify(args) -> int:
    out = args.out or "."
    sidecars = sorted(glob.glob(os.path.join(out, "*.json")))
    csvs = sorted(glob.glob(os.path.join(out, "*.csv")))
    fps = set()
    ok = True
    for path in sidecars:
        with open(path) as fh:
            payload = json.load(fh)
        if "config" not in payload or "config_fingerprint" not in payload:
            continue
        want = payload["config_fingerprint"]
        got = canonical_fingerprint({k: v for k, v in payload["config"].items()
                                     if k not in ("out", "threads")})
        status = "ok" if want == got else "MISMATCH"
        ok &= want == got
        fps.add(want)
        print(f"{path}: fingerprint {status}")
    for path in csvs:
        try:
            fp = read_csv_fingerprint(path)
        except ValueError as exc:
            print(f"{path}: {exc}")
            ok = False
            continue
        status = "ok" if fp in fps else "MISMATCH"
        ok &= fp in fps
        print(f"{path}: fingerprint {status}")
    if not sidecars and not csvs:
        print(f"{out}: nothing to verify")
    return 0 if ok else 3


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stf-lab", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="config path or bundled name")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="cap on worker count (results are independent of it)")

    common(sub.add_parser("variance-scan", help="target-variance and divergence scan"))
    tr = sub.add_parser("train", help="train a score network")
    common(tr)
    tr.add_argument("--resume", default=None, help="checkpoint to continue from")
    sm = sub.add_parser("sample", help="generate samples")
    common(sm)
    sm.add_argument("--checkpoint", default=None)
    sm.add_argument("--analytic", action="store_true", help="use the exact score oracle")
    ev = sub.add_parser("eval", help="two-sample metrics")
    common(ev)
    ev.add_argument("--a", required=True, help="sample CSV")
    ev.add_argument("--b", default=None, help="second sample CSV (default: fresh data draws)")
    vf = sub.add_parser("verify", help="recompute and check output fingerprints")
    vf.add_argument("--out", default=".")
    return p


_COMMANDS = {
    "variance-scan": cmd_variance_scan,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, StepSizeUnderflow, model_mod.TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
