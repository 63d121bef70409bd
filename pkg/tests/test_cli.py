"""Driver subcommands: files, fingerprints, determinism, exit codes."""

import json

import numpy as np
import pytest

from stf_lab import cli
from stf_lab.metrics import energy_distance


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture
def scan_config(tmp_path):
    return _write(tmp_path, "scan.json", {
        "seed": 3,
        "out": str(tmp_path / "out_scan"),
        "dataset": {"kind": "two_gaussians", "dim": 8, "offset": 0.2, "sigma_hat": 0.0},
        "schedule": {"kind": "ve", "sigma_min": 0.01, "sigma_max": 50.0,
                     "time_sampler": {"kind": "uniform", "t_min": 1e-5}},
        "variance_scan": {"t_grid": [0.1, 0.3, 0.5, 0.7, 0.9], "n_list": [1, 8],
                          "outer": 32, "inner": 8},
    })


@pytest.fixture
def train_config(tmp_path):
    return _write(tmp_path, "train.json", {
        "seed": 1,
        "out": str(tmp_path / "out_train"),
        "dataset": {"kind": "ring", "modes": 4, "radius": 1.0, "sigma_hat": 0.05},
        "schedule": {"kind": "ve", "sigma_min": 0.01, "sigma_max": 10.0,
                     "time_sampler": {"kind": "uniform", "t_min": 1e-5}},
        "objective": {"kind": "stf", "n": 32, "batch": 16},
        "trainer": {"steps": 60, "eval_every": 30, "quick_samples": 128,
                    "probes_per_t": 32, "hidden": [16, 16], "checkpoint_every": 30},
        "sampler": {"method": "heun", "steps": 16, "batch": 256},
    })


class TestVarianceScan:
    def test_outputs_and_verify(self, scan_config, tmp_path, capsys):
        assert cli.main(["variance-scan", "--config", scan_config]) == 0
        out = tmp_path / "out_scan"
        lines = (out / "variance_scan.csv").read_text().splitlines()
        assert lines[0].startswith("# config_fingerprint=")
        assert len(lines) == 2 + 5
        sidecar = json.loads((out / "variance_scan.json").read_text())
        assert sidecar["config_fingerprint"] == lines[0].split("=", 1)[1]
        assert "normalized" in sidecar and "peak_t" in sidecar
        assert cli.main(["verify", "--out", str(out)]) == 0

    def test_deterministic_rerun(self, scan_config, tmp_path):
        cli.main(["variance-scan", "--config", scan_config, "--out", str(tmp_path / "a")])
        cli.main(["variance-scan", "--config", scan_config, "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "variance_scan.csv").read_bytes()
        b = (tmp_path / "b" / "variance_scan.csv").read_bytes()
        assert a == b

    def test_verify_catches_tampering(self, scan_config, tmp_path):
        out = tmp_path / "out_scan"
        cli.main(["variance-scan", "--config", scan_config])
        sidecar = json.loads((out / "variance_scan.json").read_text())
        sidecar["config"]["seed"] = 999
        (out / "variance_scan.json").write_text(json.dumps(sidecar))
        assert cli.main(["verify", "--out", str(out)]) == 3


class TestTrain:
    def test_log_and_checkpoint(self, train_config, tmp_path):
        assert cli.main(["train", "--config", train_config]) == 0
        out = tmp_path / "out_train"
        lines = (out / "train_log.csv").read_text().splitlines()
        assert lines[1] == "step,loss,score_mse,energy_distance"
        assert len(lines) == 2 + 2  # evals at steps 30 and 60
        assert (out / "checkpoint.json").exists()

    def test_deterministic_and_resume(self, train_config, tmp_path):
        cli.main(["train", "--config", train_config, "--out", str(tmp_path / "t1")])
        cli.main(["train", "--config", train_config, "--out", str(tmp_path / "t2")])
        assert (tmp_path / "t1" / "train_log.csv").read_bytes() == \
               (tmp_path / "t2" / "train_log.csv").read_bytes()

        # resume from the mid-run checkpoint reproduces the full run's net
        mid = json.loads((tmp_path / "t1" / "checkpoint.json").read_text())
        assert mid["step"] == 60
        cfg = json.loads(open(train_config).read())
        cfg["trainer"]["steps"] = 30
        half = _write(tmp_path, "half.json", cfg)
        cli.main(["train", "--config", half, "--out", str(tmp_path / "t3")])
        cfg["trainer"]["steps"] = 60
        full = _write(tmp_path, "full.json", cfg)
        cli.main(["train", "--config", full, "--out", str(tmp_path / "t4"),
                  "--resume", str(tmp_path / "t3" / "checkpoint.json")])
        a = json.loads((tmp_path / "t1" / "checkpoint.json").read_text())
        b = json.loads((tmp_path / "t4" / "checkpoint.json").read_text())
        assert a["weights"] == b["weights"]

    def test_rejects_n_below_batch(self, train_config, tmp_path):
        cfg = json.loads(open(train_config).read())
        cfg["objective"]["n"] = 4
        bad = _write(tmp_path, "bad.json", cfg)
        assert cli.main(["train", "--config", bad]) == 2


class TestSample:
    def test_analytic_heun_nfe_sidecar(self, train_config, tmp_path):
        cfg = json.loads(open(train_config).read())
        cfg["sampler"] = {"method": "heun", "steps": 18, "batch": 64}
        path = _write(tmp_path, "s.json", cfg)
        out = tmp_path / "smp"
        assert cli.main(["sample", "--config", path, "--analytic", "--out", str(out)]) == 0
        sidecar = json.loads((out / "samples.json").read_text())
        assert sidecar["nfe"]["per_sample"] == 35
        rows = (out / "samples.csv").read_text().splitlines()
        assert rows[1] == "x0,x1"
        assert len(rows) == 2 + 64

    def test_requires_source(self, train_config):
        assert cli.main(["sample", "--config", train_config]) == 2

    def test_checkpoint_roundtrip(self, train_config, tmp_path):
        cli.main(["train", "--config", train_config])
        ck = str(tmp_path / "out_train" / "checkpoint.json")
        out = tmp_path / "net_samples"
        assert cli.main(["sample", "--config", train_config, "--checkpoint", ck,
                         "--out", str(out)]) == 0
        assert (out / "samples.csv").exists()

    def test_fixed_seed_identical_csv(self, train_config, tmp_path):
        cli.main(["sample", "--config", train_config, "--analytic", "--out", str(tmp_path / "sa")])
        cli.main(["sample", "--config", train_config, "--analytic", "--out", str(tmp_path / "sb")])
        assert (tmp_path / "sa" / "samples.csv").read_bytes() == \
               (tmp_path / "sb" / "samples.csv").read_bytes()

    def test_mode_recovery_analytic_ring(self, train_config, tmp_path):
        cfg = json.loads(open(train_config).read())
        cfg["dataset"] = {"kind": "ring", "modes": 8, "radius": 2.0, "sigma_hat": 0.05}
        cfg["schedule"]["sigma_max"] = 50.0
        cfg["sampler"] = {"method": "heun", "steps": 64, "batch": 2000}
        path = _write(tmp_path, "ring.json", cfg)
        out = tmp_path / "ring_out"
        cli.main(["sample", "--config", path, "--analytic", "--out", str(out)])
        pts = np.array([[float(v) for v in line.split(",")]
                        for line in (out / "samples.csv").read_text().splitlines()[2:]])
        from stf_lab.datasets import make_ring
        means = make_ring(8, 2.0, 0.05).means
        nearest = np.linalg.norm(pts[:, None, :] - means[None], axis=2).min(axis=1)
        assert nearest.max() < 4 * 0.05 + 0.1


class TestEval:
    def test_identical_sets_zero(self, train_config, tmp_path, capsys):
        out = tmp_path / "e1"
        cli.main(["sample", "--config", train_config, "--analytic", "--out", str(tmp_path / "sx")])
        csv = str(tmp_path / "sx" / "samples.csv")
        assert cli.main(["eval", "--config", train_config, "--a", csv, "--b", csv,
                         "--out", str(out)]) == 0
        metrics = json.loads((out / "eval.json").read_text())["metrics"]
        assert metrics["energy_distance"] == pytest.approx(0.0, abs=1e-12)

    def test_singleton_closed_form(self):
        a = np.zeros((1, 3))
        b = np.eye(3)[:1]
        assert energy_distance(a, b) == pytest.approx(2.0, rel=1e-14)

    def test_null_calibration_same_gaussian(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((10_000, 1))
        b = rng.standard_normal((10_000, 1))
        assert energy_distance(a, b) < 0.01

    def test_dimension_mismatch(self, train_config, tmp_path):
        pa = tmp_path / "a.csv"
        pb = tmp_path / "b.csv"
        pa.write_text("# config_fingerprint=x\nx0\n0.0\n")
        pb.write_text("# config_fingerprint=x\nx0,x1\n0.0,0.0\n")
        assert cli.main(["eval", "--config", train_config, "--a", str(pa),
                         "--b", str(pb)]) == 2


class TestConfigHandling:
    def test_missing_file(self):
        assert cli.main(["variance-scan", "--config", "no_such_file.json"]) == 2

    def test_unknown_keys_rejected(self, tmp_path):
        path = _write(tmp_path, "bad.json", {
            "seed": 0, "out": str(tmp_path / "o"),
            "dataset": {"kind": "ring", "modez": 4},
            "schedule": {"kind": "ve"},
        })
        assert cli.main(["variance-scan", "--config", path]) == 2

    def test_bundled_configs_load(self):
        from stf_lab.config import load_config
        for name in ("two_gaussians_64d", "ring8_2d", "empirical_demo"):
            cfg = load_config(name)
            assert "dataset" in cfg and "schedule" in cfg

    def test_seed_override_changes_fingerprint(self, scan_config, tmp_path):
        cli.main(["variance-scan", "--config", scan_config, "--out", str(tmp_path / "f1")])
        cli.main(["variance-scan", "--config", scan_config, "--out", str(tmp_path / "f2"),
                  "--seed", "99"])
        fp1 = (tmp_path / "f1" / "variance_scan.csv").read_text().splitlines()[0]
        fp2 = (tmp_path / "f2" / "variance_scan.csv").read_text().splitlines()[0]
        assert fp1 != fp2
