import json

import numpy as np
import pytest

from diffdetect import fileio
from diffdetect.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, main
from diffdetect.diffusion import MlpDiffusion
from diffdetect.errors import ConfigurationError
from diffdetect.models import build_appendix_models


def write_config(tmp_path, **cfg):
    cfg.setdefault("output_dir", str(tmp_path / "out"))
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def n_rows(path):
    return len(path.read_text().splitlines()) - 1


class TestFileFormats:
    def test_dataset_round_trip_is_lossless(self, tmp_path, rng):
        X = rng.standard_normal((50, 3)) * 10.0 ** rng.integers(-5, 5, (50, 3))
        fileio.write_dataset(tmp_path / "d.csv", X)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,x2"
        np.testing.assert_array_equal(fileio.read_dataset(tmp_path / "d.csv", 3), X)

    @pytest.mark.parametrize("kind", ["gaussian", "gbrbm", "quartic"])
    def test_model_round_trip(self, tmp_path, kind):
        pair = build_appendix_models(kind)
        fileio.save_pair(tmp_path / "p.json", pair)
        back = fileio.load_pair(tmp_path / "p.json")
        assert back.p_inf == pair.p_inf and back.p_one == pair.p_one
        fileio.save_model(tmp_path / "m.json", pair.p_one)
        assert fileio.load_model(tmp_path / "m.json") == pair.p_one

    def test_checkpoint_round_trip(self, tmp_path, rng):
        m = MlpDiffusion(4, 5, 0.3, seed=2)
        fileio.save_checkpoint(tmp_path / "c.json", m)
        back = fileio.load_checkpoint(tmp_path / "c.json")
        np.testing.assert_array_equal(back.get_flat(), m.get_flat())

    def test_corrupted_checkpoint(self, tmp_path):
        (tmp_path / "c.json").write_text('{"kind": "mlp", "d": 2}')
        with pytest.raises(ConfigurationError):
            fileio.load_checkpoint(tmp_path / "c.json")

    def test_unknown_config_key(self, tmp_path):
        path = write_config(tmp_path, colour="blue")
        with pytest.raises(ConfigurationError, match="colour"):
            fileio.load_config(path)

    def test_config_hash_stable(self):
        a = fileio.load_config(None, {"seed": 3})
        assert fileio.config_hash(a) == fileio.config_hash(fileio.load_config(None, {"seed": 3}))
        assert fileio.config_hash(a) != fileio.config_hash(fileio.load_config(None, {"seed": 4}))


class TestCommands:
    def test_sample_counts_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path, dataset={"n_train": 1000, "n_test": 100})
        assert main(["sample", "--config", str(cfg)]) == EXIT_OK
        data = tmp_path / "out" / "data"
        counts = {p.name: n_rows(p) for p in sorted(data.glob("*.csv"))}
        assert counts == {"inf_test.csv": 100, "inf_train.csv": 1000,
                          "one_test.csv": 100, "one_train.csv": 1000}
        before = {p.name: p.read_bytes() for p in data.glob("*.csv")}
        assert main(["sample", "--config", str(cfg)]) == EXIT_OK
        assert before == {p.name: p.read_bytes() for p in data.glob("*.csv")}
        manifest = json.loads((tmp_path / "out" / "manifest_sample.json").read_text())
        assert len(manifest["config_hash"]) == 64 and "time" not in json.dumps(manifest)

    def test_quartic_manifest_acceptance(self, tmp_path):
        cfg = write_config(tmp_path, model_kind="quartic", dataset={"n_train": 500, "n_test": 100},
                           mh={"burn_in": 500})
        assert main(["sample", "--config", str(cfg)]) == EXIT_OK
        manifest = json.loads((tmp_path / "out" / "manifest_sample.json").read_text())
        assert set(manifest["acceptance_rates"]) == {"inf_train", "one_train", "inf_test", "one_test"}
        assert all(0.05 <= r <= 0.95 for r in manifest["acceptance_rates"].values())

    def test_train_zero_epochs_saves_initialization(self, tmp_path):
        cfg = write_config(tmp_path, dataset={"n_train": 200, "n_test": 50}, train={"epochs": 0},
                           seed=4)
        assert main(["sample", "--config", str(cfg)]) == EXIT_OK
        assert main(["train", "--config", str(cfg)]) == EXIT_OK
        ck = fileio.load_checkpoint(tmp_path / "out" / "checkpoint.json")
        np.testing.assert_array_equal(ck.get_flat(), MlpDiffusion(8, seed=4).get_flat())
        assert n_rows(tmp_path / "out" / "train_report.csv") == 0

    def test_train_loss_trend(self, tmp_path):
        cfg = write_config(tmp_path, dataset={"n_train": 4000, "n_test": 1000},
                           train={"epochs": 8, "batch_size": 256})
        main(["sample", "--config", str(cfg)])
        assert main(["train", "--config", str(cfg)]) == EXIT_OK
        header, rows = fileio.read_csv(tmp_path / "out" / "train_report.csv")
        assert header == ["epoch", "loss", "divergence_term", "penalty_term", "constraint_value"]
        loss = np.array([float(r[1]) for r in rows])
        assert loss[-3:].mean() < loss[:3].mean()

    def test_train_missing_dataset(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
        assert "inf_train.csv" in capsys.readouterr().err

    def test_roc_files(self, tmp_path):
        cfg = write_config(tmp_path, statistics=["kl", "fisher", "diffusion"], diffusion="identity",
                           roc={"batch_sizes": [1, 100], "n_batches": 50})
        assert main(["roc", "--config", str(cfg)]) == EXIT_OK
        roc = tmp_path / "out" / "roc"
        header, rows = fileio.read_csv(roc / "roc_n100.csv")
        assert header == ["statistic", "batch_size", "threshold", "alpha", "beta"]
        assert (roc / "roc_n1.csv").exists()
        fisher = [r[2:] for r in rows if r[0] == "fisher"]
        assert fisher == [r[2:] for r in rows if r[0] == "diffusion"]
        assert len(fisher) == 2 * 50 + 2
        assert fileio.read_csv(roc / "z_one.csv")[0] == ["sample_index", "z_kl", "z_fisher",
                                                         "z_diffusion"]

    def test_arl_edd_schema(self, tmp_path):
        cfg = write_config(tmp_path, statistics=["kl", "diffusion"], diffusion="optimal",
                           arl_edd={"thresholds": [1, 2], "n_paths": 50})
        assert main(["arl-edd", "--config", str(cfg)]) == EXIT_OK
        header, rows = fileio.read_csv(tmp_path / "out" / "arl_edd.csv")
        assert header == ["statistic", "threshold", "arl", "arl_se", "arl_censored_frac",
                          "edd", "edd_se"]
        assert [r[0] for r in rows] == ["kl", "kl", "diffusion", "diffusion"]

    def test_verify_only(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["verify", "--config", str(cfg), "--only", "gaussian-optimal"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "gaussian-optimal: pass"
        assert [p.name for p in (tmp_path / "out" / "verify").glob("*.txt")] == \
            ["gaussian-optimal.txt"]

    def test_verify_corrupted_checkpoint(self, tmp_path):
        bad = tmp_path / "ck.json"
        bad.write_text("not json")
        cfg = write_config(tmp_path, checkpoint=str(bad))
        assert main(["verify", "--config", str(cfg), "--only", "ode-counterexample"]) == EXIT_CONFIG

    def test_bad_config_value(self, tmp_path):
        cfg = write_config(tmp_path, model_kind="cauchy")
        assert main(["sample", "--config", str(cfg)]) == EXIT_CONFIG

    def test_failed_check_exit_code(self, tmp_path, monkeypatch):
        from diffdetect import cli
        from diffdetect.verification import FAIL, TheoremReport

        monkeypatch.setattr(cli, "run_suite",
                            lambda cfg, only: [TheoremReport("fake", {}, {}, "", FAIL)])
        assert main(["verify", "--config", str(write_config(tmp_path))]) == EXIT_CHECK
