import json
from pathlib import Path

import numpy as np
import pytest

from indexnet.bench.comparison import DEFAULT_PAIRINGS, read_csv
from indexnet.cli import main
from indexnet.config import RunConfig, parse_config_text
from indexnet.errors import ConfigError


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def only_run_dir(out_root):
    dirs = sorted(out_root.iterdir())
    assert dirs, "no run directory written"
    return dirs[-1]


class TestConfigFile:
    def test_parse_with_comments(self):
        cfg = parse_config_text("# desk run\nprofile = smoke\nlr_decay_epochs = 1\nseeds = 0, 1  # two\n")
        assert cfg == {"profile": "smoke", "lr_decay_epochs": (1,), "seeds": (0, 1)}

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="'learning_rate'"):
            parse_config_text("learning_rate = 0.1\n")

    def test_duplicate_and_bad_values(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")
        with pytest.raises(ConfigError, match="'epochs'"):
            parse_config_text("epochs = ten\n")

    def test_profile_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("profile = smoke\nepochs = 3\nlr_decay_epochs = 1,2\n")
        tc = RunConfig.load(path, {"lr": 0.005}).train_config()
        assert (tc.epochs, tc.lr_decay_epochs, tc.lr, tc.subset_size) == (3, (1, 2), 0.005, 200)

    def test_dump_round_trips(self):
        cfg = RunConfig.load(None, {"profile": "smoke", "pair": "maxpool_unpool", "seeds": (4,)})
        again = RunConfig.load(None, parse_config_text(cfg.dump()))
        # the dump spells out profile-derived values, so compare the effective run
        assert again.train_config() == cfg.train_config()
        assert (again.seeds, again.test_size_value(), again.pairing()) == (cfg.seeds, cfg.test_size_value(), cfg.pairing())
        assert again.dump() == cfg.dump()

    @pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.cfg")), ids=lambda p: p.name)
    def test_shipped_configs_load(self, path):
        cfg = RunConfig.load(path, {})
        cfg.train_config()
        assert cfg.pairing_list()

    def test_pairing_lists(self):
        assert len(RunConfig().pairing_list()) == 7 == len(DEFAULT_PAIRINGS)
        one = RunConfig.load(None, {"pairs": "ip_iu:m2o_nl_c"}).pairing_list()
        assert [p.key for p in one] == ["ip_iu:m2o_nl_c"]
        with pytest.raises(ConfigError):
            RunConfig.load(None, {"pairs": "bicubic"}).pairing_list()


class TestParamsCommand:
    @pytest.mark.parametrize(
        "argv,count",
        [
            (["--family", "hin", "--variant", "linear", "--k", "2", "--channels", "32"], 512),
            (["--family", "o2o_modelwise", "--variant", "linear", "--k", "2"], 16),
            (["--family", "m2o", "--variant", "linear", "--k", "2", "--channels", "8"], 1024),
        ],
    )
    def test_examples(self, capsys, argv, count):
        code, out, _ = run_cli(capsys, "params", *argv)
        assert code == 0
        assert out.split()[0] == str(count)

    def test_unshared_nl_flagged(self, capsys):
        code, out, _ = run_cli(capsys, "params", "--family", "o2o_unshared_stagewise", "--variant", "nl")
        assert code == 0 and "deviation" in out.lower()

    def test_all(self, capsys):
        code, out, _ = run_cli(capsys, "params", "--all", "--channels", "4")
        assert code == 0 and len([l for l in out.splitlines() if l.strip()]) >= 15

    def test_usage_error(self, capsys):
        assert run_cli(capsys, "params", "--family", "bogus", "--variant", "nl")[0] == 2


class TestGradcheckCommand:
    def test_pass(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--family", "m2o", "--variant", "nl_c", "--indexnet-only")
        assert code == 0 and "PASS" in out

    def test_corrupted_backward_fails_naming_op(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--family", "hin", "--variant", "linear", "--corrupt", "conv2d")
        assert code == 1
        assert "FAIL" in out and "conv2d" in out


class TestTrainCommand:
    def test_missing_dataset(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "train", "--profile", "smoke", "--data", tmp_path / "nowhere", "--out", tmp_path)
        assert code == 2 and "dataset not found" in err

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("profile = smoke\nbatchsize = 4\n")
        code, _, err = run_cli(capsys, "train", "--config", cfg)
        assert code == 2 and "batchsize" in err

    def test_smoke_train_is_reproducible_and_evaluable(self, capsys, tmp_path, synthetic_dataset):
        argv = ["train", "--profile", "smoke", "--pair", "avgpool_nn", "--data", synthetic_dataset]
        csvs = []
        for name in ("a", "b"):
            out_root = tmp_path / name
            code, out, err = run_cli(capsys, *argv, "--out", out_root)
            assert code == 0, err
            run_dir = only_run_dir(out_root)
            csvs.append((run_dir / "report.csv").read_bytes())
            for artifact in ("loss_curves.json", "reconstructions.png", "config.txt"):
                assert (run_dir / artifact).exists()
        assert csvs[0] == csvs[1]
        reports = read_csv(only_run_dir(tmp_path / "a") / "report.csv")
        assert len(reports) == 1 and reports[0]["pair"] == "avgpool_nn"

        (archive,) = (only_run_dir(tmp_path / "a") / "params").iterdir()
        code, out, err = run_cli(capsys, "eval", archive, "--data", synthetic_dataset)
        assert code == 0, err
        scores = json.loads(out)
        assert scores["psnr_db"] == pytest.approx(float(reports[0]["psnr_db"]), abs=1e-3)

    def test_fresh_run_directories(self, capsys, tmp_path, synthetic_dataset):
        argv = ["train", "--profile", "smoke", "--pair", "avgpool_nn", "--epochs", "1", "--set", "lr_decay_epochs="]
        for _ in range(2):
            assert run_cli(capsys, *argv, "--data", synthetic_dataset, "--out", tmp_path)[0] == 0
        assert len(list(tmp_path.iterdir())) == 2


class TestCompareCommand:
    def test_single_pair_one_row(self, capsys, tmp_path, synthetic_dataset):
        code, _, err = run_cli(
            capsys, "compare", "--profile", "smoke", "--pairs", "ip_iu:m2o_nl_c", "--seeds", "0",
            "--data", synthetic_dataset, "--out", tmp_path, "--epochs", "1", "--set", "lr_decay_epochs=",
        )
        assert code == 0, err
        reports = read_csv(only_run_dir(tmp_path) / "report.csv")
        assert [(r["pair"], r["variant"]) for r in reports] == [("ip_iu", "m2o_nl_c")]


class TestFetchData:
    def test_local_mirror_with_checksums(self, capsys, tmp_path, synthetic_dataset):
        import hashlib

        dest = tmp_path / "dest"
        sums = tmp_path / "SHA256SUMS"
        sums.write_text(
            "".join(
                f"{hashlib.sha256(p.read_bytes()).hexdigest()}  {p.name}\n"
                for p in sorted(synthetic_dataset.glob("*.gz"))
            )
        )
        mirror = synthetic_dataset.as_uri() + "/"
        code, _, err = run_cli(
            capsys, "fetch-data", "--mirror", mirror, "--dest", dest, "--checksums", sums, "--skip-md5"
        )
        assert code == 0, err
        assert sorted(p.name for p in dest.iterdir()) == sorted(p.name for p in synthetic_dataset.glob("*.gz"))

    def test_checksum_mismatch(self, capsys, tmp_path, synthetic_dataset):
        bad = [f"--sha256={p.name}={'0' * 64}" for p in synthetic_dataset.glob("*.gz")]
        code, _, err = run_cli(
            capsys, "fetch-data", "--mirror", synthetic_dataset.as_uri() + "/", "--dest", tmp_path / "d",
            "--skip-md5", *bad,
        )
        # a digest mismatch is a verification failure, not an I/O error
        assert code == 1 and "sha256 mismatch" in err
        assert not any((tmp_path / "d").glob("*.gz"))
