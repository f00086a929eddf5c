import json

import numpy as np
import pytest
from PIL import Image

from indexnet.bench.data import load_fashion_mnist
from indexnet.bench.model import ReconNetSpec, build_recon_net
from indexnet.bench.comparison import (
    CSV_HEADER,
    DEFAULT_PAIRINGS,
    ALL_PAIRINGS,
    Pairing,
    aggregate,
    csv_text,
    parse_pairings,
    read_csv,
    run_table3,
    write_outputs,
)
from indexnet.bench.train import ReconReport, TrainConfig, evaluate
from indexnet.archive import load_archive, read_archive, save_archive
from indexnet.errors import ConfigError, FormatError
from indexnet.samplers import SamplerId

TINY = TrainConfig(epochs=1, lr_decay_epochs=(), batch_size=16, subset_size=None)


@pytest.fixture(scope="module")
def splits(synthetic_dataset):
    return load_fashion_mnist(synthetic_dataset, "train")[:32], load_fashion_mnist(synthetic_dataset, "test")


def report(pair="avgpool_nn", variant="-", seed=0, psnr=20.0):
    return ReconReport(pair, variant, psnr, 0.5, 0.1, 0.2, 1, 12.34, seed, {})


class TestPairings:
    def test_parse(self):
        p = Pairing.parse("ip_iu:hin_nl_c")
        assert p.key == "ip_iu:hin_nl_c" and p.variant == "hin_nl_c"
        assert Pairing.parse("ip_iu").indexnet.label == "m2o_nl_c"
        assert Pairing.parse("maxpool_unpool").variant == "-"

    def test_errors(self):
        with pytest.raises(ConfigError, match="unknown pair"):
            Pairing.parse("bicubic")
        with pytest.raises(ConfigError):
            Pairing.parse("avgpool_nn:m2o_nl_c")

    def test_default_lists(self):
        assert len(DEFAULT_PAIRINGS) == 7
        assert {p.pair for p in DEFAULT_PAIRINGS} == set(SamplerId)
        labels = {p.variant for p in ALL_PAIRINGS if p.pair is SamplerId.IP_IU}
        assert labels == {"o2o_modelwise_nl_c", "hin_nl_c", "m2o_nl_c"}
        # every IndexNet in the comparison has nonlinearity and weak context
        assert all(p.indexnet.nonlinear and p.indexnet.context for p in ALL_PAIRINGS if p.indexnet)

    def test_parse_list(self):
        assert [p.key for p in parse_pairings("avgpool_nn, ip_iu:m2o_nl_c")] == ["avgpool_nn", "ip_iu:m2o_nl_c"]


class TestCsv:
    def test_format_and_order(self):
        text = csv_text([report(seed=1), report("conv_bilinear", psnr=21.123456), report(seed=0)])
        lines = text.splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert lines[1] == "avgpool_nn,-,20.0000,0.500000,0.100000,0.200000,1,,0"
        assert [l.split(",")[0] for l in lines[1:]] == ["avgpool_nn", "avgpool_nn", "conv_bilinear"]
        assert lines[3].split(",")[2] == "21.1235"

    def test_timing_column(self):
        assert csv_text([report()], timing=True).splitlines()[1].split(",")[7] == "12.3"


class TestRunTable3:
    def test_rows_and_outputs(self, splits, tmp_path):
        train, test = splits
        res = run_table3(["maxpool_unpool", "ip_iu:m2o_linear"], train, test, TINY, seeds=(0, 1), keep_models=True)
        assert [(r.pair, r.seed) for r in res.reports] == [
            ("ip_iu", 0), ("ip_iu", 1), ("maxpool_unpool", 0), ("maxpool_unpool", 1),
        ]
        assert [row["key"] for row in res.aggregates] == ["ip_iu:m2o_linear", "maxpool_unpool"]
        assert res.mean_psnr("maxpool_unpool") == pytest.approx(np.mean([r.psnr_db for r in res.reports[2:]]))

        paths = write_outputs(res, tmp_path, archive_meta={"note": "x"})
        assert len(read_csv(paths["csv"])) == 4
        curves = json.loads(paths["curves"].read_text())
        assert set(curves) == {"ip_iu:m2o_linear/seed0", "ip_iu:m2o_linear/seed1", "maxpool_unpool/seed0", "maxpool_unpool/seed1"}
        grid = Image.open(paths["grid"])
        assert grid.mode == "L" and grid.size[1] == 3 * (64 + 2) + 2
        assert "seconds" not in json.loads(paths["reports"].read_text())["runs"][0]
        archives = sorted(p.name for p in (tmp_path / "params").iterdir())
        assert archives[0] == "ip_iu-m2o_linear-seed0"

    def test_aggregation_ignores_completion_order(self, splits):
        train, test = splits
        res = run_table3(["avgpool_nn", "conv_bilinear"], train, test, TINY, seeds=(0, 1))
        shuffled = [res.outcomes[i] for i in (3, 1, 0, 2)]
        assert aggregate(shuffled) == res.aggregates

    def test_threads_match_serial(self, splits):
        train, test = splits
        pairs = ["avgpool_nn", "ip_iu:o2o_shared_stagewise_linear"]
        serial = run_table3(pairs, train, test, TINY, seeds=(0, 1))
        threaded = run_table3(pairs, train, test, TINY, seeds=(0, 1), workers=3)
        assert csv_text(serial.reports) == csv_text(threaded.reports)

    def test_empty(self, splits):
        with pytest.raises(ConfigError):
            run_table3([], *splits, TINY)


class TestArchive:
    def test_round_trip_restores_scores(self, splits, tmp_path):
        _, test = splits
        spec = Pairing.parse("ip_iu:hin_nl_c").spec()
        a = build_recon_net(spec, 1)
        save_archive(a, tmp_path / "arc", {"pairing": "ip_iu:hin_nl_c"})
        b = build_recon_net(spec, 2)
        assert load_archive(b, tmp_path / "arc") == {"pairing": "ip_iu:hin_nl_c"}
        assert evaluate(a, test) == evaluate(b, test)
        manifest, arrays = read_archive(tmp_path / "arc")
        kinds = {e["kind"] for e in manifest["tensors"]}
        assert kinds == {"param", "buffer"} and all(v.dtype == np.dtype("<f4") for v in arrays.values())

    def test_mismatched_model(self, tmp_path):
        save_archive(build_recon_net(ReconNetSpec(SamplerId.AVGPOOL_NN), 0), tmp_path / "arc")
        with pytest.raises(ConfigError, match="does not match"):
            load_archive(build_recon_net(ReconNetSpec(SamplerId.CONV_DECONV), 0), tmp_path / "arc")

    def test_truncated_and_foreign(self, tmp_path):
        net = build_recon_net(ReconNetSpec(SamplerId.AVGPOOL_NN), 0)
        arc = save_archive(net, tmp_path / "arc")
        data = arc / "params.bin"
        data.write_bytes(data.read_bytes()[:-8])
        with pytest.raises(FormatError, match="past end"):
            read_archive(arc)
        (arc / "manifest.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(FormatError):
            read_archive(arc)
