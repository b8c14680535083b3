"""Tests for the offerset command-line interface."""

import json

import pytest

from app.cli import main
from app.config import get_settings
from app.services.report_writer import read_report

SMALL_CONFIG = """
[universe]
n = 200
d = 6

[prune]
k = 3
samples_per_k = 2

[experiment]
seed = 5
replications = 3
bin_size = 50
"""


class TestCli:
    """End-to-end runs of the CLI subcommands on a small universe."""

    def _generate(self, tmp_path, n=200):
        config = tmp_path / "small.toml"
        config.write_text(SMALL_CONFIG)
        items = tmp_path / "items.osv"
        code = main(["gen", "--config", str(config), "--n", str(n), "--out", str(items)])
        assert code == 0
        return config, items, tmp_path / "items.types.csv"

    def test_gen_writes_items_and_types(self, tmp_path):
        _, items, types = self._generate(tmp_path)
        assert items.read_bytes()[:4] == b"OSV1"
        assert types.read_text().startswith("x0,x1,x2,x3,x4,x5")

    def test_build_and_query(self, tmp_path):
        config, items, types = self._generate(tmp_path)
        index = tmp_path / "items.lss"
        code = main(
            ["build-index", "--config", str(config), "--items", str(items), "--out", str(index)]
        )
        assert code == 0

        found = tmp_path / "found.txt"
        code = main(["query", "--index", str(index), "--types", str(types), "--out", str(found)])
        assert code == 0
        ids = [int(line) for line in found.read_text().split()]
        assert ids == sorted(ids)
        assert all(0 <= item < 200 for item in ids)

    def test_recommend(self, tmp_path):
        config, items, types = self._generate(tmp_path)
        out = tmp_path / "rec.json"
        code = main(
            ["recommend", "--config", str(config), "--items", str(items),
             "--types", str(types), "--out", str(out)]
        )
        assert code == 0
        result = json.loads(out.read_text())
        assert len(result["offer"]["items"]) <= 3
        assert result["samples"] == 6
        assert result["candidate_count"] >= len(result["offer"]["items"])

    def test_exact(self, tmp_path):
        config, items, types = self._generate(tmp_path, n=8)
        out = tmp_path / "exact.json"
        code = main(
            ["exact", "--config", str(config), "--items", str(items), "--types", str(types),
             "--k", "2", "--out", str(out)]
        )
        assert code == 0
        offer = json.loads(out.read_text())
        assert 1 <= len(offer["items"]) <= 2

    def test_exact_guard_exit_code(self, tmp_path, monkeypatch):
        config, items, types = self._generate(tmp_path)
        monkeypatch.setattr(get_settings(), "oracle_guard", 10)
        code = main(["exact", "--config", str(config), "--items", str(items), "--types", str(types)])
        assert code == 3

    def test_sample_probs_with_plot(self, tmp_path):
        config = tmp_path / "small.toml"
        config.write_text(SMALL_CONFIG)
        out = tmp_path / "probs.csv"
        assert main(["sample-probs", "--config", str(config), "--plot", "--out", str(out)]) == 0
        header, frame = read_report(out)
        assert header["seed"] == 5
        assert len(frame) == 4
        assert (tmp_path / "probs.gp").exists()

    def test_seed_flag_overrides_config(self, tmp_path):
        config = tmp_path / "small.toml"
        config.write_text(SMALL_CONFIG)
        out = tmp_path / "probs.csv"
        assert main(["sample-probs", "--config", str(config), "--seed", "11", "--out", str(out)]) == 0
        header, _ = read_report(out)
        assert header["seed"] == 11

    def test_missing_config(self, tmp_path):
        code = main(["benchmark", "--config", str(tmp_path / "absent.toml")])
        assert code == 2

    def test_corrupt_index(self, tmp_path):
        _, _, types = self._generate(tmp_path)
        index = tmp_path / "bad.lss"
        index.write_bytes(b"not an index")
        assert main(["query", "--index", str(index), "--types", str(types)]) == 1

    @pytest.mark.parametrize("row", ["50", "-1"])
    def test_query_row_out_of_range(self, tmp_path, row):
        config, items, types = self._generate(tmp_path)
        index = tmp_path / "items.lss"
        assert main(
            ["build-index", "--config", str(config), "--items", str(items), "--out", str(index)]
        ) == 0
        code = main(["query", "--index", str(index), "--types", str(types), "--row", row])
        assert code == 2

    def test_gen_requires_out(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["gen", "--n", "10"])
        assert excinfo.value.code == 2
