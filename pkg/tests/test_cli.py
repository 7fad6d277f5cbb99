import csv
import json
import re

import pytest

from margin_forge.cli import main
from margin_forge.experiment import COMPARE_COLUMNS, OUT_ENV

QUICK = ["--set", "schedule.total_epochs=4", "--set", "schedule.switch_epoch=3",
         "--set", "schedule.decay_points=[[3,0.1]]", "--set", "schedule.warmup_epochs=1",
         "--set", "dataset.n_val=60"]


@pytest.fixture(autouse=True)
def _no_env_out(monkeypatch):
    monkeypatch.delenv(OUT_ENV, raising=False)


def _run(tmp_path, *extra):
    return main(["run", "synthetic_lt100.json", "--set", f"output.directory={tmp_path}", *QUICK, *extra])


class TestRun:
    def test_writes_artifacts(self, tmp_path, capsys):
        assert _run(tmp_path) == 0
        for name in ("epochs.csv", "per_class.csv", "per_class.svg", "summary.json"):
            assert (tmp_path / name).is_file()
        assert "overall top-1 error" in capsys.readouterr().out
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["loss"]["kind"] == "mm"
        assert summary["train_counts"] == [2000, 200, 20]
        epochs = list(csv.DictReader(open(tmp_path / "epochs.csv")))
        assert [r["stage"] for r in epochs] == ["1", "1", "1", "2"]

    def test_override_reflected(self, tmp_path):
        assert _run(tmp_path, "--set", "loss.kind=erm") == 0
        assert json.loads((tmp_path / "summary.json").read_text())["loss"]["kind"] == "erm"

    def test_invalid_kind(self, tmp_path, capsys):
        assert _run(tmp_path, "--set", "loss.kind=hinge") == 2
        assert "loss.kind" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        assert _run(tmp_path, "--set", "loss.temperature=2") == 2
        assert "loss.temperature" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.json")]) == 2

    def test_env_output_directory(self, tmp_path, monkeypatch):
        target = tmp_path / "env_out"
        monkeypatch.setenv(OUT_ENV, str(target))
        assert main(["run", "synthetic_lt100.json", *QUICK]) == 0
        assert (target / "summary.json").is_file()

    def test_config_file_path(self, tmp_path):
        cfg = tmp_path / "mine.json"
        cfg.write_text(json.dumps({"name": "mine", "output": {"directory": str(tmp_path / "o")}}))
        assert main(["run", str(cfg), *QUICK]) == 0
        assert json.loads((tmp_path / "o" / "summary.json").read_text())["name"] == "mine"


class TestCompare:
    def _compare(self, tmp_path, seeds):
        return main(["compare", "synthetic_lt100_erm.json", "synthetic_lt100.json",
                     "--seeds", seeds, "--out", str(tmp_path), *QUICK])

    def test_single_seed_zero_std(self, tmp_path):
        assert self._compare(tmp_path, "0") == 0
        rows = list(csv.DictReader(open(tmp_path / "comparison.csv")))
        assert tuple(rows[0]) == COMPARE_COLUMNS
        assert [r["method"] for r in rows] == ["erm", "mm-drw"]
        for r in rows:
            assert r["runs"] == "1" and r["failed"] == "0"
            assert float(r["overall_std"]) == 0.0

    def test_identical_configs_identical_rows(self, tmp_path):
        assert main(["compare", "synthetic_lt100.json", "synthetic_lt100.json", "--seeds", "0,1",
                     "--out", str(tmp_path), *QUICK]) == 0
        rows = list(csv.DictReader(open(tmp_path / "comparison.csv")))
        assert rows[0] == rows[1]

    def test_needs_two_configs(self, tmp_path):
        assert main(["compare", "synthetic_lt100.json", "--out", str(tmp_path)]) == 2

    def test_failed_run_is_reported(self, tmp_path):
        code = main(["compare", "synthetic_lt100_erm.json", "synthetic_lt100.json", "--seeds", "0",
                     "--out", str(tmp_path), *QUICK, "--set", "schedule.base_lr=1e308"])
        assert code == 3
        rows = list(csv.DictReader(open(tmp_path / "comparison.csv")))
        assert all(r["failed"] == "1" and r["runs"] == "0" for r in rows)


def _write_per_class(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "error", "count", "val_count", "group"])
        w.writerows(rows)


class TestPlot:
    def test_bar_count(self, tmp_path):
        _write_per_class(tmp_path / "p.csv", [[j, 0.1 * j, 100 // (j + 1), 10, ""] for j in range(7)])
        assert main(["plot", str(tmp_path / "p.csv"), str(tmp_path / "p.svg")]) == 0
        svg = (tmp_path / "p.svg").read_text()
        assert len(re.findall(r"<rect ", svg)) == 7
        assert 'stroke-dasharray' in svg

    def test_single_class(self, tmp_path):
        _write_per_class(tmp_path / "p.csv", [[0, 0.25, 10, 10, "majority"]])
        assert main(["plot", str(tmp_path / "p.csv"), str(tmp_path / "p.svg")]) == 0
        svg = (tmp_path / "p.svg").read_text()
        assert svg.count("<rect ") == 1 and "stroke-dasharray" not in svg

    def test_equal_errors(self, tmp_path):
        _write_per_class(tmp_path / "p.csv", [[j, 0.5, 10, 10, ""] for j in range(3)])
        assert main(["plot", str(tmp_path / "p.csv"), str(tmp_path / "p.svg")]) == 0
        heights = re.findall(r'<rect [^>]*height="([\d.]+)"', (tmp_path / "p.svg").read_text())
        assert len(set(heights)) == 1

    def test_deterministic_output(self, tmp_path):
        _write_per_class(tmp_path / "p.csv", [[0, 0.1, 100, 5, ""], [1, 0.9, 1, 5, ""]])
        main(["plot", str(tmp_path / "p.csv"), str(tmp_path / "a.svg")])
        main(["plot", str(tmp_path / "p.csv"), str(tmp_path / "b.svg")])
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_malformed_line(self, tmp_path, capsys):
        _write_per_class(tmp_path / "p.csv", [[0, 0.1, 10, 10, ""], [1, "oops", 10, 10, ""]])
        assert main(["plot", str(tmp_path / "p.csv"), str(tmp_path / "p.svg")]) == 2
        assert "line 3" in capsys.readouterr().err
