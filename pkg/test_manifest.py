import json

import pytest
from rich.console import Console

from manifest import MANIFEST_NAME, RunRecorder, SweepResult, SweepRow, load_manifest, write_json
from report import build_summary, render_summary


def _rows(errors):
    return [SweepRow(n=n, d=6, d2_over_n=36 / n, mean_error=e, std_error=0.0, seeds=3)
            for n, e in sorted(errors.items(), reverse=True)]


class TestRecorder:
    def test_finish_drops_missing_artifacts(self, tmp_path):
        rec = RunRecorder(tmp_path, "probe", {"name": "flip"}, [0])
        write_json(rec.path("kept.json"), {"a": 1})
        rec.add(rec.path("kept.json"))
        rec.add(rec.path("ghost.csv"))
        path = rec.finish("ok", summary={"x": 1.0}, checks={"c": True})
        manifest = load_manifest(path)
        assert manifest.artifacts == ["kept.json"]
        assert manifest.status == "ok" and manifest.summary == {"x": 1.0}
        assert "total" in manifest.timings

    def test_write_json_leaves_no_temp_file(self, tmp_path):
        write_json(tmp_path / "a.json", {"k": [1, 2]})
        assert [p.name for p in tmp_path.iterdir()] == ["a.json"]

    def test_notes_land_in_the_manifest(self, tmp_path):
        rec = RunRecorder(tmp_path, "xor-sweep", {}, [0, 1, 2], ["eta*T = 50 is held fixed"])
        rec.note("outside the expected-error table: n=20")
        manifest = load_manifest(rec.finish("ok"))
        assert manifest.notes == ["eta*T = 50 is held fixed", "outside the expected-error table: n=20"]

    def test_failure_is_recorded(self, tmp_path):
        rec = RunRecorder(tmp_path, "train", {}, [0])
        rec.finish("failed", error="NumericalError: boom")
        data = json.loads((tmp_path / MANIFEST_NAME).read_text())
        assert data["status"] == "failed" and data["error"].startswith("NumericalError")


class TestSweepResult:
    def test_rows_must_be_sorted(self):
        rows = _rows({10: 0.46, 20: 0.31})
        with pytest.raises(ValueError):
            SweepResult(vary="n", rows=list(reversed(rows)), slope=0.1, intercept=0.0, r2=1.0)

    def test_table_checks(self):
        rows = _rows({10: 0.46, 20: 0.31, 28: 0.60})
        checks = SweepResult(vary="n", rows=rows, slope=0.15, intercept=0.0, r2=0.9).table_checks()
        assert checks["n=10"] and checks["n=20"] and not checks["n=28"]
        assert checks["slope"] and checks["slope_r2"]


class TestReport:
    def _run(self, root, name, config):
        rec = RunRecorder(root / name, "margin", config, [0])
        return rec.finish("ok", checks={"separable": True})

    def test_merges_and_flags_clashes(self, tmp_path):
        a = self._run(tmp_path, "a", {"m": 128, "seed": 0})
        b = self._run(tmp_path, "b", {"m": 128, "seed": 1})
        c = self._run(tmp_path, "c", {"m": 256, "seed": 0})
        summary = build_summary([a, b, tmp_path / "missing" / MANIFEST_NAME])
        assert len(summary["runs"]) == 2 and not summary["clashes"]
        assert summary["missing"] == [str(tmp_path / "missing" / MANIFEST_NAME)]
        summary = build_summary([a, c])
        assert summary["clashes"][0]["command"] == "margin"
        assert "PASS margin:separable" in summary["check_lines"]

    def test_reads_sweep_artifact(self, tmp_path):
        rec = RunRecorder(tmp_path, "xor-sweep", {}, [0, 1, 2])
        result = SweepResult(vary="n", rows=_rows({10: 0.46, 20: 0.31}), slope=0.12, intercept=0.2, r2=1.0)
        rec.add(write_json(rec.path("sweep.json"), result.model_dump(mode="json")))
        summary = build_summary([rec.finish("ok")])
        assert summary["sweeps"][0]["slope"] == 0.12
        console = Console(record=True, width=120)
        render_summary(summary, console)
        assert "slope 0.1200" in console.export_text()
