import csv
import json
import math

import pytest

from blocksparse_lab import checks, io
from blocksparse_lab.cli import main

SMALL = ["--kq", "4", "--kk", "8"]


def _small_config(tmp_path, **synth):
    cfg = {"synth": {"n": 64, "layers": 2, "heads_per_layer": 1, "layer_scales": [1.0, 4.0], **synth},
           "calibration_count": 3, "steps": 5}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return ["--config", str(path)]


def _run(tmp_path, *args, out="out"):
    return main([*_small_config(tmp_path), "--output-dir", str(tmp_path / out), *SMALL, *args])


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestGen:
    def test_byte_identical(self, tmp_path):
        assert _run(tmp_path, "gen", out="a") == 0
        assert _run(tmp_path, "gen", out="b") == 0
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")

    def test_manifest_contents(self, tmp_path):
        assert _run(tmp_path, "gen") == 0
        man = io.Manifest(tmp_path / "out")
        assert len(man.of_kind("weight_wq")) == 2 and len(man.of_kind("weight_wk")) == 2
        assert len(man.of_kind("calibration")) == 3
        for e in man.entries.values():
            assert e["sha256"] == io.sha256_file(tmp_path / "out" / e["path"])
        assert all("seed" in e for e in man.of_kind("weight_wq"))

    def test_zero_layers_is_config_error(self, tmp_path):
        code = main(["--output-dir", str(tmp_path), "gen"] + [])  # baseline works
        assert code == 0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"synth": {"layers": 0, "layer_scales": []}}))
        assert main(["--config", str(bad), "--output-dir", str(tmp_path), "gen"]) == 2

    def test_bad_flag_value(self, tmp_path):
        assert main(["--tau", "1.5", "--output-dir", str(tmp_path), "gen"]) == 2

    def test_unknown_option(self, tmp_path):
        assert main(["--output-dir", str(tmp_path), "gen", "--nope"]) == 2


class TestProfile:
    def test_zero_weight_stack(self, tmp_path):
        args = _small_config(tmp_path, layer_scales=[0.0, 0.0])
        out = ["--output-dir", str(tmp_path / "z")]
        assert main([*args, *out, "gen"]) == 0
        assert main([*args, *out, "profile"]) == 0
        sched = json.loads((tmp_path / "z" / "schedule.json").read_text())
        expected = math.ceil(0.95 * 64) / 64
        for e in sched["entries"]:
            assert e["d_hat"] == pytest.approx(expected, abs=1e-15)
            assert e["sparsity"] == pytest.approx(1 - expected, abs=1e-15)
        assert [(e["layer"], e["head"]) for e in sched["entries"]] == [(0, 0), (1, 0)]

    def test_single_input(self, tmp_path):
        out = ["--output-dir", str(tmp_path / "s")]
        args = _small_config(tmp_path)
        assert main([*args, *out, "gen", "--calibration-count", "1"]) == 0
        assert main([*args, *out, "profile"]) == 0
        for e in json.loads((tmp_path / "s" / "schedule.json").read_text())["entries"]:
            assert e["std"] == 0.0 and e["d_hat"] == e["mean"]

    def test_missing_inputs(self, tmp_path):
        assert _run(tmp_path, "profile", out="empty") == 3

    def test_corrupt_weight_file(self, tmp_path):
        assert _run(tmp_path, "gen") == 0
        victim = next((tmp_path / "out" / "stack").iterdir())
        victim.write_bytes(b"junk")
        assert _run(tmp_path, "profile") == 3


class TestPipeline:
    def test_rho_override_is_exact(self, tmp_path):
        assert _run(tmp_path, "pipeline", "--rho-override", "1") == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["cells"] and all(c["psnr_db"] == "inf" for c in report["cells"])
        assert report["aggregate"]["median_psnr_db"] == "inf"
        assert "proxy" in report["drift_model"]

    def test_reuse_interval_one_reclusters_every_step(self, tmp_path):
        assert _run(tmp_path, "--reuse-interval", "1", "pipeline", out="r1") == 0
        assert _run(tmp_path, "--reuse-interval", "3", "pipeline", out="r3") == 0
        r1 = json.loads((tmp_path / "r1" / "report.json").read_text())["cells"]
        r3 = json.loads((tmp_path / "r3" / "report.json").read_text())["cells"]
        assert all(c["reclustered"] for c in r1)
        assert [c["reclustered"] for c in r3 if c["layer"] == 0] == [True, False, False, True, False]
        for a, b in zip(r1, r3):
            if b["reclustered"]:
                assert a == b

    def test_uses_profiled_schedule(self, tmp_path):
        assert _run(tmp_path, "gen") == 0
        assert _run(tmp_path, "profile") == 0
        assert _run(tmp_path, "pipeline") == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["schedule_source"] == "schedule.json"
        assert "report.json" in io.Manifest(tmp_path / "out").entries

    def test_dense_layer(self, tmp_path):
        assert _run(tmp_path, "pipeline", "--dense-layer", "0") == 0
        cells = json.loads((tmp_path / "out" / "report.json").read_text())["cells"]
        assert all(c["psnr_db"] == "inf" and c["rho_source"] == "dense-layer"
                   for c in cells if c["layer"] == 0)

    def test_workers_do_not_change_report(self, tmp_path):
        assert _run(tmp_path, "pipeline", out="w1") == 0
        assert _run(tmp_path, "--workers", "2", "pipeline", out="w2") == 0
        assert (tmp_path / "w1" / "report.json").read_bytes() == (tmp_path / "w2" / "report.json").read_bytes()


class TestBenchRecall:
    def test_csv_rows(self, tmp_path):
        args = ["--output-dir", str(tmp_path), "bench-recall", "--n", "96"]
        assert main(args) == 0
        rows = list(csv.DictReader((tmp_path / "recall.csv").open()))
        assert len(rows) == 20
        assert {r["method"] for r in rows} == {"cocluster", "kmeans"}
        assert all(0.0 <= float(r["covered_fraction"]) <= 1.0 for r in rows)
        assert list(rows[0]) == ["seed", "method", "budget", "covered_fraction", "k_q", "k_k"]

    def test_seed_list(self, tmp_path):
        assert main(["--output-dir", str(tmp_path), "bench-recall", "--n", "64", "--seeds", "3,5"]) == 0
        rows = list(csv.DictReader((tmp_path / "recall.csv").open()))
        assert [int(r["seed"]) for r in rows] == [3, 3, 5, 5]

    def test_bad_seeds(self, tmp_path):
        assert main(["--output-dir", str(tmp_path), "bench-recall", "--seeds", "a,b"]) == 2


class TestVerify:
    def test_single_check_passes(self, tmp_path, capsys):
        assert main(["--output-dir", str(tmp_path), "verify", "--check", "schedule_arithmetic"]) == 0
        assert "PASS  schedule_arithmetic" in capsys.readouterr().out
        details = json.loads((tmp_path / "details.json").read_text())
        assert details["passed"] and details["checks"][0]["sparsity"] == pytest.approx(0.535515, abs=1e-6)

    def test_broken_trace_formula_is_named(self, tmp_path, capsys, monkeypatch):
        real = checks.logit_variance_trace
        monkeypatch.setattr(checks, "logit_variance_trace", lambda x, layer: 1.01 * real(x, layer))
        assert main(["--output-dir", str(tmp_path), "verify", "--check", "trace_identity",
                     "--check", "exactness"]) == 1
        out = capsys.readouterr().out
        assert "FAIL  trace_identity" in out and "PASS  exactness" in out
        details = json.loads((tmp_path / "details.json").read_text())
        assert not details["passed"]
        assert {c["name"] for c in details["checks"]} == {"trace_identity", "exactness"}

    def test_unknown_check(self, tmp_path):
        assert main(["--output-dir", str(tmp_path), "verify", "--check", "nope"]) == 2
