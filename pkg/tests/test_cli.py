import json

import pytest

from calvalid.cli import EXIT_ACCEPT, EXIT_ERROR, EXIT_REJECT, main, run_pipeline, validate_files
from calvalid.fit import FitConfig, fit_model, load_model
from calvalid.formats import load_correspondences
from calvalid.gof import GofTest
from calvalid.noise import IRLSConfig
from calvalid.pipeline import validate_correspondences
from calvalid.sim import SimConfig


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--n-sets", "3"]) == EXIT_ACCEPT
    return out


class TestSimulate:
    def test_files(self, simdir):
        manifest = json.loads((simdir / "manifest.json").read_text())
        assert len(manifest["sets"]) == 3
        assert manifest["config"]["seed"] == 0
        assert "PCG64" in manifest["rng"]
        for entry in manifest["sets"]:
            assert (simdir / entry["correspondences"]).exists()
            assert (simdir / entry["truth"]).exists()

    def test_same_seed_same_manifest(self, simdir, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--n-sets", "3"]) == 0
        assert (tmp_path / "manifest.json").read_bytes() == (simdir / "manifest.json").read_bytes()

    def test_env_seed_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CALVALID_SEED", "7")
        assert main(["simulate", "--out", str(tmp_path), "--n-sets", "1", "--seed", "3"]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 7

    def test_bad_env_seed(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CALVALID_SEED", "abc")
        assert main(["simulate", "--out", str(tmp_path), "--n-sets", "1"]) == EXIT_ERROR
        assert json.loads(capsys.readouterr().err)["error"]["code"] == "ConfigInvalid"

    def test_noiseless_single(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--n-sets", "1", "--sigma-d", "0",
                     "--sigma-3d", "0"]) == 0
        assert main(["validate", str(tmp_path / "set_000.truth.json"),
                     str(tmp_path / "set_000.jsonl"), "--out", str(tmp_path / "r.json")]) == 0
        rec = json.loads((tmp_path / "r.json").read_text())
        assert "zero_residuals" in rec["warnings"]
        assert rec["reports"][0]["p_value"] == 1.0


class TestFitValidate:
    def test_exit_codes(self, simdir, tmp_path):
        corr = str(simdir / "set_002.jsonl")
        for order, expected in ((1, EXIT_REJECT), (3, EXIT_ACCEPT)):
            model = tmp_path / f"m{order}.json"
            assert main(["fit", corr, "--order", str(order), "--loss", "cauchy",
                         "--out", str(model)]) == 0
            assert load_model(model).distortion_order == order
            assert main(["validate", str(model), corr, "--out",
                         str(tmp_path / f"r{order}.json")]) == expected

    def test_golden_equivalence(self, simdir, tmp_path, capsys):
        corr = simdir / "set_001.jsonl"
        model_path = tmp_path / "m.json"
        assert main(["fit", str(corr), "--out", str(model_path)]) == 0
        args = ["validate", str(model_path), str(corr), "--alpha", "0.1", "--tests", "ks,sw",
                "--irls-max-iter", "50", "--irls-tol", "1e-9", "--delta", "2e-3"]
        capsys.readouterr()
        main(args)
        cli_out = json.loads(capsys.readouterr().out)

        corrs, scales = load_correspondences(corr)
        model = load_model(model_path)
        assert model.f_x == fit_model(corrs, FitConfig()).f_x
        direct = validate_correspondences(model, corrs, scales, set_id="set_001", alpha=0.1,
                                          tests=[GofTest.KS, GofTest.SW], delta=2e-3,
                                          irls=IRLSConfig(max_iter=50, tol=1e-9))
        assert cli_out == json.loads(direct.to_json())
        assert validate_files(model_path, corr, alpha=0.1, tests=["ks", "sw"], delta=2e-3,
                              irls=IRLSConfig(max_iter=50, tol=1e-9)).to_dict() == cli_out

    def test_flag_inliers(self, simdir, tmp_path):
        out = tmp_path / "flagged.jsonl"
        assert main(["fit", str(simdir / "set_000.jsonl"), "--flag-inliers", "--inliers-out",
                     str(out), "--out", str(tmp_path / "m.json")]) == 0
        corrs, scales = load_correspondences(out)
        assert scales is not None and len(corrs) == len(scales)

    def test_fit_to_stdout(self, simdir, capsys):
        assert main(["fit", str(simdir / "set_000.jsonl")]) == 0
        assert "distortion_order" in json.loads(capsys.readouterr().out)

    def test_missing_model(self, simdir, capsys):
        assert main(["validate", "missing.json", str(simdir / "set_000.jsonl")]) == EXIT_ERROR
        err = json.loads(capsys.readouterr().err)["error"]
        assert err["code"] == "ParseError" and err["reason"] == "IOError"

    def test_bad_alpha(self, simdir, capsys):
        assert main(["validate", str(simdir / "set_000.truth.json"),
                     str(simdir / "set_000.jsonl"), "--alpha", "1.5"]) == EXIT_ERROR

    def test_bad_tests_flag(self, simdir):
        with pytest.raises(SystemExit):
            main(["validate", "a", "b", "--tests", "ks,ad"])


class TestReport:
    def test_report(self, simdir, tmp_path):
        recs = []
        for i in range(3):
            r = tmp_path / f"r{i}.json"
            main(["validate", str(simdir / f"set_{i:03d}.truth.json"),
                  str(simdir / f"set_{i:03d}.jsonl"), "--out", str(r)])
            recs.append(str(r))
        assert main(["report", *recs, "--out", str(tmp_path / "rep")]) == 0
        lines = (tmp_path / "rep" / "summary.csv").read_text().splitlines()
        assert lines[0] == ("set_id,coverage,empirical_std,predicted_std,ks_p,dap_p,sw_p,"
                            "decisions")
        assert len(lines) == 4
        assert (tmp_path / "rep" / "summary.svg").exists()

    def test_bad_record(self, tmp_path, capsys):
        p = tmp_path / "r.json"
        p.write_text("{}")
        assert main(["report", str(p), "--out", str(tmp_path)]) == EXIT_ERROR


class TestRun:
    def test_parallel_matches_serial(self, tmp_path):
        cfg = SimConfig(n_sets=4)
        a = run_pipeline(cfg, tmp_path / "serial", jobs=1)
        b = run_pipeline(cfg, tmp_path / "parallel", jobs=2)
        for order in (1, 3):
            for k in ("csv", "histograms", "svg"):
                assert a[order][k].read_bytes() == b[order][k].read_bytes()
