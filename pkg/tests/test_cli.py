"""Experiment runner tests: config validation, artifacts, manifests.

Every run here is deliberately tiny; the statistical verdicts at these
sizes are not the point (some fail honestly), the orchestration
contracts are: schema-checked configs, deterministic CSV bytes,
manifests reproducible from the artifacts on disk.
"""

import json
import pathlib

import pytest

from parawave.cli import (
    CHECK_CATALOG,
    CONFIG_SCHEMA,
    ConfigError,
    ExperimentConfig,
    load_config,
    main,
    reverify,
    run_experiment,
)

DOCS_SCHEMA = pathlib.Path(__file__).parent.parent / "docs" / "config-schema.json"


def _write_config(tmp_path, name="cfg.json", **data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def _base(**extra):
    data = {"N": 6, "M": 8, "T": 1.0, "h": 0.125, "samples": 200}
    data.update(extra)
    return data


class TestConfigLoading:
    def test_kind_from_subcommand(self, tmp_path):
        p = _write_config(tmp_path, **_base())
        cfg = load_config(p, "verify-moments")
        assert cfg.kind == "verify-moments"
        assert cfg.steps == 8
        assert cfg.seed == 0 and cfg.out == "runs"

    def test_kind_from_file(self, tmp_path):
        p = _write_config(tmp_path, **_base(kind="solve"))
        assert load_config(p).kind == "solve"

    def test_kind_mismatch_rejected(self, tmp_path):
        p = _write_config(tmp_path, **_base(kind="solve"))
        with pytest.raises(ConfigError, match="does not match|asks for"):
            load_config(p, "decay")

    def test_regularity_window_cited(self, tmp_path):
        p = _write_config(tmp_path, **_base(kind="decay", s2=0.9))
        with pytest.raises(ConfigError,
                           match=r"1/4 < s1 < 1/2 < s2 <= s1 \+ 1/4"):
            load_config(p)

    def test_step_must_divide_horizon(self, tmp_path):
        p = _write_config(tmp_path, **_base(kind="solve", h=0.3))
        with pytest.raises(ConfigError, match="does not divide"):
            load_config(p)

    def test_unknown_field_rejected(self, tmp_path):
        p = _write_config(tmp_path, **_base(kind="solve", bogus=1))
        with pytest.raises(ConfigError, match="bogus"):
            load_config(p)

    def test_bad_json_named(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(p, "solve")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.json", "solve")

    def test_overrides(self, tmp_path):
        p = _write_config(tmp_path, **_base(kind="solve", seed=7))
        cfg = load_config(p, seed=11, out="elsewhere")
        assert cfg.seed == 11 and cfg.out == "elsewhere"

    def test_direct_construction_validates(self):
        with pytest.raises(ConfigError, match="unknown experiment kind"):
            ExperimentConfig(kind="nope", N=4, M=8, T=1.0, h=0.5, samples=1)
        with pytest.raises(ConfigError, match="1 <= N <= M"):
            ExperimentConfig(kind="solve", N=9, M=8, T=1.0, h=0.5, samples=1)

    def test_published_schema_in_sync(self):
        assert json.loads(DOCS_SCHEMA.read_text()) == CONFIG_SCHEMA


class TestListChecks:
    def test_table_lists_all_checks(self, capsys):
        assert main(["list-checks"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == len(CHECK_CATALOG) >= 10
        ids = [line.split()[0] for line in lines]
        assert len(set(ids)) == len(ids)

    def test_json_matches_table(self, capsys):
        assert main(["list-checks", "--json"]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert [r["id"] for r in rows] == [c[0] for c in CHECK_CATALOG]
        assert all(r["tolerance"] and r["runtime"] for r in rows)

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["list-checks", "--bogus"])
        assert exc.value.code == 2

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2


class TestVerifyMomentsKind:
    CFG = {"N": 16, "M": 16, "T": 1.0, "h": 0.125, "samples": 400, "seed": 3}

    def test_run_passes_and_writes_artifacts(self, tmp_path, capsys):
        p = _write_config(tmp_path, **self.CFG, out=str(tmp_path / "runs"))
        assert main(["verify-moments", "--config", str(p)]) == 0
        out = capsys.readouterr().out
        assert "4/4 checks passed" in out
        rundir = next((tmp_path / "runs").iterdir())
        assert rundir.name.startswith("verify-moments-s3-")
        assert (rundir / "profiles.csv").exists()
        manifest = json.loads((rundir / "manifest.json").read_text())
        assert manifest["passed"] is True
        assert [c["id"] for c in manifest["checks"]] == [
            "psi-covariance", "wick-covariance", "wick-centering",
            "sigma-ratio"]

    def test_json_flag_prints_manifest(self, tmp_path, capsys):
        p = _write_config(tmp_path, **self.CFG, out=str(tmp_path / "runs"))
        assert main(["verify-moments", "--config", str(p), "--json"]) == 0
        manifest = json.loads(capsys.readouterr().out)
        assert manifest["kind"] == "verify-moments"
        assert manifest["config"]["samples"] == 400

    def test_rerun_byte_identical(self, tmp_path):
        p = _write_config(tmp_path, **self.CFG, out=str(tmp_path / "runs"))
        cfg = load_config(p, "verify-moments")
        m1, d1 = run_experiment(cfg)
        m2, d2 = run_experiment(cfg)
        assert d1 != d2
        assert (d1 / "profiles.csv").read_bytes() == \
            (d2 / "profiles.csv").read_bytes()
        m1.pop("wall_clock_s"), m2.pop("wall_clock_s")
        assert m1 == m2

    def test_reverify_reproduces_verdicts(self, tmp_path):
        p = _write_config(tmp_path, **self.CFG, out=str(tmp_path / "runs"))
        manifest, rundir = run_experiment(load_config(p, "verify-moments"))
        redo = reverify(rundir)
        assert redo["checks"] == manifest["checks"]
        assert redo["passed"] == manifest["passed"]

    def test_config_error_exit_code(self, tmp_path, capsys):
        p = _write_config(tmp_path, **_base(s2=0.9))
        assert main(["verify-moments", "--config", str(p)]) == 2
        assert "admissible window" in capsys.readouterr().err

    def test_bad_thread_env_is_config_error(self, tmp_path, capsys,
                                            monkeypatch):
        monkeypatch.setenv("PARAWAVE_THREADS", "many")
        p = _write_config(tmp_path, **self.CFG, out=str(tmp_path / "runs"))
        assert main(["verify-moments", "--config", str(p)]) == 2
        assert "PARAWAVE_THREADS" in capsys.readouterr().err


class TestSolveKind:
    def test_converged_run(self, tmp_path, capsys):
        p = _write_config(tmp_path, kind="solve", N=4, M=8, T=0.25, h=0.0625,
                          samples=1, seed=2, out=str(tmp_path / "runs"))
        assert main(["solve", "--config", str(p)]) == 0
        rundir = next((tmp_path / "runs").iterdir())
        assert (rundir / "X.trj").exists() and (rundir / "Y.trj").exists()
        manifest = json.loads((rundir / "manifest.json").read_text())
        by_id = {c["id"]: c for c in manifest["checks"]}
        assert by_id["picard-converged"]["passed"]
        assert by_id["picard-converged"]["measured"]["halvings"] == 0
        log = (rundir / "convergence.csv").read_text().splitlines()
        assert log[0] == "iteration,increment" and len(log) > 2

    def test_reverify_solve(self, tmp_path):
        p = _write_config(tmp_path, kind="solve", N=4, M=8, T=0.25, h=0.0625,
                          samples=1, out=str(tmp_path / "runs"))
        manifest, rundir = run_experiment(load_config(p))
        assert reverify(rundir)["checks"] == manifest["checks"]


class TestEquivalenceKind:
    def test_gap_shrinks(self, tmp_path):
        p = _write_config(tmp_path, kind="equivalence", N=4, M=8, T=0.25,
                          h=0.03125, samples=1, seed=1,
                          out=str(tmp_path / "runs"))
        assert main(["equivalence", "--config", str(p)]) == 0
        rundir = next((tmp_path / "runs").iterdir())
        rows = (rundir / "equivalence.csv").read_text().splitlines()
        assert rows[0] == "h,gap" and len(rows) == 4
        manifest = json.loads((rundir / "manifest.json").read_text())
        ratios = manifest["checks"][0]["measured"]["ratios"]
        assert len(ratios) == 2 and all(r >= 1.5 for r in ratios)


class TestCauchyKind:
    def test_gap_decreases_in_cutoff(self, tmp_path):
        p = _write_config(tmp_path, kind="cauchy-in-n", N=8, M=16, T=0.25,
                          h=0.0625, samples=2, seed=4,
                          out=str(tmp_path / "runs"))
        rc = main(["cauchy-in-n", "--config", str(p)])
        rundir = next((tmp_path / "runs").iterdir())
        rows = (rundir / "cauchy.csv").read_text().splitlines()
        assert rows[0] == "n,gap,stderr" and len(rows) == 3
        assert rows[1].startswith("4,") and rows[2].startswith("8,")
        manifest = json.loads((rundir / "manifest.json").read_text())
        assert rc == (0 if manifest["passed"] else 1)
        assert reverify(rundir)["checks"] == manifest["checks"]

    def test_requires_dyadic_cutoff(self, tmp_path, capsys):
        p = _write_config(tmp_path, kind="cauchy-in-n", N=6, M=12, T=0.25,
                          h=0.0625, samples=2, out=str(tmp_path / "runs"))
        assert main(["cauchy-in-n", "--config", str(p)]) == 2
        assert "power of two" in capsys.readouterr().err


class TestOperatorNormKind:
    def test_requires_square_setup(self, tmp_path, capsys):
        p = _write_config(tmp_path, kind="operator-norm", N=4, M=8, T=0.5,
                          h=0.25, samples=2, out=str(tmp_path / "runs"))
        assert main(["operator-norm", "--config", str(p)]) == 2
        assert "N = M" in capsys.readouterr().err

    def test_artifacts_and_manifest(self, tmp_path):
        p = _write_config(tmp_path, kind="operator-norm", N=16, M=16, T=0.5,
                          h=0.25, samples=2, seed=6,
                          out=str(tmp_path / "runs"))
        rc = main(["operator-norm", "--config", str(p)])
        rundir = next((tmp_path / "runs").iterdir())
        manifest = json.loads((rundir / "manifest.json").read_text())
        check = manifest["checks"][0]
        assert check["id"] == "op-kernel-slope"
        assert rc == (0 if manifest["passed"] else 1)
        # dyadic shells 4 and 8 fit in the cube of half-width 16
        rows = (rundir / "opnorm.csv").read_text().splitlines()
        assert len(rows) == 3
        assert reverify(rundir)["checks"] == manifest["checks"]


class TestDecayKind:
    @pytest.mark.slow
    def test_profiles_fits_and_checks(self, tmp_path):
        p = _write_config(tmp_path, kind="decay", N=24, M=24, T=1.0, h=0.25,
                          samples=150, seed=9,
                          observables=["convolution", "integrated-wick"],
                          out=str(tmp_path / "runs"))
        rc = main(["decay", "--config", str(p)])
        rundir = next((tmp_path / "runs").iterdir())
        manifest = json.loads((rundir / "manifest.json").read_text())
        ids = [c["id"] for c in manifest["checks"]]
        assert ids == ["s0-targets", "integrated-wick-slope"]
        assert rc == (0 if manifest["passed"] else 1)
        fits = (rundir / "fits.csv").read_text().splitlines()
        assert len(fits) == 3
        assert reverify(rundir)["checks"] == manifest["checks"]

    def test_band_needs_room(self, tmp_path, capsys):
        p = _write_config(tmp_path, kind="decay", N=8, M=8, T=1.0, h=0.25,
                          samples=100, out=str(tmp_path / "runs"))
        assert main(["decay", "--config", str(p)]) == 2
        assert "M >= 24" in capsys.readouterr().err
