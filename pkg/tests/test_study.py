"""Study driver: configs, CSV round trip, plots, presets, CLI exit codes."""

import subprocess
import sys

import numpy as np
import pytest

from bvcfem.study import (
    PRESETS,
    ConfigError,
    IoError,
    StudyConfig,
    emit_csv,
    emit_plots,
    expected_rates,
    main,
    parse_config_file,
    read_csv,
    run_study,
    validate_config,
)


@pytest.fixture(scope="module")
def small_ring_study():
    return run_study(StudyConfig(domain="ring", element="p2", method="bvc", levels=3))


class TestConfig:
    def test_defaults_valid(self):
        validate_config(StudyConfig())

    def test_q1_requires_ellipse(self):
        with pytest.raises(ConfigError):
            validate_config(StudyConfig(domain="ring", element="q1"))

    def test_p2_requires_ring(self):
        with pytest.raises(ConfigError):
            validate_config(StudyConfig(domain="ellipse", element="p2"))

    def test_auto_multiplier_degree(self):
        assert StudyConfig(element="p3").mult_degree() == 2
        assert StudyConfig(element="q1", domain="ellipse").mult_degree() == 0
        assert StudyConfig(multiplier_degree=2).mult_degree() == 2

    def test_bad_method(self):
        with pytest.raises(ConfigError):
            validate_config(StudyConfig(method="penalty"))

    def test_config_file(self, tmp_path):
        path = tmp_path / "study.cfg"
        path.write_text(
            "# example\ndomain = ring\nelement = p2\nlevels = 3  # short ladder\n"
        )
        assert parse_config_file(path) == {"domain": "ring", "element": "p2", "levels": "3"}

    def test_config_file_unknown_key(self, tmp_path):
        path = tmp_path / "study.cfg"
        path.write_text("solver = magic\n")
        with pytest.raises(ConfigError):
            parse_config_file(path)


class TestRunStudy:
    def test_reports_and_rates(self, small_ring_study):
        res = small_ring_study
        assert len(res.reports) == 3
        assert not res.failures
        hs = [r.h for r in res.reports]
        assert all(a > b for a, b in zip(hs, hs[1:]))
        assert res.rates is not None
        assert 2.5 <= res.rates["l2"].last3 <= 3.6

    def test_elevation_rows_match_nno(self, small_ring_study):
        res = small_ring_study
        assert res.elevation.shape == (res.reports[-1].nno, 3)

    def test_deterministic_rerun(self, small_ring_study):
        res2 = run_study(StudyConfig(domain="ring", element="p2", method="bvc", levels=3))
        for a, b in zip(small_ring_study.reports, res2.reports):
            assert a.err_l2 == b.err_l2
            assert a.err_h1 == b.err_h1
            assert a.err_lambda == b.err_lambda


class TestCsv:
    def test_round_trip(self, small_ring_study, tmp_path):
        path = tmp_path / "out.csv"
        emit_csv(small_ring_study, path)
        rows = read_csv(path)
        assert len(rows) == 3
        for (level, report), row in zip(small_ring_study.records, rows):
            assert row["level"] == level
            assert row["h"] == report.h
            assert row["nno"] == report.nno
            assert row["err_l2"] == report.err_l2
            assert row["err_h1"] == report.err_h1
            assert row["err_lambda"] == report.err_lambda
            assert row["delta_h"] == report.delta_h
        assert rows[0]["rate_l2"] is None
        r0, r1 = small_ring_study.reports[0], small_ring_study.reports[1]
        expected = np.log(r0.err_l2 / r1.err_l2) / np.log(r0.h / r1.h)
        assert rows[1]["rate_l2"] == pytest.approx(expected, rel=1e-15)

    def test_bit_identical_across_runs(self, small_ring_study, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(small_ring_study, p1)
        res2 = run_study(StudyConfig(domain="ring", element="p2", method="bvc", levels=3))
        emit_csv(res2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_result_rejected(self):
        from bvcfem.study import StudyResult

        with pytest.raises(IoError):
            emit_csv(StudyResult(config=StudyConfig()), "/tmp/never.csv")

    def test_line_count(self, small_ring_study, tmp_path):
        path = tmp_path / "out.csv"
        emit_csv(small_ring_study, path)
        assert len(path.read_text().splitlines()) == 1 + 3

    def test_single_level_gives_two_lines(self, tmp_path):
        res = run_study(StudyConfig(domain="ring", element="p1", method="bvc", levels=1))
        path = tmp_path / "one.csv"
        emit_csv(res, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].split(",")[8] == ""  # no rate on the first row


class TestPlots:
    def test_svg_files_written(self, small_ring_study, tmp_path):
        prefix = tmp_path / "plot"
        emit_plots(small_ring_study, prefix)
        for norm in ("l2", "h1", "lambda"):
            svg = tmp_path / f"plot-{norm}.svg"
            assert svg.exists()
            text = svg.read_text()
            assert text.startswith("<svg")
            assert "polyline" in text
            assert "polygon" in text  # reference triangle
        elev = (tmp_path / "plot-elevation.txt").read_text().splitlines()
        assert len(elev) == small_ring_study.reports[-1].nno
        assert len(elev[0].split()) == 3

    def test_svg_well_formed(self, small_ring_study, tmp_path):
        import xml.dom.minidom

        prefix = tmp_path / "plot"
        emit_plots(small_ring_study, prefix)
        xml.dom.minidom.parse(str(tmp_path / "plot-l2.svg"))

    def test_reference_slope_annotation(self, small_ring_study, tmp_path):
        prefix = tmp_path / "plot"
        emit_plots(small_ring_study, prefix)
        ref = expected_rates(small_ring_study.config)
        text = (tmp_path / "plot-l2.svg").read_text()
        assert f">{ref['l2']:g}</text>" in text


class TestExpectedRates:
    def test_bvc_orders(self):
        r = expected_rates(StudyConfig(element="p3", method="bvc"))
        assert r == {"l2": 4.0, "h1": 3.0, "lambda": 3.0}

    def test_unmodified_capped(self):
        r = expected_rates(StudyConfig(element="p3", method="unmodified"))
        assert r["l2"] == 2.0


class TestPresetRegistry:
    def test_paper_experiments_registered(self):
        for name in ("p2-ring", "p3-ring", "unstable-pairing", "q1-ellipse"):
            assert name in PRESETS

    def test_unknown_preset(self):
        from bvcfem.study import run_preset

        with pytest.raises(ConfigError):
            run_preset("p9-hypercube")


class TestCli:
    def test_explicit_run_exit_zero(self, tmp_path):
        out = tmp_path / "r.csv"
        code = main(
            [
                "--domain", "ring", "--element", "p2", "--method", "bvc",
                "--levels", "3", "--out", str(out), "--plots", str(tmp_path / "p"),
            ]
        )
        assert code == 0
        assert out.exists()
        assert (tmp_path / "p-l2.svg").exists()

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "study.cfg"
        cfg.write_text("domain = ring\nelement = p2\nmethod = bvc\nlevels = 4\n")
        code = main(["--config", str(cfg), "--levels", "3"])
        assert code == 0
        assert "level 3:" not in capsys.readouterr().out  # flag overrode levels=4

    def test_invalid_combo_exit_one(self):
        assert main(["--domain", "ring", "--element", "q1", "--levels", "3"]) == 1

    def test_unknown_config_key_exit_one(self, tmp_path):
        cfg = tmp_path / "study.cfg"
        cfg.write_text("warp = 9\n")
        assert main(["--config", str(cfg)]) == 1

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "bvcfem.study", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "--preset" in proc.stdout
