import csv
import io
import math

import numpy as np
import pytest

from ghzqkd import cli
from ghzqkd.config import preset_path

SWEEP_BASE = preset_path("sweep").read_text()


def run_cli(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def header_of(text):
    return text.splitlines()[0].split(",")


class TestAnalyze:
    def test_table2(self, capsys):
        code, out, _ = run_cli(["analyze", "--config", "table2"], capsys)
        assert code == 0
        assert header_of(out) == cli.ANALYZE_HEADER
        rows = rows_of(out)
        assert [r["scenario"] for r in rows] == ["bb84-25", "sarg-25", "bb84-50", "sarg-50"]
        tabulated = [0.0156, 0.0162, 0.0921, 0.0411]
        for r, q in zip(rows, tabulated):
            assert abs(float(r["QBER_th"]) - q) <= 0.005
            assert float(r["S"]) >= 0

    def test_text_format(self, capsys):
        code, out, _ = run_cli(["analyze", "--config", "bb84-25", "--format", "text"], capsys)
        assert code == 0
        assert out.split()[: len(cli.ANALYZE_HEADER)] == cli.ANALYZE_HEADER

    def test_out_file(self, tmp_path, capsys):
        target = tmp_path / "a.csv"
        code, out, _ = run_cli(["analyze", "--config", "sarg-50", "--out", str(target)], capsys)
        assert code == 0 and out == ""
        assert header_of(target.read_text()) == cli.ANALYZE_HEADER

    def test_empty_scenarios(self, tmp_path, capsys):
        cfg = tmp_path / "empty.cfg"
        cfg.write_text("# no scenarios\n")
        code, _, err = run_cli(["analyze", "--config", str(cfg)], capsys)
        assert code == 2
        assert "no scenarios" in err

    def test_visibility_out_of_range(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("link.visibility = 1.3\n")
        code, _, err = run_cli(["analyze", "--config", str(cfg)], capsys)
        assert code == 2
        assert "link.visibility" in err

    def test_missing_config(self, capsys):
        code, _, err = run_cli(["analyze", "--config", "does-not-exist"], capsys)
        assert code == 2 and "not found" in err


class TestSimulate:
    def test_zero_pulses_rejected(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", "--config", "bb84-25", "--pulses", "0"])
        assert exc.value.code == 2

    def test_byte_identical(self, tmp_path, capsys):
        outs = []
        for i, workers in enumerate(("1", "4")):
            target = tmp_path / f"sim{i}.csv"
            code = cli.main(["simulate", "--config", "bb84-25", "--pulses", "1e7", "--seed", "42",
                             "--workers", workers, "--out", str(target)])
            assert code == 0
            outs.append(target.read_bytes())
        assert outs[0] == outs[1]
        assert header_of(outs[0].decode()) == cli.SIMULATE_HEADER

    def test_bb84_25_qber_within_3_sigma(self, capsys):
        code, out, _ = run_cli(["simulate", "--config", "bb84-25", "--pulses", "1e7", "--seed", "42"], capsys)
        assert code == 0
        (r,) = rows_of(out)
        detected = float(r["R"]) * 1e7 / 1.27e9
        n_sifted = detected * float(r["sift_fraction"])
        q_th = float(r["QBER_th"])
        sigma = math.sqrt(q_th * (1 - q_th) / n_sifted)
        assert abs(float(r["QBER_emp"]) - q_th) < 3 * sigma

    def test_events_stream(self, tmp_path, capsys):
        events = tmp_path / "events.csv"
        code, out, _ = run_cli(["simulate", "--config", "sarg-25", "--pulses", "200000",
                                "--events", str(events)], capsys)
        assert code == 0
        ev = rows_of(events.read_text())
        assert header_of(events.read_text()) == cli.EVENTS_HEADER
        assert {e["origin"] for e in ev} <= {"signal", "dark", "afterpulse"}
        (summary,) = rows_of(out)
        assert len(ev) == round(float(summary["R"]) * 200000 / 1.27e9)

    def test_runtime_error_exit_code(self, monkeypatch, capsys):
        def boom(*a, **k):
            raise RuntimeError("worker died")
        monkeypatch.setattr(cli.simulator, "run", boom)
        code, _, err = run_cli(["simulate", "--config", "bb84-25", "--pulses", "10"], capsys)
        assert code == 3 and "worker died" in err


class TestSweep:
    def sweep(self, capsys, *extra):
        code, out, _ = run_cli(["sweep", *extra], capsys)
        assert code == 0
        return rows_of(out)

    def test_shape(self, capsys):
        rows = self.sweep(capsys, "--km-from", "0", "--km-to", "150", "--step", "5")
        by = {p: [r for r in rows if r["protocol"] == p] for p in ("BB84", "SARG")}
        t = np.array([float(r["t"]) for r in by["BB84"]])
        assert np.all(np.diff(t) < 0)
        s_bb = np.array([float(r["S"]) for r in by["BB84"]])
        s_sg = np.array([float(r["S"]) for r in by["SARG"]])
        assert np.all(s_bb >= 0) and np.all(s_sg >= 0)
        assert s_bb[-1] == 0  # clamped past the cutoff
        ahead = s_sg > s_bb
        cross = int(np.argmax(ahead))
        assert not ahead[0] and ahead[cross]
        # once SARG leads it keeps leading while either rate is positive
        alive = (s_sg > 0) | (s_bb > 0)
        assert np.all(ahead[cross:][alive[cross:]])

    def test_zero_km_dark_free(self, tmp_path, capsys):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(SWEEP_BASE + "\nlink.p_dark = 0\n")
        rows = self.sweep(capsys, "--config", str(cfg), "--km-to", "0")
        q = {r["protocol"]: float(r["QBER_th"]) for r in rows}
        assert q["BB84"] == pytest.approx(0.005)
        assert q["SARG"] == pytest.approx(0.010)

    def test_50_km_matches_analyze(self, tmp_path, capsys):
        rows = self.sweep(capsys, "--km-from", "50", "--km-to", "50")
        cfg = tmp_path / "a.cfg"
        cfg.write_text(SWEEP_BASE.replace("channel.length = 0 km", "channel.length = 50 km")
                       + "\n[BB84]\nscenario.protocol = BB84\n[SARG]\nscenario.protocol = SARG\n")
        code, out, _ = run_cli(["analyze", "--config", str(cfg)], capsys)
        assert code == 0
        analyzed = {r["protocol"]: r for r in rows_of(out)}
        for r in rows:
            a = analyzed[r["protocol"]]
            assert (r["t"], r["mu_opt"], r["R_model"], r["QBER_th"], r["S"]) == \
                   (a["t"], a["mu_opt"], a["R"], a["QBER_th"], a["S"])

    def test_bad_range(self, capsys):
        code, _, _ = run_cli(["sweep", "--km-from", "10", "--km-to", "5"], capsys)
        assert code == 2

    def test_header(self, capsys):
        _, out, _ = run_cli(["sweep", "--km-to", "10"], capsys)
        assert header_of(out) == cli.SWEEP_HEADER


class TestDetectorCurve:
    def curve(self, capsys, *extra):
        code, out, _ = run_cli(["detector-curve", *extra], capsys)
        assert code == 0
        assert header_of(out) == cli.CURVE_HEADER
        rows = rows_of(out)
        return np.array([[float(r[k]) for k in cli.CURVE_HEADER] for r in rows])

    def test_default_grid(self, capsys):
        data = self.curve(capsys)
        pump, eff, noise = data.T
        assert (pump[0], eff[0], noise[0]) == (0.0, 0.0, 150.0)
        assert 0.05 <= eff.max() <= 0.07
        k = int(np.argmax(eff))
        assert 0 < k < len(eff) - 1
        assert np.all(np.diff(noise) > 0)
        assert np.all(np.diff(noise, 2) > 0)
        nearest = int(np.argmin(np.abs(eff[:k] - 0.02)))
        assert noise[nearest] < 20e3

    def test_bad_points(self, capsys):
        code, _, _ = run_cli(["detector-curve", "--points", "1"], capsys)
        assert code == 2


class TestHistogram:
    def test_two_columns(self, capsys):
        code, out, _ = run_cli(["histogram", "--config", "fig4", "--scenario", "b2b", "--pulses", "500000",
                                "--bin-ps", "10"], capsys)
        assert code == 0
        assert header_of(out) == ["time_ps", "counts_controlled", "counts_uncontrolled"]
        rows = rows_of(out)
        assert len(rows) == math.ceil(787.4 / 10)
        assert sum(int(r["counts_controlled"]) for r in rows) > 0

    def test_single_column(self, capsys):
        _, out, _ = run_cli(["histogram", "--config", "fig4", "--pulses", "100000",
                             "--polarization", "controlled"], capsys)
        assert header_of(out) == ["time_ps", "counts_controlled"]

    def test_unknown_scenario(self, capsys):
        code, _, err = run_cli(["histogram", "--config", "fig4", "--scenario", "nope"], capsys)
        assert code == 2 and "nope" in err

    def test_reproducible(self, capsys):
        argv = ["histogram", "--config", "fig4", "--pulses", "200000", "--seed", "7"]
        _, a, _ = run_cli(argv, capsys)
        _, b, _ = run_cli(argv, capsys)
        assert a == b
