import json


from perclab.cli import main


def run(tmp_path, *argv):
    return main([str(a) for a in argv])


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestPhatSweep:
    def test_rows_and_formula(self, tmp_path):
        out = tmp_path / "phat.csv"
        code = run(tmp_path, "phat-sweep", "--grid", "0.4,1", "--trials", "2000",
                   "--seed", "7", "--out", out)
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# perclab phat-sweep schema=1")
        header = lines[3].split(",")
        assert header[0] == "L"
        sub = dict(zip(header, lines[4].split(",")))
        assert float(sub["phat_formula"]) == 0.0
        assert float(sub["phat_empirical"]) == 0.0
        one = dict(zip(header, lines[5].split(",")))
        assert float(one["phat_formula"]) == 0.25

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(tmp_path, "phat-sweep", "--grid", "1,2", "--trials", "1000",
            "--seed", "3", "--out", a)
        run(tmp_path, "phat-sweep", "--grid", "1,2", "--trials", "1000",
            "--seed", "3", "--out", b)
        assert read(a) == read(b)


class TestSurvival:
    def test_single_point_and_grid(self, tmp_path):
        out = tmp_path / "s.csv"
        code = run(tmp_path, "survival", "--p", "0.7", "--d", "2", "--T", "30",
                   "--trials", "100", "--seed", "5", "--out", out)
        assert code == 0
        assert "estimate" in out.read_text()

    def test_worker_invariance(self, tmp_path):
        a, b = tmp_path / "w1.csv", tmp_path / "w2.csv"
        args = ["survival", "--axis", "p", "--grid", "0.6,0.8", "--d", "3",
                "--T", "25", "--trials", "80", "--seed", "5"]
        run(tmp_path, *args, "--workers", "1", "--out", a)
        run(tmp_path, *args, "--workers", "2", "--out", b)
        assert read(a) == read(b)

    def test_L_axis(self, tmp_path):
        out = tmp_path / "L.csv"
        code = run(tmp_path, "survival", "--L", "1.5", "--d", "3", "--T", "15",
                   "--trials", "60", "--seed", "5", "--out", out)
        assert code == 0

    def test_requires_exactly_one_axis_value(self, tmp_path):
        out = tmp_path / "x.csv"
        assert run(tmp_path, "survival", "--p", "0.5", "--L", "1.0", "--d", "2",
                   "--T", "10", "--out", out) == 1
        assert run(tmp_path, "survival", "--d", "2", "--T", "10",
                   "--out", out) == 1

    def test_validation_failure_leaves_no_file(self, tmp_path):
        out = tmp_path / "none.csv"
        assert run(tmp_path, "survival", "--p", "0.5", "--d", "1", "--T", "10",
                   "--trials", "10", "--out", out) == 1
        assert not out.exists()


class TestMartingale:
    def test_exact_at_p_one(self, tmp_path):
        out = tmp_path / "m.csv"
        code = run(tmp_path, "martingale", "--p", "1", "--d", "4", "--T", "10",
                   "--trials", "20", "--seed", "2", "--out", out)
        assert code == 0
        rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert rows[0] == "trial,nbar_t10"
        assert all(r.split(",")[1] == "1.0" for r in rows[1:])

    def test_checkpoints_and_workers(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["martingale", "--p", "0.7", "--d", "2", "--T", "40",
                "--trials", "50", "--seed", "4", "--checkpoints", "20,40"]
        run(tmp_path, *args, "--workers", "1", "--out", a)
        run(tmp_path, *args, "--workers", "2", "--out", b)
        assert read(a) == read(b)
        assert "nbar_t20,nbar_t40" in read(a).decode().splitlines()[3]


class TestCritical:
    def test_json_reproducible(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        args = ["critical", "--axis", "p", "--d", "2", "--T", "80",
                "--trials", "200", "--theta-star", "0.5", "--tol", "0.03",
                "--seed", "31", "--bracket", "0.55,0.85"]
        assert run(tmp_path, *args, "--out", a) == 0
        assert run(tmp_path, *args, "--workers", "2", "--out", b) == 0
        assert read(a) == read(b)
        doc = json.loads(read(a))
        assert doc["result"]["status"] == "bracketed"
        width = doc["result"]["bracket_high"] - doc["result"]["bracket_low"]
        assert width <= 0.03

    def test_budget_exhaustion_exit_code(self, tmp_path):
        code = run(tmp_path, "critical", "--axis", "p", "--d", "2", "--T", "40",
                   "--trials", "40", "--theta-star", "0.5", "--tol", "0.02",
                   "--seed", "8", "--bracket", "0.64,0.67",
                   "--max-escalations", "0", "--out", tmp_path / "c.json")
        assert code == 3

    def test_non_straddling_exit_code(self, tmp_path):
        code = run(tmp_path, "critical", "--axis", "p", "--d", "2", "--T", "100",
                   "--trials", "200", "--theta-star", "0.5", "--tol", "0.02",
                   "--seed", "6", "--bracket", "0.1,0.3",
                   "--out", tmp_path / "c.json")
        assert code == 1


class TestCheckMeasures:
    def test_single_event_pass(self, tmp_path):
        event = {
            "dim": 2, "window_half_width": 1.0,
            "constraints": [{"site": [-1, 0], "box": [[-1.0, 0.0], [-1.0, 1.0]]}],
        }
        ev_path = tmp_path / "event.json"
        ev_path.write_text(json.dumps(event))
        out = tmp_path / "r.json"
        code = run(tmp_path, "check-measures", "--event", ev_path, "--t", "5",
                   "--L", "1", "--trials", "20000", "--seed", "9", "--out", out)
        assert code == 0
        doc = json.loads(read(out))
        assert doc["result"]["report"]["passed"] is True

    def test_on_path_event_fails_battery_exit(self, tmp_path):
        # membership tied to an on-path site with an asymmetric box: the two
        # sides genuinely disagree and the run reports a battery failure
        event = {
            "dim": 2, "window_half_width": 1.0,
            "constraints": [{"site": [1, 1], "box": [[0.0, 1.0], [0.1, 1.0]]}],
        }
        ev_path = tmp_path / "event.json"
        ev_path.write_text(json.dumps(event))
        out = tmp_path / "r.json"
        code = run(tmp_path, "check-measures", "--event", ev_path, "--t", "5",
                   "--L", "1", "--trials", "60000", "--seed", "9", "--out", out)
        assert code == 2

    def test_hypothesis_violation_exit(self, tmp_path):
        event = {
            "dim": 2, "window_half_width": 1.0,
            "constraints": [{"site": [-1, 0], "box": [[-1.0, 0.0], [-1.0, 1.0]]}],
        }
        ev_path = tmp_path / "event.json"
        ev_path.write_text(json.dumps(event))
        code = run(tmp_path, "check-measures", "--event", ev_path, "--t", "4",
                   "--L", "1", "--trials", "1000", "--out", tmp_path / "r.json")
        assert code == 1


class TestCountPaths:
    def test_all_open_totals(self, tmp_path):
        out = tmp_path / "c.csv"
        code = run(tmp_path, "count-paths", "--p", "1", "--d", "3", "--T", "5",
                   "--mode", "exact", "--seed", "1", "--out", out)
        assert code == 0
        rows = [l.split(",") for l in out.read_text().splitlines()
                if l and not l.startswith("#")][1:]
        for t, row in enumerate(rows):
            assert int(row[1]) == 3 ** t
            assert float(row[2]) == 1.0

    def test_coupled_axis(self, tmp_path):
        out = tmp_path / "cL.csv"
        code = run(tmp_path, "count-paths", "--L", "1.2", "--d", "3", "--T", "4",
                   "--mode", "exact", "--seed", "1", "--out", out)
        assert code == 0


class TestConfigAndEnv:
    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# defaults\np = 1.0\nd = 3\nT = 4\ntrials = 10\nseed = 5\n")
        out = tmp_path / "out.csv"
        code = run(tmp_path, "count-paths", "--config", cfg, "--mode", "exact",
                   "--T", "3", "--out", out)
        assert code == 0
        rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert len(rows) == 1 + 4  # header plus levels 0..3 (flag wins)

    def test_env_seed_and_outdir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PERCLAB_SEED", "123")
        monkeypatch.setenv("PERCLAB_OUTDIR", str(tmp_path / "outs"))
        code = run(tmp_path, "phat-sweep", "--grid", "1", "--trials", "500",
                   "--out", "p.csv")
        assert code == 0
        text = (tmp_path / "outs" / "p.csv").read_text()
        assert "seed=123" in text

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just some words\n")
        assert run(tmp_path, "count-paths", "--config", cfg, "--p", "1",
                   "--d", "2", "--T", "2", "--out", tmp_path / "x.csv") == 1
