import io
import json

import pytest

from heavytail import cli
from heavytail.cadlag import StepPath


def run_cli(argv, monkeypatch, capsys, stdin=None):
    if stdin is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg, indent=2))
    return str(p)


SMALL_CFG = {
    "tail": {"c": 1.0, "beta": 0.0, "lambda": 1.0, "gamma": 2.0},
    "experiments": [
        {"name": "limits", "kind": "verify-limits", "seed": 0},
        {"name": "size1", "kind": "exact-k-jump", "params": {"i": 1, "x": 1.0}, "seed": 0},
        {"name": "paths", "kind": "simulate", "params": {"n": 20, "k": 2, "trials": 2, "resolution": 64}, "seed": 1},
    ],
}


class TestQueries:
    def test_rate_three_jumps(self, monkeypatch, capsys):
        p = StepPath(0.0, [(0.2, 1.0), (0.5, 2.0), (0.7, 0.5)])
        code, out, _ = run_cli(["rate"], monkeypatch, capsys, p.to_json())
        assert code == 0
        assert out.strip() == '{"I_J1":3,"I_M1p":3,"I_rw":3}'

    def test_rate_infinite(self, monkeypatch, capsys):
        p = StepPath(0.0, [(1.0, 1.0)])
        code, out, _ = run_cli(["rate"], monkeypatch, capsys, p.to_json())
        d = json.loads(out)
        assert code == 0 and d["I_rw"] == 1 and d["I_J1"] != 1

    def test_distance_j1(self, monkeypatch, capsys):
        pair = {"p": StepPath(0.0, [(0.5, 1.0)]).to_dict(), "q": StepPath(0.0, [(0.6, 1.0)]).to_dict()}
        code, out, _ = run_cli(["distance", "--metric", "j1", "--round"], monkeypatch, capsys, json.dumps(pair))
        assert code == 0 and float(out) == pytest.approx(0.1, abs=1e-6)

    def test_distance_list_and_m1p(self, monkeypatch, capsys):
        pair = [StepPath(0.0, [(0.0, 1.0)]).to_dict(), StepPath(0.0, [(0.1, 1.0)]).to_dict()]
        code, out, _ = run_cli(["distance", "--metric", "m1p"], monkeypatch, capsys, json.dumps(pair))
        d = json.loads(out)
        assert code == 0 and d["lower"] <= d["upper"] <= 0.1 + 2e-3

    def test_bad_stdin(self, monkeypatch, capsys):
        code, _, err = run_cli(["rate"], monkeypatch, capsys, "{\n  bad")
        assert code == 2 and "line 2" in err
        code, _, err = run_cli(["rate"], monkeypatch, capsys, '{"initial": 0}')
        assert code == 2 and "jumps" in err

    def test_simulate_lines(self, monkeypatch, capsys):
        code, out, _ = run_cli(["simulate", "--n", "20", "--k", "2", "--trials", "2", "--resolution", "64"],
                               monkeypatch, capsys)
        lines = out.strip().splitlines()
        assert code == 0 and len(lines) == 2
        recs = [json.loads(s) for s in lines]
        assert [r["trial"] for r in recs] == [0, 1]
        code, out2, _ = run_cli(["simulate", "--n", "20", "--k", "2", "--trials", "2", "--resolution", "64"],
                                monkeypatch, capsys)
        assert out2 == out

    def test_estimate_k_jump(self, monkeypatch, capsys):
        code, out, _ = run_cli(["estimate", "--event", "k-jump", "--n", "100000000"], monkeypatch, capsys)
        d = json.loads(out)
        assert code == 0 and abs(d["log_ratio"] + 1) < 0.06

    def test_verify_limits_stdout(self, monkeypatch, capsys):
        code, out, _ = run_cli(["verify-limits", "--limit", "limit3"], monkeypatch, capsys)
        assert code == 0 and out.startswith("limit3: value=")

    def test_verify_limits_csv(self, tmp_path, monkeypatch, capsys):
        code, _, _ = run_cli(["verify-limits", "--out", str(tmp_path)], monkeypatch, capsys)
        files = sorted(p.name for p in tmp_path.glob("*.csv"))
        assert code == 0 and len(files) == 9
        for f in files:
            assert (tmp_path / f).read_text().splitlines()[0] == "n,value,target"

    def test_counterexample(self, monkeypatch, capsys):
        code, out, _ = run_cli(["counterexample", "--lemma", "32", "--budget", "0"], monkeypatch, capsys)
        d = json.loads(out)
        assert code == 0 and d["N"] == 13


class TestUsage:
    def test_unknown_subcommand(self, monkeypatch, capsys):
        code, _, err = run_cli(["frobnicate"], monkeypatch, capsys)
        assert code == 2 and "usage" in err

    def test_no_subcommand(self, monkeypatch, capsys):
        assert run_cli([], monkeypatch, capsys)[0] == 2

    def test_bad_threads(self, monkeypatch, capsys):
        assert run_cli(["simulate", "--threads", "0"], monkeypatch, capsys)[0] == 2

    def test_run_needs_config(self, monkeypatch, capsys):
        assert run_cli(["run"], monkeypatch, capsys)[0] == 2

    def test_missing_config_file(self, tmp_path, monkeypatch, capsys):
        assert run_cli(["run", "--config", str(tmp_path / "nope.json")], monkeypatch, capsys)[0] == 2


class TestConfig:
    def test_syntax_error_line_anchored(self, tmp_path, monkeypatch, capsys):
        path = write_cfg(tmp_path, '{\n  "tail": {"c": 1.0},\n  "experiments": [,]\n}')
        code, _, err = run_cli(["run", "--config", path, "--out", str(tmp_path / "o")], monkeypatch, capsys)
        assert code == 2 and "line 3" in err
        assert not (tmp_path / "o").exists()

    def test_unknown_kind_line_anchored(self, tmp_path, monkeypatch, capsys):
        cfg = {"experiments": [{"name": "a", "kind": "verify-limits", "seed": 0},
                               {"name": "b", "kind": "teleport", "seed": 1}]}
        path = write_cfg(tmp_path, cfg)
        code, _, err = run_cli(["run", "--config", path, "--out", str(tmp_path / "o")], monkeypatch, capsys)
        text = (tmp_path / "cfg.json").read_text().splitlines()
        lineno = next(i + 1 for i, s in enumerate(text) if "teleport" in s)
        assert code == 2 and f"line {lineno}" in err and "teleport" in err

    def test_bad_tail(self, tmp_path, monkeypatch, capsys):
        path = write_cfg(tmp_path, '{\n  "experiments": [],\n  "tail": {"c": -1.0}\n}')
        code, _, err = run_cli(["run", "--config", path, "--out", str(tmp_path / "o")], monkeypatch, capsys)
        assert code == 2 and "line 3" in err

    @pytest.mark.parametrize("exp", [
        {"name": "x", "kind": "verify-limits"},                       # seed missing
        {"name": "x y", "kind": "verify-limits", "seed": 0},          # unsafe name
        {"name": "x", "kind": "verify-limits", "seed": 0, "foo": 1},  # unknown key
    ])
    def test_rejected_experiments(self, exp):
        with pytest.raises(cli.ConfigError):
            cli.parse_config(json.dumps({"experiments": [exp]}))

    def test_duplicate_names(self):
        e = {"name": "x", "kind": "verify-limits", "seed": 0}
        with pytest.raises(cli.ConfigError):
            cli.parse_config(json.dumps({"experiments": [e, e]}))

    def test_round_trip(self):
        cfg = cli.parse_config(json.dumps(SMALL_CFG))
        assert cfg.tail.to_dict() == SMALL_CFG["tail"]
        assert [e.name for e in cfg.experiments] == ["limits", "size1", "paths"]
        assert [e.seed for e in cfg.experiments] == [0, 0, 1]
        assert cfg.formats == ("csv", "json")
        again = cli.parse_config(cfg.text)
        assert again.sha256 == cfg.sha256 and again.experiments == cfg.experiments


class TestRun:
    def test_empty_experiment_list(self, tmp_path, monkeypatch, capsys):
        path = write_cfg(tmp_path, {"experiments": []})
        out = tmp_path / "o"
        code, _, _ = run_cli(["run", "--config", path, "--out", str(out)], monkeypatch, capsys)
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]
        man = json.loads((out / "manifest.json").read_text())
        assert man["experiments"] == [] and man["seeds"] == {}

    def test_byte_identical_reruns(self, tmp_path, monkeypatch, capsys):
        path = write_cfg(tmp_path, SMALL_CFG)
        outs = []
        for d in ("a", "b"):
            code, _, _ = run_cli(["run", "--config", path, "--out", str(tmp_path / d)], monkeypatch, capsys)
            assert code == 0
            outs.append({p.name: p.read_bytes() for p in (tmp_path / d).iterdir()})
        assert outs[0] == outs[1]
        assert {"limits.csv", "size1.csv", "paths.csv", "manifest.json"} <= set(outs[0])

    def test_manifest_seed_registry(self, tmp_path, monkeypatch, capsys):
        path = write_cfg(tmp_path, SMALL_CFG)
        out = tmp_path / "o"
        run_cli(["run", "--config", path, "--out", str(out)], monkeypatch, capsys)
        man = json.loads((out / "manifest.json").read_text())
        assert man["seeds"] == {"limits": 0, "size1": 0, "paths": 1}
        assert man["config_sha256"] == cli.parse_config((tmp_path / "cfg.json").read_text()).sha256
        assert all(e["status"] == "ok" for e in man["experiments"])
        code, rep, _ = run_cli(["report", "--out", str(out)], monkeypatch, capsys)
        assert code == 0 and "paths" in rep

    def test_seed_override(self, tmp_path, monkeypatch, capsys):
        path = write_cfg(tmp_path, SMALL_CFG)
        out = tmp_path / "o"
        run_cli(["run", "--config", path, "--out", str(out), "--seed-override", "7"], monkeypatch, capsys)
        man = json.loads((out / "manifest.json").read_text())
        assert set(man["seeds"].values()) == {7}

    def test_failure_recorded_and_run_continues(self, tmp_path, monkeypatch, capsys):
        cfg = {"experiments": [
            {"name": "broken", "kind": "exact-k-jump", "params": {"i": 1, "x": 1.0, "kind": "bogus"}, "seed": 0},
            {"name": "limits", "kind": "verify-limits", "seed": 0},
        ]}
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "o"
        code, _, err = run_cli(["run", "--config", path, "--out", str(out)], monkeypatch, capsys)
        man = json.loads((out / "manifest.json").read_text())
        assert code == 1 and "broken" in err
        assert [e["status"] for e in man["experiments"]] == ["error", "ok"]
        assert (out / "limits.csv").exists()
        assert run_cli(["report", "--out", str(out)], monkeypatch, capsys)[0] == 1

    def test_format_switch(self, tmp_path, monkeypatch, capsys):
        cfg = dict(SMALL_CFG, format={"csv": True, "json": False})
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "o"
        run_cli(["run", "--config", path, "--out", str(out)], monkeypatch, capsys)
        assert not list(out.glob("limits.json")) and (out / "limits.csv").exists()

    def test_example_config_parses(self):
        from pathlib import Path
        text = (Path(__file__).parent.parent / "scripts" / "example_config.json").read_text()
        cfg = cli.parse_config(text)
        assert len(cfg.experiments) == 8
