import json

import pytest

from qliom import cli
from qliom.reports import dumps, read_csv, write_csv


def _run(tmp_path, *argv):
    return cli.main([*argv, "--output-dir", str(tmp_path)])


def _write_cfg(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfig:
    def test_defaults_merged(self):
        cfg = cli.validate_config({"params": {"N": 6}})
        assert cfg["verify"]["locality_trials"] == 50
        assert cli.seeds_from_config(cfg) == [0]

    @pytest.mark.parametrize(
        "cfg",
        [
            {"params": {"N": 6, "J": 1.5}},
            {"params": {"N": 6}, "bogus": 1},
            {"params": {"N": 6, "extra": 2}},
            {"params": {"N": 0}},
            {"params": {"N": 6}, "dynamics": {"steps": 3}},
            {"params": {"N": 3, "perturbation": {"pauli_terms": [[1.0, "X"], [1.0, "Z"]]}}},
        ],
    )
    def test_rejected(self, cfg):
        with pytest.raises(cli.ConfigError):
            cli.validate_config(cfg)

    def test_seed_forms(self):
        assert cli.seeds_from_config(cli.validate_config({"params": {"N": 4}, "seeds": [5, 2]})) == [5, 2]
        cfg = cli.validate_config({"params": {"N": 4}, "seeds": {"seed0": 3, "count": 2}})
        assert cli.seeds_from_config(cfg) == [3, 4]

    def test_output_dir_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
        assert cli.output_dir({}) == tmp_path / "env"
        assert cli.output_dir({"output_dir": "x"}).name == "x"

    def test_bad_config_exit_code(self, tmp_path):
        assert _run(tmp_path, "build", "--N", "6", "--J", "2.0") == cli.EXIT_CONFIG
        assert _run(tmp_path, "build", _write_cfg(tmp_path, {"params": {"N": 6}, "nope": 1})) == cli.EXIT_CONFIG

    def test_unreadable_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert _run(tmp_path, "build", str(bad)) == cli.EXIT_CONFIG

    def test_schema_command(self, capsys):
        assert cli.main(["schema"]) == 0
        schema = json.loads(capsys.readouterr().out)
        assert schema["additionalProperties"] is False


class TestCommands:
    def test_build_smoke_and_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert _run(a, "build", "--N", "8", "--J", "0.05") == 0
        assert _run(b, "build", "--N", "8", "--J", "0.05") == 0
        for name in ("build/seed_0.json", "build/sites.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        body = json.loads((a / "build/seed_0.json").read_text())
        assert body["seed"] == 0 and "kam" in body and "lioms" in body

    def test_parallel_matches_serial(self, tmp_path):
        s, p = tmp_path / "s", tmp_path / "p"
        assert _run(s, "build", "--N", "6", "--count", "4") == 0
        assert _run(p, "build", "--N", "6", "--count", "4", "-j", "2") == 0
        for k in range(4):
            assert (s / f"build/seed_{k}.json").read_bytes() == (p / f"build/seed_{k}.json").read_bytes()
        assert (s / "build/sites.csv").read_bytes() == (p / "build/sites.csv").read_bytes()

    def test_capacity_exit(self, tmp_path):
        assert _run(tmp_path, "build", "--N", "8", "--delta", "10", "--max-support", "6") == cli.EXIT_CAPACITY

    def test_verify_golden(self, tmp_path):
        code = _run(tmp_path, "verify", "--N", "10", "--J", "0.02", "--seeds", "2", "--negative-controls")
        assert code == 0
        report = json.loads((tmp_path / "verify.json").read_text())
        ctrl = report["realizations"][0]["negative_controls"]
        assert ctrl["A_sign"]["failed_as_expected"] and ctrl["tau_shuffle"]["failed_as_expected"]
        header, rows = read_csv(tmp_path / "verify_checks.csv")
        assert header[:3] == ["seed", "check_id", "status"] and rows

    def test_ensemble_zero_threshold(self, tmp_path):
        code = _run(tmp_path, "ensemble", "--N", "8", "--J", "0.0001", "--delta", "0", "--num-samples", "200")
        assert code in (0, 1)
        _, rows = read_csv(tmp_path / "ensemble_rates.csv")
        assert rows and all(float(r[3]) == 0.0 for r in rows)

    def test_transport(self, tmp_path):
        assert _run(tmp_path, "transport", "--N", "10", "--J", "0.02", "--seeds", "2") == 0
        body = json.loads((tmp_path / "transport.json").read_text())
        r = body["realizations"][0]
        assert r["x"] == 4 and r["residual_consistent"]

    def test_transport_no_cut(self, tmp_path):
        assert _run(tmp_path, "transport", "--N", "10", "--J", "0.02", "--seeds", "0") == cli.EXIT_CAPACITY

    def test_dynamics_zero_coupling(self, tmp_path):
        code = _run(tmp_path, "dynamics", "--N", "6", "--J", "0", "--t-max", "10", "--steps", "100")
        assert code == 0
        header, rows = read_csv(tmp_path / "dynamics/seed_0.csv")
        col = header.index("integrated_current")
        assert len(rows) == 101 and all(float(r[col]) == 0.0 for r in rows)

    def test_format_switches(self, tmp_path):
        assert _run(tmp_path, "build", "--N", "5", "--no-csv") == 0
        assert (tmp_path / "build/seed_0.json").exists() and not (tmp_path / "build/sites.csv").exists()


class TestReports:
    def test_json_canonical(self):
        text = dumps({"b": 1, "a": float("nan"), "c": [1.5, float("inf")]})
        assert text.index('"a"') < text.index('"b"')
        assert '"nan"' in text and '"inf"' in text

    def test_csv_roundtrip(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["x", "flag", "name"], [(0.1, True, "a"), (1 / 3, False, None)])
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# qliom csv schema")
        header, rows = read_csv(path)
        assert header == ["x", "flag", "name"]
        assert float(rows[1][0]) == 1 / 3 and rows[0][1] == "true" and rows[1][2] == ""
