import json

import jsonschema
import pytest

from bandloc.cli import EXIT_ASSERT, EXIT_CAP, EXIT_CONFIG, EXIT_OK, main, report_schema
from bandloc.config import ConfigError, parse_config


def test_minimal_defaults(monkeypatch):
    monkeypatch.setenv("BANDLOC_THREADS", "3")
    c = parse_config('{"experiment": "decay"}')
    assert c.s == 0.5 and c.K == 4.0 and c.threads == 3
    assert c.distances == [8, 16, 32, 64, 128]


def test_decay_single_width():
    assert parse_config('{"experiment": "decay", "W": 3}').W_list == [3]


@pytest.mark.parametrize("text, needle", [
    ('{"experiment": "decay", "W": 1, "W": 2}', "duplicate key 'W'"),
    ('{"experiment": "events", "phi_fraction": 0.2}', "phi_fraction"),
    ('{"experiment": "decay", "nope": 1}', "nope"),
    ('{"experiment": "decay", "W": "two"}', "W"),
    ('{"experiment": "decay",\n "W": }', "line 2"),
    ('[1, 2]', "object"),
    ('{"experiment": "decay", "K": 0.5}', "K"),
    ('{"experiment": "decay", "s": 1.5}', "s"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_malformed_config_writes_nothing(tmp_path):
    cfg = _write(tmp_path, '{"experiment": "decay", ')
    out = tmp_path / "out"
    assert main(["decay", "--config", cfg, "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert main(["decay", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_experiment_mismatch(tmp_path):
    cfg = _write(tmp_path, {"experiment": "decay"})
    assert main(["events", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_cap_exceeded(tmp_path):
    cfg = _write(tmp_path, {"experiment": "correlator", "W": 50, "n": 100, "pairs": [[1, 2]]})
    assert main(["correlator", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CAP


def test_jacobian_report(tmp_path):
    cfg = _write(tmp_path, {"experiment": "jacobian-verify", "W_list": [2], "trials": 10})
    out = tmp_path / "jac"
    code = main(["jacobian-verify", "--config", cfg, "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, report_schema())
    assert report["results"]["max_fd_error"] < 1e-4
    assert report["config"]["trials"] == 10 and report["files"] == ["jacobian.csv"]
    header = (out / "jacobian.csv").read_text().splitlines()[0]
    assert header == "W,trial,delta,fd_error,product,product_rank_one,half_bound,two_bound"


def test_assert_exit_code(tmp_path):
    # the half-width Jacobian bound fails on ramp inputs, so --assert must report it
    cfg = _write(tmp_path, {"experiment": "jacobian-verify", "W_list": [2], "trials": 20})
    assert main(["jacobian-verify", "--config", cfg, "--out", str(tmp_path / "j"), "--assert"]) == EXIT_ASSERT


def test_passing_assert(tmp_path):
    cfg = _write(tmp_path, {"experiment": "lemma-check", "trials": 5, "mw_trials": 500})
    assert main(["lemma-check", "--config", cfg, "--out", str(tmp_path / "l"), "--assert"]) == EXIT_OK


def test_decay_csv_schema_and_determinism(tmp_path):
    cfg = _write(tmp_path, {"experiment": "decay", "W": 1, "seed": 7,
                            "distances": [8, 16, 32, 64], "n_samples": 1200})
    a, b = tmp_path / "a", tmp_path / "b"
    main(["decay", "--config", cfg, "--out", str(a), "--threads", "1"])
    main(["decay", "--config", cfg, "--out", str(b), "--threads", "4"])
    for name in ("decay.csv", "decay_fit.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "decay.csv").read_text().splitlines()[0] == "W,distance,mean,stderr,n_samples,n_excluded"
    assert (a / "decay_fit.csv").read_text().splitlines()[0] == "W,xi,mu,r_squared,intercept,xi_stderr"


def test_seed_override_changes_output(tmp_path):
    cfg = _write(tmp_path, {"experiment": "decay", "W": 1, "distances": [2, 4, 6, 8], "n_samples": 300})
    main(["decay", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["decay", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "decay.csv").read_bytes() != (tmp_path / "b" / "decay.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "report.json").read_text())["seed"] == 1
