import json
import math

import pytest

from polybranch import cli


@pytest.fixture
def spec_file(tmp_path):
    def make(**kw):
        d = {"a": 0.0, "b": 1.0, "c": 1.0, "theta": 1.5}
        d.update(kw)
        p = tmp_path / f"spec_{len(list(tmp_path.iterdir()))}.json"
        p.write_text(json.dumps(d))
        return str(p)
    return make


def _run(args, tmp_path, name="out.txt"):
    out = tmp_path / name
    code = cli.main(args + ["-o", str(out)])
    return code, out.read_text()


def test_classify_examples(spec_file, tmp_path):
    code, text = _run(["classify", spec_file(theta=2.0)], tmp_path)
    assert code == 0
    assert text.startswith("# polybranch ")
    assert "config_hash=" in text.splitlines()[0]
    code, text = _run(["classify", spec_file(b=-1.0), "--x", "2.0", "--json"], tmp_path)
    doc = json.loads(text)
    assert doc["report"]["explosion"] == "possible"
    assert doc["report"]["prob_extinction"] == pytest.approx(math.exp(-2.0), rel=1e-14)


def test_times_table(spec_file, tmp_path):
    code, text = _run(["times", spec_file(), "--x", "1.0", "--y", "0,1"], tmp_path)
    assert code == 0
    rows = [ln.split(",") for ln in text.splitlines() if not ln.startswith("#")]
    assert rows[0] == ["quantity", "y", "value", "abs_error", "converged", "note"]
    body = {(r[0], r[1]): r for r in rows[1:]}
    assert float(body[("from_infinity", "0.0")][2]) == pytest.approx(2 * math.sqrt(math.pi), rel=1e-6)
    # y = x gives a zero row
    assert float(body[("two_sided", "1.0")][2]) == 0.0
    assert float(body[("hit_time", "1.0")][2]) == 0.0


def test_times_theta_one_infinite(spec_file, tmp_path):
    code, text = _run(["times", spec_file(), "--x", "1.0", "--y", "0", "--theta", "1.0"], tmp_path)
    row = [ln.split(",") for ln in text.splitlines() if ln.startswith("from_infinity")][0]
    assert row[2] == "inf"


def test_byte_reproducible(spec_file, tmp_path):
    spec = spec_file()
    args = ["simulate", spec, "--x0", "1.0", "--horizon", "0.2", "--paths", "3", "--seed", "5"]
    _, a = _run(args, tmp_path, "a.csv")
    _, b = _run(args, tmp_path, "b.csv")
    assert a == b
    _, c = _run(args[:-1] + ["6"], tmp_path, "c.csv")
    assert a != c
    assert a.splitlines()[0] != c.splitlines()[0]  # the hash covers the seed


def test_pure_drift_path(spec_file, tmp_path):
    code, text = _run(["simulate", spec_file(c=0.0, theta=1.0), "--x0", "1.0", "--horizon", "0.5",
                       "--dt", "1e-3"], tmp_path)
    assert code == 0
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert len(body) > 2


def test_mc_verdict(spec_file, tmp_path):
    code, text = _run(["mc", spec_file(), "--quantity", "either", "--x", "1.0", "--paths", "2000",
                       "--dt", "1e-2"], tmp_path)
    assert code == 0
    rows = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert rows[0].startswith("quantity,")
    assert "either" in rows[1]


def test_roundtrip_command(tmp_path):
    spec = tmp_path / "cp.json"
    spec.write_text(json.dumps({"b": 0.5, "atoms": [[0.5, 1.0], [2.0, 0.3]], "theta": 1.5}))
    code, text = _run(["roundtrip", str(spec), "--seeds", "20"], tmp_path)
    assert code == 0
    assert "verdict,pass" in text


def test_invalid_spec_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"b": 1.0, "c": -1.0, "theta": 1.5}))
    assert cli.main(["classify", str(bad)]) == cli.EXIT_INVALID
    assert cli.main(["classify", str(tmp_path / "missing.json")]) == cli.EXIT_INVALID
    assert "error" in capsys.readouterr().err


def test_non_convergence_exit_code(spec_file, tmp_path):
    # an unreachable tolerance cannot be certified
    code, _ = _run(["times", spec_file(), "--x", "1.0", "--tol", "1e-300", "--rel-tol", "1e-300"], tmp_path)
    assert code == cli.EXIT_NONCONVERGED


def test_config_hash_stable():
    a = cli.RunConfig("times", "s.json", {"b": 1.0}, {"x": 1.0, "y": [0.5]})
    b = cli.RunConfig("times", "s.json", {"b": 1.0}, {"y": [0.5], "x": 1.0})
    assert a.hash == b.hash and len(a.hash) == 16
    assert cli.RunConfig("times", "s.json", {"b": 1.0}, {"x": 2.0}).hash != a.hash
