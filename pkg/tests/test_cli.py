import json
from pathlib import Path

import pytest

from signorini_lab.cli import ExperimentReport, check, emit_plotdata, main, verify_report
from signorini_lab.config import ConfigError, defaults_text, parse_config_text

MONO = """[scenario]
name = monotonicity-suite
[grid]
h = 1/16
"""

UNIQ = """[scenario]
name = uniqueness
[grid]
h = 1/16
[params]
semi_axes = 0.3, 0.2
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match="unknown key 'foo'") as exc:
        parse_config_text("[scenario]\nname = uniqueness\n\n[params]\nfoo = 1\n")
    assert exc.value.line == 5


def test_malformed_value_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("[scenario]\nname = uniqueness\nseed = abc\n")


def test_duplicate_and_syntax_errors():
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config_text("[scenario]\nname = uniqueness\nname = uniqueness\n")
    with pytest.raises(ConfigError, match="syntax error"):
        parse_config_text("[scenario]\nname uniqueness\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[solver]\n")
    with pytest.raises(ConfigError, match="unknown scenario"):
        parse_config_text("[scenario]\nname = nothing\n")


def test_precondition_violations_are_config_errors():
    with pytest.raises(ConfigError, match="full ellipsoid"):
        parse_config_text("[scenario]\nname = monotonicity-suite\n[params]\nsemi_axes = 0.3, 0.3, 0\n")
    with pytest.raises(ConfigError, match="rescale"):
        parse_config_text("[scenario]\nname = uniqueness\n[params]\nsemi_axes = 0.6, 0.2\n")
    with pytest.raises(ConfigError, match="sum"):
        parse_config_text("[scenario]\nname = classify-expansion\n[params]\na = 0.5, 0.6\n")
    with pytest.raises(ConfigError, match="multiple of h"):
        parse_config_text("[scenario]\nname = uniqueness\n[grid]\nh = 0.3\n")


def test_fractions_and_defaults():
    cfg = parse_config_text("[scenario]\nname = construct-ellipsoid\n[grid]\nh = 1/32\n[params]\nsemi_axes = 0.3, 0.2\n")
    assert cfg.grid["h"] == 1 / 32
    assert cfg.params["members"] == 11
    assert cfg.grid["box_radius"] == 2.25


def test_print_defaults_round_trips(capsys):
    assert main(["print-defaults"]) == 0
    text = capsys.readouterr().out
    assert text.strip() == defaults_text().strip()
    for key in ("semi_axes", "R_list", "n_list", "deviation_tol", "omega"):
        assert key in text


def test_invalid_config_exit_code(tmp_path, capsys):
    p = write(tmp_path, "[scenario]\nname = uniqueness\n[params]\nfoo = 1\n")
    assert main(["run", str(p), "-o", str(tmp_path / "out")]) == 2
    assert "line 4" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.ini")]) == 2


def test_check_comparators():
    assert check("<=", 1.0, 2.0) and not check("<=", 3.0, 2.0)
    assert check("in", -1.0, [-1.3, -0.7]) and not check("in", "nan", [-1.3, -0.7])
    assert check("strictly-decreasing", [3, 2, 1], None) and not check("strictly-decreasing", [3, 3], None)
    assert check("is", True, True)
    with pytest.raises(ValueError):
        check("~", 1, 1)


def test_empty_report_manifest(tmp_path):
    path = emit_plotdata(ExperimentReport({}), tmp_path)
    assert json.loads(path.read_text())["curves"] == []


@pytest.fixture(scope="module")
def mono_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("mono")
    cfg = write(root, MONO)
    codes = [main(["run", str(cfg), "-o", str(root / k)]) for k in ("a", "b")]
    return root, codes


def test_monotonicity_run(mono_runs):
    root, codes = mono_runs
    assert codes[0] in (0, 1)
    doc = json.loads((root / "a" / "report.json").read_text())
    assert doc["exit_code"] == codes[0]
    man = json.loads((root / "a" / "manifest.json").read_text())
    assert len(man["curves"]) == 4
    for c in man["curves"]:
        assert (root / "a" / c["file"]).read_text().startswith("r,value,defect\n")
        assert c["illustrates"]


def test_reruns_are_byte_identical(mono_runs):
    root, codes = mono_runs
    assert codes[0] == codes[1]
    a, b = root / "a", root / "b"
    names = sorted(p.name for p in a.iterdir() if p.name != "timings.json")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "timings.json")
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_verify_accepts_and_detects_tampering(mono_runs, tmp_path, capsys):
    root, codes = mono_runs
    code, msgs = verify_report(root / "a" / "report.json")
    assert code == codes[0]
    assert any(m.startswith("PASS") for m in msgs)
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(root / "a", copy)
    csv = sorted(copy.glob("*.csv"))[0]
    csv.write_text(csv.read_text().replace("\n0,", "\n1,", 1) + "9,9,9\n")
    assert main(["verify", str(copy / "report.json")]) == 2
    assert "digest" in capsys.readouterr().out


def test_verify_rejects_unreadable_report(tmp_path):
    bad = tmp_path / "report.json"
    bad.write_text("{not json")
    assert verify_report(bad)[0] == 2


def test_uniqueness_run(tmp_path):
    cfg = write(tmp_path, UNIQ)
    assert main(["run", str(cfg), "-o", str(tmp_path / "u"), "--workers", "2"]) == 0
    doc = json.loads((tmp_path / "u" / "report.json").read_text())
    names = [a["name"] for a in doc["assertions"]]
    assert any("deviation" in n for n in names)
    assert doc["config"]["params"]["s"] == 2.5
