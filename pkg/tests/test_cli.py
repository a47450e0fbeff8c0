import json

import pytest

from resoflow.cli import main


def run(args):
    return main(args)


def test_unknown_subcommand_exits_2(capsys):
    assert run(["definitely-not-a-command"]) == 2


def test_unknown_flag_exits_2():
    assert run(["resonances", "--definitely-not-a-flag"]) == 2


def test_resonances_csv(capsys):
    code = run(["resonances", "--hbar", "0.2"])
    out = capsys.readouterr().out
    assert code == 0
    header, *rows = [l for l in out.splitlines() if l]
    assert header.startswith("hbar,E_res,multiplicity")
    assert len(rows) == 2


def test_resonances_json_to_file(tmp_path):
    code = run(["resonances", "--hbar", "0.2", "--format", "json",
                "--out", str(tmp_path)])
    assert code == 0
    data = json.loads((tmp_path / "resonances.json").read_text())
    assert "meta" in data and "rows" in data
    assert data["rows"][0]["multiplicity"] in (1, 5)


def test_sweep_csv_deterministic(tmp_path):
    args = ["sweep", "--hbar", "0.25", "--points", "4", "--pair", "ext-free",
            "--out", str(tmp_path)]
    assert run(args) == 0
    first = (tmp_path / "sweep.csv").read_text()
    assert run(args) == 0
    assert (tmp_path / "sweep.csv").read_text() == first
    assert first.splitlines()[0] == "E,ell,w,theta_branch,theta_mod2pi,pair"


def test_flow_verdict_exit_zero(tmp_path):
    code = run(["flow", "--hbar", "0.2", "--eres", "0", "--format", "json",
                "--out", str(tmp_path)])
    assert code == 0
    data = json.loads((tmp_path / "flow.json").read_text())
    assert data["verdict"] is True
    assert data["flow"] == data["multiplicity"]
    assert data["certificate"]["flow"] == data["flow"]


def test_flow_bad_index_exits_2(capsys):
    assert run(["flow", "--hbar", "0.2", "--eres", "99"]) == 2


def test_bs_count_agreement(tmp_path):
    code = run(["bs-count", "--hbar", "0.2", "--energy", "0.8",
                "--format", "json", "--out", str(tmp_path)])
    assert code == 0
    data = json.loads((tmp_path / "bs-count.json").read_text())
    assert data["mu_flow"] == data["mu_kernel"]


def test_angles(tmp_path):
    code = run(["angles", "--hbar", "0.2", "--eres", "0", "--format", "json",
                "--out", str(tmp_path)])
    assert code == 0
    data = json.loads((tmp_path / "angles.json").read_text())
    assert data["measure"] > 5.0


def test_verify_named_checks(tmp_path, capsys):
    code = run(["verify", "--hbar", "0.2", "--checks", "closed-forms",
                "--format", "json", "--out", str(tmp_path)])
    assert code == 0
    data = json.loads((tmp_path / "verify.json").read_text())
    assert data["closed-forms"]["passed"] is True


def test_verify_unknown_check_exits_2():
    assert run(["verify", "--checks", "not-a-check"]) == 2
