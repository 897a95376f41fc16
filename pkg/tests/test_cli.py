import json

import pytest

from mpccolor.cli import main


def test_gen_run_verify_report(tmp_path, capsys):
    g = tmp_path / "g.txt"
    assert main(["gen", "--kind", "gnp", "--n", "1000", "--avg-degree", "30", "--seed", "2", "-o", str(g)]) == 0
    col, rep = tmp_path / "c.txt", tmp_path / "r.json"
    assert main(["run", "-i", str(g), "-o", str(col), "--report", str(rep)]) == 0
    out = capsys.readouterr().out
    data = json.loads(rep.read_text())
    assert f"total rounds: {data['total_rounds']}" in out
    assert main(["verify", "-i", str(g), "-c", str(col)]) == 0
    assert "proper=True feasible=True complete=True" in capsys.readouterr().out
    assert main(["report", str(rep), "--summary"]) == 0
    summary = capsys.readouterr().out
    assert f"peak words: {data['peak_words']}" in summary
    for s in data["stages"]:
        assert f"{s['stage']}: rounds={s['rounds']}" in summary


def test_verify_rejects_a_bad_coloring(tmp_path, capsys):
    g = tmp_path / "g.txt"
    g.write_text("3 3\n0 1\n1 2\n0 2\n")
    c = tmp_path / "c.txt"
    c.write_text("0 0\n1 0\n2 1\n")
    assert main(["verify", "-i", str(g), "-c", str(c)]) == 1
    assert "conflict on edge 0-1" in capsys.readouterr().out


@pytest.mark.parametrize("text", ["3 2\n0 1\n", "2 1\n0 0\n", "x\n", "2 2\n0 1\n1 0\n"])
def test_malformed_input_exits_with_one(tmp_path, capsys, text):
    g = tmp_path / "g.txt"
    g.write_text(text)
    assert main(["run", "-i", str(g)]) == 1
    assert capsys.readouterr().err


def test_list_palettes_and_config_file(tmp_path, capsys):
    g = tmp_path / "g.txt"
    p = tmp_path / "p.txt"
    assert main(["gen", "--kind", "cluster_testbed", "--eps", "0.1", "--delta", "40", "--cliques", "2", "--sparse", "30",
                 "--mode", "relaxed", "-o", str(g), "--palettes-out", str(p)]) == 0
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("round_cap = 3\n")
    assert main(["run", "-i", str(g), "--palette", str(p), "--mode", "relaxed", "--config", str(cfg)]) == 0
    assert "exceed the cap of 3" in capsys.readouterr().err
    cfg.write_text("bogus = 1\n")
    assert main(["run", "-i", str(g), "--config", str(cfg)]) == 1
