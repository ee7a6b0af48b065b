import json

import pytest

from accqoc.cli import (EXIT_EMPTY_CORPUS, EXIT_FINGERPRINT, EXIT_OK, EXIT_USAGE, RunConfig,
                        build_parser, main)
from accqoc.library import PulseLibrary

H_PROGRAM = "OPENQASM 2.0;\nqreg q[1];\nh q[0];\n"
THREE_GROUPS = "OPENQASM 2.0;\nqreg q[3];\nx q[0];\nrz(1.3) q[1];\nu3(0.3,0.2,0.1) q[2];\n"


@pytest.fixture
def tiny_corpus(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    (d / "a.qasm").write_text(H_PROGRAM)
    (d / "b.qasm").write_text("OPENQASM 2.0;\nqreg q[2];\nh q[0];\nrz(0.4) q[1];\n")
    return d


@pytest.fixture
def tiny_library(tiny_corpus, tmp_path):
    out = tmp_path / "lib.json"
    code = main(["precompile", "--corpus", str(tiny_corpus), "--out", str(out), "--sample-frac", "1"])
    assert code == EXIT_OK
    return out


def test_empty_corpus_exit_2(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["precompile", "--corpus", str(tmp_path / "empty"), "--out", str(tmp_path / "x.json")]) \
        == EXIT_EMPTY_CORPUS
    assert not (tmp_path / "x.json").exists()


def test_corpus_list_bundled(capsys):
    assert main(["corpus-list"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 10 and all("qubits=" in ln for ln in lines)


def test_precompile_summary(tiny_library, capsys):
    lib = PulseLibrary.load(tiny_library)
    assert len(lib) == 2 and lib.total_frequency == 3
    assert lib.policy.label == "map2b4l"


def test_precompile_is_deterministic(tiny_corpus, tmp_path, capsys):
    paths = [tmp_path / "r1.json", tmp_path / "r2.json"]
    for p in paths:
        assert main(["precompile", "--corpus", str(tiny_corpus), "--out", str(p), "--sample-frac", "1",
                     "--seed", "3"]) == EXIT_OK
    docs = [json.loads(p.read_text()) for p in paths]
    for d in docs:
        d["header"].pop("created")
    assert docs[0] == docs[1]
    summary = json.loads(capsys.readouterr().out.split("\n}\n")[0] + "\n}")
    assert summary["unique_groups"] == 2 and "total_iterations" in summary


def test_compile_fully_covered(tiny_library, tiny_corpus, tmp_path, capsys):
    out = tmp_path / "sched.json"
    assert main(["compile", str(tiny_corpus / "b.qasm"), "--library", str(tiny_library),
                 "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["iterations"] == 0 and report["coverage"] == 1.0 and report["synthesized"] == []
    assert all(s["source"] == "library" for s in report["schedule"])
    assert report["overall_latency_ns"] == max(s["start_ns"] + s["duration_ns"] for s in report["schedule"])
    assert 0 < report["latency_ratio"] < 1


def test_compile_three_uncovered_two_workers(tiny_library, tmp_path, capsys):
    prog = tmp_path / "three.qasm"
    prog.write_text(THREE_GROUPS)
    out = tmp_path / "sched.json"
    assert main(["compile", str(prog), "--library", str(tiny_library), "--workers", "2",
                 "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert sorted(report["partition"]) == [1, 2]
    assert len(report["synthesized"]) == 3
    assert report["iterations"] > 0


def test_fingerprint_mismatch_exit_3(tiny_library, tiny_corpus, tmp_path, capsys):
    model = tmp_path / "model.json"
    model.write_text(json.dumps({"dt": 0.05}))
    assert main(["compile", str(tiny_corpus / "a.qasm"), "--library", str(tiny_library),
                 "--model-config", str(model)]) == EXIT_FINGERPRINT
    assert "error" in capsys.readouterr().err


def test_no_crosstalk_flag_reaches_mapper():
    args = build_parser().parse_args(["compile", "p.qasm", "--no-crosstalk"])
    assert args.no_crosstalk
    from accqoc.cli import _merge_args
    assert _merge_args(RunConfig(), args).no_crosstalk


def test_no_crosstalk_reaches_mapper(tiny_corpus, tiny_library, monkeypatch, capsys):
    import accqoc.cli as cli
    seen = []
    real_map, real_group = cli.map_circuit, cli.group_program

    def spy_map(*a, crosstalk_on=True, **k):
        seen.append(("map", crosstalk_on))
        return real_map(*a, crosstalk_on=crosstalk_on, **k)

    def spy_group(*a, crosstalk_on=True, **k):
        seen.append(("group", crosstalk_on))
        return real_group(*a, crosstalk_on=crosstalk_on, **k)

    monkeypatch.setattr(cli, "map_circuit", spy_map)
    monkeypatch.setattr(cli, "group_program", spy_group)
    for flag in ([], ["--no-crosstalk"]):
        seen.clear()
        assert main(["compile", str(tiny_corpus / "b.qasm"), "--library", str(tiny_library)] + flag) == EXIT_OK
        assert seen and all(on == (not flag) for _, on in seen)
        assert "crosstalk_metric" in json.loads(capsys.readouterr().out)


def test_stats_own_corpus(tiny_library, tiny_corpus, tmp_path, capsys):
    csv_path = tmp_path / "stats.csv"
    assert main(["stats", "--library", str(tiny_library), "--corpus", str(tiny_corpus),
                 "--csv", str(csv_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "MEAN(held-out)" in out
    rows = csv_path.read_text().strip().splitlines()
    assert len(rows) == 3
    assert all(r.split(",")[1] == "1.0" for r in rows[1:])


def test_stats_needs_library(capsys):
    assert main(["stats"]) == EXIT_USAGE


def test_bad_policy_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"policy": "map9b9l"}))
    assert main(["--config", str(cfg), "corpus-list"]) == EXIT_USAGE


def test_config_env(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"policy": "swap2b2l", "workers": 3, "budget": {"max_iterations": 50}}))
    rc = RunConfig.from_file(cfg)
    assert rc.policy == "swap2b2l" and rc.workers == 3 and rc.opt_budget().max_iterations == 50
    with pytest.raises(ValueError):
        RunConfig(workers=0)
