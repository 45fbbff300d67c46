import csv

import pytest

from rfassign.cli import build_parser, main


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture
def data_csv(tmp_path):
    path = tmp_path / "d.csv"
    assert run("gen", "--n", 200, "--seed", 7, "--out", path) == 0
    return path


def test_gen_example(data_csv):
    table = rows(data_csv)
    assert table[0] == ["x1", "x2", "x3", "x4", "x5", "y"]
    assert len(table) == 201


def test_corrupt_example(data_csv, tmp_path):
    out = tmp_path / "c.csv"
    assert run("corrupt", "--in", data_csv, "--out", out, "--mechanism", "MAR1", "--col", 1,
               "--rate", 0.2, "--determining", 2, "--seed", 7) == 0
    table = rows(out)[1:]
    assert sum(r[0] == "NA" for r in table) == 40
    assert all("NA" not in r[1:] for r in table)


def test_corrupt_from_config(data_csv, tmp_path):
    cfg = tmp_path / "m.yaml"
    cfg.write_text("mechanism: MCAR\ntargets: {1: 0.2, 4: 0.1}\n")
    out = tmp_path / "c.csv"
    assert run("corrupt", "--in", data_csv, "--out", out, "--config", cfg) == 0
    table = rows(out)[1:]
    assert sum(r[0] == "NA" for r in table) == 40
    assert sum(r[3] == "NA" for r in table) == 20
    cfg.write_text("mechanism: MCAR\nrates: {1: 0.2}\n")
    assert run("corrupt", "--in", data_csv, "--out", out, "--config", cfg) == 1


def test_train_predict_deterministic(data_csv, tmp_path):
    corrupted = tmp_path / "corrupted.csv"
    run("corrupt", "--in", data_csv, "--out", corrupted, "--mechanism", "MCAR", "--col", 1, "--rate", 0.2,
        "--col", 4, "--rate", 0.3, "--seed", 7)
    forest = tmp_path / "forest.txt"
    assert run("train", "--in", corrupted, "--rule", "assignation", "--search", "dichotomy", "--trees", 100,
               "--seed", 7, "--out", forest) == 0
    test = tmp_path / "test.csv"
    run("corrupt", "--in", data_csv, "--out", test, "--mechanism", "MCAR", "--col", 4, "--rate", 0.5, "--seed", 8)
    assert run("predict", "--forest", forest, "--in", test, "--out", tmp_path / "p1.csv") == 0
    assert run("predict", "--forest", forest, "--in", test, "--out", tmp_path / "p2.csv") == 0
    assert (tmp_path / "p1.csv").read_bytes() == (tmp_path / "p2.csv").read_bytes()
    assert len(rows(tmp_path / "p1.csv")) == 201
    assert run("predict", "--forest", forest, "--in", test) == 0
    assert (tmp_path / "test.predictions.csv").read_bytes() == (tmp_path / "p1.csv").read_bytes()


@pytest.mark.parametrize("method", ["median", "missforest"])
def test_impute(data_csv, tmp_path, method):
    corrupted = tmp_path / "c.csv"
    run("corrupt", "--in", data_csv, "--out", corrupted, "--mechanism", "MCAR", "--col", 2, "--rate", 0.1)
    out, trace = tmp_path / "i.csv", tmp_path / "t.csv"
    assert run("impute", "--in", corrupted, "--out", out, "--method", method, "--iterations", 1,
               "--trees", 5, "--trace", trace) == 0
    assert all("NA" not in r for r in rows(out))
    assert len(rows(trace)) > 1


def test_usage_errors_exit_2(data_csv, capsys):
    for argv in (["gen", "--out", "x.csv"], ["gen", "--n", "5", "--out", "x", "--bogus"], ["nope"],
                 ["corrupt", "--in", str(data_csv), "--out", "x", "--mechanism", "MCAR", "--col", "1"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,y\nfoo,1\n")
    assert run("train", "--in", bad, "--out", tmp_path / "f") == 1
    assert run("train", "--in", tmp_path / "missing.csv", "--out", tmp_path / "f") == 1
    assert "error" in capsys.readouterr().err


def test_failing_study_exits_nonzero(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("n_train: 10\nn_test: 20\nrates: {1: 0.95, 3: 0.95, 4: 0.95}\n")
    code = run("study-mechanisms", "--config", cfg, "--out-dir", tmp_path / "o", "--replicates", 1,
               "--mechanisms", "MCAR", "--methods", "LISTWISE,OURS", "--trees", 3, "--no-figures")
    assert code == 1
    assert (tmp_path / "o" / "results_long.csv").exists()


@pytest.mark.parametrize("cmd, extra", [
    ("study-mechanisms", ["--methods", "OURS,MIA,MEDIAN,LISTWISE"]),
    ("study-rates", ["--methods", "OURS,MEDIAN", "--sweep", "0.1,0.5"]),
    ("study-test-missing", ["--test-sweep", "0,0.5"]),
])
def test_studies_byte_identical(tmp_path, cmd, extra):
    common = ["--replicates", "2", "--n-train", "60", "--n-test", "100", "--mechanisms", "MCAR,DEPY",
              "--trees", "5", "--seed", "4"] + extra
    assert main([cmd, "--out-dir", str(tmp_path / "a")] + common) == 0
    assert main([cmd, "--out-dir", str(tmp_path / "b")] + common + ["--threads", "2"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "results_long.csv" in files and any(f.endswith(".svg") for f in files)
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_probe(tmp_path):
    assert run("probe-complexity", "--n-grid", "20,40", "--missing", 0.3, "--out-dir", tmp_path) == 0
    assert len(rows(tmp_path / "complexity.csv")) == 5


def _subparsers():
    parser = build_parser()
    action = next(a for a in parser._actions if hasattr(a, "choices") and isinstance(a.choices, dict))
    return action.choices


def test_subcommand_set():
    assert set(_subparsers()) == {"gen", "corrupt", "train", "predict", "impute", "study-mechanisms",
                                  "study-rates", "study-test-missing", "probe-complexity"}


@pytest.mark.parametrize("name", sorted(_subparsers()))
def test_help_lists_every_flag(name, capsys):
    sub = _subparsers()[name]
    flags = [s for a in sub._actions for s in a.option_strings]
    assert "--seed" in flags and "--threads" in flags
    with pytest.raises(SystemExit) as exc:
        main([name, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in flags:
        assert flag in text, flag
