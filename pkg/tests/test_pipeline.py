import json
from pathlib import Path

import pytest

from dtb.cli import main
from dtb.config import parse_text
from dtb.evaluation import stats_from_csv
from dtb.nmf import CoverageError
from dtb.pipeline import DependencyError, Experiment, expand_stages, run_experiment

TINY = """
mode = ISOL
dataset.duration = 0.3
train.max_epochs = 2
train.dropout = false
eval.min_frames = 5
"""


def _cfg(out, extra=""):
    return parse_text(f"out_dir = {out}\n" + TINY + extra).validate()


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "exp"
    record = run_experiment(_cfg(out))
    return out, record


def test_all_stages_ran(tiny_run):
    out, record = tiny_run
    assert set(record.stages.values()) == {"ran"}
    for rel in ("model/checkpoint.dtnn", "nmf/dictionary.dnmf", "reports/net/summary_test.json",
                "reports/nmf/combination_stats_test.csv", "config.echo.txt", "run_record.jsonl"):
        assert (out / rel).is_file(), rel


def test_test_split_combinations_are_unshared(tiny_run):
    out, _ = tiny_run
    rows = stats_from_csv((out / "reports/net/combination_stats_test.csv").read_text())
    assert len(rows) == 253 and not any(r.shared for r in rows)
    assert (out / "reports/net/combination_stats_test_shared.csv").read_text().count("\n") == 1


def test_rerun_skips(tiny_run):
    out, _ = tiny_run
    before = (out / "model/checkpoint.dtnn").stat().st_mtime_ns
    record = run_experiment(_cfg(out))
    assert set(record.stages.values()) == {"skipped"}
    assert (out / "model/checkpoint.dtnn").stat().st_mtime_ns == before
    lines = (out / "run_record.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[-1])["stages"]["train"] == "skipped"


def test_config_change_invalidates_downstream(tiny_run, tmp_path):
    out, _ = tiny_run
    exp = Experiment(_cfg(out, "nmf.threshold = 0.2\n"))
    assert exp.up_to_date("train")
    assert not exp.up_to_date("nmf-transcribe")
    assert not exp.up_to_date("evaluate")


def test_analysis_of_truth_is_exact(tiny_run, tmp_path):
    out, _ = tiny_run
    exp = Experiment(_cfg(out))
    from dtb.evaluation import aggregate
    pairs = [(roll, roll) for _, _, roll in exp.labelled("test", standardized=False)]
    _, counts = aggregate(pairs)
    assert all(r.p_exact == 1.0 for r in counts.stats(min_frames=1))


def test_byte_identical_reruns(tiny_run, tmp_path):
    out, _ = tiny_run
    again = tmp_path / "again"
    run_experiment(_cfg(again))
    for sub in ("features", "model", "nmf", "reports", "predictions", "data"):
        for f in sorted((out / sub).rglob("*")):
            if f.is_file():
                g = again / f.relative_to(out)
                assert g.read_bytes() == f.read_bytes(), f


def test_dependency_error(tmp_path):
    with pytest.raises(DependencyError, match="extract-features"):
        run_experiment(_cfg(tmp_path / "x"), ["train"])


def test_combi_has_no_isolated_notes_for_nmf(tmp_path):
    cfg = parse_text(f"out_dir = {tmp_path}\n" + TINY.replace("ISOL", "COMBI")).validate()
    run_experiment(cfg, ["synth", "features"])
    with pytest.raises(CoverageError):
        run_experiment(cfg, ["nmf-dict"])


def test_expand_stages():
    assert expand_stages(["analyze", "synth"]) == ["synth-dataset", "evaluate", "analyze-combinations"]
    with pytest.raises(ValueError):
        expand_stages(["bogus"])


def test_threads_give_same_output(tiny_run, tmp_path, monkeypatch):
    out, _ = tiny_run
    monkeypatch.setenv("DTB_THREADS", "3")
    par = tmp_path / "par"
    run_experiment(_cfg(par), ["synth", "features"])
    for f in sorted((out / "features").rglob("*.feat")):
        assert (par / f.relative_to(out)).read_bytes() == f.read_bytes()


# -- command line -------------------------------------------------------------


def _write(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    return str(p)


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, f"out_dir = {tmp_path / 'o'}\n" + TINY)
    assert main(["synth-dataset", "--config", good]) == 0
    assert main(["train", "--config", good]) == 3
    assert "extract-features" in capsys.readouterr().err
    assert main(["run", "--config", good, "--stage", "nope"]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("out_dir = x\nmode = COMBI\nfrobnicate = 1\n")
    assert main(["run", "--config", str(bad)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_cli_overrides(tmp_path):
    cfgp = _write(tmp_path, f"out_dir = {tmp_path / 'o'}\n" + TINY)
    out = tmp_path / "elsewhere"
    assert main(["run", "--config", cfgp, "--stage", "synth", "--out", str(out), "--seed", "7"]) == 0
    echo = (out / "config.echo.txt").read_text()
    assert "seed = 7" in echo and f"out_dir = {out}" in echo
    assert not Path(tmp_path / "o").exists()


def test_cli_verify(capsys):
    assert main(["verify", "combinatorics"]) == 0
    text = capsys.readouterr().out
    assert "[PASS]" in text and "[FAIL]" not in text
