import json
from pathlib import Path

import pytest
import yaml

import dcmsim.experiment as ex
from dcmsim.cli import main
from dcmsim.experiment import (
    ACC_COLUMNS,
    EVAL_COLUMNS,
    ConfigError,
    ExperimentConfig,
    dump_config,
    load_config,
    read_csv,
    run_experiment,
)
from dcmsim.language import PRESETS, LanguageSpec

TOY = {
    "experiment": {"n_pairs": 2, "base_seed": 3},
    "language": {"preset": "dominant-obj"},
    "inventory": {"n_amb": 3, "n_unamb": 3, "n_actions": 2},
    "model": {"meaning_dim": 4, "word_dim": 6, "hidden_dim": 8},
    "sl": {"epochs": 3},
    "rl": {"inter_turns": 6, "meanings_per_turn": 16, "batch_size": 8},
}

CSVS = ("eval.csv", "turns.csv", "accuracy.csv", "sl_curve.csv")


def toy_cfg(out, **kw):
    return ExperimentConfig.from_dict(TOY).replace(out=str(out), **kw)


def write_toy(path, **experiment):
    d = json.loads(json.dumps(TOY))
    d["experiment"].update(experiment)
    path.write_text(yaml.safe_dump(d))
    return path


def pair_files(run_dir):
    run_dir = Path(run_dir)
    return {str(p.relative_to(run_dir)): p.read_bytes()
            for p in sorted((run_dir / "pairs").rglob("*")) if p.is_file() and p.name != "status.json"}


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    return out, run_experiment(toy_cfg(out))


# ---------------------------------------------------------------- config

def test_default_config_values():
    cfg = ExperimentConfig()
    assert cfg.n_pairs == 50 and cfg.language == PRESETS["dominant-obj"]
    assert (cfg.sl.epochs, cfg.sl.learning_rate, cfg.rl.inter_turns, cfg.rl.learning_rate) == (60, 0.01, 200, 0.005)
    seeds = {cfg.agent_seed(p, k) for p in range(50) for k in range(2)}
    assert len(seeds) == 100 and cfg.agent_seed(7, 1) == 15


def test_config_yaml_round_trip(tmp_path):
    cfg = toy_cfg(tmp_path, jobs=3)
    (tmp_path / "c.yaml").write_text(dump_config(cfg))
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg and back.config_hash() == cfg.config_hash()
    custom = cfg.replace(language=LanguageSpec("subject", 0.3, 0.2, 0.9, "mine"))
    (tmp_path / "d.yaml").write_text(dump_config(custom))
    assert load_config(tmp_path / "d.yaml").language == custom.language


def test_hash_ignores_runtime_fields(tmp_path):
    cfg = toy_cfg(tmp_path)
    assert cfg.config_hash() == cfg.replace(jobs=4, out="elsewhere").config_hash()
    assert cfg.config_hash() != cfg.replace(base_seed=99).config_hash()


@pytest.mark.parametrize("bad", [
    {"experiment": {"n_pairs": 0}},
    {"experiment": {"bogus": 1}},
    {"language": {"preset": "klingon"}},
    {"sl": {"epochs": -1}},
    {"rl": {"reward": "vibes"}},
    {"inventory": {"n_amb": 1}},
    {"extra_section": {}},
])
def test_invalid_config_rejected(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


# ---------------------------------------------------------------- runs

def test_toy_run_manifest(toy_run):
    out, manifest = toy_run
    assert manifest.completed == [0, 1] and manifest.failed == []
    rows = read_csv(out / "eval.csv")
    assert list(rows[0]) == list(EVAL_COLUMNS)
    assert len(rows) == 2 * 2 * 2 * 3  # pairs x agents x phases x classes
    assert {(r["pair_id"], r["agent_id"], r["phase"]) for r in rows} == {
        (p, a, ph) for p in "01" for a in "01" for ph in ("PostSL", "PostRL")}
    assert {r["agent_seed"] for r in rows} == {"3", "4", "5", "6"}
    turns = read_csv(out / "turns.csv")
    assert len(turns) == 12
    acc = read_csv(out / "accuracy.csv")
    assert list(acc[0]) == list(ACC_COLUMNS) and len(acc) == 2 * 7
    m = json.loads((out / "manifest.json").read_text())
    for p in m["pairs"]:
        assert all(Path(a).exists() for a in p["artifacts"].values())
        assert {"eval.csv", "turns.csv", "agent0_rl.ckpt"} <= {Path(a).name for a in p["artifacts"].values()}


def test_rerun_is_byte_identical(toy_run, tmp_path):
    out, _ = toy_run
    run_experiment(toy_cfg(tmp_path))
    for name in CSVS:
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name
    assert pair_files(out) == pair_files(tmp_path)


def test_parallel_matches_serial(toy_run, tmp_path):
    out, _ = toy_run
    run_experiment(toy_cfg(tmp_path, jobs=2))
    assert pair_files(out) == pair_files(tmp_path)
    for name in CSVS:
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_resume_regenerates_deleted_pair(toy_run, tmp_path, monkeypatch):
    out, _ = toy_run
    cfg = toy_cfg(tmp_path)
    run_experiment(cfg)
    before = pair_files(tmp_path)
    for p in (tmp_path / "pairs" / "pair_001").iterdir():
        p.unlink()
    calls = []
    real = ex.run_pair
    monkeypatch.setattr(ex, "run_pair", lambda c, pid: calls.append(pid) or real(c, pid))
    run_experiment(cfg)
    assert calls == [1]
    assert pair_files(tmp_path) == before


def test_changed_config_invalidates_resume(tmp_path, monkeypatch):
    run_experiment(toy_cfg(tmp_path))
    calls = []
    real = ex.run_pair
    monkeypatch.setattr(ex, "run_pair", lambda c, pid: calls.append(pid) or real(c, pid))
    run_experiment(toy_cfg(tmp_path, base_seed=11))
    assert calls == [0, 1]


def test_reevaluate_matches_saved(toy_run):
    out, _ = toy_run
    rows = ex.reevaluate(out)
    saved = read_csv(out / "eval.csv")
    assert ex.csv_text(EVAL_COLUMNS, rows) == (out / "eval.csv").read_text()
    assert len(rows) == len(saved)


# ---------------------------------------------------------------- CLI

def test_cli_run_report_plot_eval(tmp_path, capsys):
    cfg = write_toy(tmp_path / "toy.yaml")
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--pairs", "1"]) == 0
    assert main(["report", str(out), "--out", str(tmp_path / "rep")]) == 0
    assert "delta_p_marked" in (tmp_path / "rep" / "report.txt").read_text()
    assert main(["plot", str(out)]) == 0
    assert (out / "plots" / "preferences_dominant-obj.svg").exists()
    assert (out / "plots" / "accuracy.svg").exists()
    assert main(["eval", str(out)]) == 0
    assert (out / "eval_recomputed.csv").read_bytes() == (out / "eval.csv").read_bytes()


def test_cli_generate(tmp_path):
    cfg = write_toy(tmp_path / "toy.yaml")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "g"), "--preset", "neutral-subj"]) == 0
    files = sorted(p.name for p in (tmp_path / "g").iterdir())
    assert "lexicon.tsv" in files and "pair001_agent1_sl.tsv" in files and len(files) == 9


def test_cli_train_single_pair(tmp_path):
    cfg = write_toy(tmp_path / "toy.yaml")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t"), "--pair-id", "1"]) == 0
    assert (tmp_path / "t" / "pairs" / "pair_001" / "eval.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: {n_pairs: 0}\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "n_pairs" in capsys.readouterr().err
    bad.write_text("sl: {epochs: 1, nonsense: 2}\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert main(["plot", str(tmp_path), "--eval-csv", str(_write_bad_csv(tmp_path))]) == 1


def _write_bad_csv(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("language,pair_id\ndominant-obj,0\n")
    return p


def test_cli_partial_failure_exit_code(tmp_path, monkeypatch):
    cfg = write_toy(tmp_path / "toy.yaml")
    real = ex.run_pair

    def flaky(c, pid):
        if pid == 1:
            raise RuntimeError("injected failure")
        return real(c, pid)

    monkeypatch.setattr(ex, "run_pair", flaky)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    m = json.loads((out / "manifest.json").read_text())
    assert [p["status"] for p in m["pairs"]] == ["completed", "failed"]
    assert "injected failure" in m["pairs"][1]["error"]
    assert {r["pair_id"] for r in read_csv(out / "eval.csv")} == {"0"}
