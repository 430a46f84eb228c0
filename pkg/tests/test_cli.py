import csv
import json

import pytest

from dngo.cli import main
from dngo.config import ConfigError, build_config, load_config
from dngo.journal import comparable, read_journal, replay

FAST_YAML = """\
problem: constrained-branin
budget: 8
parallelism: 2
seed: 3
network:
  epochs: 200
sampler:
  burn_in: 10
  n_samples: 3
acquisition:
  n_candidates: 150
  n_local: 2
  n_sweeps: 10
  n_fantasies: 3
"""


@pytest.fixture(scope="module")
def journal_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("runs")
    cfg = d / "fast.yaml"
    cfg.write_text(FAST_YAML)
    assert main(["run", "--config", str(cfg), "--out", str(d / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(d / "b")]) == 0
    return d


def lines(path):
    return path.read_text(encoding="utf-8").splitlines()


def test_config_unknown_key_reports_path_and_line(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("budget: 5\nnetwork:\n  epochs: 10\n  layer_widht: [3]\n")
    with pytest.raises(ConfigError, match=r"network\.layer_widht \(line 4\)"):
        load_config(str(bad))
    assert main(["run", "--config", str(bad)]) == 1


def test_config_validation_and_overrides(tmp_path):
    with pytest.raises(ConfigError):
        build_config({"budget": 2, "parallelism": 3})
    with pytest.raises(ConfigError):
        build_config({"surrogate": "forest"})
    with pytest.raises(ConfigError):
        build_config({"network": {"learning_rate": -1.0}})
    f = tmp_path / "c.yaml"
    f.write_text("budget: 50\nnetwork:\n  epochs: 10\n  l2_penalty: 1e-3\n")
    cfg = load_config(str(f), {"budget": 7, "network": {"momentum": 0.5}})
    assert cfg.budget == 7
    assert cfg.engine.network.epochs == 10 and cfg.engine.network.momentum == 0.5
    assert cfg.engine.network.l2_penalty == 1e-3


def test_usage_errors_exit_one(capsys):
    assert main(["run", "--budget", "notanumber"]) == 1
    assert main(["run", "--problem", "nope", "--budget", "1"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["run", "--set", "network.epochs"]) == 1


def test_run_writes_journal_and_summary(journal_dir, capsys):
    path = journal_dir / "a" / "constrained-branin_seed3.jsonl"
    head, *records = [json.loads(s) for s in lines(path)]
    assert head["type"] == "header" and head["problem"] == "constrained-branin" and head["seed"] == 3
    assert len(records) == 8
    assert set(records[0]) == {"iteration", "x_native", "x_unit", "outcome", "wall_time",
                               "pending_count_at_suggest", "incumbent"}


def test_rerun_bodies_identical(journal_dir):
    a = read_journal(str(journal_dir / "a" / "constrained-branin_seed3.jsonl"))
    b = read_journal(str(journal_dir / "b" / "constrained-branin_seed3.jsonl"))
    assert comparable(a) == comparable(b)


def test_replay_ok(journal_dir, capsys):
    path = journal_dir / "a" / "constrained-branin_seed3.jsonl"
    assert main(["replay", str(path)]) == 0
    assert "OK" in capsys.readouterr().out


def test_replay_first_divergence_is_following_suggestion(journal_dir, tmp_path):
    src = lines(journal_dir / "a" / "constrained-branin_seed3.jsonl")
    recs = [json.loads(s) for s in src[1:]]
    idx = len(recs) - 3
    recs[idx]["outcome"] = 123.0 if recs[idx]["outcome"] == "invalid" else recs[idx]["outcome"] + 50.0
    edited = tmp_path / "edited2.jsonl"
    edited.write_text("\n".join([src[0]] + [json.dumps(r) for r in recs]) + "\n", encoding="utf-8")
    report = replay(read_journal(str(edited)))
    # with parallelism 2 the suggestion issued right after completion idx is iteration idx + 2
    assert not report.ok and report.divergence_iteration == idx + 2
    assert main(["replay", str(edited)]) == 2


def test_truncated_and_corrupted_journals(journal_dir, tmp_path, capsys):
    text = (journal_dir / "a" / "constrained-branin_seed3.jsonl").read_text(encoding="utf-8")
    cut = tmp_path / "cut.jsonl"
    cut.write_text(text[: len(text) - 25], encoding="utf-8")
    assert main(["replay", str(cut)]) == 2
    assert "line 9" in capsys.readouterr().err
    bad = tmp_path / "bad.jsonl"
    parts = text.splitlines()
    parts[4] = parts[4][:10] + "#" + parts[4][11:]
    bad.write_text("\n".join(parts) + "\n", encoding="utf-8")
    assert main(["replay", str(bad)]) == 2
    assert "line 5" in capsys.readouterr().err


def test_replay_rejects_version_mismatch(journal_dir, tmp_path):
    parts = lines(journal_dir / "a" / "constrained-branin_seed3.jsonl")
    head = json.loads(parts[0])
    head["engine_version"] = "0.0.0-other"
    other = tmp_path / "other.jsonl"
    other.write_text("\n".join([json.dumps(head)] + parts[1:]) + "\n", encoding="utf-8")
    assert main(["replay", str(other)]) == 2


def test_trace_outputs(journal_dir, tmp_path):
    path = journal_dir / "a" / "constrained-branin_seed3.jsonl"
    assert main(["trace", str(path), "--prefix", str(tmp_path / "t")]) == 0
    with open(tmp_path / "t_incumbent.csv", newline="") as fh:
        inc = list(csv.DictReader(fh))
    with open(tmp_path / "t_values.csv", newline="") as fh:
        vals = list(csv.DictReader(fh))
    assert len(inc) == len(vals) == 8
    nums = [float(r["incumbent"]) for r in inc if r["incumbent"] != "invalid"]
    assert all(b <= a for a, b in zip(nums, nums[1:]))
    for r in vals:
        assert r["value"] == "invalid" or float(r["value"]) > 0
    assert any(r["value"] == "invalid" for r in vals)


def test_trace_empty_journal(journal_dir, tmp_path):
    head = lines(journal_dir / "a" / "constrained-branin_seed3.jsonl")[0]
    empty = tmp_path / "empty.jsonl"
    empty.write_text(head + "\n", encoding="utf-8")
    assert main(["trace", str(empty)]) == 2


def test_timing_rows(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code = main(["timing", "--surrogate", "gp", "--N", "20,40", "--repeats", "3", "--csv", str(out)])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["N"] for r in rows] == ["20"] * 3 + ["40"] * 3
    assert all(r["surrogate"] == "gp" and float(r["seconds"]) > 0 for r in rows)
    assert "slope" in capsys.readouterr().out
    assert main(["timing", "--N", "40,20"]) == 2


def test_repeats_report_mean_and_std(tmp_path, capsys):
    code = main(["run", "--problem", "branin", "--budget", "3", "--repeats", "2", "--seed", "0",
                 "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "mean" in out and "+-" in out
    assert (tmp_path / "branin_seed0.jsonl").exists() and (tmp_path / "branin_seed1.jsonl").exists()


def test_list_problems(capsys):
    assert main(["list-problems"]) == 0
    out = capsys.readouterr().out
    assert "branin" in out and "hartmann6" in out and "constrained-branin" in out


def test_noiseless_constraint_defaults():
    con = build_config({"problem": "constrained-branin"}).engine.constraint
    assert con.likelihood == "step_approx" and con.weight_prior_precision == 10.0
    con = build_config({"problem": "constrained-branin", "constraint": {"likelihood": "logistic"}}).engine.constraint
    assert con.likelihood == "logistic"
    assert build_config({"problem": "branin"}).engine.constraint.likelihood == "logistic"
