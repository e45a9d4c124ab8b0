import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from structmeta.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, main
from structmeta.errors import ConfigError
from structmeta.experiment import ExperimentConfig, build_arch, build_database, summarize
from structmeta.plotting import scatter_svg
from structmeta.taskgen import load_db

TINY = {
    "seed": 0,
    "method": "invenio",
    "database": {"synthetic": {"K": 6, "n_clusters": 2, "dim": 4, "n_per_task": 24}, "heldout_fraction": 0.25},
    "model": {"kind": "mlp", "hidden": [5]},
    "meta": {"alpha": 0.1, "beta": 1.0, "delta": 0.1, "n_iter": 6, "meta_test_batch": 2},
    "analysis": {"d": 2, "symmetrize": True, "n_clusters": 2},
}


def _config(tmp_path, **changes):
    cfg = json.loads(json.dumps(TINY))
    for key, value in changes.items():
        section, _, field = key.partition("__")
        if field:
            cfg[section][field] = value
        else:
            cfg[section] = value
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def _run(*argv):
    return main([str(a) for a in argv])


# -- config -------------------------------------------------------------------

def test_config_needs_exactly_one_database_source():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"database": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"database": {"synthetic": {}, "path": "x"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TINY, "colour": "red"})


def test_overrides_and_echo():
    cfg = ExperimentConfig.from_dict(TINY).with_overrides(seed=7, method="shared", output_dir="elsewhere")
    echo = cfg.echo()
    assert echo["seed"] == 7 and echo["meta"]["seed"] == 7 and echo["method"] == "shared"
    assert "output_dir" not in echo


def test_missing_database_path_is_config_error(tmp_path):
    cfg = ExperimentConfig.from_dict({**TINY, "database": {"path": "nope.smdb"}})
    with pytest.raises(ConfigError):
        build_database(cfg, tmp_path)


def test_arch_follows_database(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY)
    db = build_database(cfg)
    assert build_arch(cfg, db).n_params == 4 * 5 + 5 + 5 + 1


def test_summary_quantiles_are_consistent():
    accs = [0.5, 0.75, 1.0, 0.25]
    s = summarize(list("abcd"), accs)
    assert s["median"] == np.median(accs) and s["q25"] == np.quantile(accs, 0.25)
    assert [r["accuracy"] for r in s["per_task"]] == accs


# -- gen ----------------------------------------------------------------------

def test_gen_round_trips_and_is_deterministic(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert _run("gen", "--config", cfg, "--out", tmp_path / "a") == 0
    assert _run("gen", "--config", cfg, "--out", tmp_path / "b") == 0
    a, b = (tmp_path / "a" / "database.smdb").read_bytes(), (tmp_path / "b" / "database.smdb").read_bytes()
    assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()
    assert load_db(tmp_path / "a" / "database.smdb").K == 6
    assert "6 tasks in 2 clusters" in capsys.readouterr().out


def test_gen_default_domain_config_reports_53(tmp_path, capsys):
    cfg = _config(tmp_path, database={"domain": {"n_per_class": 2, "n_classes": 3, "image_size": 6}})
    assert _run("gen", "--config", cfg, "--out", tmp_path / "d") == 0
    out = capsys.readouterr().out
    assert out.startswith("53 domains") and "rotation=7, flip=2, affine=14, color=20, filter=10" in out


# -- train --------------------------------------------------------------------

def test_train_writes_artifacts(tmp_path):
    cfg = _config(tmp_path)
    out = tmp_path / "run"
    assert _run("train", "--config", cfg, "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    accs = [r["accuracy"] for r in report["per_task"]]
    assert report["median"] == np.median(accs)
    assert report["q25"] == np.quantile(accs, 0.25) and report["q75"] == np.quantile(accs, 0.75)
    assert len(report["input_hash"]) == 64 and report["config"]["meta"]["n_iter"] == 6
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [f"task-{t:04d}.bin" for t in range(6)]
    history = [json.loads(line) for line in (out / "history.jsonl").read_text().splitlines()]
    assert len(history) == 6 * 3 and {"iteration", "task", "loss", "etas", "weights"} <= set(history[0])
    assert "wall_clock_seconds" in json.loads((out / "timing.json").read_text())
    assert not list(out.glob("*.tmp"))


def test_beta_zero_report_matches_independent(tmp_path):
    cfg = _config(tmp_path, meta__beta=0.0)
    _run("train", "--config", cfg, "--out", tmp_path / "inv")
    _run("train", "--config", cfg, "--out", tmp_path / "ind", "--method", "independent")
    a = json.loads((tmp_path / "inv" / "report.json").read_text())
    b = json.loads((tmp_path / "ind" / "report.json").read_text())
    assert a["per_task"] == b["per_task"]
    for t in range(6):
        name = f"task-{t:04d}.bin"
        assert (tmp_path / "inv" / "checkpoints" / name).read_bytes() == (tmp_path / "ind" / "checkpoints" / name).read_bytes()


def test_all_methods_share_the_report_schema(tmp_path):
    cfg = _config(tmp_path)
    keys = set()
    for method in ("invenio", "shared", "transfer", "independent"):
        assert _run("train", "--config", cfg, "--out", tmp_path / method, "--method", method) == 0
        keys.add(frozenset(json.loads((tmp_path / method / "report.json").read_text())))
    assert len(keys) == 1


def test_reports_identical_across_threads(tmp_path):
    cfg = _config(tmp_path)
    for threads in (1, 4):
        _run("train", "--config", cfg, "--out", tmp_path / f"t{threads}", "--threads", threads)
    assert (tmp_path / "t1" / "report.json").read_bytes() == (tmp_path / "t4" / "report.json").read_bytes()
    assert (tmp_path / "t1" / "history.jsonl").read_bytes() == (tmp_path / "t4" / "history.jsonl").read_bytes()


def test_seed_override_changes_results(tmp_path):
    cfg = _config(tmp_path)
    _run("train", "--config", cfg, "--out", tmp_path / "s0")
    _run("train", "--config", cfg, "--out", tmp_path / "s1", "--seed", 1)
    a = json.loads((tmp_path / "s0" / "report.json").read_text())
    b = json.loads((tmp_path / "s1" / "report.json").read_text())
    assert a["input_hash"] != b["input_hash"] and b["config"]["seed"] == 1


# -- exit codes ---------------------------------------------------------------

def test_exit_codes(tmp_path, capsys):
    assert _run("train", "--config", tmp_path / "missing.yaml") == EXIT_CONFIG
    assert _run("train", "--config", _config(tmp_path, meta__meta_test_batch=9), "--out", tmp_path / "x") == EXIT_CONFIG
    diverge = _config(tmp_path, meta__delta=1e4, meta__alpha=1e4)
    assert _run("train", "--config", diverge, "--out", tmp_path / "y") == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "iteration=" in err and "task=" in err
    assert _run("analyze", "--config", _config(tmp_path), "--out", tmp_path / "z") == EXIT_DATA
    assert "missing checkpoint for task 0" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "structmeta", "report", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == EXIT_DATA and "no report" in res.stderr


# -- analyze / plot / report --------------------------------------------------

def test_analyze_plot_report(tmp_path, capsys):
    cfg = _config(tmp_path)
    out = tmp_path / "run"
    _run("train", "--config", cfg, "--out", out)
    assert _run("analyze", "--config", cfg, "--out", out) == 0
    with open(out / "similarity.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 7 and len(rows[0]) == 7
    with open(out / "embedding.csv") as fh:
        assert all(len(r) == 3 for r in csv.reader(fh))
    clusters = json.loads((out / "clusters.json").read_text())
    assert clusters["n_clusters"] == 2 and clusters["ari"] is not None
    assert _run("plot", "--embedding", out / "embedding.csv", "--labels", out / "clusters.json") == 0
    svg = (out / "embedding.svg").read_text()
    assert svg.count("<circle") == 6
    capsys.readouterr()
    assert _run("report", out) == 0
    assert "invenio" in capsys.readouterr().out


def test_plot_fixture_counts_and_determinism(tmp_path):
    emb = tmp_path / "e.csv"
    emb.write_text("task,c0,c1\nrotation-0,0.1,0.2\nflip-horizontal,0.3,-0.1\ncolor-hue-0.1,1.0,0.0\n")
    assert _run("plot", "--embedding", emb, "--output", tmp_path / "a.svg") == 0
    assert _run("plot", "--embedding", emb, "--output", tmp_path / "b.svg") == 0
    a = (tmp_path / "a.svg").read_bytes()
    assert a == (tmp_path / "b.svg").read_bytes() and a.count(b"<circle") == 3


def test_plot_rejects_one_dimensional_embedding(tmp_path):
    emb = tmp_path / "e.csv"
    emb.write_text("task,c0\na,1\nb,2\n")
    assert _run("plot", "--embedding", emb) == EXIT_DATA


def test_domain_families_give_five_legend_entries():
    names = [f"{fam}-{k}" for fam in ("rotation", "flip", "affine", "color", "filter") for k in range(2)]
    coords = np.arange(20.0).reshape(10, 2)
    svg = scatter_svg(coords, [n.split("-")[0] for n in names], names)
    legend = svg.split('<g class="legend"')[1]
    assert legend.count("<text") == 5
    for fam in ("rotation", "flip", "affine", "color", "filter"):
        assert f">{fam}</text>" in legend


def test_labels_csv(tmp_path):
    emb = tmp_path / "e.csv"
    emb.write_text("task,c0,c1\na,0,0\nb,1,1\n")
    (tmp_path / "l.csv").write_text("task,label\na,x\nb,y\n")
    assert _run("plot", "--embedding", emb, "--labels", tmp_path / "l.csv") == 0
    (tmp_path / "short.csv").write_text("task,label\na,x\n")
    assert _run("plot", "--embedding", emb, "--labels", tmp_path / "short.csv") == EXIT_DATA
