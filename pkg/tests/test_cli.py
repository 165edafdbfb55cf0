import json

import pytest

from stratbranch.cli import PipelineError, cmd_eval, cmd_verify, main

GEN = {"family": "set-covering", "count": 6, "params": {"rows": 30, "cols": 50, "density": 0.1}}


def run(tmp_path, command, cfg, out, seed=0):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    return main([command, "--config", str(path), "--seed", str(seed), "--out", str(out)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert run(d, "gen", GEN, d / "inst") == 0
    assert run(d, "collect", {"instances": str(d / "inst")}, d / "samples.bin") == 0
    assert run(d, "group", {"samples": str(d / "samples.bin"), "m": 2, "val_fraction": 0.34}, d / "grp") == 0
    assert run(d, "augment", {"samples": str(d / "grp" / "train.bin")}, d / "aug.bin") == 0
    cfg = {"samples": str(d / "aug.bin"), "val": str(d / "grp" / "val.bin"),
           "group_model": str(d / "grp" / "group_model.json"), "options": {"epochs": 2, "hidden": 8}}
    assert run(d, "train", cfg, d / "model") == 0
    return d


def test_artifacts_carry_config_digest_and_seed(pipeline):
    d = pipeline
    man = json.loads((d / "inst" / "manifest.json").read_text())
    assert man["seed"] == 0 and len(man["config_sha"]) == 16
    side = json.loads((d / "samples.bin.json").read_text())
    assert side["seed"] == 0 and "config_sha" in side
    assert json.loads((d / "grp" / "group_model.json").read_text())["model"]["m"] == 2
    run_meta = json.loads((d / "model" / "run.json").read_text())
    assert run_meta["seed"] == 0 and "stats_sha256" in run_meta
    stamp, header = (d / "model" / "metrics.csv").read_text().splitlines()[:2]
    assert stamp.startswith("# config_sha=") and stamp.endswith("seed=0")
    assert header == "epoch,loss,sup,cons,lambda,acc@1,acc@3,acc@5,acc@10,shallow_acc@1"


def test_eval_reports_every_policy(pipeline, tmp_path):
    d = pipeline
    cfg = {"instances": str(d / "inst"), "checkpoint": str(d / "model" / "checkpoint.bin"),
           "policies": ["strong-branching", "learned", "hybrid"], "samples": str(d / "grp" / "val.bin")}
    report = cmd_eval(cfg, 0, tmp_path / "ev")
    assert set(report["summary"]) == {"strong-branching", "learned", "hybrid"}
    assert sum(v["wins"] for v in report["summary"].values()) <= 6
    assert 0.0 <= report["deterministic"]["acc"]["acc@1"] <= 1.0
    objs = {}
    for r in report["deterministic"]["rows"]:
        objs.setdefault(r["instance"], set()).add(round(r["obj"], 6))
    assert all(len(v) == 1 for v in objs.values())


def test_single_policy_wins_every_solved_instance(pipeline, tmp_path):
    cfg = {"instances": str(pipeline / "inst"), "policies": ["strong-branching"]}
    s = cmd_eval(cfg, 0, tmp_path / "ev")["summary"]["strong-branching"]
    assert s["wins"] == s["solved"] == 6


def test_eval_refuses_mismatched_stats(pipeline, tmp_path):
    cfg = {"instances": str(pipeline / "inst"), "checkpoint": str(pipeline / "model" / "checkpoint.bin"),
           "policies": ["learned"], "stats_sha256": "0" * 64}
    with pytest.raises(PipelineError):
        cmd_eval(cfg, 0, tmp_path / "ev")


def test_missing_input_is_a_clean_error(tmp_path, capsys):
    assert run(tmp_path, "collect", {"instances": str(tmp_path / "nowhere")}, tmp_path / "s.bin") == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "PipelineError"


def test_unknown_option_rejected(pipeline, tmp_path):
    cfg = {"samples": str(pipeline / "grp" / "train.bin"), "derivation": {"bogus": 1}}
    assert run(tmp_path, "augment", cfg, tmp_path / "a.bin") == 1
    assert not (tmp_path / "a.bin").exists()


def test_verify_passes_on_a_small_suite(tmp_path):
    report = cmd_verify({"scale": 0.05}, 0, tmp_path / "verify.json")
    assert all(c["passed"] for c in report["checks"])
