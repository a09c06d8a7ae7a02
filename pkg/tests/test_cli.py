import csv
import json

import pytest

from conftest import make_tiny_config
from ssrl_depth.cli import build_parser, main, read_ablation_specs
from ssrl_depth.pipeline.config import config_to_text, parse_config


@pytest.fixture
def config_file(tmp_path, tiny_data_config):
    path = tmp_path / "tiny.ini"
    path.write_text(config_to_text(make_tiny_config(tiny_data_config, epochs=(1, 1, 1))))
    return path


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_default_config_round_trips(capsys):
    assert main(["default-config"]) == 0
    text = capsys.readouterr().out
    assert config_to_text(parse_config(text)) == text


def test_parser_rejects_unknown_stage():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--stage", "bogus", "--out", "x"])


def test_generate_data(tmp_path, config_file, capsys):
    assert main(["generate-data", "--config", str(config_file), "--out", str(tmp_path / "data")]) == 0
    out = _last_json(capsys)
    assert out["records"] == {"train": 16, "val": 4, "test": 4}
    assert (tmp_path / "data" / "manifest.json").exists()


def test_train_stages_then_evaluate(tmp_path, config_file, tiny_dataset, capsys):
    run = tmp_path / "run"
    common = ["--config", str(config_file), "--data", str(tiny_dataset.root), "--out", str(run)]
    with pytest.raises(Exception):
        main(["train", "--stage", "ssrl", *common])
    for stage in ("style", "ssrl", "depth"):
        assert main(["train", "--stage", stage, *common]) == 0
        assert _last_json(capsys)["epochs"] == 1
    assert (run / "depth" / "f.ckpt").exists()
    report = tmp_path / "report"
    assert main(["evaluate", "--ckpt", str(run / "depth" / "f.ckpt"), "--data", str(tiny_dataset.root),
                 "--split", "test", "--out", str(report)]) == 0
    metrics = _last_json(capsys)
    assert {"abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"} <= set(metrics)
    assert json.loads((report / "metrics.json").read_text())["aggregate"]["abs_rel"] == metrics["abs_rel"]
    assert len(list((report / "viz").glob("*.png"))) == 2


def test_train_resume(tmp_path, config_file, tiny_dataset, capsys):
    run = tmp_path / "run"
    common = ["--config", str(config_file), "--data", str(tiny_dataset.root), "--out", str(run)]
    assert main(["train", "--stage", "style", *common]) == 0
    assert main(["train", "--stage", "style", "--resume", str(run / "style_transfer" / "state.pt"), *common]) == 0
    assert _last_json(capsys)["epochs"] == 1


def test_train_all_generates_missing_data(tmp_path, config_file, capsys):
    assert main(["train", "--stage", "all", "--config", str(config_file), "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "data" / "manifest.json").exists()
    assert (tmp_path / "run" / "depth" / "done.json").exists()


def test_ablate_runs_spec_file(tmp_path, config_file, tiny_dataset, capsys):
    spec = tmp_path / "abl.ini"
    spec.write_text("[ablation]\nseeds = 0\n\n[run.a]\nvariant = no_ssrl\n\n[run.b]\nvariant = full\ntap = second_last\n")
    assert main(["ablate", "--spec", str(spec), "--config", str(config_file), "--data", str(tiny_dataset.root),
                 "--out", str(tmp_path / "abl")]) == 0
    with open(tmp_path / "abl" / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["variant"], r["tap"]) for r in rows] == [("no_ssrl", "last"), ("full", "second_last")]
    assert all(float(r["abs_rel"]) > 0 for r in rows)


def test_read_ablation_specs_grid(tmp_path):
    spec = tmp_path / "grid.ini"
    spec.write_text("[ablation]\ngrid = all\nseeds = 0, 1\n")
    specs = read_ablation_specs(str(spec))
    assert {s.variant for s in specs} >= {"task_only_source", "no_ssrl", "full"}
    assert all(s.seeds == (0, 1) for s in specs)


def test_read_ablation_specs_empty(tmp_path):
    spec = tmp_path / "empty.ini"
    spec.write_text("[ablation]\nseeds = 0\n")
    with pytest.raises(ValueError):
        read_ablation_specs(str(spec))
