import json

import pytest
import yaml
from click.testing import CliRunner
from fastapi.testclient import TestClient

from hgdetect import cli as cli_mod
from hgdetect.pipeline import (OrderingError, RunConfig, StaleInputError,
                               load_config, run_pipeline, stage_augment,
                               stage_pretrain, stage_synth)
from hgdetect.service import app

SMALL = {
    "seed": 3,
    "variants": ["full", "a1"],
    "synth": {"n_users": 50},
    "model": {"dim": 16, "layers": 2, "attn_dim": 8},
    "pretrain": {"epochs": 3},
    "tune": {"epochs": 2, "tokens": 2},
    "split": {"train_frac": 0.2, "val_frac": 0.1},
}


@pytest.fixture
def client():
    return TestClient(app)


def test_config_defaults_match_stated_preset():
    cfg = RunConfig()
    assert (cfg.model.dim, cfg.model.layers, cfg.model.normalize) == (256, 3, "layer")
    assert (cfg.pretrain.lr, cfg.pretrain.weight_decay) == (1e-3, 1e-4)
    assert (cfg.model.dropout, cfg.model.heads, cfg.tune.tokens) == (0.1, 4, 10)
    assert (cfg.tune.delta, cfg.tune.lam) == (5e-2, 1e-3)


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"model": {"dim": 8, "bogus": 1}}))
    with pytest.raises(Exception, match="bogus"):
        load_config(path)


def test_split_presets():
    cfg = RunConfig().apply_split_preset(0.2)
    assert (cfg.model.dim, cfg.model.layers, cfg.model.heads) == (512, 2, 1)
    assert (cfg.pretrain.weight_decay, cfg.model.dropout, cfg.tune.tokens) == \
        (1e-5, 0.5, 15)
    cfg4 = RunConfig().apply_split_preset(0.4)
    assert (cfg4.model.dim, cfg4.pretrain.lr) == (512, 1e-4)
    with pytest.raises(ValueError, match="preset"):
        RunConfig().apply_split_preset(0.3)


def test_service_stage_chain_and_report(tmp_path, client):
    out = str(tmp_path)
    for stage in ("synth", "pretrain", "augment", "tune", "eval"):
        r = client.post(f"/stages/{stage}",
                        json={"out_dir": out, "config": SMALL, "mock_llm": True})
        assert r.status_code == 200, (stage, r.text)
        assert r.json()["manifest"]["stage"] == stage
    report = (tmp_path / "report.csv").read_text().splitlines()
    assert report[0].startswith("variant,seed,split")
    assert {row.split(",")[0] for row in report[1:]} == {"tuned", "full", "a1"}


def test_service_ordering_error(tmp_path, client):
    r = client.post("/stages/tune", json={"out_dir": str(tmp_path), "config": SMALL})
    assert r.status_code == 409
    assert "has not run yet" in r.json()["detail"]


def test_service_stale_hash(tmp_path, client):
    out = str(tmp_path)
    r = client.post("/stages/synth", json={"out_dir": out, "config": SMALL})
    assert r.status_code == 200
    (tmp_path / "graph.jsonl").write_text("tampered\n")
    r = client.post("/stages/pretrain", json={"out_dir": out, "config": SMALL})
    assert r.status_code == 409
    assert "changed since" in r.json()["detail"]


def test_service_missing_credentials(tmp_path, client, monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    out = str(tmp_path)
    client.post("/stages/synth", json={"out_dir": out, "config": SMALL})
    r = client.post("/stages/augment", json={"out_dir": out, "config": SMALL})
    assert r.status_code == 400
    assert "missing LLM credentials" in r.json()["detail"]


def test_service_config_validation(tmp_path, client):
    r = client.post("/stages/synth",
                    json={"out_dir": str(tmp_path), "config": {"nope": 1}})
    assert r.status_code == 400
    r = client.post("/stages/synth", json={"config": {}})
    assert r.status_code == 422  # out_dir is required


def test_stale_encoder_checkpoint_refused(tmp_path):
    cfg = RunConfig.model_validate({**SMALL, "augment": {"mock_llm": True}})
    stage_synth(cfg, str(tmp_path))
    stage_pretrain(cfg, str(tmp_path))
    stage_augment(cfg, str(tmp_path))
    # changing the model config invalidates the checkpoint for tune/eval
    cfg2 = cfg.model_copy(deep=True)
    cfg2.model.dim = 32
    from hgdetect.pipeline import Bundle

    with pytest.raises(StaleInputError, match="different model config"):
        Bundle(cfg2, str(tmp_path))


def test_pipeline_function_determinism(tmp_path):
    cfg = RunConfig.model_validate({**SMALL, "augment": {"mock_llm": True}})
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    run_pipeline(cfg, str(a))
    run_pipeline(cfg, str(b))
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    assert (a / "encoder.ckpt").read_bytes() == (b / "encoder.ckpt").read_bytes()


def test_cli_help_lists_flags():
    runner = CliRunner()
    for cmd in ("synth", "pretrain", "augment", "tune", "eval", "pipeline"):
        out = runner.invoke(cli_mod.main, [cmd, "--help"]).output
        for flag in ("--config", "--seed", "--mock-llm", "--llm-endpoint",
                     "--llm-model", "--split", "--out", "--server"):
            assert flag in out, (cmd, flag)


def test_cli_unknown_flag_fails_fast():
    result = CliRunner().invoke(cli_mod.main, ["synth", "--out", "/tmp/x", "--bogus"])
    assert result.exit_code != 0
    assert "bogus" in result.output


def test_cli_synth_and_ordering_exit_codes(tmp_path):
    runner = CliRunner()
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(SMALL))
    ok = runner.invoke(cli_mod.main, ["synth", "--config", str(cfg_path),
                                      "--out", str(tmp_path)])
    assert ok.exit_code == 0, ok.output
    manifest = json.loads(ok.output)["manifest"]
    assert manifest["stage"] == "synth"
    bad = runner.invoke(cli_mod.main, ["tune", "--config", str(cfg_path),
                                       "--out", str(tmp_path / "empty")])
    assert bad.exit_code == 2
