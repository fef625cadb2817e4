import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from diffinfo.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from diffinfo.config import ConfigError, ExperimentConfig, config_from_dict, load_config, loads, stream_seed
from diffinfo.gaussian_model import analytic_mi
from diffinfo.kelly import BettingGame, Channel, channel_rate_gain
from diffinfo.runner import (
    ReproducibilityError,
    cached_run,
    format_report,
    run_experiment,
    sha256_file,
    verify_manifest,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

KELLY = """
experiment: kelly
seed: 3
kelly: {n_outcomes: 6, odds: 6.0, channel: symmetric, flip: 0.2, n_throws: 20000}
"""

ESTIMATE = """
experiment: estimate
seed: 1
spec: {dim_x: 3, dim_y: 2, noise_std: 0.5}
schedule: {steps: 100}
estimate: {fields: analytic, quantities: [minde, total-entropy]}
estimator: {analytic_n_mc: 500}
"""

TRAIN = """
experiment: train
seed: 2
spec: {dim_x: 2, dim_y: 1}
data: {n_train: 500, n_eval: 500}
training: {hidden: [8], steps: 20, batch_size: 64, embed_dim: 4, n_freq: 2}
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config schema ------------------------------------------------------------

@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_load_and_round_trip(path):
    cfg = load_config(path)
    assert loads(cfg.dumps()) == cfg


def test_missing_required_field_is_named():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"seed": 0})
    assert info.value.path == "experiment"


@pytest.mark.parametrize("data, path", [
    ({"experiment": "kelly", "kelly": {"n_throws": "many"}}, "kelly.n_throws"),
    ({"experiment": "kelly", "kelly": {"flip": 2.0}}, "kelly.flip"),
    ({"experiment": "kelly", "training": {"batch_size": 0}}, "training"),
    ({"experiment": "kelly", "spec": {"dim_z": 3}}, "spec.dim_z"),
    ({"experiment": "nope"}, "experiment"),
    ({"experiment": "estimate", "estimate": {"fields": "learned"}}, "estimate.cond_checkpoint"),
    ({"experiment": "kelly", "cfg_mi": {"weights": [0.0, "x"]}}, "cfg_mi.weights[1]"),
])
def test_schema_errors_carry_field_paths(data, path):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert info.value.path == path
    assert str(info.value).startswith(path)


@given(st.sampled_from(["kelly", "estimate", "logdensity", "train"]), st.integers(0, 2**31),
       st.floats(0.05, 5.0), st.integers(1, 40), st.lists(st.floats(0.0, 10.0), min_size=1, max_size=5))
@settings(max_examples=40, deadline=None)
def test_config_round_trip_property(experiment, seed, noise, dim, weights):
    cfg = config_from_dict({"experiment": experiment, "seed": seed,
                            "spec": {"noise_std": noise, "dim_x": dim},
                            "cfg_mi": {"weights": weights}})
    again = loads(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_stream_seeds_are_independent_and_stable():
    a = stream_seed(0, "data")
    assert a == stream_seed(0, "data")
    assert len({a, stream_seed(0, "training"), stream_seed(0, "data", 1), stream_seed(1, "data")}) == 4
    # a child stream does not move when a sibling's parameters change
    cfg = config_from_dict({"experiment": "kelly", "estimator": {"n_mc": 500}})
    assert cfg.stream_seed("training", 0) == ExperimentConfig("kelly").stream_seed("training", 0)


# -- runner -------------------------------------------------------------------

def test_kelly_run_reports_both_rates(tmp_path):
    result = run_experiment(loads(KELLY), tmp_path / "k")
    data = json.loads((tmp_path / "k" / "kelly.json").read_text())
    game = BettingGame()
    expected = channel_rate_gain(game, Channel.symmetric(6, 0.2))
    assert data["analytic_rate"] == pytest.approx(expected, abs=1e-12)
    assert abs(data["simulated_rate"] - expected) < 0.05
    assert result.summary["channel_mi"] == pytest.approx(expected, abs=1e-12)


def test_manifest_lists_every_output_with_hash(tmp_path):
    root = tmp_path / "k"
    result = run_experiment(loads(KELLY), root)
    manifest = json.loads(result.manifest.read_text())
    on_disk = {str(p.relative_to(root)) for p in root.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert set(manifest["files"]) == on_disk
    for rel, digest in manifest["files"].items():
        assert sha256_file(root / rel) == digest
    assert manifest["config"] == loads(KELLY).to_dict()
    assert verify_manifest(result.manifest) == []


def test_tampering_is_detected(tmp_path):
    result = run_experiment(loads(KELLY), tmp_path)
    (tmp_path / "kelly.json").write_text("{}")
    assert verify_manifest(result.manifest) == ["kelly.json"]
    assert "MISMATCH" in format_report(result.manifest)


def test_rerun_is_byte_identical(tmp_path):
    cfg = loads(ESTIMATE)
    first = run_experiment(cfg, tmp_path)
    before = json.loads(first.manifest.read_text())["files"]
    second = run_experiment(cfg, tmp_path)
    manifest = json.loads(second.manifest.read_text())
    assert manifest["files"] == before
    assert manifest["verified_against_previous"] is True


def test_rerun_with_different_outputs_raises(tmp_path):
    run_experiment(loads(KELLY), tmp_path)
    cfg = loads(KELLY.replace("seed: 3", "seed: 4"))
    with pytest.raises(ReproducibilityError):
        run_experiment(cfg, tmp_path)


def test_cached_run_reuses_verified_outputs(tmp_path):
    cfg = loads(KELLY)
    first = cached_run(cfg, tmp_path)
    stamp = first.manifest.stat().st_mtime_ns
    again = cached_run(cfg, tmp_path)
    assert again.manifest.stat().st_mtime_ns == stamp
    assert again.summary == json.loads(json.dumps(first.summary))
    changed = loads(KELLY.replace("n_throws: 20000", "n_throws: 1000"))
    assert cached_run(changed, tmp_path).summary["n_throws"] == 1000


def test_analytic_estimate_needs_no_checkpoint(tmp_path):
    cfg = loads(ESTIMATE)
    assert cfg.estimate.cond_checkpoint is None
    result = run_experiment(cfg, tmp_path)
    assert not list(tmp_path.rglob("*.npz"))
    s = result.summary
    assert s["analytic_mi"] == pytest.approx(analytic_mi(_spec_of(cfg)), rel=1e-12)
    assert abs(s["minde"] - s["analytic_mi"]) <= 5 * s["minde_stderr"] + 0.02 * s["analytic_mi"]
    assert (tmp_path / "minde.csv").exists()


def _spec_of(cfg):
    from diffinfo.runner import _spec

    return _spec(cfg)


def test_train_then_learned_estimate(tmp_path):
    run_experiment(loads(TRAIN), tmp_path / "train")
    ckpt = tmp_path / "train" / "cond.npz"
    assert ckpt.exists()
    text = f"""
experiment: estimate
spec: {{dim_x: 2, dim_y: 1}}
schedule: {{steps: 50}}
estimate: {{fields: learned, quantities: [minde, neural-entropy],
           cond_checkpoint: {ckpt}, marg_checkpoint: {ckpt}}}
estimator: {{n_mc: 200}}
"""
    result = run_experiment(loads(text), tmp_path / "est")
    assert np.isfinite(result.summary["minde"])
    assert np.isfinite(result.summary["neural_entropy_cond"])


def test_logdensity_run_writes_curve(tmp_path):
    cfg = loads("experiment: logdensity\nschedule: {steps: 200}\nlogdensity: {n_points: 5, n_mc: 2000}\n")
    result = run_experiment(cfg, tmp_path)
    rows = (tmp_path / "logdensity.csv").read_text().splitlines()
    assert len(rows) == 6
    assert result.summary["slope"] == pytest.approx(1.0, abs=0.1)


# -- cli ----------------------------------------------------------------------

def test_cli_run_and_report(tmp_path, capsys):
    cfg = write(tmp_path, KELLY)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--seed", "9"]) == EXIT_OK
    manifest = out / "manifest.json"
    assert json.loads(manifest.read_text())["seed"] == 9
    capsys.readouterr()
    assert main(["report", str(manifest)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "analytic_rate" in text and "simulated_rate" in text and "hashes: ok" in text


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path, KELLY))]) == EXIT_OK
    assert "ok (kelly)" in capsys.readouterr().out


@pytest.mark.parametrize("text", ["seed: 0\n", "experiment: kelly\nkelly: {n_throws: -1}\n",
                                  "experiment: [unclosed\n"])
def test_cli_config_errors_exit_2(tmp_path, capsys, text):
    assert main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_missing_file_and_bad_threads(tmp_path):
    assert main(["run", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG
    assert main(["run", str(write(tmp_path, KELLY)), "--threads", "0"]) == EXIT_CONFIG
    assert main(["report", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_cli_numerical_failure_exits_3(tmp_path, capsys):
    diverging = TRAIN.replace("steps: 20,", "steps: 20, divergence_threshold: 1.0e-12,")
    assert "divergence_threshold" in diverging
    assert main(["run", str(write(tmp_path, diverging)), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


def test_cli_entry_point_is_declared():
    text = (CONFIGS.parent / "pyproject.toml").read_text()
    assert 'diffinfo = "diffinfo.cli:main"' in text
    assert yaml.safe_load(KELLY)["experiment"] == "kelly"
