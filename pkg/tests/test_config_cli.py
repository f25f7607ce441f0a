"""Run configuration parsing, artifact files, and the command line."""

import numpy as np
import pytest

from kdsim.artifacts import (
    config_fingerprint,
    load_model,
    read_json,
    record_stage,
    require_stage,
    save_model,
    write_json,
)
from kdsim.cli import main
from kdsim.config import RunConfig, parse_config
from kdsim.errors import ConfigError, ParseError
from kdsim.nn import ArchSpec, init_model, models_equal
from kdsim.orchestrate import DEFAULT_GRID_ALPHAS, DEFAULT_GRID_TEMPERATURES

TINY_YAML = """\
seed: 3
dataset:
  classes: 3
  dim: 3
  train_per_class: 40
  test_per_class: 15
partition:
  k: 3
  val_fraction: 0.2
pool:
  size: 45
  labeled: 12
  unlabeled_small: 10
  unlabeled_large: 30
model:
  hidden_layers: [8]
pretrain:
  learning_rate: 0.005
  max_epochs: 12
  patience: 6
distill:
  epochs: 2
  learning_rate: 0.005
grid:
  temperatures: [1.0, 2.0]
  alphas: [0.25, 0.5]
consolidate:
  epochs: 2
  transfer_option: public_unlabeled_small
fed:
  rounds: 2
  local_epochs: 1
report:
  format: json
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(TINY_YAML)
    return path


def _run(*argv):
    return main(list(argv))


# -- config parsing ---------------------------------------------------------


def test_defaults_without_a_file():
    cfg = parse_config(None)
    assert cfg.seed == 0
    assert cfg.jobs == 1
    assert tuple(cfg.grid.temperatures) == DEFAULT_GRID_TEMPERATURES
    assert tuple(cfg.grid.alphas) == DEFAULT_GRID_ALPHAS
    assert cfg.distill.temperature == 1.0
    assert cfg.distill.alpha == 0.5
    assert cfg.distill.methods == ["vanilla"]
    assert cfg.fed.rounds == 100
    assert cfg.consolidate.start_policy == "best"
    assert cfg.report.format == "csv"


def test_file_values_and_override_precedence(tiny_config):
    cfg = parse_config(tiny_config)
    assert cfg.seed == 3
    assert cfg.dataset.classes == 3
    assert cfg.grid.temperatures == [1.0, 2.0]
    cfg = parse_config(tiny_config, {"seed": 9, "out_dir": None})
    assert cfg.seed == 9  # explicit override wins
    assert cfg.out_dir == "runs/out"  # None override is skipped


def test_unknown_keys_are_rejected_with_paths(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("bogus: 1\ndistill:\n  flavor: mint\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    msg = str(err.value)
    assert "bogus: unknown key" in msg
    assert "distill.flavor: unknown key" in msg


def test_every_violation_is_collected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(
        "distill:\n  alpha: 1.5\nfed:\n  rounds: 0\npartition:\n  val_fraction: 2\n"
    )
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    msg = str(err.value)
    assert msg.startswith("invalid configuration:")
    assert "distill.alpha" in msg
    assert "fed.rounds" in msg
    assert "partition.val_fraction" in msg


def test_non_mapping_yaml_rejected(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="top level must be a mapping"):
        parse_config(path)


def test_csv_dataset_requires_paths(tmp_path):
    path = tmp_path / "csv.yaml"
    path.write_text("dataset:\n  kind: csv\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "dataset.train_path" in str(err.value)
    assert "dataset.test_path" in str(err.value)


def test_specialized_strategy_links_k_to_classes(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("partition:\n  strategy: specialized\n  k: 4\ndataset:\n  classes: 6\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "k == dataset.classes" in str(err.value)


def test_pool_must_cover_used_transfer_options(tmp_path):
    path = tmp_path / "pool.yaml"
    # consolidation defaults to the large unlabeled option (500 draws)
    path.write_text("pool:\n  size: 100\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "pool.size" in str(err.value)
    assert "public_unlabeled_large" in str(err.value)


def test_untrained_consolidation_cannot_use_student_data(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(
        "consolidate:\n  start_policy: untrained\n  transfer_option: student_data\n"
    )
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "consolidate.transfer_option" in str(err.value)


def test_adapters_copy_section_values(tiny_config):
    cfg = parse_config(tiny_config)
    assert cfg.train_config().max_epochs == 12
    assert cfg.distill_config().epochs == 2
    assert cfg.grid_spec().temperatures == (1.0, 2.0)
    assert cfg.transfer_sizes().labeled == 12
    assert cfg.fed_config().rounds == 2
    tree = cfg.as_dict()
    assert tree["pool"]["unlabeled_large"] == 30


# -- fingerprints -----------------------------------------------------------


def test_fingerprint_scoping_and_chaining():
    base = RunConfig()
    assert config_fingerprint(base, "partition") == config_fingerprint(RunConfig(), "partition")

    moved = RunConfig()
    moved.distill.alpha = 0.9
    # distill settings do not reach the partition stage
    assert config_fingerprint(moved, "partition") == config_fingerprint(base, "partition")
    assert config_fingerprint(moved, "distill") != config_fingerprint(base, "distill")

    reshaped = RunConfig()
    reshaped.dataset.classes = 7
    # dataset changes cascade through the parent chain into pretrain
    assert config_fingerprint(reshaped, "partition") != config_fingerprint(base, "partition")
    assert config_fingerprint(reshaped, "pretrain") != config_fingerprint(base, "pretrain")

    reseeded = RunConfig(seed=1)
    for stage in ("partition", "pretrain", "distill", "fedavg"):
        assert config_fingerprint(reseeded, stage) != config_fingerprint(base, stage)


def test_fingerprint_ignores_out_dir_and_jobs():
    a = RunConfig(out_dir="runs/a", jobs=1)
    b = RunConfig(out_dir="runs/b", jobs=8)
    for stage in ("partition", "matrix"):
        assert config_fingerprint(a, stage) == config_fingerprint(b, stage)


# -- artifact files ---------------------------------------------------------


def test_json_io_round_trip(tmp_path):
    path = tmp_path / "x.json"
    write_json(path, {"b": [1, 2], "a": 0.5})
    assert read_json(path) == {"a": 0.5, "b": [1, 2]}
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')  # sorted keys
    assert text.endswith("\n")
    path.write_text("{nope")
    with pytest.raises(ParseError):
        read_json(path)


def test_model_file_round_trip(tmp_path):
    model = init_model(ArchSpec(input_dim=3, hidden_layers=(5,), num_classes=4), 1)
    path = tmp_path / "m.kdsm"
    save_model(path, model, "ab12cd34")
    again = load_model(path, expect_fingerprint="ab12cd34")
    assert models_equal(model, again)


def test_model_file_fingerprint_guard(tmp_path):
    model = init_model(ArchSpec(input_dim=2, hidden_layers=(), num_classes=2), 0)
    path = tmp_path / "m.kdsm"
    save_model(path, model, "cafe0001")
    with pytest.raises(ConfigError, match="--force"):
        load_model(path, expect_fingerprint="dead0002")
    forced = load_model(path, expect_fingerprint="dead0002", force=True)
    assert models_equal(forced, model)


def test_model_file_corruption_detected(tmp_path):
    model = init_model(ArchSpec(input_dim=2, hidden_layers=(3,), num_classes=2), 0)
    path = tmp_path / "m.kdsm"
    save_model(path, model, "feed0003")
    blob = path.read_bytes()
    path.write_bytes(b"WXYZ" + blob[4:])
    with pytest.raises(ParseError):
        load_model(path)
    path.write_bytes(blob[:-5])
    with pytest.raises(ParseError):
        load_model(path)
    path.write_bytes(blob + b"junk")
    with pytest.raises(ParseError):
        load_model(path)


def test_stage_bookkeeping(tmp_path):
    cfg = RunConfig()
    record_stage(tmp_path, cfg, "partition", {"plan": "plan.json"})
    assert require_stage(tmp_path, cfg, "partition") == {"plan": "plan.json"}
    with pytest.raises(ConfigError, match="run `kdsim pretrain` first"):
        require_stage(tmp_path, cfg, "pretrain")
    other = RunConfig(seed=5)
    with pytest.raises(ConfigError, match="fingerprint"):
        require_stage(tmp_path, other, "partition")
    assert require_stage(tmp_path, other, "partition", force=True) == {"plan": "plan.json"}


# -- command line -----------------------------------------------------------


def test_cli_requires_a_command(capsys):
    assert _run() == 1
    assert "no command" in capsys.readouterr().err


def test_cli_version_flag():
    with pytest.raises(SystemExit) as exc:
        _run("--version")
    assert exc.value.code == 0


def test_cli_unknown_flag_is_a_config_error(capsys):
    assert _run("partition", "--sideways") == 1
    assert "kdsim:" in capsys.readouterr().err


def test_cli_missing_config_file(capsys, tmp_path):
    rc = _run("partition", "--config", str(tmp_path / "nope.yaml"))
    assert rc == 1
    assert "not found" in capsys.readouterr().err


def test_cli_stage_ordering_enforced(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    rc = _run("pretrain", "--config", str(tiny_config), "--out-dir", str(out))
    assert rc == 1
    assert "partition" in capsys.readouterr().err


def test_cli_pipeline_end_to_end(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    base = ("--config", str(tiny_config), "--out-dir", str(out))
    assert _run("partition", *base) == 0
    assert (out / "plan.json").exists()
    assert (out / "pool.json").exists()
    assert _run("pretrain", *base) == 0
    assert (out / "pretrain_evals.json").exists()
    assert (out / "models/participant_00.kdsm").exists()
    assert _run("distill", *base, "--teacher", "0", "--student", "1") == 0
    assert (out / "distill_t0_s1_vanilla_student_data.json").exists()
    assert _run("grid", *base, "--teacher", "0", "--student", "1") == 0
    surface = read_json(out / "grid_t0_s1_student_data.json")
    assert len(surface["surface"]) == 4
    assert _run("matrix", *base) == 0
    results = read_json(out / "results.json")
    assert len(results["results"]) == 6  # 3 participants, ordered pairs
    assert _run("consolidate", *base) == 0
    assert (out / "consolidated.kdsm").exists()
    assert _run("fedavg", *base) == 0
    traj = read_json(out / "trajectories.json")
    assert {t["init_tag"] for t in traj["trajectories"]} == {"random", "preconsolidated"}
    assert all(len(t["accuracies"]) == 2 for t in traj["trajectories"])
    assert _run("report", *base) == 0
    captured = capsys.readouterr().out
    assert "cumulative gain" in captured
    manifest = read_json(out / "manifest.json")
    assert set(manifest["stages"]) >= {"partition", "pretrain", "matrix", "consolidate", "fedavg"}


def test_cli_distill_rejects_self_transfer(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    base = ("--config", str(tiny_config), "--out-dir", str(out))
    assert _run("partition", *base) == 0
    assert _run("pretrain", *base) == 0
    rc = _run("distill", *base, "--teacher", "1", "--student", "1")
    assert rc == 1
    assert "must differ" in capsys.readouterr().err


def test_cli_stale_fingerprint_and_force(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    base = ("--config", str(tiny_config), "--out-dir", str(out))
    assert _run("partition", *base) == 0
    rc = _run("pretrain", *base, "--seed", "4")
    assert rc == 1
    assert "fingerprint" in capsys.readouterr().err
    assert _run("pretrain", *base, "--seed", "4", "--force") == 0


def test_cli_out_dir_env_and_flag_precedence(tiny_config, tmp_path, monkeypatch, capsys):
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("KDSIM_OUT_DIR", str(env_dir))
    assert _run("partition", "--config", str(tiny_config)) == 0
    assert (env_dir / "plan.json").exists()

    flag_dir = tmp_path / "from_flag"
    monkeypatch.setenv("KDSIM_OUT_DIR", str(tmp_path / "ignored"))
    assert _run("partition", "--config", str(tiny_config), "--out-dir", str(flag_dir)) == 0
    assert (flag_dir / "plan.json").exists()
    assert not (tmp_path / "ignored").exists()


def test_cli_runs_are_byte_deterministic(tiny_config, tmp_path, capsys):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        base = ("--config", str(tiny_config), "--out-dir", str(out))
        for cmd in ("partition", "pretrain", "matrix", "consolidate", "fedavg", "report"):
            assert _run(cmd, *base) == 0
    for name in (
        "plan.json",
        "pool.json",
        "pretrain_evals.json",
        "models/participant_00.kdsm",
        "models/participant_02.kdsm",
        "results.json",
        "consolidate.json",
        "consolidated.kdsm",
        "trajectories.json",
        "manifest.json",
    ):
        a = (outs[0] / name).read_bytes()
        b = (outs[1] / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"


def test_cli_rerun_in_place_rewrites_identical_bytes(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    base = ("--config", str(tiny_config), "--out-dir", str(out))
    for cmd in ("partition", "pretrain", "matrix"):
        assert _run(cmd, *base) == 0
    before = {p: p.read_bytes() for p in (out / "plan.json", out / "results.json")}
    assert _run("partition", *base) == 0
    assert _run("matrix", *base) == 0
    for path, blob in before.items():
        assert path.read_bytes() == blob
