"""Config loading, validation, and environment overrides."""

import pytest

from puremix.config import (
    ANNOTATOR_URL_ENV,
    EXTENSION_URL_ENV,
    TAGGER_URL_ENV,
    ConfigError,
    PipelineConfig,
    load_config,
    validate_config,
)


def write_config(tmp_path, body):
    path = tmp_path / "cfg" / "pipeline.yaml"
    path.parent.mkdir(exist_ok=True)
    path.write_text(body)
    return str(path)


def test_defaults_are_canonical_recipe(tmp_path):
    path = write_config(tmp_path, "output_root: out\n")
    config = load_config(path)
    assert config.window_s == 10.0 and config.hop_s == 5.0
    assert config.rms_gate == 5e-4
    assert config.coarse_confidence == 0.7
    assert config.passes == 10 and config.temperature == 1.0
    assert config.target_rate == 44100
    assert config.rms_target == 0.1
    assert config.snr_range == (-5.0, 5.0)
    assert config.count_weights == {2: 0.20, 3: 0.20, 4: 0.25, 5: 0.35}
    assert config.split_durations == {"train": 4.0, "val": 4.0, "test": 10.0}
    assert config.seed == 0


def test_relative_paths_resolve_against_config_dir(tmp_path):
    path = write_config(
        tmp_path,
        "output_root: out\n"
        "corpus_root: ../audio\n"
        "taxonomy: tax.tsv\n"
        "prompt_templates: prompts\n"
        "matrix: matrix.tsv\n"
        "eval_pairs: pairs.jsonl\n",
    )
    config = load_config(path)
    base = str(tmp_path / "cfg")
    assert config.output_root == f"{base}/out"
    assert config.corpus_root == f"{base}/../audio"
    assert config.taxonomy == f"{base}/tax.tsv"
    assert config.matrix == f"{base}/matrix.tsv"
    assert config.eval_pairs == f"{base}/pairs.jsonl"
    # absolute paths pass through untouched
    path2 = write_config(tmp_path, "output_root: /abs/out\ntaxonomy: /abs/tax.tsv\n")
    config2 = load_config(path2)
    assert config2.output_root == "/abs/out"
    assert config2.taxonomy == "/abs/tax.tsv"


def test_yaml_coercions(tmp_path):
    path = write_config(
        tmp_path,
        "output_root: out\n"
        "snr_range: [-3, 3]\n"
        "count_weights:\n  2: 0.5\n  3: 0.5\n",
    )
    config = load_config(path)
    assert config.snr_range == (-3, 3)
    assert config.count_weights == {2: 0.5, 3: 0.5}
    assert all(isinstance(k, int) for k in config.count_weights)


def test_unknown_setting_rejected(tmp_path):
    path = write_config(tmp_path, "output_root: out\nwindowsize: 3\n")
    with pytest.raises(ConfigError, match="unknown setting 'windowsize'"):
        load_config(path)


def test_all_problems_reported_in_one_pass(tmp_path):
    path = write_config(
        tmp_path,
        "window_s: -1\n"
        "hop_s: 20\n"
        "coarse_confidence: 1.5\n"
        "passes: 0\n",
    )
    with pytest.raises(ConfigError) as err:
        load_config(path)
    problems = err.value.problems
    assert any("output_root is required" in p for p in problems)
    assert any("window_s must be positive" in p for p in problems)
    assert any("hop_s must satisfy" in p for p in problems)
    assert any("coarse_confidence" in p for p in problems)
    assert any("passes must be >= 1" in p for p in problems)
    assert len(problems) >= 5


def test_unreadable_and_non_mapping_configs(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(str(tmp_path / "absent.yaml"))
    path = write_config(tmp_path, "- just\n- a\n- list\n")
    with pytest.raises(ConfigError, match="root must be a mapping"):
        load_config(path)
    empty = write_config(tmp_path, "")
    with pytest.raises(ConfigError, match="output_root is required"):
        load_config(empty)


def test_count_weights_validation():
    config = PipelineConfig(output_root="/out", count_weights={1: 0.5, 6: 0.5})
    problems = validate_config(config)
    assert any("key 1" in p and "outside 2..5" in p for p in problems)
    assert any("key 6" in p for p in problems)

    config = PipelineConfig(output_root="/out", count_weights={2: 0.4, 3: 0.4})
    problems = validate_config(config)
    assert any("sum to" in p and "expected 1" in p for p in problems)

    config = PipelineConfig(output_root="/out", count_weights={})
    assert any("non-empty mapping" in p for p in validate_config(config))


def test_snr_and_split_validation():
    config = PipelineConfig(output_root="/out", snr_range=(5.0, -5.0))
    assert any("exceeds high" in p for p in validate_config(config))

    config = PipelineConfig(output_root="/out", snr_range=(1.0,))
    assert any("must be \\[low, high\\]" in p or "[low, high]" in p for p in validate_config(config))

    config = PipelineConfig(output_root="/out", split_sizes={"dev": 3})
    problems = validate_config(config)
    assert any("unknown split 'dev'" in p for p in problems)

    config = PipelineConfig(
        output_root="/out",
        split_sizes={"train": 2},
        split_durations={"test": 10.0},
    )
    assert any("has a size but no duration" in p for p in validate_config(config))


def test_service_mode_validation():
    config = PipelineConfig(output_root="/out", annotator={"mode": "carrier-pigeon"})
    assert any("annotator.mode" in p for p in validate_config(config))
    config = PipelineConfig(output_root="/out", extension={"mode": "bad"})
    assert any("extension.mode" in p for p in validate_config(config))
    config = PipelineConfig(output_root="/out", tagger="nope")
    assert any("tagger must be a mapping" in p for p in validate_config(config))


def test_env_url_overrides(monkeypatch):
    config = PipelineConfig(output_root="/out")
    assert config.annotator_url() is None
    monkeypatch.setenv(ANNOTATOR_URL_ENV, "http://ann.example")
    monkeypatch.setenv(TAGGER_URL_ENV, "http://tag.example")
    monkeypatch.setenv(EXTENSION_URL_ENV, "http://ext.example")
    assert config.annotator_url() == "http://ann.example"
    assert config.tagger_url() == "http://tag.example"
    assert config.extension_url() == "http://ext.example"
    # explicit config wins over the environment
    config.annotator = {"mode": "http", "url": "http://direct.example"}
    assert config.annotator_url() == "http://direct.example"


def test_effective_workers(monkeypatch):
    assert PipelineConfig(workers=3).effective_workers() == 3
    assert PipelineConfig(workers=None).effective_workers() >= 1
    monkeypatch.setattr("os.cpu_count", lambda: None)
    assert PipelineConfig(workers=None).effective_workers() == 1
