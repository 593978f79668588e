import pytest
import yaml

from cpheno.config import (
    TOY_CONFIG,
    RunConfig,
    apply_overrides,
    config,
    config_from_dict,
    dump_config,
    load_config,
    resolve_path,
    save_config,
)
from cpheno.errors import ConfigError


class TestDefaults:
    def test_stated_constants(self):
        cfg = RunConfig()
        assert cfg.knowledge.temperature == 0.07
        assert cfg.vlp.alpha == 0.3
        assert cfg.vlp.tau2 == cfg.vlp.tau3 == 0.07
        assert cfg.vlp.warmup_steps == 500
        assert cfg.vlp.image_size == 224
        assert cfg.vlp.max_tokens == 256
        assert cfg.vlp.lr == 1e-5
        assert cfg.vlp.batch == 256
        assert cfg.vlp.epochs == 10
        assert cfg.curation.k1 == cfg.curation.k2 == 20
        assert cfg.curation.detector_threshold == 0.5
        assert cfg.curation.caption_max_tokens == 256

    def test_global_instance(self):
        assert isinstance(config, RunConfig)

    def test_stage_seed_falls_back_to_global(self):
        cfg = config_from_dict({"seed": 7, "vlp": {"seed": 3}})
        assert cfg.stage_seed("vlp") == 3
        assert cfg.stage_seed("knowledge") == 7


class TestLoading:
    def test_toy_config(self):
        cfg = load_config(TOY_CONFIG)
        assert cfg.curation.k1 == 2
        assert cfg.curation.holdout_ids == ["PMC1003"]
        assert cfg.evaluation.k_values == [1, 5]

    def test_round_trip(self, tmp_path):
        cfg = load_config(TOY_CONFIG)
        path = tmp_path / "cfg.yaml"
        save_config(cfg, str(path))
        again = load_config(str(path))
        assert again == cfg
        assert dump_config(again) == dump_config(cfg)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="vlp.bogus"):
            config_from_dict({"vlp": {"bogus": 1}})

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            config_from_dict({"training": {}})

    def test_bad_type(self):
        with pytest.raises(ConfigError):
            config_from_dict({"vlp": {"batch": "many"}})

    def test_optional_fields_are_coerced(self):
        cfg = config_from_dict({"vlp": {"seed": "3", "embed_dim": "32"}, "evaluation": {"matching_k": 2.0}})
        assert cfg.vlp.seed == 3 and isinstance(cfg.vlp.seed, int)
        assert cfg.vlp.embed_dim == 32 and isinstance(cfg.vlp.embed_dim, int)
        assert cfg.evaluation.matching_k == 2 and isinstance(cfg.evaluation.matching_k, int)
        assert config_from_dict({"knowledge": {"seed": None}}).knowledge.seed is None
        with pytest.raises(ConfigError):
            config_from_dict({"curation": {"seed": "early"}})

    def test_validation(self):
        with pytest.raises(ConfigError):
            config_from_dict({"vlp": {"alpha": -1}})
        with pytest.raises(ConfigError):
            config_from_dict({"knowledge": {"kg_components": "no-everything"}})
        with pytest.raises(ConfigError):
            config_from_dict({"evaluation": {"tasks": ["zs", "vqa"]}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.yaml"))

    def test_dump_is_yaml(self):
        data = yaml.safe_load(dump_config(RunConfig()))
        assert data["vlp"]["alpha"] == 0.3


class TestOverrides:
    def test_later_wins(self):
        cfg = apply_overrides(RunConfig(), ["vlp.alpha=0.5", "vlp.alpha=0.7"])
        assert cfg.vlp.alpha == 0.7

    def test_yaml_values(self):
        cfg = apply_overrides(
            RunConfig(), ["vlp.kd_enabled=false", "evaluation.k_values=[1, 5]", "curation.llm_url="]
        )
        assert cfg.vlp.kd_enabled is False
        assert cfg.evaluation.k_values == [1, 5]
        assert cfg.curation.llm_url is None

    def test_does_not_mutate(self):
        base = RunConfig()
        apply_overrides(base, ["seed=9"])
        assert base.seed == 0

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), ["vlp.nothing=1"])
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), ["no_equals_sign"])


class TestSectionHash:
    def test_unrelated_section_does_not_change_hash(self):
        base = RunConfig()
        changed = apply_overrides(base, ["evaluation.k_values=[1]"])
        assert base.section_hash("vlp") == changed.section_hash("vlp")
        assert base.section_hash("evaluation") != changed.section_hash("evaluation")


def test_resolve_path(tmp_path):
    assert resolve_path("a.txt", str(tmp_path)) == str(tmp_path / "a.txt")
    assert resolve_path("/abs/a.txt", str(tmp_path)) == "/abs/a.txt"
    assert resolve_path("a.txt", None) == "a.txt"
    assert resolve_path(None, str(tmp_path)) is None
