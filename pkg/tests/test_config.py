"""Tests for the run-configuration loader.

The loader is strict: unknown keys anywhere are rejected, scalar types are
checked, and the two model sections derive their data-dependent dimensions
from the world/dataset sections rather than accepting them directly.
"""

import json

import pytest

from behavegen.config import (
    SCHEMA_VERSION,
    GenerationConfig,
    RunConfig,
    WorldConfig,
    load_run_config,
    run_config_from_dict,
)
from behavegen.errors import ConfigInvalid


def minimal_doc(**overrides) -> dict:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(overrides)
    return doc


class TestDefaults:
    def test_empty_doc_gives_defaults(self):
        cfg = run_config_from_dict(minimal_doc())
        assert cfg.seed == 0
        assert cfg.world == WorldConfig()
        assert cfg.generation == GenerationConfig()
        assert cfg.vbb_train.batch_size == 32
        assert cfg.sampler.steps == 16

    def test_schema_version_required_and_checked(self):
        with pytest.raises(ConfigInvalid):
            run_config_from_dict({})
        with pytest.raises(ConfigInvalid):
            run_config_from_dict({"schema_version": SCHEMA_VERSION + 1})

    def test_partial_section_merges_with_defaults(self):
        cfg = run_config_from_dict(minimal_doc(world={"state_dim": 5}))
        assert cfg.world.state_dim == 5
        assert cfg.world.action_dim == WorldConfig().action_dim


class TestStrictness:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigInvalid, match="unknown top-level"):
            run_config_from_dict(minimal_doc(bogus=1))

    def test_unknown_section_key(self):
        with pytest.raises(ConfigInvalid, match="world"):
            run_config_from_dict(minimal_doc(world={"state_dim": 3, "oops": 1}))

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(world=[1, 2]))

    def test_bottleneck_rejects_derived_dims(self):
        # d_z comes from the world section; accepting it here would let the
        # two disagree silently.
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(bottleneck={"d_z": 9}))
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(bottleneck={"d_text": 9}))

    def test_flow_rejects_derived_dims(self):
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(flow={"d_m": 9}))
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(flow={"d_e": 9}))

    def test_seed_must_be_int(self):
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(seed="7"))
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(seed=True))


class TestDerivedDims:
    def test_bottleneck_dims_follow_world_and_dataset(self):
        cfg = run_config_from_dict(minimal_doc(
            world={"d_z": 6},
            dataset={"d_text": 12},
            bottleneck={"d_m": 10, "levels": 2},
        ))
        b = cfg.bottleneck_config()
        assert (b.d_z, b.d_text, b.d_m, b.levels) == (6, 12, 10, 2)

    def test_explicit_override_wins(self):
        cfg = run_config_from_dict(minimal_doc(world={"d_z": 6}))
        assert cfg.bottleneck_config(d_z=3).d_z == 3

    def test_flow_dims_follow_bottleneck(self):
        cfg = run_config_from_dict(minimal_doc(
            bottleneck={"d_m": 10, "d_e": 7},
            flow={"width": 8},
        ))
        f = cfg.flow_config()
        assert (f.d_m, f.d_e, f.width) == (10, 7, 8)

    def test_bad_deferred_value_surfaces_at_materialization(self):
        cfg = run_config_from_dict(minimal_doc(flow={"r_dim": 3}))
        with pytest.raises(ConfigInvalid):
            cfg.flow_config()


class TestCoercionAndRoundTrip:
    def test_json_lists_become_tuples(self):
        cfg = run_config_from_dict(minimal_doc(
            dataset={"behaviors": ["walk", "turn"], "stage_probs": [0.5, 0.5]},
        ))
        assert cfg.dataset.behaviors == ("walk", "turn")
        assert cfg.dataset.stage_probs == (0.5, 0.5)

    def test_round_trip(self):
        doc = minimal_doc(
            seed=9,
            world={"state_dim": 4, "d_z": 3},
            dataset={"n_samples": 40, "behaviors": ["walk", "turn"]},
            bottleneck={"d_m": 6, "width": 8},
            flow={"width": 8},
            sampler={"steps": 8, "guidance": 2.0},
            generation={"t_m": 3, "overlap": 2, "in_place": True},
        )
        cfg = run_config_from_dict(doc)
        again = run_config_from_dict(cfg.to_dict())
        assert again == cfg

    def test_to_dict_is_json_serializable(self):
        cfg = run_config_from_dict(minimal_doc(bottleneck={"d_m": 6}))
        text = json.dumps(cfg.to_dict())
        assert run_config_from_dict(json.loads(text)) == cfg


class TestEnvOverride:
    def test_seed_env_override(self):
        cfg = run_config_from_dict(minimal_doc(seed=4),
                                   env={"BEHAVE_SEED": "123"})
        assert cfg.seed == 123

    def test_invalid_env_seed(self):
        with pytest.raises(ConfigInvalid):
            run_config_from_dict(minimal_doc(), env={"BEHAVE_SEED": "lots"})

    def test_absent_env_keeps_config_seed(self):
        cfg = run_config_from_dict(minimal_doc(seed=4), env={})
        assert cfg.seed == 4


class TestFileLoading:
    def test_load_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(minimal_doc(seed=5)))
        assert load_run_config(str(path)).seed == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_run_config(str(tmp_path / "absent.json"))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigInvalid):
            load_run_config(str(path))

    def test_frozen(self):
        cfg = run_config_from_dict(minimal_doc())
        with pytest.raises(Exception):
            cfg.seed = 3
        assert isinstance(cfg, RunConfig)
