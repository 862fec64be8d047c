import json

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from flowforge.config import (ProvenanceRecord, canonical_bytes, config_hash,
                              read_provenance, resolve_config,
                              write_frozen_config, write_provenance)
from flowforge.errors import ConfigError


class TestResolve:
    def test_defaults_resolve(self):
        cfg = resolve_config()
        assert cfg.bounding_box.extents == (2048.0, 512.0, 512.0)
        assert cfg.roi_x == (146.0, 1800.0)
        assert cfg.clearance == 32.0  # 2 * default dx

    def test_dx_override_implies_preset(self):
        cfg = resolve_config(override_list=["sdf_policy.dx=8"])
        from flowforge.fields import GridSpec
        grid = GridSpec.preset(cfg.sdf_policy["dx"])
        assert grid.dims == (256, 64, 64)

    def test_simple_override(self):
        cfg = resolve_config(override_list=["number_of_objects=2"])
        assert cfg.number_of_objects == 2

    def test_list_override_bracket_literal(self):
        cfg = resolve_config(
            override_list=["sim_param_policy.re_band=[500,5000]"])
        assert cfg.sim_param_policy["re_band"] == [500, 5000]

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ConfigError, match="no positive weight"):
            resolve_config(base_dict={"shape_mix": {
                fam: 0.0 for fam in ("cuboid", "cylinder", "sphere",
                                     "cone", "torus", "wedge")}})

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("number_of_obejcts: 3\n")
        with pytest.raises(ConfigError, match="number_of_obejcts"):
            resolve_config(path)

    def test_unknown_override_key_named(self):
        with pytest.raises(ConfigError, match="sdf_policy.dxx"):
            resolve_config(override_list=["sdf_policy.dxx=8"])

    def test_parse_failure_reports_line(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("repeat: 3\n  bad_indent: { [\n")
        with pytest.raises(ConfigError, match=r"broken\.yaml:\d+"):
            resolve_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            resolve_config(tmp_path / "nope.yaml")

    def test_dx_must_divide_extents(self):
        with pytest.raises(ConfigError, match="does not divide"):
            resolve_config(override_list=["sdf_policy.dx=5"])

    def test_roi_must_stay_in_domain(self):
        with pytest.raises(ConfigError, match="roi_x"):
            resolve_config(base_dict={"roi_x": [100, 3000]})

    def test_interpolation_reference(self):
        cfg = resolve_config(base_dict={"repeat": 7})
        assert cfg.initial_test_repeat == 7

    def test_streamwise_periodicity_rejected(self):
        with pytest.raises(ConfigError, match="periodic_axes.x"):
            resolve_config(
                override_list=["sim_param_policy.periodic_axes.x=true"])


class TestClassicLayout:
    def test_full_classic_file(self, tmp_path):
        sim = tmp_path / "simulation_parameters.yaml"
        sim.write_text("""
re_band: [100, 15000]
inlet_velocity:
  magnitude_min: 0.001488
  magnitude_max: 0.1488
  min_x_component_generator: 0.10
  min_x_component_after_scaling: 0.001
periodic_directions: { x: false, y: false, z: true }
refinement_probability: 0.20
precision_decimals: 5
""")
        main = tmp_path / "config.yaml"
        main.write_text(f"""
bounding_box:
  x_min: 0
  x_max: 2048
  y_min: 0
  y_max: 512
  z_min: 0
  z_max: 512
number_of_objects: 1
repeat: 100
geometries:
  - name: cuboid
    _target_: src.geometries.cuboid.make_cuboid
  - name: cylinder
    _target_: src.geometries.cylinder.make_cylinder
  - name: torus
    _target_: src.geometries.torus.make_torus
shape_mix:
  cuboid: 1.0
  cylinder: 1.0
  torus: 0.5
simulation_parameters: {sim}
use_sobol: false
initial_test_repeat: ${{repeat}}
number_of_retries_object_creation: 100
""")
        cfg = resolve_config(main)
        assert cfg.sampling_mode == "uniform"
        assert cfg.shape_mix["torus"] == 0.5
        assert cfg.shape_mix["wedge"] == 0.0       # not in the factory list
        assert cfg.sim_param_policy["periodic_axes"] == {
            "x": False, "y": False, "z": True}
        assert cfg.sim_param_policy["magnitude_min"] == 0.001488
        assert cfg.initial_test_repeat == 100

    def test_classic_shape_ranges(self):
        cfg = resolve_config(base_dict={"shapes": {"cone": {
            "radius_min": 5.0, "radius_max": 200.0,
            "height_min": 5.0, "height_max": 200.0,
            "angle_min_deg": 45, "angle_max_deg": 360,
            "min_radius_sum": 10.0}}})
        cone = cfg.shapes["cone"]
        assert cone["radius_1"] == [5.0, 200.0]
        assert cone["radius_2"] == [5.0, 200.0]
        assert cone["angle"] == [45, 360]
        assert cone["min_radius_sum"] == 10.0

    def test_classic_launch_overrides(self):
        cfg = resolve_config(override_list=[
            "number_of_objects=2",
            "simulation_parameters.re_band=[500,5000]",
            "use_sobol=true"])
        assert cfg.number_of_objects == 2
        assert cfg.sim_param_policy["re_band"] == [500, 5000]
        assert cfg.sampling_mode == "sobol"

    def test_unknown_factory_rejected(self):
        with pytest.raises(ConfigError, match="helix"):
            resolve_config(base_dict={"geometries": [{"name": "helix"}]})


class TestHash:
    def test_key_order_invariance(self, tmp_path):
        a = tmp_path / "a.yaml"
        b = tmp_path / "b.yaml"
        a.write_text("repeat: 5\nseed: 9\n# a comment\n")
        b.write_text("seed: 9\nrepeat: 5\n")
        assert config_hash(resolve_config(a)) == config_hash(resolve_config(b))

    def test_value_change_changes_hash(self):
        a = resolve_config(base_dict={"seed": 1})
        b = resolve_config(base_dict={"seed": 2})
        assert config_hash(a) != config_hash(b)

    def test_hash_stable_across_calls(self):
        cfg = resolve_config(base_dict={"seed": 77})
        assert config_hash(cfg) == config_hash(cfg)
        assert len(config_hash(cfg)) == 64

    def test_semantically_equal_defaults(self):
        # writing out a default explicitly must not change the digest
        assert (config_hash(resolve_config())
                == config_hash(resolve_config(base_dict={"repeat": 100})))

    @given(st.dictionaries(
        st.sampled_from(list("abcdefgh")),
        st.one_of(st.integers(-10, 10), st.floats(-1e3, 1e3,
                                                  allow_nan=False),
                  st.text("xyz", max_size=4)),
        min_size=1, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_canonical_bytes_order_invariant(self, data):
        shuffled = dict(reversed(list(data.items())))
        assert canonical_bytes(data) == canonical_bytes(shuffled)
        mutated = dict(data)
        key = next(iter(mutated))
        mutated[key] = "something else entirely"
        assert canonical_bytes(data) != canonical_bytes(mutated)


class TestOverrideProperties:
    def test_disjoint_overrides_associative(self):
        both = resolve_config(override_list=["seed=5", "repeat=9"])
        nested = resolve_config(override_list=["repeat=9", "seed=5"])
        assert config_hash(both) == config_hash(nested)

    def test_later_override_wins(self):
        cfg = resolve_config(override_list=["seed=5", "seed=6"])
        assert cfg.seed == 6


class TestFrozenSnapshot:
    def test_snapshot_round_trip(self, tmp_path):
        cfg = resolve_config(base_dict={"seed": 4, "repeat": 11,
                                        "sampling_mode": "sobol"})
        path = tmp_path / "frozen.yaml"
        write_frozen_config(cfg, path)
        again = resolve_config(path)
        assert again.data == cfg.data
        assert config_hash(again) == config_hash(cfg)


class TestProvenance:
    def make_record(self, samples=3):
        cfg = resolve_config()
        return ProvenanceRecord(config_digest=config_hash(cfg), seed=1,
                                samples_generated=samples,
                                tool_version="0.1.0",
                                timestamp="2026-01-01T00:00:00Z",
                                sobol_index=17)

    def test_round_trip(self, tmp_path):
        record = self.make_record()
        write_provenance(record, tmp_path, resolve_config())
        assert (tmp_path / "provenance.json").exists()
        assert (tmp_path / "config_frozen.yaml").exists()
        assert read_provenance(tmp_path) == record

    def test_sorted_keys_utf8(self, tmp_path):
        write_provenance(self.make_record(), tmp_path)
        doc = json.loads((tmp_path / "provenance.json").read_text())
        assert list(doc) == sorted(doc)

    def test_counter_grows(self, tmp_path):
        write_provenance(self.make_record(samples=3), tmp_path)
        write_provenance(self.make_record(samples=5), tmp_path)
        assert read_provenance(tmp_path).samples_generated == 5

    def test_counter_regression_rejected(self, tmp_path):
        write_provenance(self.make_record(samples=5), tmp_path)
        with pytest.raises(ConfigError, match="counter regression"):
            write_provenance(self.make_record(samples=2), tmp_path)

    def test_digest_shape_enforced(self):
        with pytest.raises(ConfigError, match="64 lowercase hex"):
            ProvenanceRecord(config_digest="abc", seed=0, samples_generated=0,
                             tool_version="x", timestamp="t")
