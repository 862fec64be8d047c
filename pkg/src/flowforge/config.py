"""Single hierarchical configuration governing every pipeline stage.

A base YAML file is merged over built-in defaults, ``key.path=value``
overrides are applied last, ``${dotted.path}`` references are resolved, and
the result is validated against a strict schema (unknown keys are rejected
so typos surface immediately -- provenance depends on configs being exact).

Hashing uses a canonical serialization: keys sorted at every level, floats
rendered in shortest round-trip form, no insignificant whitespace.  Two
configs that resolve to the same semantic content hash identically no
matter how the files were formatted.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ArtifactIOError, ConfigError

FAMILIES = ("cone", "cuboid", "cylinder", "sphere", "torus", "wedge")

# Parameter-range keys accepted per family.  Optional keys may be null
# (sphere sector angles default to "absent": full spheres).
_FAMILY_KEYS = {
    "cuboid": {"height", "width", "thickness", "decimals"},
    "cylinder": {"radius", "height", "angle", "decimals"},
    "cone": {"radius_1", "radius_2", "height", "angle", "min_radius_sum", "decimals"},
    "sphere": {"radius", "alpha", "beta", "gamma", "decimals"},
    "torus": {"radius_major", "radius_minor", "decimals"},
    # x_min / x_max / depth are legacy aliases for offset / length / width
    "wedge": {"length", "width", "height", "opening_angle",
              "x_min", "x_max", "depth", "decimals"},
}

_DEFAULTS: dict = {
    "bounding_box": {
        "x_min": 0.0, "x_max": 2048.0,
        "y_min": 0.0, "y_max": 512.0,
        "z_min": 0.0, "z_max": 512.0,
    },
    "roi_x": [146.0, 1800.0],
    "number_of_objects": 1,
    "repeat": 100,
    "seed": 0,
    "sampling_mode": "uniform",
    "initial_test_repeat": "${repeat}",
    "number_of_retries_object_creation": 100,
    "max_scene_restarts": 1000,
    "min_volume": 1000.0,
    "clearance": None,  # null -> 2 * sdf_policy.dx
    "name_object_out": False,
    "output_prefix": "object",
    "campaign": "run",
    "shape_mix": {
        "cuboid": 1.0, "cylinder": 1.0, "sphere": 1.0,
        "cone": 1.0, "torus": 0.5, "wedge": 1.0,
    },
    "shapes": {
        "cuboid": {"height": [5.0, 200.0], "width": [5.0, 200.0],
                   "thickness": [5.0, 200.0]},
        "cylinder": {"radius": [5.0, 200.0], "height": [5.0, 200.0],
                     "angle": [45.0, 360.0]},
        "cone": {"radius_1": [0.0, 200.0], "radius_2": [0.0, 200.0],
                 "height": [5.0, 200.0], "angle": [45.0, 360.0],
                 "min_radius_sum": 10.0},
        "sphere": {"radius": [5.0, 200.0],
                   "alpha": None, "beta": None, "gamma": None},
        "torus": {"radius_major": [5.0, 200.0], "radius_minor": [5.0, 200.0]},
        "wedge": {"length": [10.0, 200.0], "width": [30.0, 200.0],
                  "height": [5.0, 200.0], "opening_angle": [10.0, 80.0]},
    },
    "pose": {
        "position_decimals": 1,
        "dir_vector_decimals": 2,
        "param_decimals": 1,
    },
    "sim_param_policy": {
        "re_band": [100.0, 15000.0],
        "magnitude_min": 0.001488,
        "magnitude_max": 0.1488,
        "min_x_component_generator": 0.10,
        "min_x_component_after_scaling": 0.001,
        "periodic_axes": {"x": False, "y": True, "z": True},
        "periodic_probability": 0.5,
        "refinement_probability": 0.20,
        "precision_decimals": 5,
        "rejection_budget": 1000,
        "tau_stability_cap": 1.99,
    },
    "solver_policy": {
        "l_char": 512.0,
        "cs": 0.16,
        "ma_inlet_max": 0.12,
        "ma_max": 0.20,
    },
    "sdf_policy": {
        "dx": 16,
        "band_w": 8,
        "aniso": [1.0, 1.0],
    },
    "resample_policy": {
        "kernel": "linear",
        "footprint": "n_closest",
        "num_neighbours": None,  # null -> per-grid schedule 4/6/8
        "radius": None,
        "sharpness": 2.0,
        "power": 2.0,
        "eps": 1.0e-12,
        "eccentricity": [1.0, 1.0, 1.0],
        "cells": [127, 31, 31],
        "prefilter": False,
        "split_components": False,
    },
    "orchestration_policy": {
        "lanes": 3,
        "backend": "dry_run",
        "templates_dir": None,  # null -> packaged defaults
        "submit_command": "sbatch",
        "partition": "singlenode",
        "time_limit": "24:00:00",
        "ntasks_per_node": 72,
        "modules": [],
        "env_setup": [],
        "timesteps": 100000,
        "comp_interval": 100,
        "timesteps_to_average": 1000,
    },
}

# Nodes whose children are free-form (validated separately, not by skeleton).
_FREE_NODES = {"shape_mix", "shapes"}

_INTERP_RE = re.compile(r"^\$\{([A-Za-z0-9_.]+)\}$")


# ---------------------------------------------------------------------------
# Classic-layout compatibility
# ---------------------------------------------------------------------------
_LEGACY_SIM_KEYS = {
    "re_band": "re_band",
    "magnitude_min": "magnitude_min",
    "magnitude_max": "magnitude_max",
    "min_x_component_generator": "min_x_component_generator",
    "min_x_component_after_scaling": "min_x_component_after_scaling",
    "periodic_directions": "periodic_axes",
    "refinement_probability": "refinement_probability",
    "precision_decimals": "precision_decimals",
}


def _normalize_family_ranges(family: str, block: dict) -> dict:
    """Accept `<param>_min` / `<param>_max` pairs next to [lo, hi] records.

    The classic cone block uses one radius range for both radii and names
    the sweep `angle_min_deg` / `angle_max_deg`.
    """
    out = {}
    pairs: dict[str, dict] = {}
    for key, value in block.items():
        if key in ("angle_min_deg", "angle_max_deg"):
            pairs.setdefault("angle", {})[key.rsplit("_", 2)[1]] = value
        elif key.endswith("_min") or key.endswith("_max"):
            stem, bound = key[:-4], key[-3:]
            pairs.setdefault(stem, {})[bound] = value
        else:
            out[key] = value
    for stem, bounds in pairs.items():
        if set(bounds) != {"min", "max"}:
            raise ConfigError(
                f"shapes.{family}.{stem}: need both _min and _max")
        interval = [bounds["min"], bounds["max"]]
        if family == "cone" and stem == "radius":
            out.setdefault("radius_1", interval)
            out.setdefault("radius_2", list(interval))
        else:
            out[stem] = interval
    return out


def _normalize_legacy(user: dict) -> dict:
    """Translate the classic config layout into the canonical schema."""
    user = copy.deepcopy(user)

    if "use_sobol" in user:
        flag = user.pop("use_sobol")
        user.setdefault("sampling_mode", "sobol" if flag else "uniform")

    # factory list: names select the enabled families; module paths in any
    # `_target_` entries are recorded-but-ignored (no dynamic loading)
    if "geometries" in user:
        entries = user.pop("geometries")
        if not isinstance(entries, list):
            raise ConfigError("geometries: expected a list of factory entries")
        names = []
        for entry in entries:
            name = entry.get("name") if isinstance(entry, dict) else entry
            if name not in FAMILIES:
                raise ConfigError(f"geometries: unknown shape family {name!r}")
            names.append(name)
        mix = user.get("shape_mix", {})
        user["shape_mix"] = {fam: mix.get(fam, 1.0 if fam in names else 0.0)
                             for fam in FAMILIES}

    sim = user.get("simulation_parameters")
    if sim is not None:
        user.pop("simulation_parameters")
        if isinstance(sim, str):
            path = Path(sim)
            if not path.exists():
                raise ConfigError(
                    f"simulation_parameters: file not found: {path}")
            sim = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(sim, dict):
            raise ConfigError("simulation_parameters: expected a mapping or path")
        policy = dict(user.get("sim_param_policy", {}))
        inlet = sim.pop("inlet_velocity", {})
        for key, value in {**sim, **inlet}.items():
            if key not in _LEGACY_SIM_KEYS:
                raise ConfigError(f"simulation_parameters.{key}: unknown key")
            policy[_LEGACY_SIM_KEYS[key]] = value
        user["sim_param_policy"] = policy

    if isinstance(user.get("shapes"), dict):
        user["shapes"] = {
            fam: (_normalize_family_ranges(fam, block)
                  if isinstance(block, dict) else block)
            for fam, block in user["shapes"].items()
        }
    return user


# ---------------------------------------------------------------------------
# Typed views
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    @property
    def mins(self):
        return (self.x_min, self.y_min, self.z_min)

    @property
    def maxs(self):
        return (self.x_max, self.y_max, self.z_max)

    @property
    def extents(self):
        return (self.x_max - self.x_min, self.y_max - self.y_min,
                self.z_max - self.z_min)


@dataclass(frozen=True)
class ResolvedConfig:
    """Validated, fully-defaulted configuration.

    Read-only after resolution; safe to share across threads.  ``data`` is
    the canonical plain-dict form used for hashing and frozen snapshots.
    """

    data: dict = field(repr=False)

    # convenience accessors -------------------------------------------------
    @property
    def bounding_box(self) -> BoundingBox:
        return BoundingBox(**self.data["bounding_box"])

    @property
    def roi_x(self) -> tuple[float, float]:
        return tuple(self.data["roi_x"])

    @property
    def number_of_objects(self) -> int:
        return self.data["number_of_objects"]

    @property
    def repeat(self) -> int:
        return self.data["repeat"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def sampling_mode(self) -> str:
        return self.data["sampling_mode"]

    @property
    def initial_test_repeat(self) -> int:
        return self.data["initial_test_repeat"]

    @property
    def retry_budget(self) -> int:
        return self.data["number_of_retries_object_creation"]

    @property
    def max_scene_restarts(self) -> int:
        return self.data["max_scene_restarts"]

    @property
    def min_volume(self) -> float:
        return self.data["min_volume"]

    @property
    def clearance(self) -> float:
        return self.data["clearance"]

    @property
    def shape_mix(self) -> dict:
        return self.data["shape_mix"]

    @property
    def shapes(self) -> dict:
        return self.data["shapes"]

    @property
    def pose(self) -> dict:
        return self.data["pose"]

    @property
    def sim_param_policy(self) -> dict:
        return self.data["sim_param_policy"]

    @property
    def solver_policy(self) -> dict:
        return self.data["solver_policy"]

    @property
    def sdf_policy(self) -> dict:
        return self.data["sdf_policy"]

    @property
    def resample_policy(self) -> dict:
        return self.data["resample_policy"]

    @property
    def orchestration_policy(self) -> dict:
        return self.data["orchestration_policy"]

    def get(self, dotted: str):
        node = self.data
        for part in dotted.split("."):
            node = node[part]
        return node


# ---------------------------------------------------------------------------
# Merge / override machinery
# ---------------------------------------------------------------------------
def _merge(base: dict, user: dict, path: str = "") -> dict:
    """Recursively merge ``user`` over ``base``, rejecting unknown keys."""
    out = copy.deepcopy(base)
    for key, value in user.items():
        here = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if key in _FREE_NODES:
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a mapping")
            if key == "shape_mix":
                out[key] = dict(value)
            else:  # shapes: merge per family over family defaults
                merged = copy.deepcopy(base[key])
                for fam, ranges in value.items():
                    if fam not in FAMILIES:
                        raise ConfigError(f"{here}.{fam}: unknown shape family")
                    if not isinstance(ranges, dict):
                        raise ConfigError(f"{here}.{fam}: expected a mapping")
                    fam_out = dict(merged.get(fam, {}))
                    for rkey, rval in ranges.items():
                        if rkey not in _FAMILY_KEYS[fam]:
                            raise ConfigError(
                                f"{here}.{fam}.{rkey}: unknown parameter key")
                        fam_out[rkey] = copy.deepcopy(rval)
                    merged[fam] = fam_out
                out[key] = merged
        elif isinstance(base[key], dict) and base[key] is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a mapping")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """Parse one ``key.path=value`` override; the value uses YAML syntax."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: unparseable value: {exc}") from exc
    return key.split("."), value


def _translate_override(parts: list[str], value):
    """Map classic-layout override paths onto the canonical schema."""
    if parts == ["use_sobol"]:
        return ["sampling_mode"], ("sobol" if value else "uniform")
    if parts[0] == "simulation_parameters" and len(parts) >= 2:
        rest = parts[1:]
        if rest[0] == "inlet_velocity" and len(rest) == 2:
            rest = rest[1:]
        if rest[0] in _LEGACY_SIM_KEYS and len(rest) <= 2:
            return (["sim_param_policy", _LEGACY_SIM_KEYS[rest[0]], *rest[1:]],
                    value)
    return parts, value


def _apply_override(tree: dict, parts: list[str], value, dotted: str):
    node = tree
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown override key: {dotted}")
        node = node[part]
        # free-form family maps allow new leaves one level down
        if node is None:
            raise ConfigError(f"unknown override key: {dotted}")
    leaf = parts[-1]
    if not isinstance(node, dict):
        raise ConfigError(f"unknown override key: {dotted}")
    parent = ".".join(parts[:-1])
    if parent == "shape_mix":
        if leaf not in FAMILIES:
            raise ConfigError(f"unknown override key: {dotted}")
    elif parts[0] == "shapes" and len(parts) == 3:
        if parts[1] not in FAMILIES or leaf not in _FAMILY_KEYS[parts[1]]:
            raise ConfigError(f"unknown override key: {dotted}")
    elif leaf not in node:
        raise ConfigError(f"unknown override key: {dotted}")
    node[leaf] = value


def _resolve_interpolations(tree: dict):
    """Resolve full-string ``${dotted.path}`` references against the root."""

    def lookup(dotted: str):
        node = tree
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"interpolation ${{{dotted}}} does not resolve")
            node = node[part]
        return node

    def walk(node, seen: tuple = ()):
        if isinstance(node, dict):
            return {k: walk(v, seen) for k, v in node.items()}
        if isinstance(node, list):
            return [walk(v, seen) for v in node]
        if isinstance(node, str):
            match = _INTERP_RE.match(node)
            if match:
                target = match.group(1)
                if target in seen:
                    raise ConfigError(f"interpolation cycle through ${{{target}}}")
                return walk(lookup(target), seen + (target,))
        return node

    return walk(tree)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------
def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def _is_interval(value) -> bool:
    return (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                    for v in value))


def _validate(data: dict):
    box = data["bounding_box"]
    for axis in ("x", "y", "z"):
        _require(box[f"{axis}_min"] <= box[f"{axis}_max"],
                 f"bounding_box: {axis}_min > {axis}_max")

    _require(_is_interval(data["roi_x"]) and data["roi_x"][0] <= data["roi_x"][1],
             "roi_x: expected a nonempty [min, max] interval")
    _require(box["x_min"] <= data["roi_x"][0] and data["roi_x"][1] <= box["x_max"],
             "roi_x: must lie within the domain x-range")

    for key in ("number_of_objects", "repeat",
                "number_of_retries_object_creation", "max_scene_restarts"):
        _require(isinstance(data[key], int) and data[key] >= 1,
                 f"{key}: must be a positive integer")
    _require(isinstance(data["initial_test_repeat"], int)
             and data["initial_test_repeat"] >= 0,
             "initial_test_repeat: must be a nonnegative integer")
    _require(isinstance(data["seed"], int), "seed: must be an integer")
    _require(data["sampling_mode"] in ("uniform", "sobol"),
             "sampling_mode: must be 'uniform' or 'sobol'")
    _require(data["min_volume"] > 0, "min_volume: must be positive")
    _require(data["clearance"] is None or data["clearance"] >= 0,
             "clearance: must be nonnegative")

    mix = data["shape_mix"]
    _require(len(mix) > 0, "shape_mix: no families configured")
    for fam, weight in mix.items():
        _require(fam in FAMILIES, f"shape_mix.{fam}: unknown shape family")
        _require(isinstance(weight, (int, float)) and weight >= 0,
                 f"shape_mix.{fam}: weight must be >= 0")
    _require(any(w > 0 for w in mix.values()),
             "shape_mix: no positive weight")
    for fam, weight in mix.items():
        if weight > 0:
            _require(fam in data["shapes"],
                     f"shape_mix.{fam}: no parameter ranges configured")

    for fam, ranges in data["shapes"].items():
        for key, value in ranges.items():
            if key in ("min_radius_sum", "decimals") or value is None:
                continue
            _require(_is_interval(value) and value[0] <= value[1],
                     f"shapes.{fam}.{key}: expected a nonempty [min, max] interval")

    spp = data["sim_param_policy"]
    _require(_is_interval(spp["re_band"]) and 0 < spp["re_band"][0] <= spp["re_band"][1],
             "sim_param_policy.re_band: expected a positive [min, max] interval")
    _require(0 < spp["magnitude_min"] <= spp["magnitude_max"],
             "sim_param_policy: magnitude_min must be in (0, magnitude_max]")
    _require(not spp["periodic_axes"]["x"],
             "sim_param_policy.periodic_axes.x: streamwise periodicity is never allowed")
    for key in ("periodic_probability", "refinement_probability"):
        _require(0.0 <= spp[key] <= 1.0, f"sim_param_policy.{key}: must be in [0, 1]")
    _require(spp["tau_stability_cap"] > 0.5,
             "sim_param_policy.tau_stability_cap: must exceed 0.5")

    sol = data["solver_policy"]
    _require(0.12 <= sol["cs"] <= 0.18,
             "solver_policy.cs: must lie in [0.12, 0.18]")
    _require(sol["l_char"] > 0, "solver_policy.l_char: must be positive")

    sdf = data["sdf_policy"]
    dx = sdf["dx"]
    _require(isinstance(dx, int) and dx >= 1, "sdf_policy.dx: must be a positive integer")
    ext_x, ext_y, ext_z = BoundingBox(**box).extents
    for name, ext in (("x", ext_x), ("y", ext_y), ("z", ext_z)):
        _require(abs(ext / dx - round(ext / dx)) == 0,
                 f"sdf_policy.dx: {dx} does not divide the domain {name}-extent {ext:g}")
    _require(isinstance(sdf["band_w"], int) and sdf["band_w"] >= 1,
             "sdf_policy.band_w: must be a positive integer")
    _require(len(sdf["aniso"]) == 2 and all(s > 0 for s in sdf["aniso"]),
             "sdf_policy.aniso: expected two positive scale factors")

    res = data["resample_policy"]
    _require(res["kernel"] in ("linear", "gaussian", "shepard", "voronoi",
                               "ellipsoidal_gaussian"),
             "resample_policy.kernel: unknown kernel")
    _require(res["footprint"] in ("n_closest", "radius"),
             "resample_policy.footprint: unknown footprint mode")
    if res["num_neighbours"] is not None:
        _require(isinstance(res["num_neighbours"], int) and res["num_neighbours"] >= 1,
                 "resample_policy.num_neighbours: must be a positive integer")
    if res["radius"] is not None:
        _require(res["radius"] > 0, "resample_policy.radius: must be positive")
    _require(res["sharpness"] > 0, "resample_policy.sharpness: must be positive")
    _require(res["power"] > 0, "resample_policy.power: must be positive")
    _require(len(res["eccentricity"]) == 3 and all(e > 0 for e in res["eccentricity"]),
             "resample_policy.eccentricity: expected three positive ratios")
    _require(len(res["cells"]) == 3
             and all(isinstance(c, int) and c >= 1 for c in res["cells"]),
             "resample_policy.cells: expected three positive integers")

    orc = data["orchestration_policy"]
    _require(isinstance(orc["lanes"], int) and orc["lanes"] >= 1,
             "orchestration_policy.lanes: must be a positive integer")
    _require(orc["backend"] in ("slurm", "local", "dry_run"),
             "orchestration_policy.backend: unknown backend")


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------
def resolve_config(base_file=None, override_list: list[str] | None = None,
                   base_dict: dict | None = None) -> ResolvedConfig:
    """Load, merge, interpolate, and validate the configuration.

    ``base_file`` may be omitted to start from built-in defaults;
    ``base_dict`` supports in-memory configs (tests, embedding).
    Overrides are ``key.path=value`` strings applied last, in order.
    """
    user: dict = {}
    if base_file is not None:
        path = Path(base_file)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
            raise ConfigError(f"{where}: config parse failure: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        user = loaded
    elif base_dict is not None:
        user = copy.deepcopy(base_dict)

    merged = _merge(_DEFAULTS, _normalize_legacy(user))

    for item in override_list or []:
        parts, value = parse_override(item)
        parts, value = _translate_override(parts, value)
        _apply_override(merged, parts, value, ".".join(parts))

    merged = _resolve_interpolations(merged)

    # resolve derived defaults so the frozen snapshot is self-contained
    if merged["clearance"] is None:
        merged["clearance"] = 2.0 * merged["sdf_policy"]["dx"]

    _validate(merged)
    return ResolvedConfig(data=merged)


def canonical_bytes(obj) -> bytes:
    """Canonical serialization: sorted keys, shortest floats, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False).encode("utf-8")


def config_hash(cfg: ResolvedConfig) -> str:
    """SHA-256 hex digest of the canonical resolved-config bytes."""
    return hashlib.sha256(canonical_bytes(cfg.data)).hexdigest()


def write_frozen_config(cfg: ResolvedConfig, path) -> Path:
    """Write a snapshot that resolves back to an identical config."""
    path = Path(path)
    text = yaml.safe_dump(cfg.data, sort_keys=True, default_flow_style=False)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


# ---------------------------------------------------------------------------
# Provenance
# ---------------------------------------------------------------------------
_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")


@dataclass
class ProvenanceRecord:
    """What is needed to reproduce a run: config digest, seed, counters."""

    config_digest: str
    seed: int
    samples_generated: int
    tool_version: str
    timestamp: str
    sobol_index: int | None = None

    def __post_init__(self):
        if not _HEX64_RE.match(self.config_digest):
            raise ConfigError(
                "config_digest must be 64 lowercase hex characters")
        if self.samples_generated < 0:
            raise ConfigError("samples_generated must be nonnegative")

    def to_dict(self) -> dict:
        out = {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "samples_generated": self.samples_generated,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
        }
        if self.sobol_index is not None:
            out["sobol_index"] = self.sobol_index
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ProvenanceRecord":
        return cls(
            config_digest=data["config_digest"],
            seed=data["seed"],
            samples_generated=data["samples_generated"],
            tool_version=data["tool_version"],
            timestamp=data["timestamp"],
            sobol_index=data.get("sobol_index"),
        )


def write_provenance(record: ProvenanceRecord, out_dir,
                     cfg: ResolvedConfig | None = None) -> Path:
    """Emit provenance.json (plus a frozen config copy); atomic replace.

    The accepted-sample counter may only grow across rewrites of the same
    provenance file.
    """
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ArtifactIOError(f"provenance directory does not exist: {out_dir}")
    target = out_dir / "provenance.json"

    if target.exists():
        try:
            previous = json.loads(target.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ArtifactIOError(f"cannot reread {target}: {exc}") from exc
        if previous.get("samples_generated", 0) > record.samples_generated:
            raise ConfigError(
                "counter regression: samples_generated "
                f"{record.samples_generated} < previous "
                f"{previous['samples_generated']}")

    text = json.dumps(record.to_dict(), sort_keys=True, indent=2) + "\n"
    tmp = target.with_suffix(".json.tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(target)
        if cfg is not None:
            write_frozen_config(cfg, out_dir / "config_frozen.yaml")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write provenance at {target}: {exc}") from exc
    return target


def read_provenance(out_dir) -> ProvenanceRecord:
    path = Path(out_dir) / "provenance.json"
    if not path.exists():
        raise ArtifactIOError(f"provenance file not found: {path}")
    return ProvenanceRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))
