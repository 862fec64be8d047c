"""Campaign orchestration: materialize per-case run capsules, patch solver
parameter templates, and submit K dependency-chained lanes.

Every case directory is named by a stable content hash of its inputs
(STL bytes, YAML bytes, config digest) and carries everything needed to
rerun or audit it: geometry, metadata with a provenance trailer, the
patched parameter file, a job script, and a manifest.  Re-materializing
the same inputs is a no-op; completed cases are never resubmitted unless
forced.

Backends: ``slurm`` shells the configured submit command and chains lanes
with after-success dependencies; ``local`` executes lanes concurrently
with strict within-lane ordering and failure isolation; ``dry_run`` emits
the full submission sequence without side effects.
"""

from __future__ import annotations

import hashlib
import queue
import re
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ArtifactIOError, OrchestrationError
from .fields import GridSpec, export_npy, load_npy, write_field_sidecar
from .geometry.export import read_scene_yaml

_PLACEHOLDER_RE = re.compile(r"@([A-Za-z_][A-Za-z0-9_]*)@")
_BOUND_RE = re.compile(r"^#BOUND\s+(\S+)\s+(\S+)\s+(\S+)\s*$", re.MULTILINE)
_SBATCH_RE = re.compile(r"Submitted batch job (\d+)")

REQUIRED_PLACEHOLDERS = (
    "omega", "inlet_velocity_x", "inlet_velocity_y", "inlet_velocity_z",
    "periodicity_x", "periodicity_y", "periodicity_z", "timesteps",
)

STANDARD_EXECUTABLE = "LBComplexGeometryCGSmagorinsky"
STANDARD_TEMPLATE = "D3Q27_cumulant_test_stability_1.prm"
REFINED_EXECUTABLE = "ComplexGeometry_withRefinement"
REFINED_TEMPLATE = "D3Q27_cumulant_test_stability_cube_100_1.conf"

_PACKAGED_TEMPLATES = Path(__file__).parent / "templates"


def select_executable(refinement_parameter: int) -> tuple[str, str]:
    """Map the refinement flag to the (executable, parameter template) pair."""
    if refinement_parameter == 0:
        return STANDARD_EXECUTABLE, STANDARD_TEMPLATE
    if refinement_parameter == 1:
        return REFINED_EXECUTABLE, REFINED_TEMPLATE
    raise OrchestrationError(
        f"refinement flag must be 0 or 1, got {refinement_parameter!r}")


# ---------------------------------------------------------------------------
# Template patching
# ---------------------------------------------------------------------------
def _render(value, precision: int = 5) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.{precision}f}"
    return str(value)


def patch_template(template: str, values: dict, precision: int = 5) -> str:
    """Substitute @name@ placeholders; deterministic pure-text output.

    Unknown placeholders and required-but-absent keys both raise.  ``#BOUND
    name lo hi`` lines in the template declare numeric bounds checked on
    substitution.
    """
    found = set(_PLACEHOLDER_RE.findall(template))
    unknown = sorted(found - set(values))
    if unknown:
        raise OrchestrationError(
            f"template has unknown placeholder(s): {', '.join(unknown)}")
    missing = sorted(k for k in REQUIRED_PLACEHOLDERS
                     if k in values and k not in found)
    if missing:
        raise OrchestrationError(
            f"template missing required placeholder(s): {', '.join(missing)}")

    for name, lo, hi in _BOUND_RE.findall(template):
        if name in values:
            v = float(values[name])
            if not (float(lo) <= v <= float(hi)):
                raise OrchestrationError(
                    f"template bound violated: {name}={v} outside "
                    f"[{lo}, {hi}]")

    return _PLACEHOLDER_RE.sub(
        lambda m: _render(values[m.group(1)], precision), template)


# ---------------------------------------------------------------------------
# Case records and materialization
# ---------------------------------------------------------------------------
@dataclass
class CaseRecord:
    case_id: str
    stl_hash: str
    yaml_hash: str
    config_digest: str
    case_dir: Path
    stem: str
    lane: int = -1
    job_id: str = "unsubmitted"
    status: str = "pending"
    manifest: dict = field(default_factory=dict)


def case_id_for(stl_bytes: bytes, yaml_bytes: bytes, config_digest: str) -> str:
    return hashlib.sha256(
        stl_bytes + yaml_bytes + config_digest.encode("ascii")).hexdigest()


_AUX_STEMS = {"config_frozen", "provenance", "generator_state"}


def discover_pairs(geometry_dir) -> list[tuple[str, Path, Path]]:
    """Paired (stem, yaml, stl) inputs, sorted; an orphan is an error."""
    geometry_dir = Path(geometry_dir)
    yamls = {p.stem: p for p in sorted(geometry_dir.glob("*.yaml"))
             if p.stem not in _AUX_STEMS}
    stls = {p.stem: p for p in sorted(geometry_dir.glob("*.stl"))
            if p.stem not in _AUX_STEMS}
    orphans = sorted(set(yamls) ^ set(stls))
    if orphans:
        raise OrchestrationError(
            f"unpaired geometry inputs under {geometry_dir}: "
            f"{', '.join(orphans)}")
    if not yamls:
        raise OrchestrationError(f"no geometry pairs under {geometry_dir}")
    return [(stem, yamls[stem], stls[stem]) for stem in sorted(yamls)]


def _atomic_write_text(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _write_manifest(case_dir: Path, manifest: dict):
    _atomic_write_text(case_dir / "manifest.yaml",
                       yaml.safe_dump(manifest, sort_keys=True))


def read_manifest(case_dir) -> dict:
    path = Path(case_dir) / "manifest.yaml"
    if not path.exists():
        raise OrchestrationError(f"manifest missing in {case_dir}")
    return yaml.safe_load(path.read_text(encoding="utf-8"))


def materialize_case(yaml_path, stl_path, templates_dir, cfg, out_root,
                     sdf_stem=None, force: bool = False) -> CaseRecord:
    """Create (or reuse) the self-contained run directory for one case."""
    from .config import config_hash

    yaml_path, stl_path = Path(yaml_path), Path(stl_path)
    out_root = Path(out_root)
    for path, kind in ((yaml_path, "metadata"), (stl_path, "geometry")):
        if not path.exists():
            raise OrchestrationError(f"missing {kind} input: {path}")

    stl_bytes = stl_path.read_bytes()
    yaml_bytes = yaml_path.read_bytes()
    digest = config_hash(cfg)
    case_id = case_id_for(stl_bytes, yaml_bytes, digest)
    case_dir = out_root / case_id

    if case_dir.exists():
        stored = case_dir / "geometry.stl"
        if stored.exists() and stored.read_bytes() != stl_bytes:
            raise OrchestrationError(
                f"integrity failure: case {case_id} exists with different "
                "geometry bytes")
        manifest = read_manifest(case_dir)
        if manifest.get("status") == "completed" and not force:
            return _record_from_manifest(case_dir, manifest)
        if manifest.get("status") == "completed" and force:
            stamp = time.strftime("%Y%m%dT%H%M%S")
            archive = case_dir / f"previous_{stamp}"
            archive.mkdir()
            for name in ("velocity.npy", "velocity_avg.npy", "velocity.yaml",
                         "velocity_avg.yaml"):
                src = case_dir / name
                if src.exists():
                    shutil.move(str(src), archive / name)

    case_dir.mkdir(parents=True, exist_ok=True)
    (case_dir / "geometry.stl").write_bytes(stl_bytes)

    scene = read_scene_yaml(yaml_path)
    sim = scene["simulation_parameters"]
    lu = float(sim["LU"])
    dx = int(sim["dx"])
    omega = float(sim.get("omega", 1.0 / (3.0 * lu + 0.5)))
    tau = float(sim.get("tau", 3.0 * lu + 0.5))

    trailer = yaml.safe_dump({"provenance_trailer": {
        "job_identifier": sim.get("job_identifier_", yaml_path.stem),
        "LU": lu,
        "dx": dx,
    }}, sort_keys=True)
    (case_dir / "metadata.yaml").write_bytes(
        yaml_bytes + b"\n" + trailer.encode("utf-8"))

    executable, template_name = select_executable(
        int(sim["refinement_parameter"]))
    templates_dir = Path(templates_dir) if templates_dir else _PACKAGED_TEMPLATES
    template_path = templates_dir / template_name
    if not template_path.exists():
        raise OrchestrationError(f"parameter template not found: {template_path}")

    orch = cfg.orchestration_policy
    sdf_policy = cfg.sdf_policy
    box = cfg.bounding_box
    grid = GridSpec.preset(dx, extents=box.extents,
                           origin=box.mins, aniso=tuple(sdf_policy["aniso"]))

    patch_values = {
        "omega": omega, "tau": tau, "nu0": lu, "re": float(sim["Re"]),
        "timesteps": int(orch["timesteps"]),
        "inlet_velocity_x": float(sim["inlet_velocity_x"]),
        "inlet_velocity_y": float(sim["inlet_velocity_y"]),
        "inlet_velocity_z": float(sim["inlet_velocity_z"]),
        "periodicity_x": int(sim["periodicity_x"]),
        "periodicity_y": int(sim["periodicity_y"]),
        "periodicity_z": int(sim["periodicity_z"]),
        "nx": grid.dims[0], "ny": grid.dims[1], "nz": grid.dims[2],
        "dx": dx,
        "comp_interval": int(orch["comp_interval"]),
        "timesteps_to_average": int(orch["timesteps_to_average"]),
    }
    patched = patch_template(template_path.read_text(encoding="utf-8"),
                             patch_values)
    _atomic_write_text(case_dir / template_name, patched)

    job_template = templates_dir / "job_script.slurm"
    if not job_template.exists():
        job_template = _PACKAGED_TEMPLATES / "job_script.slurm"
    job_values = {
        "ntasks_per_node": int(orch["ntasks_per_node"]),
        "partition": orch["partition"],
        "time_limit": orch["time_limit"],
        "env_setup": "\n".join(orch["env_setup"]),
        "modules": "\n".join(f"module load {m}" for m in orch["modules"]),
        "executable": executable,
        "param_file": template_name,
    }
    _atomic_write_text(case_dir / "job_script.slurm",
                       patch_template(job_template.read_text(encoding="utf-8"),
                                      job_values))

    if sdf_stem is not None:
        sdf_stem = Path(sdf_stem)
        for suffix in (".npy", ".yaml"):
            src = sdf_stem.with_suffix(suffix)
            if not src.exists():
                raise OrchestrationError(f"SDF artifact missing: {src}")
            shutil.copyfile(src, case_dir / f"sdf{suffix}")

    manifest = {
        "case_id": case_id,
        "source": {"yaml": yaml_path.name, "stl": stl_path.name},
        "hashes": {"stl": hashlib.sha256(stl_bytes).hexdigest(),
                   "yaml": hashlib.sha256(yaml_bytes).hexdigest(),
                   "config": digest},
        "grid": grid.to_dict(),
        "units": "lu",
        "sdf_sign": "negative_inside",
        "band_w": int(sdf_policy["band_w"]),
        "bc_policy": {
            "inlet": "velocity", "outlet": "pressure", "walls": "no_slip",
            "periodic": [int(sim["periodicity_x"]), int(sim["periodicity_y"]),
                         int(sim["periodicity_z"])],
        },
        "re_target": float(sim["Re"]),
        "mach": {"inlet": float(sim.get("mach_inlet", 0.0)),
                 "ok_inlet": bool(sim.get("mach_ok_inlet", True)),
                 "ok_global": bool(sim.get("mach_ok_global", True))},
        "relaxation": {"tau": tau, "omega": omega},
        "inlet_profile": "uniform",
        "inlet_velocity": [float(sim["inlet_velocity_x"]),
                           float(sim["inlet_velocity_y"]),
                           float(sim["inlet_velocity_z"])],
        "executable": executable,
        "template": template_name,
        "lane": -1,
        "job_id": "unsubmitted",
        "status": "pending",
    }
    _write_manifest(case_dir, manifest)
    return _record_from_manifest(case_dir, manifest)


def _record_from_manifest(case_dir: Path, manifest: dict) -> CaseRecord:
    return CaseRecord(
        case_id=manifest["case_id"],
        stl_hash=manifest["hashes"]["stl"],
        yaml_hash=manifest["hashes"]["yaml"],
        config_digest=manifest["hashes"]["config"],
        case_dir=Path(case_dir),
        stem=Path(manifest["source"]["yaml"]).stem,
        lane=manifest.get("lane", -1),
        job_id=manifest.get("job_id", "unsubmitted"),
        status=manifest.get("status", "pending"),
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# Lane planning
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LanePlan:
    start: int
    end: int
    lanes: tuple[tuple[int, ...], ...]

    @property
    def dependency_edges(self) -> int:
        return sum(max(0, len(lane) - 1) for lane in self.lanes)


def plan_lanes(start: int, end: int, k: int) -> LanePlan:
    """Contiguous near-equal split of [start, end) into k ordered lanes.

    Earlier lanes take the remainder; empty lanes are allowed (skipped at
    submission).
    """
    if end <= start:
        raise OrchestrationError(f"empty case range [{start}, {end})")
    if k < 1:
        raise OrchestrationError(f"lane count must be >= 1, got {k}")
    n = end - start
    base, extra = divmod(n, k)
    lanes = []
    cursor = start
    for lane in range(k):
        size = base + (1 if lane < extra else 0)
        lanes.append(tuple(range(cursor, cursor + size)))
        cursor += size
    return LanePlan(start=start, end=end, lanes=tuple(lanes))


# ---------------------------------------------------------------------------
# Submission backends
# ---------------------------------------------------------------------------
@dataclass
class SubmitResult:
    job_ids: dict
    submitted: int
    skipped_completed: int
    failed: list
    skipped_after_failure: list
    commands: list = field(default_factory=list)


class _IndexStore:
    """Single-writer dataset index with atomic rewrites."""

    def __init__(self, out_root: Path):
        self.path = Path(out_root) / "index.yaml"
        self.entries: dict = {}
        if self.path.exists():
            self.entries = yaml.safe_load(
                self.path.read_text(encoding="utf-8")) or {}

    def update(self, record: CaseRecord):
        self.entries[record.case_id] = {
            "stem": record.stem, "lane": record.lane,
            "job_id": record.job_id, "status": record.status,
        }
        _atomic_write_text(self.path, yaml.safe_dump(self.entries,
                                                     sort_keys=True))


def _persist(record: CaseRecord, store: _IndexStore):
    record.manifest["lane"] = record.lane
    record.manifest["job_id"] = record.job_id
    record.manifest["status"] = record.status
    _write_manifest(record.case_dir, record.manifest)
    store.update(record)


def submit(records: list[CaseRecord], plan: LanePlan, backend: str,
           out_root, submit_command: str = "sbatch",
           runner=None) -> SubmitResult:
    """Dispatch the planned lanes through the chosen backend.

    Completed cases are skipped (idempotent reruns submit nothing).  In the
    local backend a failure aborts only that lane's successors; ``runner``
    is the per-case callable and defaults to the synthetic solver.
    """
    if backend not in ("slurm", "local", "dry_run"):
        raise OrchestrationError(f"unknown backend {backend!r}")
    out_root = Path(out_root)
    store = _IndexStore(out_root)
    result = SubmitResult(job_ids={}, submitted=0, skipped_completed=0,
                          failed=[], skipped_after_failure=[])

    def lane_records(lane):
        return [records[i - plan.start] for i in lane]

    if backend == "dry_run":
        lines = []
        counter = 0
        for lane in plan.lanes:
            previous = None
            for record in lane_records(lane):
                if record.status == "completed":
                    result.skipped_completed += 1
                    continue
                counter += 1
                job_id = f"dry-{counter}"
                if previous is None:
                    lines.append(
                        f"{submit_command} {record.case_dir / 'job_script.slurm'}")
                else:
                    lines.append(
                        f"{submit_command} --dependency=afterok:{previous} "
                        f"{record.case_dir / 'job_script.slurm'}")
                previous = job_id
                result.job_ids[record.case_id] = job_id
                result.submitted += 1
        result.commands = lines
        _atomic_write_text(out_root / "submission_plan.txt",
                           "\n".join(lines) + ("\n" if lines else ""))
        return result

    if backend == "slurm":
        for lane_no, lane in enumerate(plan.lanes):
            previous = None
            lane_failed = False
            for record in lane_records(lane):
                if record.status == "completed":
                    result.skipped_completed += 1
                    continue
                if lane_failed:
                    result.skipped_after_failure.append(record.case_id)
                    continue
                cmd = [submit_command]
                if previous is not None:
                    cmd.append(f"--dependency=afterok:{previous}")
                cmd.append(str(record.case_dir / "job_script.slurm"))
                try:
                    proc = subprocess.run(cmd, capture_output=True, text=True,
                                          check=False)
                except OSError as exc:
                    raise ArtifactIOError(
                        f"cannot invoke scheduler {submit_command!r}: {exc}"
                    ) from exc
                if proc.returncode != 0:
                    record.status = "failed"
                    _persist(record, store)
                    result.failed.append(record.case_id)
                    lane_failed = True
                    continue
                match = _SBATCH_RE.search(proc.stdout)
                if not match:
                    raise OrchestrationError(
                        "cannot parse scheduler response; raw output: "
                        f"{proc.stdout!r}")
                previous = match.group(1)
                record.lane = lane_no
                record.job_id = previous
                record.status = "submitted"
                _persist(record, store)
                result.job_ids[record.case_id] = previous
                result.submitted += 1
        return result

    # local backend: lanes concurrent, within-lane strictly ordered
    if runner is None:
        runner = synthetic_solver
    events: queue.Queue = queue.Queue()

    def run_lane(lane_no: int, lane):
        failed = False
        for position, record in enumerate(lane_records(lane)):
            if record.status == "completed":
                events.put(("skip_completed", record, None))
                continue
            if failed:
                events.put(("skip_failed", record, None))
                continue
            # job id is a pure function of the plan, not of scheduling
            events.put(("submitted", record, (lane_no, position)))
            try:
                runner(record.case_dir)
            except Exception as exc:  # failure isolates the lane tail
                failed = True
                events.put(("failed", record, str(exc)))
            else:
                events.put(("completed", record, None))
        events.put(("lane_done", None, lane_no))

    threads = [threading.Thread(target=run_lane, args=(i, lane), daemon=True)
               for i, lane in enumerate(plan.lanes)]
    for t in threads:
        t.start()
    done = 0
    counter = 0
    while done < len(plan.lanes):
        kind, record, payload = events.get()
        if kind == "lane_done":
            done += 1
            continue
        if kind == "skip_completed":
            result.skipped_completed += 1
            continue
        if kind == "skip_failed":
            result.skipped_after_failure.append(record.case_id)
            continue
        if kind == "submitted":
            counter += 1
            lane_no, position = payload
            record.lane = lane_no
            record.job_id = f"local-{lane_no}.{position}"
            record.status = "submitted"
            result.job_ids[record.case_id] = record.job_id
            result.submitted += 1
        elif kind == "completed":
            record.status = "completed"
        elif kind == "failed":
            record.status = "failed"
            result.failed.append(record.case_id)
        _persist(record, store)
    for t in threads:
        t.join()
    return result


# ---------------------------------------------------------------------------
# Synthetic solver (desk-scale stand-in)
# ---------------------------------------------------------------------------
def synthetic_solver(case_dir) -> tuple[Path, Path]:
    """Write a uniform-inlet velocity field over the fluid voxels.

    Stand-in for the external solver so orchestration, diagnostics, and
    resampling can be exercised end to end: u equals the inlet velocity
    where the SDF is positive and zero inside solids.  A second "averaged"
    copy feeds the averaging/diagnostic path.
    """
    case_dir = Path(case_dir)
    manifest = read_manifest(case_dir)
    sdf_path = case_dir / "sdf.npy"
    if not sdf_path.exists():
        raise OrchestrationError(f"missing SDF in case {case_dir.name}")
    phi = load_npy(sdf_path)
    fluid = phi > 0
    inlet = np.asarray(manifest["inlet_velocity"], dtype=np.float64)
    u = np.zeros((3,) + phi.shape, dtype=np.float32)
    for c in range(3):
        u[c][fluid] = inlet[c]

    grid = GridSpec.from_dict(manifest["grid"])
    out_u = export_npy(u, case_dir / "velocity.npy")
    write_field_sidecar(case_dir / "velocity.yaml", grid, components=3,
                        kind="instantaneous")
    out_avg = export_npy(u, case_dir / "velocity_avg.npy")
    write_field_sidecar(case_dir / "velocity_avg.yaml", grid, components=3,
                        kind="averaged")
    return out_u, out_avg
