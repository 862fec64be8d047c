"""Field averaging, stationarity gating, flux/divergence/eddy-viscosity
metrics, and dataset coverage reports.

Gate thresholds default to eps_u <= 1e-3 and delta_phi <= 1e-2; both are
configuration knobs, not physics constants.  Divergence and strain-rate
operators use second-order central differences, falling back to one-sided
stencils next to solid voxels and domain faces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError, FieldError
from .geometry.export import read_scene_yaml

DEFAULT_EPS_U = 1e-3
DEFAULT_DELTA_PHI = 1e-2
_DELTA = 1e-12


# ---------------------------------------------------------------------------
# Averaging
# ---------------------------------------------------------------------------
class AveragingAccumulator:
    """Compensated online mean of fields; running or batched windows.

    Batched mode resets the accumulator every ``window`` samples and keeps
    the completed window means in order.
    """

    def __init__(self, mode: str = "running", window: int | None = None):
        if mode not in ("running", "batched"):
            raise FieldError(f"unknown averaging mode {mode!r}")
        if mode == "batched" and (window is None or window < 1):
            raise FieldError("batched averaging needs a positive window")
        self.mode = mode
        self.window = window
        self.count = 0
        self._sum = None
        self._comp = None
        self.window_means: list[np.ndarray] = []

    def add(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if self._sum is None:
            self._sum = np.zeros_like(values)
            self._comp = np.zeros_like(values)
        elif values.shape != self._sum.shape:
            raise FieldError(
                f"field shape {values.shape} does not match accumulator "
                f"{self._sum.shape}")
        # Kahan step
        y = values - self._comp
        t = self._sum + y
        self._comp = (t - self._sum) - y
        self._sum = t
        self.count += 1
        if self.mode == "batched" and self.count == self.window:
            self.window_means.append(self.mean())
            self.count = 0
            self._sum = np.zeros_like(self._sum)
            self._comp = np.zeros_like(self._comp)

    def mean(self) -> np.ndarray:
        if self._sum is None or self.count == 0:
            raise FieldError("accumulator is empty")
        return self._sum / self.count


def avg_diff_log(means: list[np.ndarray]) -> list[list[float]]:
    """L2 norms of successive mean differences, one row per step, one
    column per component (scalar fields give single-column rows)."""
    if len(means) < 2:
        raise FieldError("need at least two means to difference")
    rows = []
    for prev, cur in zip(means, means[1:]):
        prev = np.asarray(prev, dtype=np.float64)
        cur = np.asarray(cur, dtype=np.float64)
        if prev.shape != cur.shape:
            raise FieldError("mean shapes differ along the sequence")
        if cur.ndim == 4:  # (C, nx, ny, nz)
            rows.append([float(np.linalg.norm((cur - prev)[c].ravel()))
                         for c in range(cur.shape[0])])
        else:
            rows.append([float(np.linalg.norm((cur - prev).ravel()))])
    return rows


# ---------------------------------------------------------------------------
# Stationarity and balance metrics
# ---------------------------------------------------------------------------
def stationarity_eps(mean_k: np.ndarray, mean_km1: np.ndarray,
                     delta: float = _DELTA) -> float:
    """Relative L2 change between successive window means."""
    mean_k = np.asarray(mean_k, dtype=np.float64)
    mean_km1 = np.asarray(mean_km1, dtype=np.float64)
    if mean_k.shape != mean_km1.shape:
        raise FieldError(
            f"grid mismatch: {mean_k.shape} vs {mean_km1.shape}")
    if delta <= 0:
        raise FieldError("stationarity delta must be positive")
    num = float(np.linalg.norm((mean_k - mean_km1).ravel()))
    den = float(np.linalg.norm(mean_k.ravel())) + delta
    return num / den


def _masked_derivative(f: np.ndarray, fluid: np.ndarray, axis: int, h: float
                       ) -> tuple[np.ndarray, np.ndarray]:
    """d f / d axis on fluid voxels: central where both neighbors are fluid,
    one-sided toward the available neighbor otherwise.  Returns (derivative,
    valid-stencil mask)."""
    fwd_ok = np.zeros_like(fluid)
    bwd_ok = np.zeros_like(fluid)
    sl_all = [slice(None)] * 3
    head, tail = list(sl_all), list(sl_all)
    head[axis], tail[axis] = slice(None, -1), slice(1, None)
    head, tail = tuple(head), tuple(tail)

    fwd_ok[head] = fluid[tail]
    bwd_ok[tail] = fluid[head]

    f_fwd = np.zeros_like(f)
    f_bwd = np.zeros_like(f)
    f_fwd[head] = f[tail]
    f_bwd[tail] = f[head]

    deriv = np.zeros_like(f)
    central = fwd_ok & bwd_ok
    fwd_only = fwd_ok & ~bwd_ok
    bwd_only = bwd_ok & ~fwd_ok
    deriv[central] = (f_fwd[central] - f_bwd[central]) / (2.0 * h)
    deriv[fwd_only] = (f_fwd[fwd_only] - f[fwd_only]) / h
    deriv[bwd_only] = (f[bwd_only] - f_bwd[bwd_only]) / h
    return deriv, (central | fwd_only | bwd_only) & fluid


def divergence_metrics(u: np.ndarray, mask: np.ndarray | None, h: float
                       ) -> tuple[float, float]:
    """(L2, Linf) norms of the discrete divergence over the fluid mask."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 4 or u.shape[0] != 3:
        raise FieldError("divergence needs a (3, nx, ny, nz) velocity field")
    dims = u.shape[1:]
    if min(dims) < 3:
        raise FieldError(f"grid {dims} too small for the divergence stencil")
    fluid = (np.ones(dims, dtype=bool) if mask is None
             else np.asarray(mask, dtype=bool))
    if not fluid.any():
        return 0.0, 0.0

    div = np.zeros(dims)
    valid = np.ones(dims, dtype=bool)
    for axis in range(3):
        deriv, ok = _masked_derivative(u[axis], fluid, axis, h)
        div += deriv
        valid &= ok
    sel = div[valid & fluid]
    if sel.size == 0:
        return 0.0, 0.0
    return float(np.linalg.norm(sel)), float(np.abs(sel).max())


def flux_balance(u: np.ndarray, mask: np.ndarray | None, sample_area: float,
                 inlet_index: int = 0, outlet_index: int = -1) -> float:
    """Relative imbalance of streamwise flux between two x-planes."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 4 or u.shape[0] != 3:
        raise FieldError("flux balance needs a (3, nx, ny, nz) velocity field")
    dims = u.shape[1:]
    fluid = (np.ones(dims, dtype=bool) if mask is None
             else np.asarray(mask, dtype=bool))
    phi_in = float((u[0, inlet_index] * fluid[inlet_index]).sum() * sample_area)
    phi_out = float((u[0, outlet_index] * fluid[outlet_index]).sum() * sample_area)
    if phi_in <= 0:
        raise FieldError(f"no inflow: inlet-plane flux {phi_in} <= 0")
    return abs(phi_in - phi_out) / phi_in


def smagorinsky_nut(u: np.ndarray, cs: float, delta: float, h: float
                    ) -> np.ndarray:
    """Eddy viscosity (cs*delta)^2 |S| with |S| = sqrt(2 sum S_ij S_ij)."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 4 or u.shape[0] != 3:
        raise FieldError("strain rate needs a (3, nx, ny, nz) velocity field")
    if min(u.shape[1:]) < 2:
        raise FieldError("grid too small for gradients")
    grads = [np.gradient(u[i], h, edge_order=1) for i in range(3)]
    s_sq = np.zeros(u.shape[1:])
    for i in range(3):
        for j in range(3):
            s_ij = 0.5 * (grads[i][j] + grads[j][i])
            s_sq += s_ij ** 2
    return (cs * delta) ** 2 * np.sqrt(2.0 * s_sq)


def effective_viscosity(nu0: float, nut: np.ndarray) -> np.ndarray:
    return nu0 + np.asarray(nut)


@dataclass
class StationarityReport:
    eps_u: float
    eps2: float
    eps_inf: float
    delta_phi: float
    window_id: int = 0
    thresholds: dict = field(default_factory=lambda: {
        "eps_u": DEFAULT_EPS_U, "delta_phi": DEFAULT_DELTA_PHI})

    @property
    def passed(self) -> bool:
        return (self.eps_u <= self.thresholds["eps_u"]
                and self.delta_phi <= self.thresholds["delta_phi"])

    def to_dict(self) -> dict:
        return {
            "eps_u": self.eps_u, "eps2": self.eps2, "eps_inf": self.eps_inf,
            "delta_phi": self.delta_phi, "window_id": self.window_id,
            "thresholds": dict(self.thresholds), "passed": self.passed,
        }


def stationarity_gate(mean_k: np.ndarray, mean_km1: np.ndarray,
                      mask: np.ndarray | None, h: float, sample_area: float,
                      eps_u_max: float = DEFAULT_EPS_U,
                      delta_phi_max: float = DEFAULT_DELTA_PHI,
                      window_id: int = 0) -> StationarityReport:
    """Combined gate on successive means: relative L2 change, divergence
    norms, and inlet/outlet flux balance of the newest mean."""
    eps_u = stationarity_eps(mean_k, mean_km1)
    eps2, eps_inf = divergence_metrics(mean_k, mask, h)
    delta_phi = flux_balance(mean_k, mask, sample_area)
    return StationarityReport(
        eps_u=eps_u, eps2=eps2, eps_inf=eps_inf, delta_phi=delta_phi,
        window_id=window_id,
        thresholds={"eps_u": eps_u_max, "delta_phi": delta_phi_max})


# ---------------------------------------------------------------------------
# Coverage reports
# ---------------------------------------------------------------------------
_N_BINS = 32


def _binomial_ci(count: int, total: int, z: float = 1.959963984540054
                 ) -> tuple[float, float]:
    """Normal-approximation 95% interval for a proportion."""
    if total == 0:
        return 0.0, 0.0
    p = count / total
    half = z * math.sqrt(max(p * (1.0 - p), 0.0) / total)
    return max(0.0, p - half), min(1.0, p + half)


def _write_csv(path: Path, policy: str, header: list[str], rows: list[list]):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"# {policy}"])
        writer.writerow(header)
        writer.writerows(rows)


def _hist_rows(values: np.ndarray, lo: float, hi: float, label: str
               ) -> list[list]:
    counts, edges = np.histogram(values, bins=_N_BINS, range=(lo, hi))
    return [[label, repr(float(edges[i])), repr(float(edges[i + 1])),
             int(counts[i])] for i in range(len(counts))]


def coverage_report(scene_dir, out_dir, roi_x=(146.0, 1800.0),
                    cross_range=(0.0, 512.0),
                    re_band=(100.0, 15000.0)) -> dict:
    """Parse every scene sidecar under ``scene_dir`` (sorted) and emit the
    coverage CSV tables.  Unparseable sidecars are skipped and counted."""
    scene_dir = Path(scene_dir)
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ArtifactIOError(f"report output directory missing: {out_dir}")
    aux = {"config_frozen", "provenance", "generator_state"}
    paths = [p for p in sorted(scene_dir.glob("*.yaml")) if p.stem not in aux]
    if not paths:
        raise ArtifactIOError(f"no scene sidecars under {scene_dir}")

    families: list[str] = []
    centers: list[tuple[float, float, float]] = []
    inlets: list[tuple[float, float, float, float]] = []
    res: list[float] = []
    re_by_family: dict[str, list[float]] = {}
    skipped = 0

    for path in paths:
        try:
            doc = read_scene_yaml(path)
            sim = doc["simulation_parameters"]
            scene_re = float(sim["Re"])
            inlets.append((float(sim["inlet_velocity_x"]),
                           float(sim["inlet_velocity_y"]),
                           float(sim["inlet_velocity_z"]),
                           float(sim["vector_magnitude"])))
            res.append(scene_re)
            for geom in doc["geometries"]:
                families.append(str(geom["type"]))
                centers.append((float(geom["pos_x"]), float(geom["pos_y"]),
                                float(geom["pos_z"])))
                re_by_family.setdefault(str(geom["type"]), []).append(scene_re)
        except (KeyError, TypeError, ValueError, ArtifactIOError):
            skipped += 1
            continue

    if not families:
        raise ArtifactIOError(f"no parseable scene sidecars under {scene_dir}")

    total = len(families)
    fam_names = sorted(set(families))
    rows = []
    for name in fam_names:
        count = families.count(name)
        lo, hi = _binomial_ci(count, total)
        rows.append([name, count, repr(count / total), repr(lo), repr(hi)])
    _write_csv(out_dir / "shape_freq.csv",
               "accepted objects; 95% normal-approximation binomial CI",
               ["family", "count", "proportion", "ci_low", "ci_high"], rows)

    centers_arr = np.asarray(centers)
    rows = (_hist_rows(centers_arr[:, 0], roi_x[0], roi_x[1], "x")
            + _hist_rows(centers_arr[:, 1], cross_range[0], cross_range[1], "y")
            + _hist_rows(centers_arr[:, 2], cross_range[0], cross_range[1], "z"))
    _write_csv(out_dir / "placement_hist.csv",
               f"{_N_BINS} uniform bins; x over {list(roi_x)}, "
               f"y/z over {list(cross_range)}",
               ["axis", "bin_lo", "bin_hi", "count"], rows)

    inlet_arr = np.asarray(inlets)
    mag_hi = float(inlet_arr[:, 3].max())
    rows = (_hist_rows(inlet_arr[:, 0], 0.0, mag_hi, "u_x")
            + _hist_rows(inlet_arr[:, 1], -mag_hi, mag_hi, "u_y")
            + _hist_rows(inlet_arr[:, 2], -mag_hi, mag_hi, "u_z")
            + _hist_rows(inlet_arr[:, 3], 0.0, mag_hi, "magnitude"))
    _write_csv(out_dir / "inlet_hist.csv",
               f"{_N_BINS} uniform bins; u_x over [0, max|u|], lateral over "
               "[-max|u|, max|u|]",
               ["component", "bin_lo", "bin_hi", "count"], rows)

    _write_csv(out_dir / "re_hist.csv",
               f"{_N_BINS} uniform bins over re_band {list(re_band)}",
               ["component", "bin_lo", "bin_hi", "count"],
               _hist_rows(np.asarray(res), re_band[0], re_band[1], "Re"))

    rows = []
    for name in fam_names:
        vals = np.asarray(re_by_family[name])
        rows.append([name, len(vals), repr(float(np.median(vals))),
                     repr(float(np.percentile(vals, 25))),
                     repr(float(np.percentile(vals, 75)))])
    _write_csv(out_dir / "re_by_family.csv",
               "per-family Reynolds summaries (median and quartiles)",
               ["family", "count", "median", "q1", "q3"], rows)

    return {
        "scenes": len(res), "objects": total, "skipped": skipped,
        "families": {name: families.count(name) for name in fam_names},
    }
