"""Multi-cell geometry and uplink channel.

RAPs are arbitrary points in a rectangular region; cells are the Voronoi
tessellation clipped to the region (computed by mirroring the points across
the four edges, which makes every clipped cell finite and exact).  Users
form a planar PPP: per subframe, cell i holds a transmitting UE with
probability 1 - exp(-lambda * A_i) (complement of the void probability),
placed uniformly in the cell.  The uplink uses fractional power control
P = P0 * d^(s*alpha), and the SINR at a cloud RAP follows from unit-mean
exponential (Rayleigh) block fading with the noise folded into the
unit-distance SNR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Voronoi, cKDTree


class LayoutError(ValueError):
    """Raised for invalid RAP layouts or layout files."""


@dataclass(frozen=True)
class ChannelParams:
    """Propagation, power-control and load parameters.

    Powers are normalized so the reference power over noise,
    ``snr_ref_db``, is the single free SNR parameter (SNR at 1 km).
    """

    alpha: float = 3.7
    s: float = 0.1
    snr_ref_db: float = 20.0
    ue_density_per_km2: float = 0.1
    min_ue_rap_km: float = 1e-3
    max_interference_km: float = None

    def __post_init__(self):
        if not self.alpha > 2:
            raise ValueError("path-loss exponent must exceed 2")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("compensation factor s must lie in [0, 1]")
        if self.ue_density_per_km2 < 0:
            raise ValueError("UE density must be nonnegative")

    @property
    def snr_ref_linear(self):
        return 10.0 ** (self.snr_ref_db / 10.0)


@dataclass(frozen=True)
class NetworkLayout:
    rap_xy: np.ndarray                 # (n, 2) km
    region: tuple                      # (xmin, ymin, xmax, ymax) km
    cell_vertices: tuple               # per-RAP CCW polygon arrays
    areas_km2: np.ndarray              # (n,)
    cloud_group: tuple                 # sorted RAP indices
    kdtree: cKDTree = field(repr=False, compare=False, default=None)

    @property
    def n_total(self):
        return len(self.rap_xy)

    @property
    def n_cloud(self):
        return len(self.cloud_group)


@dataclass(frozen=True)
class SubframeDrop:
    """One network trial: who transmits, from where, through what fading."""

    active: np.ndarray        # (n_total,) bool
    active_idx: np.ndarray    # indices of active cells
    ue_xy: np.ndarray         # (n_active, 2)
    serve_dist_km: np.ndarray  # (n_active,) UE to own RAP
    fading: np.ndarray        # (n_active, n_cloud) unit-mean exponential
    tx_powers: np.ndarray     # (n_active,) P0-normalized d^(s*alpha)


def shoelace_area(vertices):
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def build_layout(rap_xy, region, cloud_group):
    """Voronoi tessellation of the region around the given RAPs.

    Mirrors the points across all four region edges so every original
    point's Voronoi cell is finite and exactly equals the unbounded cell
    clipped to the rectangle.
    """
    pts = np.asarray(rap_xy, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise LayoutError("need at least 2 RAP positions of shape (n, 2)")
    xmin, ymin, xmax, ymax = (float(v) for v in region)
    if not (xmax > xmin and ymax > ymin):
        raise LayoutError("region must have positive extent")
    inside = (
        (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax)
        & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
    )
    if not inside.all():
        raise LayoutError(f"RAP {int(np.flatnonzero(~inside)[0])} lies outside the region")
    # duplicate detection
    scaled = np.round(pts / 1e-9).astype(np.int64)
    if len(np.unique(scaled, axis=0)) != len(pts):
        raise LayoutError("duplicate RAP positions")
    cloud = tuple(sorted(int(i) for i in cloud_group))
    if len(set(cloud)) != len(cloud):
        raise ValueError("cloud_group contains repeated indices")
    if cloud and (cloud[0] < 0 or cloud[-1] >= len(pts)):
        raise ValueError("cloud_group index out of range")

    mirrored = [pts]
    for axis, bound in ((0, xmin), (0, xmax), (1, ymin), (1, ymax)):
        m = pts.copy()
        m[:, axis] = 2.0 * bound - m[:, axis]
        mirrored.append(m)
    vor = Voronoi(np.vstack(mirrored))
    polys = []
    areas = np.empty(len(pts))
    for i in range(len(pts)):
        verts_idx = vor.regions[vor.point_region[i]]
        if -1 in verts_idx or len(verts_idx) < 3:
            raise LayoutError(f"RAP {i}: unbounded Voronoi cell after mirroring")
        verts = vor.vertices[verts_idx]
        centroid = verts.mean(axis=0)
        order = np.argsort(np.arctan2(verts[:, 1] - centroid[1], verts[:, 0] - centroid[0]))
        verts = verts[order]
        polys.append(verts)
        areas[i] = shoelace_area(verts)
    return NetworkLayout(
        rap_xy=pts,
        region=(xmin, ymin, xmax, ymax),
        cell_vertices=tuple(polys),
        areas_km2=areas,
        cloud_group=cloud,
        kdtree=cKDTree(pts),
    )


def synthesize_layout(rng, n_total=129, region=(0.0, 0.0, 20.0, 20.0),
                      min_sep_km=1.3, n_cloud=8, max_attempts=400000):
    """Hard-core (minimum-separation) RAP layout; cloud group = cells
    nearest the region centroid."""
    xmin, ymin, xmax, ymax = region
    pts = []
    attempts = 0
    while len(pts) < n_total:
        attempts += 1
        if attempts > max_attempts:
            raise LayoutError(
                f"could not place {n_total} RAPs with separation {min_sep_km} km"
            )
        cand = np.array([
            xmin + rng.random() * (xmax - xmin),
            ymin + rng.random() * (ymax - ymin),
        ])
        if all(np.hypot(*(cand - p)) >= min_sep_km for p in pts):
            pts.append(cand)
    pts = np.array(pts)
    centroid = np.array([(xmin + xmax) / 2.0, (ymin + ymax) / 2.0])
    dist = np.hypot(pts[:, 0] - centroid[0], pts[:, 1] - centroid[1])
    cloud = tuple(sorted(int(i) for i in np.argsort(dist)[:n_cloud]))
    return build_layout(pts, region, cloud)


def activation_probabilities(layout, ue_density_per_km2):
    """Per-cell probability that some UE transmits: 1 - exp(-lambda A_i)."""
    return 1.0 - np.exp(-ue_density_per_km2 * layout.areas_km2)


def _sample_positions(layout, cells, rng, min_dist_km, batch=8, max_rounds=10000):
    """Uniform point in each listed cell via bounding-box rejection.

    Candidates are accepted when their nearest RAP is the cell's own RAP and
    they clear the minimum UE-RAP separation.
    """
    out = np.empty((len(cells), 2))
    pending = list(range(len(cells)))
    rounds = 0
    while pending:
        rounds += 1
        if rounds > max_rounds:
            raise RuntimeError("position rejection sampling failed to converge")
        idx = np.array(pending)
        cell_ids = np.array([cells[i] for i in pending])
        cand = np.empty((len(idx), batch, 2))
        for row, c in enumerate(cell_ids):
            verts = layout.cell_vertices[c]
            lo = verts.min(axis=0)
            hi = verts.max(axis=0)
            cand[row] = lo + rng.random((batch, 2)) * (hi - lo)
        flat = cand.reshape(-1, 2)
        dist, nearest = layout.kdtree.query(flat)
        ok = (nearest.reshape(len(idx), batch) == cell_ids[:, None]) & (
            dist.reshape(len(idx), batch) >= min_dist_km
        )
        still = []
        for row, i in enumerate(pending):
            hits = np.flatnonzero(ok[row])
            if len(hits):
                out[i] = cand[row, hits[0]]
            else:
                still.append(i)
        pending = still
    return out


def draw_subframe(layout, params, rng):
    """Draw one subframe: activations, UE positions, fading, TX powers."""
    p_active = activation_probabilities(layout, params.ue_density_per_km2)
    active = rng.random(layout.n_total) < p_active
    active_idx = np.flatnonzero(active)
    if len(active_idx):
        ue_xy = _sample_positions(layout, active_idx, rng, params.min_ue_rap_km)
        serve = layout.rap_xy[active_idx]
        serve_dist = np.hypot(ue_xy[:, 0] - serve[:, 0], ue_xy[:, 1] - serve[:, 1])
        fading = rng.standard_exponential((len(active_idx), layout.n_cloud))
        tx_powers = serve_dist ** (params.s * params.alpha)
    else:
        ue_xy = np.empty((0, 2))
        serve_dist = np.empty(0)
        fading = np.empty((0, layout.n_cloud))
        tx_powers = np.empty(0)
    return SubframeDrop(
        active=active,
        active_idx=active_idx,
        ue_xy=ue_xy,
        serve_dist_km=serve_dist,
        fading=fading,
        tx_powers=tx_powers,
    )


def compute_sinr(drop, layout, params, rap_index):
    """Linear uplink SINR at cloud RAP ``rap_index`` for its own UE.

    The interference sum runs over every active UE in the layout (optionally
    restricted to ``params.max_interference_km``), each transmitting with
    fractional power control relative to its own serving RAP.
    """
    if rap_index not in layout.cloud_group:
        raise ValueError(f"RAP {rap_index} is not in the cloud group")
    if not drop.active[rap_index]:
        raise ValueError(f"cell {rap_index} has no uplink TB this subframe")
    col = layout.cloud_group.index(rap_index)
    row = int(np.flatnonzero(drop.active_idx == rap_index)[0])
    alpha = params.alpha
    s = params.s
    d_serve = drop.serve_dist_km[row]
    signal = drop.fading[row, col] * d_serve ** (alpha * (s - 1.0))
    noise = 1.0 / params.snr_ref_linear
    rap = layout.rap_xy[rap_index]
    interference = 0.0
    for other_row, i in enumerate(drop.active_idx):
        if i == rap_index:
            continue
        cross = math.hypot(drop.ue_xy[other_row, 0] - rap[0],
                           drop.ue_xy[other_row, 1] - rap[1])
        if params.max_interference_km is not None and cross > params.max_interference_km:
            continue
        interference += (
            drop.fading[other_row, col]
            * cross ** (-alpha)
            * drop.tx_powers[other_row]
        )
    return signal / (noise + interference)


def cloud_sinrs(drop, layout, params):
    """Vectorized SINR for every active cloud cell.

    Returns ``(rap_indices, sinr_linear)`` where both are aligned arrays for
    the active cloud cells, ordered by RAP index.
    """
    cloud = np.array(layout.cloud_group)
    mask = drop.active[cloud]
    targets = cloud[mask]
    if not len(targets):
        return targets, np.empty(0)
    cols = np.flatnonzero(mask)
    rows = np.searchsorted(drop.active_idx, targets)
    alpha = params.alpha
    s = params.s
    raps = layout.rap_xy[targets]                       # (k, 2)
    diff = raps[:, None, :] - drop.ue_xy[None, :, :]    # (k, n_active, 2)
    cross = np.hypot(diff[..., 0], diff[..., 1])        # (k, n_active)
    g = drop.fading[:, cols].T                          # (k, n_active)
    with np.errstate(divide="ignore"):
        terms = g * cross ** (-alpha) * drop.tx_powers[None, :]
    if params.max_interference_km is not None:
        terms = np.where(cross <= params.max_interference_km, terms, 0.0)
    own = np.zeros_like(terms, dtype=bool)
    own[np.arange(len(targets)), rows] = True
    interference = np.where(own, 0.0, terms).sum(axis=1)
    d_serve = drop.serve_dist_km[rows]
    signal = drop.fading[rows, cols] * d_serve ** (alpha * (s - 1.0))
    return targets, signal / (1.0 / params.snr_ref_linear + interference)


def save_layout_csv(layout, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x_km", "y_km", "in_cloud_group"])
        cloud = set(layout.cloud_group)
        for i, (x, y) in enumerate(layout.rap_xy):
            writer.writerow([i, repr(float(x)), repr(float(y)), int(i in cloud)])


def load_layout_csv(path, region):
    """Read a layout CSV (columns id,x_km,y_km,in_cloud_group)."""
    xs = []
    cloud = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"id", "x_km", "y_km", "in_cloud_group"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise LayoutError(
                f"layout CSV must have header id,x_km,y_km,in_cloud_group, got {reader.fieldnames}"
            )
        for lineno, rec in enumerate(reader, start=2):
            try:
                i = int(rec["id"])
                x = float(rec["x_km"])
                y = float(rec["y_km"])
                flag = int(rec["in_cloud_group"])
            except (TypeError, ValueError) as exc:
                raise LayoutError(f"layout CSV row {lineno}: {exc}") from exc
            if i != len(xs):
                raise LayoutError(f"layout CSV row {lineno}: ids must be 0,1,2,...")
            if flag not in (0, 1):
                raise LayoutError(f"layout CSV row {lineno}: in_cloud_group must be 0 or 1")
            xs.append((x, y))
            if flag:
                cloud.append(i)
    if len(xs) < 2:
        raise LayoutError("layout CSV must list at least 2 RAPs")
    return build_layout(np.array(xs), region, cloud)
