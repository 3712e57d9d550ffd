"""Calibration functions and macro-state classification, reading outcomes off the PO only."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DensityMatrix, DiagonalOp, GridSpec, StateVector
from .errors import BadArgument, BadPartition, EmptyRegionMass, NoFlashes

MIXED = "mixed"
DOMINANCE = 0.9
DEFAULT_WINDOW = 1.0


@dataclass(frozen=True)
class Region:
    """Half-open box [lower, upper) in single-particle coordinates (no wrap-around)."""
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or any(not a < b for a, b in zip(lo, hi)):
            raise BadArgument(f"empty or malformed region {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def check(self, grid: GridSpec):
        if len(self.lower) != grid.dims:
            raise BadArgument("region dimension does not match the grid")
        if min(self.lower) < 0 or max(self.upper) > grid.box + 1e-12:
            raise BadArgument("region must lie inside the box without wrapping")
        if not np.any(self.site_mask(grid)):
            raise BadArgument("region contains no grid points")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.array(self.lower)) & (x < np.array(self.upper)), axis=-1)

    def site_mask(self, grid: GridSpec) -> np.ndarray:
        """Boolean array over single-particle grid points lying in the region."""
        pts = np.stack(np.indices(grid.site_shape), axis=-1) * grid.spacing
        return self.contains(pts)

    def scaled(self, c) -> "Region":
        return Region(tuple(c * v for v in self.lower), tuple(c * v for v in self.upper))


@dataclass(frozen=True)
class Calibration:
    z0: float = 0.0
    alpha: float = 1.0
    discrete: bool = False
    region: Region | None = None
    window: float = DEFAULT_WINDOW

    def __post_init__(self):
        if self.alpha == 0:
            raise BadArgument("alpha must be non-zero")
        if not self.window > 0:
            raise BadArgument("window must be positive")


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def mean_x1_matter(field, region: Region) -> float:
    grid = field.grid
    mask = region.site_mask(grid)
    m = field.values[mask]
    mass = float(np.sum(m) * grid.cell_volume)
    if mass <= 1e-12:
        raise EmptyRegionMass(f"matter in region is {mass:.3e}")
    x1 = (np.indices(grid.site_shape)[0] * grid.spacing)[mask]
    return float(np.sum(x1 * m) / np.sum(m))


def mean_x1_flashes(flashes, region: Region, t, window=DEFAULT_WINDOW) -> float:
    sel = flashes.window(t, t + window)
    pos = flashes.positions[sel]
    inside = region.contains(pos)
    if not np.any(inside):
        raise NoFlashes(f"no flashes in region during [{t}, {t + window}]")
    return float(np.mean(pos[inside, 0]))


def calibrate(mean_x1, cal: Calibration):
    if not math.isfinite(mean_x1):
        raise BadArgument("calibration input must be finite")
    z = cal.z0 + cal.alpha * mean_x1
    return round_half_away(z) if cal.discrete else z


@dataclass(eq=False)
class MacroPartition:
    """Cells S_j = configurations with every particle's grid point in region j; the rest is MIXED.

    Alternatively built from explicit configuration masks with :meth:`from_masks`.
    """
    grid: GridSpec
    regions: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)

    @classmethod
    def from_regions(cls, grid: GridSpec, regions: dict) -> "MacroPartition":
        regions = {k: (v if isinstance(v, Region) else Region(*v)) for k, v in regions.items()}
        if MIXED in regions:
            raise BadPartition(f"'{MIXED}' is reserved")
        site = {}
        for k, r in regions.items():
            r.check(grid)
            site[k] = r.site_mask(grid)
        labels = list(site)
        for a in range(len(labels)):
            for b in range(a + 1, len(labels)):
                if np.any(site[labels[a]] & site[labels[b]]):
                    raise BadPartition(f"regions {labels[a]!r} and {labels[b]!r} overlap")
        masks = {}
        for k, s in site.items():
            m = np.ones(grid.shape, dtype=bool)
            for i in range(grid.n_particles):
                m = m & _expand_site_mask(s, grid, i)
            masks[k] = m
        rest = ~np.any(np.stack(list(masks.values())), axis=0)
        if np.any(rest):
            masks[MIXED] = rest
        return cls(grid, regions, masks)

    @classmethod
    def from_masks(cls, grid: GridSpec, masks: dict) -> "MacroPartition":
        masks = {k: np.asarray(v, dtype=bool).reshape(grid.shape) for k, v in masks.items()}
        total = np.sum(np.stack(list(masks.values())).astype(int), axis=0)
        if np.any(total > 1):
            raise BadPartition("cells overlap")
        if np.any(total == 0):
            raise BadPartition("cells do not cover the configuration space")
        return cls(grid, {}, masks)

    @property
    def labels(self):
        return list(self.masks)

    def projector(self, label) -> DiagonalOp:
        return DiagonalOp(self.masks[label].astype(float), self.grid)

    def label_of_sites(self, sites) -> str:
        """Macro label of a configuration given as per-particle grid indices (N, d)."""
        sites = np.asarray(sites, dtype=int).reshape(self.grid.n_particles, self.grid.dims)
        for k, m in self.masks.items():
            if m[tuple(sites.ravel())]:
                return k
        return MIXED


def _expand_site_mask(site, grid, i):
    shape = [1] * grid.n_axes
    for ax in grid.particle_axes(i):
        shape[ax] = grid.points_per_dim
    return np.broadcast_to(site.reshape(shape), grid.shape)


def macro_probability(state, partition: MacroPartition, label) -> float:
    """p(S) = tr(rho P(S)), or ||P(S) psi||^2 for a state vector."""
    if not isinstance(state, (StateVector, DensityMatrix)):
        raise BadArgument("expected a StateVector or DensityMatrix")
    if label not in partition.masks:
        return 0.0
    return float(np.sum(state.probabilities()[partition.masks[label]]))


def classify_po(history, partition: MacroPartition, t, window=DEFAULT_WINDOW):
    """Macro label displayed by the primitive ontology of ``history`` at time ``t``."""
    kind = getattr(history, "kind", None)
    grid = partition.grid
    region_labels = list(partition.regions)
    if not region_labels:
        raise BadPartition("classification needs a region-based partition")
    if kind == "particles":
        q = history.path.at(t).positions
        sites = np.rint(q / grid.spacing).astype(int) % grid.points_per_dim
        return partition.label_of_sites(sites)
    if kind == "matter":
        f = history.field_at(t)
        total = f.total_mass
        for k in region_labels:
            if f.mass_in(partition.regions[k].site_mask(grid)) >= DOMINANCE * total:
                return k
        return MIXED
    if kind == "flashes":
        fl = history.flashes
        sel = fl.window(t, t + window)
        n = int(np.count_nonzero(sel))
        if n == 0:
            raise NoFlashes(f"no flashes during [{t}, {t + window}]")
        pos = fl.positions[sel]
        for k in region_labels:
            if np.count_nonzero(partition.regions[k].contains(pos)) >= DOMINANCE * n:
                return k
        return MIXED
    raise BadArgument("classify_po accepts only primitive-ontology histories")
