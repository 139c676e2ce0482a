"""Sampling the additive noise field on simulation grids.

A grid fixes a base interval, a dyadic depth n (the truncation height is
|interval| * 2^-n) and an oversampling factor m; the field sample holds the
noise integral over the local cone of every evaluation midpoint, plus the
noise of every dyadic cell's shared-ancestry region.

Two exact samplers cover the model classes:

* Gaussian: the joint law of all point and cell values is a Gaussian vector
  whose covariance is sigma2 times the overlap kernel of the regions, built
  densely and factored once per grid.
* Atomic (compound Poisson): the jump part is a Poisson point process on the
  union of all local cones; each sampled point adds its jump to exactly the
  evaluation points whose cone contains it, which is a contiguous index
  range, so evaluation is a difference-array sweep.

A hybrid path splits a general model into a Gaussian part plus the jumps of
size >= cutoff, with the drift re-normalized so the truncated model is again
exactly mean-one (optionally the dropped small jumps are replaced by a
variance-matched Gaussian).
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from . import cones
from .levy import (AtomicJumps, MomentDomainError, NoiseModel, TabulatedJumps,
                   ZeroJumps, build_model, nu_integral)
from ._rng import make_generator


@dataclass(frozen=True)
class GridSpec:
    """Simulation grid: base interval, dyadic depth, oversampling.

    cell_levels limits how many cell-weight levels are carried (0 disables
    cell values entirely, None carries every level 1..levels).  Carrying all
    levels is the default but inflates the Gaussian Gram matrix; the large
    batch experiments only need point values and set cell_levels = 0.
    """

    interval: Tuple[float, float] = (0.0, 1.0)
    levels: int = 8
    oversample: int = 4
    cell_levels: Optional[int] = None

    def __post_init__(self):
        lo, hi = self.interval
        if not lo < hi:
            raise ValueError("interval must have positive length")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")
        if self.cell_levels is not None and not (
                0 <= self.cell_levels <= self.levels):
            raise ValueError("cell_levels must lie in [0, levels]")

    @property
    def length(self):
        return self.interval[1] - self.interval[0]

    @property
    def eps(self):
        return self.length * 2.0 ** (-self.levels)

    @property
    def n_cells(self):
        return 2 ** self.levels

    @property
    def n_points(self):
        return self.n_cells * self.oversample

    @property
    def spacing(self):
        return self.length / self.n_points

    @property
    def carried_levels(self):
        top = self.levels if self.cell_levels is None else self.cell_levels
        return tuple(range(1, top + 1))

    def eval_points(self):
        lo = self.interval[0]
        k = np.arange(self.n_points)
        return lo + (k + 0.5) * self.spacing

    def cell_edges(self, level):
        lo, hi = self.interval
        return np.linspace(lo, hi, 2 ** level + 1)

    def cell_bounds(self, level):
        e = self.cell_edges(level)
        return np.column_stack([e[:-1], e[1:]])

    def rescaled(self, interval, level_drop=0):
        return replace(self, interval=tuple(interval),
                       levels=self.levels - level_drop,
                       cell_levels=(None if self.cell_levels is None else
                                    max(0, self.cell_levels - level_drop)))


@dataclass
class FieldSample:
    """One draw of the noise field on a grid.

    point_log[k] is the noise of the local cone of evaluation point k;
    cell_log[level][i] the noise of cell i's shared-ancestry region.  Atomic
    samples keep the raw points (x, y, jump) so pathwise identities can be
    re-checked from scratch.
    """

    grid: GridSpec
    kind: str
    point_log: np.ndarray
    cell_log: Dict[int, np.ndarray]
    points_x: Optional[np.ndarray] = None
    points_y: Optional[np.ndarray] = None
    points_jump: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Gaussian sampler
# ---------------------------------------------------------------------------


def _gram_objects(grid):
    """Footprints (lo, hi) and cutoffs of all objects on one grid.

    Objects are the evaluation points (degenerate footprint, truncated at
    eps) followed by the carried cells level by level (full footprint, no
    truncation: their regions reach down to their own length).
    """
    t = grid.eval_points()
    foot_lo = [t]
    foot_hi = [t]
    cut = [np.full(t.size, grid.eps)]
    for lev in grid.carried_levels:
        b = grid.cell_bounds(lev)
        foot_lo.append(b[:, 0])
        foot_hi.append(b[:, 1])
        cut.append(np.zeros(len(b)))
    return (np.concatenate(foot_lo), np.concatenate(foot_hi),
            np.concatenate(cut))


def _overlap_gram(L, foot_lo, foot_hi, cut):
    """Matrix of overlap_kernel over all object pairs, vectorized."""
    hull = np.maximum(foot_hi[:, None], foot_hi[None, :]) - \
        np.minimum(foot_lo[:, None], foot_lo[None, :])
    c = np.maximum(cut[:, None], cut[None, :])
    return _overlap_kernel_arr(L, hull, c)


def _overlap_kernel_arr(L, h, c):
    h = np.asarray(h, float)
    c = np.broadcast_to(np.asarray(c, float), h.shape)
    out = np.zeros(h.shape)
    inside = h < L
    low = inside & (c <= h)
    with np.errstate(divide="ignore"):
        out[low] = np.log(L / h[low])
    mid = inside & (c > h) & (c <= L)
    out[mid] = np.log(L / c[mid]) + 1.0 - h[mid] / c[mid]
    high = inside & (c > L)
    out[high] = (L - h[high]) / c[high]
    return out


def _chol_with_jitter(cov):
    scale = float(np.mean(np.diag(cov))) or 1.0
    for jitter in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
        try:
            return np.linalg.cholesky(
                cov + jitter * scale * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    w = np.linalg.eigvalsh(cov)
    raise np.linalg.LinAlgError(
        f"covariance not positive definite (min eigenvalue {w[0]:.3e} "
        f"of scale {scale:.3e}) even with jitter 1e-8")


class GaussianFieldSampler:
    """Joint exact sampler for the Gaussian part of the noise on a grid."""

    def __init__(self, grid, sigma2):
        if sigma2 <= 0:
            raise ValueError("Gaussian sampler needs sigma2 > 0")
        self.grid = grid
        self.sigma2 = float(sigma2)
        foot_lo, foot_hi, cut = _gram_objects(grid)
        hull_self = foot_hi - foot_lo
        areas = _overlap_kernel_arr(grid.length, hull_self, cut)
        self.mean = -0.5 * sigma2 * areas
        gram = _overlap_gram(grid.length, foot_lo, foot_hi, cut)
        self.chol = _chol_with_jitter(sigma2 * gram)
        self.dim = areas.size

    def draw(self, rng, count=1):
        """(dim, count) matrix of field values, one replica per column."""
        z = rng.standard_normal((self.dim, count))
        return self.chol @ z + self.mean[:, None]

    def draw_columns(self, normals):
        """Map externally drawn standard normals (dim, count) to values."""
        return self.chol @ normals + self.mean[:, None]

    def split(self, values):
        """Slice a stacked value vector into (point_log, cell_log dict)."""
        g = self.grid
        point_log = values[:g.n_points]
        cell_log = {}
        off = g.n_points
        for lev in g.carried_levels:
            cell_log[lev] = values[off:off + 2 ** lev]
            off += 2 ** lev
        return point_log, cell_log

    def sample(self, rng):
        vals = self.draw(rng, 1)[:, 0]
        point_log, cell_log = self.split(vals)
        return FieldSample(self.grid, "gaussian", point_log, cell_log)


def sample_gaussian_field(grid, model, rng):
    """One Gaussian field draw; requires a purely Gaussian model."""
    if not isinstance(model.nu, ZeroJumps):
        raise ValueError("model has jumps; use the atomic or hybrid sampler")
    return GaussianFieldSampler(grid, model.sigma2).sample(rng)


# ---------------------------------------------------------------------------
# atomic (compound Poisson) sampler
# ---------------------------------------------------------------------------


class JumpSampler:
    """Draw jump sizes from a finite-total-mass jump measure."""

    def __init__(self, nu):
        self.nu = nu
        if isinstance(nu, AtomicJumps):
            masses = np.asarray(nu.masses, float)
            self.total = float(masses.sum())
            self.locations = np.asarray(nu.locations, float)
            self.cum = np.cumsum(masses) / self.total
        elif isinstance(nu, TabulatedJumps):
            self.total = nu.total_mass()
            if not math.isfinite(self.total) or self.total <= 0:
                raise ValueError("tabulated measure must have finite positive "
                                 "total mass for Poisson sampling")
            self._build_tabulated(nu)
        else:
            raise TypeError("Poisson sampling needs an atomic or tabulated "
                            "jump measure with finite mass")

    def _build_tabulated(self, nu):
        x = np.asarray(nu.grid_x, float)
        d = np.asarray(nu.grid_density, float)
        bin_mass = 0.5 * (d[:-1] + d[1:]) * np.diff(x)
        left = nu.left_rate and d[0] > 0
        right = nu.right_rate and d[-1] > 0
        left_mass = d[0] / nu.left_rate if left else 0.0
        right_mass = d[-1] / nu.right_rate if right else 0.0
        self._x, self._d = x, d
        self._pieces = np.concatenate([[left_mass], bin_mass, [right_mass]])
        self._cum = np.cumsum(self._pieces) / self._pieces.sum()

    def draw(self, rng, size):
        if isinstance(self.nu, AtomicJumps):
            idx = np.searchsorted(self.cum, rng.random(size))
            return self.locations[idx]
        return self._draw_tabulated(rng, size)

    def _draw_tabulated(self, rng, size):
        nu, x, d = self.nu, self._x, self._d
        piece = np.searchsorted(self._cum, rng.random(size))
        u = rng.random(size)
        out = np.empty(size)
        nb = x.size - 1
        for k in range(nb + 2):
            sel = piece == k
            if not np.any(sel):
                continue
            uu = u[sel]
            if k == 0:
                out[sel] = x[0] + np.log(uu) / nu.left_rate
            elif k == nb + 1:
                out[sel] = x[-1] - np.log(1.0 - uu) / nu.right_rate
            else:
                a, b = x[k - 1], x[k]
                da, db = d[k - 1], d[k]
                if abs(db - da) < 1e-14 * max(da, db, 1.0):
                    out[sel] = a + uu * (b - a)
                else:
                    # invert the linear-density CDF on the bin
                    slope = (db - da) / (b - a)
                    disc = da * da + uu * (db * db - da * da)
                    out[sel] = a + (np.sqrt(disc) - da) / slope
        return out


def _shadow_index_range(x, y, lo, spacing, count):
    """Evaluation-index range [k0, k1) of points inside cone shadows.

    The shadow of a noise point (x, y) on the time axis is [x - y/2,
    x + y/2); evaluation point t_k = lo + (k + 1/2) spacing belongs iff
    k0 <= k < k1 with the half-open convention below.
    """
    k0 = np.ceil((x - 0.5 * y - lo) / spacing - 0.5).astype(np.int64)
    k1 = np.ceil((x + 0.5 * y - lo) / spacing - 0.5).astype(np.int64)
    return np.clip(k0, 0, count), np.clip(k1, 0, count)


def _covered_cell_range(x, y, lo, width, count):
    """Index range [i0, i1) of level cells fully covered by the shadows."""
    i0 = np.ceil((x - lo - 0.5 * y) / width - 1e-12).astype(np.int64)
    i1 = np.floor((x - lo + 0.5 * y) / width + 1e-12).astype(np.int64)
    return np.clip(i0, 0, count), np.clip(i1, 0, count)


class PoissonFieldSampler:
    """Exact sampler for pure-jump models with finite jump-measure mass."""

    def __init__(self, grid, model):
        if model.sigma2 != 0.0:
            raise ValueError("model has a Gaussian part; use the hybrid path")
        self.grid = grid
        self.model = model
        self.jumps = JumpSampler(model.nu)
        self.strips = cones.sampling_domain(grid.interval, grid.eps)
        self.strip_mass = np.array([s.mass() for s in self.strips])
        self.domain_mass = float(self.strip_mass.sum())
        # drift of the pure-jump normalization: Lambda(R) = drift*area + jumps
        self.drift = -nu_integral(model.nu, lambda x: math.exp(x) - 1.0)
        g = grid
        self._point_area = cones.area_local_cone(g.interval, g.eps)
        self._cell_area = {
            lev: math.log(g.length / (g.length * 2.0 ** (-lev)))
            for lev in g.carried_levels}

    def draw_points(self, rng):
        """Poisson point set on the sampling domain: (x, y, jump) arrays."""
        n = rng.poisson(self.jumps.total * self.domain_mass)
        if n == 0:
            empty = np.empty(0)
            return empty, empty, np.empty(0)
        which = np.searchsorted(np.cumsum(self.strip_mass) / self.domain_mass,
                                rng.random(n))
        u = rng.random((n, 3))
        x = np.empty(n)
        y = np.empty(n)
        for i, s in enumerate(self.strips):
            sel = np.nonzero(which == i)[0]
            for j in sel:
                x[j], y[j] = s.sample(u[j, 0], u[j, 1], u[j, 2])
        jump = self.jumps.draw(rng, n)
        return x, y, jump

    def evaluate(self, x, y, jump):
        """Field values (point_log, cell_log) of one point set."""
        g = self.grid
        lo = g.interval[0]
        point_log = np.full(g.n_points, self.drift * self._point_area)
        if x.size:
            k0, k1 = _shadow_index_range(x, y, lo, g.spacing, g.n_points)
            diff = np.zeros(g.n_points + 1)
            np.add.at(diff, k0, jump)
            np.subtract.at(diff, k1, jump)
            point_log += np.cumsum(diff[:-1])
        cell_log = {}
        for lev in g.carried_levels:
            count = 2 ** lev
            vals = np.full(count, self.drift * self._cell_area[lev])
            if x.size:
                width = g.length / count
                i0, i1 = _covered_cell_range(x, y, lo, width, count)
                ok = i0 < i1
                diff = np.zeros(count + 1)
                np.add.at(diff, i0[ok], jump[ok])
                np.subtract.at(diff, i1[ok], jump[ok])
                vals += np.cumsum(diff[:-1])
            cell_log[lev] = vals
        return point_log, cell_log

    def sample(self, rng):
        x, y, jump = self.draw_points(rng)
        point_log, cell_log = self.evaluate(x, y, jump)
        return FieldSample(self.grid, "poisson", point_log, cell_log,
                           points_x=x, points_y=y, points_jump=jump)


def sample_poisson_field(grid, model, rng):
    """One compound-Poisson field draw for a pure-jump model."""
    return PoissonFieldSampler(grid, model).sample(rng)


# ---------------------------------------------------------------------------
# hybrid sampler and model truncation
# ---------------------------------------------------------------------------


def truncated_model(model, cutoff, substitute=False):
    """Drop jumps smaller than cutoff and re-normalize the drift.

    The result is an exactly mean-one model again; with substitute=True the
    removed jumps are replaced by a Gaussian with the same variance.
    """
    if not 0.0 < cutoff <= 1.0:
        raise ValueError("cutoff must lie in (0, 1]")
    nu = model.nu
    if isinstance(nu, ZeroJumps):
        big = ZeroJumps()
        var_small = 0.0
    elif isinstance(nu, AtomicJumps):
        kept = [(x, m) for x, m in zip(nu.locations, nu.masses)
                if abs(x) >= cutoff]
        big = (AtomicJumps(tuple(x for x, _ in kept),
                           tuple(m for _, m in kept))
               if kept else ZeroJumps())
        var_small = sum(m * x * x for x, m in zip(nu.locations, nu.masses)
                        if abs(x) < cutoff)
    elif isinstance(nu, TabulatedJumps):
        var_small = nu.integrate_weighted(
            lambda t: t * t if abs(t) < cutoff else 0.0)
        big = _clip_tabulated(nu, cutoff)
    else:
        raise TypeError(f"unknown jump measure {type(nu).__name__}")
    sigma2 = model.sigma2 + (var_small if substitute else 0.0)
    if sigma2 == 0.0 and isinstance(big, ZeroJumps):
        raise ValueError("truncation removed all randomness; lower the "
                         "cutoff or enable substitution")
    return build_model(sigma2, big)


def _clip_tabulated(nu, cutoff):
    x = np.asarray(nu.grid_x, float)
    d = np.asarray(nu.grid_density, float).copy()
    inside = np.abs(x) < cutoff
    pts = sorted(set(list(x) + [-cutoff, cutoff]))
    pts = [p for p in pts if x[0] <= p <= x[-1]]
    dens = [0.0 if abs(p) < cutoff else float(np.interp(p, x, d))
            for p in pts]
    if np.allclose(dens, 0.0) and nu.left_rate is None and nu.right_rate is None:
        return ZeroJumps()
    return TabulatedJumps(tuple(pts), tuple(dens),
                          left_rate=nu.left_rate, right_rate=nu.right_rate)


class HybridFieldSampler:
    """Gaussian part plus retained jumps, each exactly normalized."""

    def __init__(self, grid, model, cutoff=None, substitute=False):
        if cutoff is None:
            effective = model
        else:
            effective = truncated_model(model, cutoff, substitute)
        self.effective = effective
        self.grid = grid
        self.gauss = (GaussianFieldSampler(grid, effective.sigma2)
                      if effective.sigma2 > 0 else None)
        self.poisson = (
            PoissonFieldSampler(grid, build_model(0.0, effective.nu))
            if not isinstance(effective.nu, ZeroJumps) else None)
        if self.gauss is None and self.poisson is None:
            raise ValueError("nothing left to sample")

    def sample(self, rng):
        g = self.grid
        point_log = np.zeros(g.n_points)
        cell_log = {lev: np.zeros(2 ** lev) for lev in g.carried_levels}
        px = py = pj = None
        kind = []
        if self.gauss is not None:
            f = self.gauss.sample(rng)
            point_log += f.point_log
            for lev in cell_log:
                cell_log[lev] = cell_log[lev] + f.cell_log[lev]
            kind.append("gaussian")
        if self.poisson is not None:
            f = self.poisson.sample(rng)
            point_log += f.point_log
            for lev in cell_log:
                cell_log[lev] = cell_log[lev] + f.cell_log[lev]
            px, py, pj = f.points_x, f.points_y, f.points_jump
            kind.append("poisson")
        return FieldSample(g, "+".join(kind), point_log, cell_log,
                           points_x=px, points_y=py, points_jump=pj)


def field_kind(model):
    """Natural sampler for a model: gaussian, poisson or hybrid."""
    if isinstance(model.nu, ZeroJumps):
        return "gaussian"
    if model.sigma2 == 0.0:
        return "poisson"
    return "hybrid"


def sample_field(grid, model, rng, kind="auto", cutoff=None,
                 substitute=False):
    """Dispatch to the right sampler for the model."""
    if kind == "auto":
        kind = field_kind(model)
    if kind == "gaussian":
        if cutoff is not None:
            raise ValueError("cutoff only applies to jump models")
        return sample_gaussian_field(grid, model, rng)
    if kind == "poisson":
        if cutoff is not None:
            model = truncated_model(model, cutoff, substitute)
        return sample_poisson_field(grid, model, rng)
    if kind == "hybrid":
        return HybridFieldSampler(grid, model, cutoff, substitute).sample(rng)
    raise ValueError(f"unknown sampler kind {kind!r}")
