"""Cascade realizations and their structural operations.

A realization turns one field sample into the measure it induces: leaf-cell
masses, per-level cell weights, and the total mass.  The operations here are
the structural facts the engine exists to verify:

* star decomposition: the measure restricted to a level-k cell factors into
  the cell weight times an independent rescaled copy of the whole cascade;
* refinement: a realization can be extended downward in scale without
  touching the noise already drawn;
* juxtaposition: cascades on adjacent unit intervals driven by one shared
  noise field, giving a stationary dependent sequence of masses;
* exact scaling: the mass of [0, lam] equals in law lam * exp(W) * Z' with
  W the noise of a fixed single region and Z' an independent copy at the
  matched relative truncation.
"""

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import cones
from .levy import (AtomicJumps, NoiseModel, TabulatedJumps, ZeroJumps,
                   build_model, mean_slope, nu_integral)
from .field import (FieldSample, GaussianFieldSampler, GridSpec,
                    HybridFieldSampler, JumpSampler, PoissonFieldSampler,
                    _chol_with_jitter, _covered_cell_range, _gram_objects,
                    _overlap_kernel_arr, _shadow_index_range, field_kind,
                    sample_field, truncated_model)
from ._rng import make_generator, stream_key


def model_digest(model):
    """16-byte stable digest of a model's defining data."""
    nu = model.nu
    if isinstance(nu, ZeroJumps):
        desc = ["zero"]
    elif isinstance(nu, AtomicJumps):
        desc = ["atoms", list(nu.locations), list(nu.masses)]
    elif isinstance(nu, TabulatedJumps):
        desc = ["tabulated", list(nu.grid_x), list(nu.grid_density),
                nu.left_rate, nu.right_rate]
    else:
        raise TypeError(f"unknown jump measure {type(nu).__name__}")
    blob = json.dumps([model.sigma2, desc], sort_keys=True).encode()
    return hashlib.sha256(blob).digest()[:16]


@dataclass
class Realization:
    """One cascade sample on a grid: masses, weights, provenance."""

    grid: GridSpec
    model: NoiseModel
    kind: str
    cell_masses: np.ndarray            # leaf-level masses, length 2^levels
    weights: Dict[int, np.ndarray]     # level -> exp(cell noise)
    total_mass: float
    field: Optional[FieldSample] = None
    seed: Optional[int] = None
    replica: Optional[int] = None

    def mass_of_prefix(self, fraction):
        """Mass of [lo, lo + fraction * length]; fraction must be dyadic."""
        k = fraction * self.grid.n_cells
        if abs(k - round(k)) > 1e-9:
            raise ValueError("prefix must align with the leaf cells")
        return float(self.cell_masses[:round(k)].sum())


def masses_from_point_log(grid, point_log):
    """Leaf masses and total from point noise values (any leading shape)."""
    w = np.exp(point_log)
    leaf = w.reshape(w.shape[:-1] + (grid.n_cells, grid.oversample))
    cell = leaf.mean(axis=-1) * (2.0 ** (-grid.levels))
    return cell, cell.sum(axis=-1)


def build_realization(model, grid, rng=None, *, seed=None, replica=0,
                      kind="auto", cutoff=None, substitute=False,
                      stream_tag="cascade"):
    """Simulate one realization; pass either an rng or a (seed, replica)."""
    if (rng is None) == (seed is None):
        raise ValueError("pass exactly one of rng or seed")
    if mean_slope(model) >= 0:
        warnings.warn("structure-function slope at 1 is nonnegative: the "
                      "cascade limit is degenerate; fine-level masses will "
                      "collapse", stacklevel=2)
    if rng is None:
        rng = make_generator(seed, replica, stream_tag)
    f = sample_field(grid, model, rng, kind=kind, cutoff=cutoff,
                     substitute=substitute)
    cell, total = masses_from_point_log(grid, f.point_log)
    weights = {lev: np.exp(v) for lev, v in f.cell_log.items()}
    return Realization(grid, model, f.kind, cell, weights, float(total),
                       field=f, seed=seed, replica=replica)


# ---------------------------------------------------------------------------
# batched simulation
# ---------------------------------------------------------------------------


class BatchSimulator:
    """Chunked replica simulation with one stream per replica.

    Values are bit-identical however the work is chunked, because each
    replica draws from its own counter-based stream.  Yields (start index,
    point_log matrix) chunks; reduce them as they come to keep memory flat.
    """

    def __init__(self, model, grid, *, kind="auto", cutoff=None,
                 substitute=False, stream_tag="cascade"):
        if kind == "auto":
            kind = field_kind(model)
        self.model = model
        self.grid = grid
        self.kind = kind
        self.stream_tag = stream_tag
        if kind == "gaussian":
            self.gauss = GaussianFieldSampler(grid, model.sigma2)
            self.poisson = None
        elif kind == "poisson":
            eff = (truncated_model(model, cutoff, substitute)
                   if cutoff is not None else model)
            self.poisson = PoissonFieldSampler(grid, eff)
            self.gauss = None
        elif kind == "hybrid":
            h = HybridFieldSampler(grid, model, cutoff, substitute)
            self.gauss = h.gauss
            self.poisson = h.poisson
        else:
            raise ValueError(f"unknown sampler kind {kind!r}")

    def point_log_chunk(self, seed, start, count):
        """(count, n_points) noise values for replicas start..start+count."""
        g = self.grid
        out = np.zeros((count, g.n_points))
        if self.gauss is not None:
            normals = np.empty((self.gauss.dim, count))
            for j in range(count):
                r = make_generator(seed, start + j, self.stream_tag)
                normals[:, j] = r.standard_normal(self.gauss.dim)
            vals = self.gauss.draw_columns(normals)
            out += vals[:g.n_points].T
        if self.poisson is not None:
            for j in range(count):
                r = make_generator(seed, start + j,
                                   self.stream_tag + "-jumps"
                                   if self.gauss is not None
                                   else self.stream_tag)
                x, y, jump = self.poisson.draw_points(r)
                pl, _ = self.poisson.evaluate(x, y, jump)
                out[j] += pl
        return out

    def chunks(self, seed, replicas, chunk=512, progress=None):
        for start in range(0, replicas, chunk):
            count = min(chunk, replicas - start)
            yield start, self.point_log_chunk(seed, start, count)
            if progress is not None:
                progress(start + count)


def simulate_total_masses(model, grid, seed, replicas, *, kind="auto",
                          cutoff=None, substitute=False, chunk=512,
                          stream_tag="cascade", progress=None):
    """Total masses of independent replicas, one counter stream each."""
    sim = BatchSimulator(model, grid, kind=kind, cutoff=cutoff,
                         substitute=substitute, stream_tag=stream_tag)
    out = np.empty(replicas)
    for start, pl in sim.chunks(seed, replicas, chunk, progress):
        _, total = masses_from_point_log(grid, pl)
        out[start:start + len(total)] = total
    return out


def simulate_prefix_masses(model, grid, seed, replicas, fractions, *,
                           kind="auto", chunk=512, stream_tag="cascade",
                           progress=None):
    """Masses of [lo, lo + f*length] for each dyadic fraction f, per replica."""
    fractions = list(fractions)
    counts = []
    for f in fractions:
        k = f * grid.n_cells
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"fraction {f} does not align with leaf cells")
        counts.append(round(k))
    sim = BatchSimulator(model, grid, kind=kind, stream_tag=stream_tag)
    out = np.empty((replicas, len(fractions)))
    for start, pl in sim.chunks(seed, replicas, chunk, progress):
        cells, _ = masses_from_point_log(grid, pl)
        csum = np.cumsum(cells, axis=1)
        for i, k in enumerate(counts):
            out[start:start + len(cells), i] = csum[:, k - 1] if k else 0.0
    return out


# ---------------------------------------------------------------------------
# star decomposition
# ---------------------------------------------------------------------------


@dataclass
class StarDecomposition:
    """Masses over level-k cells split as weight times rescaled sub-cascade.

    For each level-k cell: total = 2^-k * sum_i weight[i] * sub_total[i],
    and each sub-realization has the law of a fresh cascade on its cell at
    relative truncation level (levels - k), independent of its weight.
    """

    level: int
    weights: np.ndarray
    subs: List[Realization]

    def reconstruct_total(self):
        return float(2.0 ** (-self.level) *
                     np.sum(self.weights * [s.total_mass for s in self.subs]))


def decompose_star(realization, level):
    """Split a realization at dyadic level k into weights and sub-cascades.

    The sub-cascade point noise is the pathwise difference between each
    point's value and its ancestor cell's value, which is exactly the noise
    of the point's local cone relative to the cell.
    """
    g = realization.grid
    if not 1 <= level <= g.levels:
        raise ValueError("level out of range")
    if level not in realization.weights:
        raise ValueError(f"realization does not carry level {level} weights")
    if realization.field is None:
        raise ValueError("realization was built without its field")
    cell_vals = np.log(realization.weights[level])
    point_log = realization.field.point_log
    per_cell = point_log.reshape(2 ** level, -1)
    subs = []
    bounds = g.cell_bounds(level)
    for i, (clo, chi) in enumerate(bounds):
        sub_grid = g.rescaled((clo, chi), level_drop=level)
        sub_points = per_cell[i] - cell_vals[i]
        cells, total = masses_from_point_log(sub_grid, sub_points)
        sub_weights = {}
        for lev in sub_grid.carried_levels:
            parent = lev + level
            if parent in realization.weights:
                block = realization.weights[parent].reshape(2 ** level, -1)[i]
                sub_weights[lev] = block / realization.weights[level][i]
        sub_field = FieldSample(sub_grid, realization.kind, sub_points,
                                {lev: np.log(w)
                                 for lev, w in sub_weights.items()})
        subs.append(Realization(sub_grid, realization.model,
                                realization.kind, cells, sub_weights,
                                float(total), field=sub_field))
    return StarDecomposition(level, realization.weights[level].copy(), subs)


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------


def refine(realization, extra_levels, rng):
    """Extend a realization by extra dyadic levels, reusing its noise.

    The already-drawn noise (heights >= eps) is kept; only the band between
    the new and old truncation heights is fresh.  Atomic fields keep their
    points and add a Poisson draw on the new band.  Gaussian fields draw the
    fine-grid values conditionally on every old value and add an independent
    band field.  With extra_levels = 0 the realization is returned as is.
    """
    if extra_levels < 0:
        raise ValueError("extra_levels must be >= 0")
    if extra_levels == 0:
        return realization
    if realization.field is None:
        raise ValueError("realization was built without its field")
    g = realization.grid
    fine = GridSpec(g.interval, g.levels + extra_levels, g.oversample,
                    None if g.cell_levels is None else
                    (g.cell_levels + extra_levels if g.cell_levels == g.levels
                     else g.cell_levels))
    if realization.kind == "poisson":
        f = _refine_poisson(realization, fine, rng)
    elif realization.kind == "gaussian":
        f = _refine_gaussian(realization, fine, rng)
    else:
        raise ValueError(f"refine not implemented for kind "
                         f"{realization.kind!r}")
    cells, total = masses_from_point_log(fine, f.point_log)
    weights = {lev: np.exp(v) for lev, v in f.cell_log.items()}
    return Realization(fine, realization.model, realization.kind, cells,
                       weights, float(total), field=f,
                       seed=realization.seed, replica=realization.replica)


def _refine_poisson(realization, fine, rng):
    g = realization.grid
    old = realization.field
    strip = cones.refinement_strip(g.interval, g.eps, fine.eps)
    sampler = PoissonFieldSampler(fine, realization.model)
    n_new = rng.poisson(sampler.jumps.total * strip.mass())
    u = rng.random((n_new, 3))
    xs = np.empty(n_new)
    ys = np.empty(n_new)
    for j in range(n_new):
        xs[j], ys[j] = strip.sample(u[j, 0], u[j, 1], u[j, 2])
    jumps = sampler.jumps.draw(rng, n_new)
    x = np.concatenate([old.points_x, xs])
    y = np.concatenate([old.points_y, ys])
    jump = np.concatenate([old.points_jump, jumps])
    point_log, cell_log = sampler.evaluate(x, y, jump)
    return FieldSample(fine, "poisson", point_log, cell_log,
                       points_x=x, points_y=y, points_jump=jump)


def _refine_gaussian(realization, fine, rng):
    g = realization.grid
    sigma2 = realization.model.sigma2
    L = g.length
    old = realization.field

    # conditioning objects: old points (cut at old eps) and old cells
    p_lo, p_hi, p_cut = _gram_objects(g)
    x_old = np.concatenate([old.point_log] +
                           [old.cell_log[lev] for lev in g.carried_levels])

    # new objects, part above the old truncation height: fine points cut at
    # the OLD eps, plus the genuinely new cell levels cut at the old eps
    # (their regions continue below it; that part belongs to the band field).
    t_fine = fine.eval_points()
    new_levels = [lev for lev in fine.carried_levels
                  if lev not in g.carried_levels]
    q_lo = [t_fine]
    q_hi = [t_fine]
    for lev in new_levels:
        b = fine.cell_bounds(lev)
        q_lo.append(b[:, 0])
        q_hi.append(b[:, 1])
    q_lo = np.concatenate(q_lo)
    q_hi = np.concatenate(q_hi)
    q_cut = np.full(q_lo.size, g.eps)

    def gram(alo, ahi, acut, blo, bhi, bcut):
        hull = (np.maximum(ahi[:, None], bhi[None, :]) -
                np.minimum(alo[:, None], blo[None, :]))
        cut = np.maximum(acut[:, None], bcut[None, :])
        return _overlap_kernel_arr(L, hull, cut)

    G_pp = sigma2 * gram(p_lo, p_hi, p_cut, p_lo, p_hi, p_cut)
    G_qp = sigma2 * gram(q_lo, q_hi, q_cut, p_lo, p_hi, p_cut)
    G_qq = sigma2 * gram(q_lo, q_hi, q_cut, q_lo, q_hi, q_cut)
    mean_p = -0.5 * sigma2 * _overlap_kernel_arr(L, p_hi - p_lo, p_cut)
    mean_q = -0.5 * sigma2 * _overlap_kernel_arr(L, q_hi - q_lo, q_cut)

    solve = np.linalg.solve
    jitter = 1e-12 * float(np.mean(np.diag(G_pp)))
    G_pp = G_pp + jitter * np.eye(G_pp.shape[0])
    w = solve(G_pp, x_old - mean_p)
    cond_mean = mean_q + G_qp @ w
    cond_cov = G_qq - G_qp @ solve(G_pp, G_qp.T)
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    chol = _chol_with_jitter(cond_cov)
    above = cond_mean + chol @ rng.standard_normal(q_lo.size)

    # independent band field between the two truncation heights
    hull = (np.maximum(q_hi[:, None], q_hi[None, :]) -
            np.minimum(q_lo[:, None], q_lo[None, :]))
    band = sigma2 * _strip_kernel_arr(hull, fine.eps, g.eps)
    band_mean = -0.5 * sigma2 * _strip_kernel_arr(q_hi - q_lo, fine.eps,
                                                  g.eps)
    chol_band = _chol_with_jitter(band)
    vals = above + band_mean + chol_band @ rng.standard_normal(q_lo.size)

    point_log = vals[:fine.n_points]
    cell_log = {}
    off = fine.n_points
    for lev in new_levels:
        cell_log[lev] = vals[off:off + 2 ** lev]
        off += 2 ** lev
    for lev in g.carried_levels:
        if lev in fine.carried_levels:
            cell_log[lev] = old.cell_log[lev].copy()
    return FieldSample(fine, "gaussian", point_log, cell_log)


def _strip_kernel_arr(h, lo, hi):
    h = np.asarray(h, float)
    out = np.zeros(h.shape)
    sel = h < hi
    a = np.maximum(lo, h[sel])
    out[sel] = np.log(hi / a) + h[sel] / hi - h[sel] / a
    return out


# ---------------------------------------------------------------------------
# juxtaposition: adjacent intervals driven by one noise field
# ---------------------------------------------------------------------------


def _cross_kernel(I, J, alo, ahi, blo, bhi, cut):
    """Overlap areas between footprints in interval I and in interval J.

    Inclusion-exclusion over the two interval cones; every term is the area
    of a hull cone above the cutoff, f(r) = log(max(c, r)) + r / max(c, r),
    and the alternating combination is finite.
    """
    def f(r):
        c = np.maximum(cut, r)
        return np.log(c) + r / c

    hi = np.maximum(ahi[:, None], bhi[None, :])
    lo = np.minimum(alo[:, None], blo[None, :])
    tau1 = hi - lo
    tau2 = np.maximum(hi, I[1]) - np.minimum(lo, I[0])
    tau3 = np.maximum(hi, J[1]) - np.minimum(lo, J[0])
    tau4 = (max(I[1], J[1]) - min(I[0], J[0])) * np.ones_like(tau1)
    return f(tau2) + f(tau3) - f(tau1) - f(tau4)


class JuxtaposedGaussianSampler:
    """Joint field over adjacent copies of a grid, exact cross-covariance."""

    def __init__(self, model, grid, n_intervals):
        if not isinstance(model.nu, ZeroJumps):
            raise ValueError("gaussian juxtaposition needs a gaussian model")
        self.model = model
        self.grid = grid
        self.n_intervals = n_intervals
        L = grid.length
        self.grids = [
            GridSpec((grid.interval[0] + i * L, grid.interval[0] + (i + 1) * L),
                     grid.levels, grid.oversample, grid.cell_levels)
            for i in range(n_intervals)]
        objs = [_gram_objects(gr) for gr in self.grids]
        sigma2 = model.sigma2
        dims = [o[0].size for o in objs]
        D = sum(dims)
        G = np.empty((D, D))
        mean = np.empty(D)
        offs = np.concatenate([[0], np.cumsum(dims)])
        for i, (ilo, ihi, icut) in enumerate(objs):
            mean[offs[i]:offs[i + 1]] = \
                -0.5 * sigma2 * _overlap_kernel_arr(L, ihi - ilo, icut)
            for j, (jlo, jhi, jcut) in enumerate(objs):
                if j < i:
                    continue
                cut = np.maximum(icut[:, None], jcut[None, :])
                if i == j:
                    hull = (np.maximum(ihi[:, None], jhi[None, :]) -
                            np.minimum(ilo[:, None], jlo[None, :]))
                    blk = _overlap_kernel_arr(L, hull, cut)
                else:
                    blk = _cross_kernel(self.grids[i].interval,
                                        self.grids[j].interval,
                                        ilo, ihi, jlo, jhi, cut)
                G[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = blk
                G[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = blk.T
        self.mean = mean
        self.chol = _chol_with_jitter(sigma2 * G)
        self.dims = dims
        self.offs = offs
        self.dim = D

    def draw_columns(self, normals):
        return self.chol @ normals + self.mean[:, None]

    def interval_point_log(self, values, i):
        o = self.offs[i]
        return values[o:o + self.grids[i].n_points]


def juxtaposed_total_masses(model, grid, n_intervals, seed, replicas, *,
                            kind="auto", chunk=256, stream_tag="juxtapose",
                            progress=None):
    """(replicas, n_intervals) total masses of cascades sharing one noise."""
    if kind == "auto":
        kind = field_kind(model)
    if kind == "gaussian":
        sam = JuxtaposedGaussianSampler(model, grid, n_intervals)
        out = np.empty((replicas, n_intervals))
        for start in range(0, replicas, chunk):
            count = min(chunk, replicas - start)
            normals = np.empty((sam.dim, count))
            for j in range(count):
                r = make_generator(seed, start + j, stream_tag)
                normals[:, j] = r.standard_normal(sam.dim)
            vals = sam.draw_columns(normals)
            for i in range(n_intervals):
                pl = sam.interval_point_log(vals, i).T
                _, total = masses_from_point_log(sam.grids[i], pl)
                out[start:start + count, i] = total
            if progress is not None:
                progress(start + count)
        return out
    if kind == "poisson":
        return _juxtaposed_poisson(model, grid, n_intervals, seed, replicas,
                                   stream_tag, progress)
    raise ValueError("juxtaposition supports gaussian and poisson kinds")


def _juxtaposed_poisson(model, grid, n_intervals, seed, replicas,
                        stream_tag, progress=None):
    L = grid.length
    lo = grid.interval[0]
    hull = (lo, lo + n_intervals * L)
    # per-interval local cones are all inside the hull's sampling domain,
    # and their union fills it, so one point process serves every interval.
    strips = cones.sampling_domain(hull, grid.eps)
    masses = np.array([s.mass() for s in strips])
    total_mass = float(masses.sum())
    jumps = JumpSampler(model.nu)
    drift = -nu_integral(model.nu, lambda x: math.exp(x) - 1.0)
    grids = [GridSpec((lo + i * L, lo + (i + 1) * L), grid.levels,
                      grid.oversample, 0) for i in range(n_intervals)]
    point_area = cones.area_local_cone(grids[0].interval, grid.eps)
    out = np.empty((replicas, n_intervals))
    cum = np.cumsum(masses) / total_mass
    for rix in range(replicas):
        rng = make_generator(seed, rix, stream_tag)
        n = rng.poisson(jumps.total * total_mass)
        which = np.searchsorted(cum, rng.random(n))
        u = rng.random((n, 3))
        x = np.empty(n)
        y = np.empty(n)
        for j in range(n):
            x[j], y[j] = strips[which[j]].sample(u[j, 0], u[j, 1], u[j, 2])
        jp = jumps.draw(rng, n)
        for i, gr in enumerate(grids):
            # keep only points outside the interval's own cone
            keep = ~((x - 0.5 * y <= gr.interval[0]) &
                     (gr.interval[1] <= x + 0.5 * y))
            pl = np.full(gr.n_points, drift * point_area)
            if np.any(keep):
                k0, k1 = _shadow_index_range(
                    x[keep], y[keep], gr.interval[0], gr.spacing, gr.n_points)
                diff = np.zeros(gr.n_points + 1)
                np.add.at(diff, k0, jp[keep])
                np.subtract.at(diff, k1, jp[keep])
                pl += np.cumsum(diff[:-1])
            _, total = masses_from_point_log(gr, pl[None, :])
            out[rix, i] = total[0]
        if progress is not None and (rix + 1) % 256 == 0:
            progress(rix + 1)
    return out


# ---------------------------------------------------------------------------
# exact scaling
# ---------------------------------------------------------------------------


def sample_area_log(model, area, rng, size=None):
    """Draws of the noise of one fixed region of the given area.

    The exponential of a draw has mean one for any normalized model; this
    is the scalar building block of the scale-factor law and of the
    single-region normalization checks.  With size=None returns a float.
    """
    if area < 0:
        raise ValueError("area must be nonnegative")
    n = 1 if size is None else int(size)
    val = np.zeros(n)
    if area > 0:
        if model.sigma2 > 0:
            val += rng.normal(-0.5 * model.sigma2 * area,
                              math.sqrt(model.sigma2 * area), size=n)
        if not isinstance(model.nu, ZeroJumps):
            js = JumpSampler(model.nu)
            drift = -nu_integral(model.nu, lambda x: math.exp(x) - 1.0)
            counts = rng.poisson(js.total * area, size=n)
            jumps = js.draw(rng, int(counts.sum()))
            edges = np.concatenate([[0], np.cumsum(counts)])
            val += drift * area + np.add.reduceat(
                np.concatenate([jumps, [0.0]]), edges[:-1]) * (counts > 0)
    return float(val[0]) if size is None else val


def sample_scale_log(model, lam, rng, *, cutoff=None, substitute=False):
    """log of the random factor relating masses across scale ratio lam.

    The factor exp(W) has W the noise of one fixed region of area
    log(1/lam); lam = 1 gives W = 0 exactly.  When a cutoff is supplied the
    draw uses the truncated model, matching what the samplers simulate.
    """
    if not 0.0 < lam <= 1.0:
        raise ValueError("scale ratio must lie in (0, 1]")
    eff = (truncated_model(model, cutoff, substitute)
           if cutoff is not None else model)
    return sample_area_log(eff, math.log(1.0 / lam), rng)


def scaled_mass_samples(model, grid, lam, seed, replicas, *, kind="auto",
                        chunk=512, stream_tag="scaling"):
    """Independent draws of lam * exp(W) * Z' at matched truncation.

    Z' is simulated at level levels - log2(1/lam) so its relative truncation
    matches the prefix mass mu([0, lam]) read off a level-`levels` grid.
    """
    k = math.log2(1.0 / lam)
    if abs(k - round(k)) > 1e-9:
        raise ValueError("scale ratio must be a dyadic power")
    k = round(k)
    if k >= grid.levels:
        raise ValueError("scale ratio too small for the grid depth")
    sub = GridSpec(grid.interval, grid.levels - k, grid.oversample, 0)
    z = simulate_total_masses(model, sub, seed, replicas, kind=kind,
                              chunk=chunk, stream_tag=stream_tag + "-z")
    w = np.empty(replicas)
    for r in range(replicas):
        rng = make_generator(seed, r, stream_tag + "-w")
        w[r] = sample_scale_log(model, lam, rng)
    return lam * np.exp(w) * z


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

_MAGIC = b"IDCZ"


def realization_to_csv(realization, path):
    """Leaf masses as delimited text with 17 significant digits."""
    g = realization.grid
    edges = g.cell_edges(g.levels)
    with open(path, "w") as fh:
        fh.write("cell_index,cell_lo,cell_hi,mass\n")
        for i, m in enumerate(realization.cell_masses):
            fh.write(f"{i},{edges[i]:.17g},{edges[i + 1]:.17g},{m:.17g}\n")


def write_masses_binary(path, grid, digest, masses):
    """Compact dump: magic, version, levels, oversample, model digest,
    then leaf masses as little-endian float64."""
    header = _MAGIC + struct.pack(
        "<III", 1, grid.levels, grid.oversample) + digest
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(masses, dtype="<f8").tobytes())


def realization_to_binary(realization, path):
    write_masses_binary(path, realization.grid,
                        model_digest(realization.model),
                        realization.cell_masses)


def read_binary_masses(path):
    """Inverse of realization_to_binary: (levels, oversample, digest, masses)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError("not a cascade dump")
    version, levels, oversample = struct.unpack("<III", blob[4:16])
    if version != 1:
        raise ValueError(f"unsupported dump version {version}")
    digest = blob[16:32]
    masses = np.frombuffer(blob[32:], dtype="<f8")
    if masses.size != 2 ** levels:
        raise ValueError("payload length does not match the header depth")
    return levels, oversample, digest, masses
