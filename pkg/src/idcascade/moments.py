"""Exact joint moments and statistical estimators for cascade masses.

The exact side rests on the n-point function of the normalized noise: for
ordered times t_1 < ... < t_n inside a base interval of length T, the
expectation of the product of point weights is

    prod over pairs i < j of (T / (t_j - t_i)) ** alpha(j - i),

where alpha(d) is the second difference of the moment exponent at rank
distance d.  Joint moments of interval masses are integrals of that product
over ordered tuples with prescribed interval membership; the quadrature
below integrates them with a substitution absorbing every adjacent-gap
singularity.

The statistical side has the usual suspects: median-of-means moment
estimates, a Hill tail-index ladder with a plateau estimate of the tail
constant, jackknifed covariances of juxtaposed masses, scaling-exponent
fits, a prefix-stability probe for negative moments, and the growth-ratio
sequence of log E Z^n / (n log n).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from . import cones
from .levy import (MomentDomainError, ZeroJumps, levy_exponent, nu_integral,
                   structure_function)

# ---------------------------------------------------------------------------
# pair exponents
# ---------------------------------------------------------------------------


def moment_pair_exponent(model, j, k):
    """Exponent of (t_j - t_k)^-alpha in the n-point function.

    Second difference of the moment exponent at the rank distance d = j - k:
    alpha = exponent(d+1) + exponent(d-1) - 2 exponent(d).
    """
    d = abs(int(j) - int(k))
    if d == 0:
        raise ValueError("pair exponent needs two distinct ranks")
    return (levy_exponent(model, d + 1) + levy_exponent(model, d - 1)
            - 2.0 * levy_exponent(model, d))


def moment_pair_exponent_jump_form(model, j, k):
    """Same exponent along the jump route, for pure-jump models only:
    integral exp((d-1) x) (1 - exp(x))^2 nu(dx)."""
    if model.sigma2 != 0.0:
        raise ValueError("jump-form route is only valid when sigma2 = 0")
    d = abs(int(j) - int(k))
    if d == 0:
        raise ValueError("pair exponent needs two distinct ranks")
    return nu_integral(
        model.nu,
        lambda x: math.exp((d - 1) * x) * (1.0 - math.exp(x)) ** 2)


def scaling_exponent(model, q):
    """Theoretical exponent of E mass([0, lam])^q in lam: q - exponent(q)."""
    return float(q) - levy_exponent(model, q)


# ---------------------------------------------------------------------------
# exact joint moments by ordered-simplex quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointMomentResult:
    value: float
    error: float      # difference between the two quadrature resolutions
    degree: int


def _expand_blocks(blocks):
    """[(interval, power), ...] -> per-point interval bounds, left to right."""
    spans = []
    prev_hi = None
    for interval, power in blocks:
        lo, hi = float(interval[0]), float(interval[1])
        if not lo < hi:
            raise ValueError("intervals must have positive length")
        if power < 1 or power != int(power):
            raise ValueError("powers must be positive integers")
        if prev_hi is not None and lo < prev_hi - 1e-12:
            raise ValueError("intervals must be sorted and non-overlapping")
        prev_hi = hi
        spans.extend([(lo, hi)] * int(power))
    return spans


def exact_joint_moment(model, blocks, base=(0.0, 1.0), resolution=None):
    """E prod_j mass(I_j)^{p_j} for one cascade on the base interval.

    blocks is a sequence of (interval, power) pairs, sorted left to right,
    each interval inside base, total degree at most 4.  Returns the value
    with a two-resolution error estimate.  Same-interval adjacent gaps
    require alpha(1) < 1, otherwise the moment diverges and this raises.
    """
    spans = _expand_blocks(blocks)
    n = len(spans)
    if n < 1 or n > 4:
        raise ValueError("total degree must be between 1 and 4")
    T = float(base[1]) - float(base[0])
    if any(lo < base[0] - 1e-12 or hi > base[1] + 1e-12
           for lo, hi in spans):
        raise ValueError("all intervals must lie inside the base")
    if n == 1:
        lo, hi = spans[0]
        return JointMomentResult((hi - lo) / T, 0.0, 1)

    alphas = {d: moment_pair_exponent(model, d, 0) for d in range(1, n)}
    a1 = alphas[1]
    same = [spans[i] == spans[i - 1] for i in range(1, n)]
    if a1 >= 1.0 and any(same):
        raise MomentDomainError(
            f"adjacent-gap exponent alpha(1) = {a1:.6g} >= 1: the joint "
            "moment diverges on vanishing same-interval gaps")

    sizes = {2: (320, 220), 3: (150, 104), 4: (56, 40)}
    M, M2 = sizes[n] if resolution is None else (resolution,
                                                 max(8, 2 * resolution // 3))
    v1 = _ordered_quadrature(spans, alphas, T, M)
    v2 = _ordered_quadrature(spans, alphas, T, M2)
    scale = 1.0
    for _, power in blocks:
        scale *= math.factorial(int(power))
    # measure normalization: each point carries 1/T
    norm = T ** (-n) * T ** sum(alphas[j - i]
                                for i in range(n) for j in range(i + 1, n))
    return JointMomentResult(scale * norm * v1,
                             abs(scale * norm * (v1 - v2)), n)


def _ordered_quadrature(spans, alphas, T, M):
    """Integral of prod (t_j - t_i)^-alpha over the ordered block simplex.

    Sequential coordinates: the gap to the previous point is substituted by
    a power law on same-interval steps (kills the alpha(1) singularity) and
    by a log map on cross-boundary steps (bounded away from zero at interior
    nodes, valid for any alpha including >= 1).
    """
    n = len(spans)
    x, w = np.polynomial.legendre.leggauss(M)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    a1 = alphas.get(1, 0.0)
    p = 1.0 / (1.0 - a1) if a1 < 1.0 else None

    total = 0.0
    # chunk the outermost axis to bound memory for n = 4
    chunk = M if n < 4 else max(1, (2 ** 22) // (M ** (n - 1)))
    for c0 in range(0, M, chunk):
        sl = slice(c0, min(M, c0 + chunk))
        ts = [None] * n
        lo0, hi0 = spans[0]
        t0 = lo0 + (hi0 - lo0) * u[sl]
        jac = wu[sl] * (hi0 - lo0)
        shape = [t0.size] + [1] * (n - 1)
        ts[0] = t0.reshape(shape)
        jac = jac.reshape(shape)
        for i in range(1, n):
            axis_shape = [1] * n
            axis_shape[i] = M
            ui = u.reshape(axis_shape)
            wi = wu.reshape(axis_shape)
            lo_i, hi_i = spans[i]
            prev = ts[i - 1]
            if spans[i] == spans[i - 1]:
                gmax = hi_i - prev
                g = gmax * ui ** p
                # gap factor g^-a1 absorbed: d(gap)/du * g^-a1
                jac = jac * wi * (gmax ** (1.0 - a1)) / (1.0 - a1)
            else:
                g0 = lo_i - prev
                g1 = hi_i - prev
                ratio = g1 / g0
                g = g0 * ratio ** ui
                jac = jac * wi * np.log(ratio) * g ** (1.0 - a1)
            ts[i] = prev + g
        f = jac
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1:
                    continue  # adjacent factor folded into the jacobian
                f = f * (ts[j] - ts[i]) ** (-alphas[j - i])
        total += float(np.sum(f))
    return total


def juxtaposed_pair_moment(model, gap, tol=1e-11):
    """E mass_0 * mass_gap for unit cascades sharing one noise field.

    Different construction from exact_joint_moment: each interval subtracts
    its own interval cone, so the kernel is the cross-interval overlap area.
    Returns (covariance, product-moment); the mean of each mass is 1.
    """
    psi2 = levy_exponent(model, 2.0)
    I, J = (0.0, 1.0), (float(gap), float(gap) + 1.0)

    def f(t, s):
        return math.expm1(psi2 * cones.area_cross(I, J, s, t, 1e-12))

    cov, _ = integrate.dblquad(f, 0.0, 1.0, lambda s: J[0], lambda s: J[1],
                               epsabs=tol, epsrel=1e-10)
    return cov, cov + 1.0


# ---------------------------------------------------------------------------
# sample-side estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentEstimate:
    q: float
    mean: float
    stderr: float
    median_of_means: Optional[float]
    blocks: int
    heavy_tail: Optional[bool]


def estimate_moment(samples, q, blocks=32, tail_index=None):
    """Empirical E X^q with a median-of-means companion.

    heavy_tail flags orders q >= tail_index - 1, where the plain mean
    converges too slowly to trust; median-of-means is the value to quote
    there.  With no tail index supplied the flag is None.
    """
    x = np.asarray(samples, float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("need a one-dimensional nonempty sample")
    powered = x ** q
    mean = float(powered.mean())
    stderr = float(powered.std(ddof=1) / math.sqrt(x.size))
    mom = None
    if blocks and blocks > 1 and x.size >= 2 * blocks:
        cut = (x.size // blocks) * blocks
        bm = powered[:cut].reshape(blocks, -1).mean(axis=1)
        mom = float(np.median(bm))
    heavy = None
    if tail_index is not None:
        heavy = bool(q >= tail_index - 1.0)
    return MomentEstimate(float(q), mean, stderr, mom,
                          blocks if mom is not None else 0, heavy)


@dataclass(frozen=True)
class TailReport:
    fractions: Tuple[float, ...]
    hill: Dict[float, float]
    hill_selected: float
    hill_stderr: float
    tail_constant: Optional[float]
    exceedances: Dict[float, int]


def hill_tail_report(samples, fractions=(0.005, 0.01, 0.02, 0.05),
                     tail_index_for_constant=None):
    """Hill estimates over several top fractions, plus a plateau constant.

    The selected value is the median across fractions; its stderr is the
    jackknife over the exceedances at the middle fraction.  When a tail
    index is supplied, the constant is the median of x_(i)^zeta * i / N
    over the top 1% order statistics (the plateau of the rescaled tail).
    """
    x = np.sort(np.asarray(samples, float))[::-1]
    N = x.size
    if N < 100:
        raise ValueError("tail estimation needs at least 100 samples")
    hill = {}
    ks = {}
    for f in fractions:
        k = max(2, int(f * N))
        logs = np.log(x[:k]) - math.log(x[k])
        hill[f] = 1.0 / float(logs.mean())
        ks[f] = k
    selected = float(np.median(list(hill.values())))
    f_mid = sorted(fractions)[len(fractions) // 2]
    k = ks[f_mid]
    logs = np.log(x[:k]) - math.log(x[k])
    s = logs.sum()
    loo = (s - logs) / (k - 1)            # delete-one means
    jk = 1.0 / loo
    hill_stderr = float(np.sqrt((k - 1) / k * np.sum(
        (jk - jk.mean()) ** 2)))
    tail_constant = None
    if tail_index_for_constant is not None:
        k1 = max(2, int(0.01 * N))
        i = np.arange(1, k1 + 1)
        tail_constant = float(np.median(
            x[:k1] ** tail_index_for_constant * i / N))
    return TailReport(tuple(fractions), hill, selected, hill_stderr,
                      tail_constant, ks)


def ks_two_sample(a, b, min_size=5000):
    """Two-sample Kolmogorov-Smirnov test (asymptotic p-value).

    Distribution-equality acceptance checks lean on this; small samples
    make the asymptotic p-value untrustworthy, hence the size floor.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if min(a.size, b.size) < min_size:
        raise ValueError(f"KS check needs at least {min_size} samples per "
                         f"side, got {a.size} and {b.size}")
    res = stats.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# covariance of juxtaposed masses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceReport:
    gaps: Tuple[int, ...]
    estimate: Tuple[float, ...]
    stderr: Tuple[float, ...]
    theory_claimed: Tuple[float, ...]          # 2 psi(-i2) / (3 gap)
    theory_exact_quadrature: Tuple[float, ...]  # cross-kernel integral

    def rows(self):
        return list(zip(self.gaps, self.estimate, self.stderr,
                        self.theory_claimed, self.theory_exact_quadrature))


def covariance_report(model, masses, gaps=None, exact=True):
    """Stationary covariance across interval gaps with jackknife errors.

    masses has shape (replicas, intervals); gap g pools every pair of
    columns at distance g.  Both theory columns are attached: the claimed
    1/gap asymptotic and the exact cross-kernel quadrature.
    """
    m = np.asarray(masses, float)
    if m.ndim != 2 or m.shape[1] < 2:
        raise ValueError("need a (replicas, intervals >= 2) matrix")
    R, K = m.shape
    if gaps is None:
        gaps = tuple(range(1, K))
    psi2 = levy_exponent(model, 2.0)
    est, err, claimed, quad = [], [], [], []
    for g in gaps:
        pairs = [(i, i + g) for i in range(K - g)]
        x = np.concatenate([m[:, i] for i, _ in pairs])
        y = np.concatenate([m[:, j] for _, j in pairs])
        # jackknife over replicas (pairs from one replica are dependent)
        xr = np.stack([m[:, i] for i, _ in pairs], axis=1)
        yr = np.stack([m[:, j] for _, j in pairs], axis=1)
        est.append(_pooled_cov(x, y))
        err.append(_jackknife_cov(xr, yr))
        claimed.append(2.0 * psi2 / (3.0 * g))
        if exact:
            quad.append(juxtaposed_pair_moment(model, g)[0])
        else:
            quad.append(math.nan)
    return CovarianceReport(tuple(gaps), tuple(est), tuple(err),
                            tuple(claimed), tuple(quad))


def _pooled_cov(x, y):
    return float(np.mean(x * y) - np.mean(x) * np.mean(y))


def _jackknife_cov(xr, yr):
    """Delete-one-replica jackknife of the pooled covariance.

    xr, yr are (replicas, pairs); all pairs of one replica leave together.
    """
    R, P = xr.shape
    sx, sy = xr.sum(), yr.sum()
    sxy = (xr * yr).sum()
    n = R * P
    rx = xr.sum(axis=1)
    ry = yr.sum(axis=1)
    rxy = (xr * yr).sum(axis=1)
    n_i = n - P
    cov_i = ((sxy - rxy) / n_i -
             ((sx - rx) / n_i) * ((sy - ry) / n_i))
    return float(math.sqrt((R - 1) / R * np.sum(
        (cov_i - cov_i.mean()) ** 2)))


# ---------------------------------------------------------------------------
# scaling fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingReport:
    q_values: Tuple[float, ...]
    slopes: Tuple[float, ...]
    theory: Tuple[float, ...]
    max_abs_error: float


def scaling_fit(model, lams, prefix_masses, q_values, blocks=0):
    """Fit log E mass([0, lam])^q against log lam and compare with theory.

    prefix_masses has shape (replicas, len(lams)).  The per-lam moment is
    the plain mean by default: the columns come from the same replicas, so
    their fluctuations are positively correlated and largely cancel in the
    slope, while median-of-means has an order- and lam-dependent downward
    bias that tilts the fit.  Pass blocks > 1 to use median-of-means
    anyway.
    """
    m = np.asarray(prefix_masses, float)
    lams = np.asarray(lams, float)
    if m.shape[1] != lams.size:
        raise ValueError("prefix_masses columns must match lams")
    slopes = []
    theory = []
    lx = np.log(lams)
    for q in q_values:
        ly = []
        for j in range(lams.size):
            e = estimate_moment(m[:, j], q, blocks=blocks)
            val = e.median_of_means if e.median_of_means is not None else e.mean
            ly.append(math.log(val))
        slope = float(np.polyfit(lx, ly, 1)[0])
        slopes.append(slope)
        theory.append(scaling_exponent(model, q))
    errs = [abs(s - t) for s, t in zip(slopes, theory)]
    return ScalingReport(tuple(float(q) for q in q_values), tuple(slopes),
                         tuple(theory), max(errs))


# ---------------------------------------------------------------------------
# negative moments and growth ratios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NegativeMomentProbe:
    q: float
    value: float
    stable: bool
    drift: float


def negative_moment_probe(samples, q, drift_tol=0.05):
    """Prefix-mean stability scan of E X^q for q < 0.

    Reports the final estimate and whether the running mean over the last
    quarter of the (shuffled-order-free) sample stays within drift_tol of
    it.  This is a numerical stability probe only: it never claims the
    negative moment is finite, it just reports what the sample says.
    """
    if q >= 0:
        raise ValueError("probe is for negative orders")
    x = np.asarray(samples, float)
    if np.any(x <= 0):
        raise ValueError("negative-order moments need positive samples")
    powered = x ** q
    prefix = np.cumsum(powered) / np.arange(1, x.size + 1)
    final = float(prefix[-1])
    tail = prefix[3 * x.size // 4:]
    drift = float(np.max(np.abs(tail - final)) / abs(final))
    return NegativeMomentProbe(float(q), final, bool(drift <= drift_tol),
                               drift)


@dataclass(frozen=True)
class GrowthReport:
    orders: Tuple[int, ...]
    log_moments: Tuple[float, ...]
    ratios: Tuple[float, ...]
    increasing: bool
    growth_constant: Optional[float]
    sources: Tuple[str, ...]


def growth_ratio_probe(model, orders, mc_samples=None, mc_from=5):
    """Ratios log E Z^n / (n log n) across orders.

    Orders below mc_from use the exact quadrature; higher orders need a
    Monte Carlo sample of total masses (plain mean of Z^n).  The
    increasing flag reports whether the ratio sequence is monotone, the
    expected signature of factorial-type moment growth with the model's
    growth constant as the limiting slope.
    """
    from .levy import growth_constant as model_growth_constant
    logs, ratios, sources = [], [], []
    for n in orders:
        if n < 2:
            raise ValueError("orders start at 2")
        if n < mc_from and n <= 4:
            res = exact_joint_moment(model, [((0.0, 1.0), n)])
            val = res.value
            sources.append("quadrature")
        else:
            if mc_samples is None:
                raise ValueError(f"order {n} needs Monte Carlo samples")
            # plain mean: it is unbiased, and the probe only makes sense for
            # models with all moments finite, where the CLT applies anyway.
            # median-of-means is biased low at high orders, which would fake
            # a break in the monotone growth it is supposed to reveal.
            val = float(np.mean(np.asarray(mc_samples, float) ** n))
            sources.append("monte-carlo")
        logs.append(math.log(val))
        ratios.append(logs[-1] / (n * math.log(n)))
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    return GrowthReport(tuple(orders), tuple(logs), tuple(ratios),
                        bool(increasing), model_growth_constant(model),
                        tuple(sources))
