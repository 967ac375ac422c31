"""Adaptive mean estimation with penalized-risk bandwidth selection.

The risk at a candidate bandwidth adds a squared-bias term driven by
the estimated local regularity, a noise variance term scaled by the
effective number of observations, and a penalty for curves dropped by
the inclusion rule. The bandwidth is solved at anchor points and
interpolated to the evaluation grid.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, InsufficientDataError, ValidationError
from .kernels import (
    BIWEIGHT,
    EPANECHNIKOV,
    MAX_ORDER,
    get_kernel,
    kernel_abs_moment,
    lp_coefficient_weights,
)
from .regularity import RegularitySchedule, presmooth_matrix

INFINITE_RISK = math.inf


@dataclass(frozen=True)
class BandwidthGrid:
    """Logarithmic bandwidth grid."""

    h_min: float
    h_max: float
    count: int = 151

    def __post_init__(self):
        if not 0.0 < self.h_min < self.h_max < 1.0:
            raise ValidationError("need 0 < h_min < h_max < 1")
        if self.count < 2:
            raise ValidationError("bandwidth grid needs at least 2 points")

    def values(self):
        return np.geomspace(self.h_min, self.h_max, self.count)

    @staticmethod
    def default_mean(m_hat):
        return BandwidthGrid(h_min=1.0 / m_hat, h_max=0.5, count=151)

    @staticmethod
    def default_cov():
        return BandwidthGrid(h_min=0.01, h_max=0.1, count=41)


@dataclass(frozen=True)
class InclusionStats:
    """Per-curve weight summaries at one (t, h).

    w flags curves with a non-degenerate fit (enough points in the
    window and a solvable system); the c and N arrays are zero and xhat
    NaN where w is false. alpha_exponent is the exponent used for
    c_alpha (callers pass twice the regularity estimate).
    """

    t: float
    h: float
    order: int
    alpha_exponent: float
    w: np.ndarray
    W_N: int
    c1: np.ndarray
    c_alpha: np.ndarray
    max_abs_w: np.ndarray
    N_i: np.ndarray
    N_mu: float
    C_bar1: float
    xhat: np.ndarray


def _stats_from_arrays(t, h, order, alpha, w, c1, c_alpha, maxw, xhat):
    w = w.astype(bool)
    W_N = int(w.sum())
    c1 = np.where(w, c1, 0.0)
    c_alpha = np.where(w, c_alpha, 0.0)
    maxw = np.where(w, maxw, 0.0)
    N_i = np.zeros_like(c1)
    N_i[w] = 1.0 / maxw[w]
    xhat = np.where(w, xhat, np.nan)
    if W_N == 0:
        N_mu = 0.0
        C_bar1 = 0.0
    else:
        denom = float((c1[w] * maxw[w]).sum())
        N_mu = W_N * W_N / denom if denom > 0.0 else 0.0
        C_bar1 = float((c1[w] * c_alpha[w]).sum()) / W_N
    return InclusionStats(
        t=float(t),
        h=float(h),
        order=int(order),
        alpha_exponent=float(alpha),
        w=w,
        W_N=W_N,
        c1=c1,
        c_alpha=c_alpha,
        max_abs_w=maxw,
        N_i=N_i,
        N_mu=N_mu,
        C_bar1=C_bar1,
        xhat=xhat,
    )


def inclusion_stats(dataset, t, h, order, kernel, k0, alpha):
    """Curve-inclusion flags and weight summaries at one (t, h).

    Order 0 runs as one vectorized pass over the flat observation
    arrays; higher orders fit each curve separately.
    """
    if h <= 0.0:
        raise ValidationError("bandwidth h must be positive")
    if k0 < order + 1:
        raise ValidationError("k0 must be at least order + 1")
    kernel = get_kernel(kernel)
    n = dataset.n_curves

    if order == 0:
        seg = dataset.starts[:-1]
        u = (dataset.times_flat - t) / h
        K = kernel(u)
        counts = np.add.reduceat((np.abs(u) <= 1.0).astype(float), seg)
        S = np.add.reduceat(K, seg)
        Kmax = np.maximum.reduceat(K, seg)
        ca_raw = np.add.reduceat(K * np.abs(u) ** alpha, seg)
        x_raw = np.add.reduceat(K * dataset.values_flat, seg)
        w = (counts >= k0) & (S > 0.0)
        safe = np.where(S > 0.0, S, 1.0)
        # NW weights are K/S, so the absolute weight sum is exactly one
        c1 = np.ones(n)
        c_alpha = ca_raw / safe
        maxw = Kmax / safe
        xhat = x_raw / safe
        return _stats_from_arrays(t, h, order, alpha, w, c1, c_alpha, maxw, xhat)

    w = np.zeros(n, dtype=bool)
    c1 = np.zeros(n)
    c_alpha = np.zeros(n)
    maxw = np.zeros(n)
    xhat = np.full(n, np.nan)
    for i, curve in enumerate(dataset.curves):
        lw = lp_coefficient_weights(curve.times, t, h, order, kernel, k0)
        if lw.degenerate:
            continue
        aw = np.abs(lw.weights)
        z = np.abs((curve.times[lw.indices] - t) / h)
        w[i] = True
        c1[i] = aw.sum()
        c_alpha[i] = (aw * z**alpha).sum()
        maxw[i] = aw.max()
        xhat[i] = lw.weights @ curve.values[lw.indices]
    return _stats_from_arrays(t, h, order, alpha, w, c1, c_alpha, maxw, xhat)


def mean_risk_terms(stats, reg, noise, var_X_t, N, c_bar1=None):
    """The three risk terms (bias, variance, dropout) at stats' (t, h)."""
    if stats.W_N == 0:
        return INFINITE_RISK, INFINITE_RISK, INFINITE_RISK
    fact = math.factorial(int(math.floor(reg.alpha_hat)))
    cb = stats.C_bar1 if c_bar1 is None else c_bar1
    q1_sq = cb * reg.L2_hat / (fact * fact)
    bias = q1_sq * stats.h ** (2.0 * reg.alpha_hat)
    var = noise.sigma2_max / stats.N_mu
    dropout = var_X_t * (1.0 / stats.W_N - 1.0 / N)
    return bias, var, dropout


def mean_risk(stats, reg, noise, var_X_t, N, c_bar1=None):
    """Total penalized risk; infinite when no curve is included."""
    if stats.W_N == 0:
        return INFINITE_RISK
    b, v, d = mean_risk_terms(stats, reg, noise, var_X_t, N, c_bar1=c_bar1)
    return b + v + d


@dataclass(frozen=True)
class RiskProfile:
    """Risk decomposition over a bandwidth grid and the selected h."""

    t: float
    bandwidths: np.ndarray
    term_bias: np.ndarray
    term_var: np.ndarray
    term_dropout: np.ndarray
    total: np.ndarray
    W_N: np.ndarray
    N_mu: np.ndarray
    h_star: float
    h_star_index: int
    q1_sq: float
    q2_sq: float
    q3_sq: float
    order: int
    k0: int


def _profile_for_k0(dataset, t, reg, noise, var_X_t, kernel, k0, hs, order,
                    alpha_exp, c_bar1_override):
    n_h = hs.size
    term_b = np.full(n_h, INFINITE_RISK)
    term_v = np.full(n_h, INFINITE_RISK)
    term_d = np.full(n_h, INFINITE_RISK)
    W_arr = np.zeros(n_h, dtype=int)
    Nmu_arr = np.zeros(n_h)
    N = dataset.n_curves
    for j, h in enumerate(hs):
        stats = inclusion_stats(dataset, t, h, order, kernel, k0, alpha_exp)
        W_arr[j] = stats.W_N
        Nmu_arr[j] = stats.N_mu
        if stats.W_N == 0:
            continue
        b, v, d = mean_risk_terms(
            stats, reg, noise, var_X_t, N, c_bar1=c_bar1_override
        )
        term_b[j], term_v[j], term_d[j] = b, v, d
    total = term_b + term_v + term_d
    return term_b, term_v, term_d, total, W_arr, Nmu_arr


def select_mean_bandwidth(dataset, t, reg, noise, var_X_t, kernel, k0,
                          grid_spec=None, use_moment_approx=False,
                          optimize_k0=False):
    """Minimize the penalized risk over a log bandwidth grid.

    Ties break toward the smaller bandwidth. With optimize_k0 the
    inclusion threshold is searched over {order+1, ..., order+3} as
    well. Raises when every grid bandwidth leaves all curves excluded.
    """
    kernel = get_kernel(kernel)
    if grid_spec is None:
        grid_spec = BandwidthGrid.default_mean(dataset.m_hat)
    hs = grid_spec.values()
    order = min(int(math.floor(reg.alpha_hat)), MAX_ORDER)
    alpha_exp = 2.0 * reg.alpha_hat
    base_k0 = max(k0, order + 1)
    c_bar1_override = (
        kernel_abs_moment(kernel, alpha_exp) if use_moment_approx else None
    )

    k0_candidates = (
        range(base_k0, base_k0 + 3) if optimize_k0 else (base_k0,)
    )
    best = None
    for k0_c in k0_candidates:
        tb, tv, td, total, W_arr, Nmu_arr = _profile_for_k0(
            dataset, t, reg, noise, var_X_t, kernel, k0_c, hs, order,
            alpha_exp, c_bar1_override,
        )
        if not np.any(np.isfinite(total)):
            continue
        idx = int(np.argmin(total))
        if best is None or total[idx] < best[0]:
            best = (total[idx], idx, k0_c, tb, tv, td, total, W_arr, Nmu_arr)

    if best is None:
        raise InsufficientDataError(
            f"no admissible bandwidth at t={t}: every grid value leaves "
            "all curves excluded"
        )
    _, idx, k0_used, tb, tv, td, total, W_arr, Nmu_arr = best

    fact = math.factorial(int(math.floor(reg.alpha_hat)))
    h_star = float(hs[idx])
    if c_bar1_override is not None:
        q1_sq = c_bar1_override * reg.L2_hat / (fact * fact)
    else:
        q1_sq = (
            tb[idx] / h_star ** (2.0 * reg.alpha_hat)
            if np.isfinite(tb[idx])
            else math.nan
        )
    return RiskProfile(
        t=float(t),
        bandwidths=hs,
        term_bias=tb,
        term_var=tv,
        term_dropout=td,
        total=total,
        W_N=W_arr,
        N_mu=Nmu_arr,
        h_star=h_star,
        h_star_index=idx,
        q1_sq=float(q1_sq),
        q2_sq=float(noise.sigma2_max),
        q3_sq=float(var_X_t),
        order=order,
        k0=k0_used,
    )


def plugin_variance(values):
    """Empirical variance of the finite entries; zero when fewer than 2."""
    v = values[np.isfinite(values)]
    if v.size < 2:
        return 0.0
    return float(np.var(v, ddof=1))


@dataclass(frozen=True)
class MeanEstimate:
    """Adaptive mean values on a grid with per-point diagnostics."""

    points: np.ndarray
    values: np.ndarray
    h_star: np.ndarray
    W_N: np.ndarray
    risk_bias: np.ndarray
    risk_var: np.ndarray
    risk_dropout: np.ndarray
    anchor_t: np.ndarray
    anchor_h: np.ndarray
    anchor_alpha: np.ndarray


def estimate_mean(dataset, grid, reg_per_anchor, noise, kernel=BIWEIGHT,
                  k0=2, schedule=None, grid_spec=None,
                  use_moment_approx=False, presmooth_kernel=EPANECHNIKOV,
                  optimize_k0=False):
    """Adaptive mean on a grid.

    Bandwidths are solved at the regularity anchors and linearly
    interpolated to the grid; the regularity driving the polynomial
    order and the risk at each grid point comes from the nearest
    anchor. Grid points where every curve is excluded get NaN.
    """
    if not reg_per_anchor:
        raise ValidationError("need at least one anchor regularity estimate")
    kernel = get_kernel(kernel)
    if schedule is None:
        schedule = RegularitySchedule(m_hat=dataset.m_hat)
    regs = sorted(reg_per_anchor, key=lambda r: r.anchor_t2)
    anchor_ts = np.array([r.anchor_t2 for r in regs])
    pts = np.asarray(getattr(grid, "points", grid), dtype=float)
    N = dataset.n_curves

    # one presmoothing pass feeds every variance plug-in
    P_anchor = presmooth_matrix(
        dataset, anchor_ts, schedule.presmooth_bandwidth, presmooth_kernel
    )
    anchor_var = np.array(
        [plugin_variance(P_anchor[:, j]) for j in range(anchor_ts.size)]
    )

    anchor_h = np.full(anchor_ts.size, np.nan)
    for j, reg in enumerate(regs):
        try:
            prof = select_mean_bandwidth(
                dataset, anchor_ts[j], reg, noise, anchor_var[j], kernel,
                k0, grid_spec=grid_spec, use_moment_approx=use_moment_approx,
                optimize_k0=optimize_k0,
            )
        except InsufficientDataError:
            continue
        anchor_h[j] = prof.h_star
    ok = np.isfinite(anchor_h)
    if not ok.any():
        raise EstimationError(
            "bandwidth selection failed at every anchor point"
        )
    h_on_grid = np.interp(pts, anchor_ts[ok], anchor_h[ok])

    P_grid = presmooth_matrix(
        dataset, pts, schedule.presmooth_bandwidth, presmooth_kernel
    )

    values = np.full(pts.size, np.nan)
    W_out = np.zeros(pts.size, dtype=int)
    r_bias = np.full(pts.size, np.nan)
    r_var = np.full(pts.size, np.nan)
    r_drop = np.full(pts.size, np.nan)
    for j, t in enumerate(pts):
        reg = regs[int(np.argmin(np.abs(anchor_ts - t)))]
        order = min(int(math.floor(reg.alpha_hat)), MAX_ORDER)
        k0_eff = max(k0, order + 1)
        stats = inclusion_stats(
            dataset, t, h_on_grid[j], order, kernel, k0_eff,
            2.0 * reg.alpha_hat,
        )
        W_out[j] = stats.W_N
        if stats.W_N == 0:
            continue
        values[j] = float(
            np.where(stats.w, stats.xhat, 0.0).sum() / stats.W_N
        )
        var_t = plugin_variance(P_grid[:, j])
        cb = (
            kernel_abs_moment(kernel, 2.0 * reg.alpha_hat)
            if use_moment_approx
            else None
        )
        b, v, d = mean_risk_terms(stats, reg, noise, var_t, N, c_bar1=cb)
        r_bias[j], r_var[j], r_drop[j] = b, v, d

    return MeanEstimate(
        points=pts,
        values=values,
        h_star=h_on_grid,
        W_N=W_out,
        risk_bias=r_bias,
        risk_var=r_var,
        risk_dropout=r_drop,
        anchor_t=anchor_ts,
        anchor_h=anchor_h,
        anchor_alpha=np.array([r.alpha_hat for r in regs]),
    )
