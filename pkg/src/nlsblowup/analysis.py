"""Post-processing of simulation traces: blow-up time, rate fit, relative
error against the square-root law, and comparisons with the profile."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientRecords, InvalidArgument, ParameterMismatch
from .numerics import NaturalCubicSpline
from .profile import ProfileSolution, ScaledProfile, rescale_family

MIN_FIT_RECORDS = 20


@dataclass(frozen=True)
class FitWindow:
    """Records with ln_min <= ln L <= ln_max enter the rate fit."""

    ln_max: float = -2.0
    ln_min: float = math.log(1e-20)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    fit_window: tuple  # (ln L lower, ln L upper) actually used
    residual_rms: float
    n_points: int


@dataclass(frozen=True, eq=False)
class RelativeErrorSeries:
    ln_L: np.ndarray
    e_rel: np.ndarray
    a_tilde: float

    def median_between(self, L_hi: float, L_lo: float = 1e-20) -> float:
        """Median of e_rel over records with L_lo <= L <= L_hi."""
        sel = (self.ln_L <= math.log(L_hi)) & (self.ln_L >= math.log(L_lo))
        if not np.any(sel):
            raise InsufficientRecords("no records in the requested L range")
        return float(np.median(self.e_rel[sel]))


def _increments(trace) -> np.ndarray:
    if hasattr(trace, "records"):
        return np.array([r.delta_t for r in trace.records], dtype=float)
    return np.asarray(trace, dtype=float)


def reconstruct_times(trace):
    """Blow-up time T and the series T - t_i from elapsed-time increments.

    ``trace`` is a SimulationTrace or a plain sequence of increments.
    T - t_i is the compensated suffix sum of the increments after record i,
    so small remainders never come from cancelling large cumulative times.
    """
    dt = _increments(trace)
    if dt.size == 0:
        raise InsufficientRecords("trace has no records")
    suffix = np.empty_like(dt)
    s = c = 0.0
    for i in range(dt.size - 1, -1, -1):
        suffix[i] = s
        y = dt[i] - c
        t = s + y
        c = (t - s) - y
        s = t
    # T - t_i counts increments after record i; T includes all of them
    return s, suffix


def _ln_series(trace):
    ln_L = trace.column("ln_L")
    _, t_minus = reconstruct_times(trace)
    return ln_L, t_minus


def fit_rate(trace, window: FitWindow = FitWindow()) -> RateFit:
    """Least-squares slope of ln L against ln(T - t) over the fit window."""
    ln_L, t_minus = _ln_series(trace)
    sel = (ln_L <= window.ln_max) & (ln_L >= window.ln_min) & (t_minus > 0)
    n = int(sel.sum())
    if n < MIN_FIT_RECORDS:
        raise InsufficientRecords(f"only {n} records in the fit window (need {MIN_FIT_RECORDS})")
    x, y = np.log(t_minus[sel]), ln_L[sel]
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return RateFit(float(slope), float(intercept), (float(y.min()), float(y.max())),
                   float(np.sqrt(np.mean(resid**2))), n)


def relative_error_series(trace, a_tilde: float | None = None,
                          L_floor: float = 1e-20) -> RelativeErrorSeries:
    """|exp((2 ln L - ln(T-t) - ln 2 - ln a~) / (2 sigma)) - 1| per record.

    a~ defaults to a at the end of the run.
    """
    a_tilde = trace.a_end if a_tilde is None else a_tilde
    if not a_tilde > 0:
        raise InvalidArgument("a~ must be positive")
    sigma = trace.config.params.sigma
    ln_L, t_minus = _ln_series(trace)
    sel = (ln_L >= math.log(L_floor)) & (t_minus > 0)
    ln_L, t_minus = ln_L[sel], t_minus[sel]
    expo = (2 * ln_L - np.log(t_minus) - math.log(2) - math.log(a_tilde)) / (2 * sigma)
    return RelativeErrorSeries(ln_L, np.abs(np.expm1(expo)), float(a_tilde))


def compare_a(trace, profile: ProfileSolution):
    """(a at the end of the run, a~ of the unit-amplitude profile, |difference|)."""
    p, q = trace.config.params, profile.params
    if abs(p.d - q.d) > 1e-12 or abs(p.sigma - q.sigma) > 1e-12:
        raise ParameterMismatch(f"trace is for (d, sigma) = ({p.d}, {p.sigma}), "
                                f"profile for ({q.d}, {q.sigma})")
    _, a_tilde = rescale_family(profile, 1.0)
    return trace.a_end, a_tilde, abs(trace.a_end - a_tilde)


def resample_modulus(q_tilde: ScaledProfile, xi) -> np.ndarray:
    """|Q~| at ``xi`` by natural cubic spline through the profile nodes."""
    xi = np.asarray(xi, dtype=float)
    if xi.size and (xi.min() < q_tilde.eta[0] or xi.max() > q_tilde.eta[-1]):
        raise InvalidArgument("resampling points leave the profile domain")
    return NaturalCubicSpline(q_tilde.eta, np.abs(q_tilde.q))(xi)


def profile_distance(v, xi, q_tilde) -> float:
    """sup over the common range of | |v| - |Q~| |.

    ``q_tilde`` is a ScaledProfile (re-sampled by spline) or samples of Q~
    already on ``xi``.
    """
    v = np.asarray(v)
    xi = np.asarray(xi, dtype=float)
    if isinstance(q_tilde, ScaledProfile):
        keep = xi <= q_tilde.eta[-1]
        if not np.any(keep):
            raise InvalidArgument("the grids do not overlap")
        q_mod = resample_modulus(q_tilde, xi[keep])
    else:
        q_mod = np.abs(np.asarray(q_tilde))
        if q_mod.shape != v.shape:
            raise InvalidArgument("samples must share the grid of v")
        keep = np.ones(v.shape, dtype=bool)
    if not np.any(keep):
        raise InvalidArgument("the grids do not overlap")
    return float(np.max(np.abs(np.abs(v[keep]) - q_mod)))


def stabilization_onset(series: RelativeErrorSeries, rel_band: float = 0.02,
                        plateau: tuple = (1e-20, 1e-16)) -> float:
    """Largest L from which on e_rel stays within ``rel_band`` (relative) of
    its plateau, the median over ``plateau[0] <= L <= plateau[1]``.

    The default band of 2% is well below what a log-scale plot of e_rel
    resolves, so the onset marks where the curve looks flat.
    """
    ln_L, e = series.ln_L, series.e_rel
    tail = (ln_L >= math.log(plateau[0])) & (ln_L <= math.log(plateau[1]))
    if not np.any(tail):
        raise InsufficientRecords("no records in the plateau range")
    level = np.median(e[tail])
    bad = np.nonzero(np.abs(e - level) > rel_band * level)[0]
    bad = bad[ln_L[bad] >= math.log(plateau[0])]
    idx = 0 if bad.size == 0 else bad[-1] + 1
    if idx >= ln_L.size:
        raise InsufficientRecords("e_rel never settles")
    return float(math.exp(ln_L[idx]))
