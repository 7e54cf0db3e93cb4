"""Implicit consensus activation: evaluation and partial derivatives.

The activation output ``v`` for a pre-activation input ``a`` is the unique
root of

    R(a, v) = lam * p * |v|**(p-1) * sign(v) + (v - a) = 0,

an odd, strictly increasing map with ``|v| <= |a|``.  For ``p == 2`` the
root has the closed form ``v = a / (1 + 2*lam)``.  Every other case is
approximated by a fixed number of reweighted iterations, accelerated by
Aitken extrapolation (see `_steffensen`).  Two complementary update rules
are used: a divisive one (`method1_step`) that is stable for small inputs
and for ``p <= 2``, and an inverted one (`method2_step`) that is stable
for large inputs when ``p > 2``.  The switch happens at the input
magnitude `threshold_input`, where the activation slope ``dv/da`` crosses
one half.

Both derivative routines differentiate the implicit equation at the
converged output, so they take ``v`` (not ``a``) as their argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "P_MIN",
    "P_MAX",
    "EPS_V",
    "EXIT_TOL",
    "ActivationParams",
    "residual",
    "eval_p2",
    "method1_step",
    "method2_step",
    "threshold_input",
    "evaluate",
    "evaluate_many",
    "dv_da",
    "dv_da_many",
    "dv_dp",
    "dv_dp_many",
]

P_MIN = 1.01
P_MAX = 1.0e4

# Floor for |v| wherever it enters a negative power (p < 2 only).
EPS_V = 1e-12
# Successive-iterate tolerance for early exit of the fixed-point loop.
EXIT_TOL = 1e-12


@dataclass(frozen=True)
class ActivationParams:
    """Shape exponent ``p``, regularization weight ``lam``, iteration budget.

    ``p`` must lie in ``[P_MIN, P_MAX]``; ``lam`` must be finite and
    nonnegative; ``inner_iters`` is the fixed step count of the
    fixed-point loop in `evaluate` (early exit allowed).
    """

    p: float
    lam: float
    inner_iters: int = 100

    def __post_init__(self) -> None:
        if not (P_MIN <= self.p <= P_MAX):
            raise ValueError(f"p must lie in [{P_MIN}, {P_MAX}], got {self.p}")
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"lam must be finite and >= 0, got {self.lam}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")


def _as_float_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _scalar_or_array(x: np.ndarray):
    return float(x) if x.ndim == 0 else x


def residual(a, v, params: ActivationParams):
    """R(a, v) = lam*p*|v|**(p-1)*sign(v) + (v - a); zero exactly at v = f(a)."""
    a = _as_float_array(a)
    v = _as_float_array(v)
    with np.errstate(over="ignore"):
        r = params.lam * params.p * np.abs(v) ** (params.p - 1.0) * np.sign(v) + (v - a)
    return _scalar_or_array(r)


def eval_p2(a, lam: float):
    """Closed-form root for p = 2: a / (1 + 2*lam)."""
    a = _as_float_array(a)
    return _scalar_or_array(a / (1.0 + 2.0 * lam))


def method1_step(a, v_prev, params: ActivationParams):
    """One divisive update: a / (1 + lam*p*|v_prev|**(p-2)).

    For ``p < 2`` a zero ``v_prev`` is floored at `EPS_V` so the negative
    power stays finite (the a = 0 fixed point is still exact because the
    numerator vanishes).
    """
    a = _as_float_array(a)
    v_prev = _as_float_array(v_prev)
    w = np.abs(v_prev)
    if params.p < 2.0:
        w = np.maximum(w, EPS_V)
    with np.errstate(over="ignore"):
        denom = 1.0 + params.lam * params.p * w ** (params.p - 2.0)
    return _scalar_or_array(a / denom)


def method2_step(a, v_prev, params: ActivationParams):
    """One inverted update: sign(a) * (|a - v_prev| / (lam*p))**(1/(p-1))."""
    if params.p <= 1.0:
        raise ValueError("method2_step requires p > 1")
    if params.lam <= 0.0:
        raise ValueError("method2_step requires lam > 0")
    a = _as_float_array(a)
    v_prev = _as_float_array(v_prev)
    step = np.sign(a) * (np.abs(a - v_prev) / (params.lam * params.p)) ** (1.0 / (params.p - 1.0))
    return _scalar_or_array(step)


def _threshold_many(p: np.ndarray, lam: float) -> np.ndarray:
    """threshold for arrays of p; valid only where p > 2, junk elsewhere."""
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        base = 1.0 / (lam * p * (p - 1.0))
        return base ** (1.0 / (p - 2.0)) * (1.0 + 1.0 / (p - 1.0))


def _threshold_output(p, lam: float):
    """Output magnitude v_tau at the method-switch point: where the slope
    dv/da crosses one half, lam*p*(p-1)*v_tau**(p-2) = 1.  Valid for p > 2."""
    return (1.0 / (lam * p * (p - 1.0))) ** (1.0 / (p - 2.0))


def threshold_input(params: ActivationParams) -> float:
    """Input magnitude where dv/da = 1/2, the method-switch point.

    Defined only for ``p > 2`` and ``lam > 0``.  The corresponding output
    magnitude is ``(1/(lam*p*(p-1)))**(1/(p-2))``; the input adds the
    regularization pull-back factor ``1 + 1/(p-1)``.
    """
    if params.p <= 2.0:
        raise ValueError("threshold_input is undefined for p <= 2")
    if params.lam <= 0.0:
        raise ValueError("threshold_input is undefined for lam <= 0")
    return float(_threshold_many(np.float64(params.p), params.lam))


# Active-set compaction thresholds for `_steffensen`: once the still-moving
# fraction drops below _COMPACT_FRAC (and the batch is at least _COMPACT_MIN
# elements), the converged elements are dropped from the working arrays.
_COMPACT_MIN = 192
_COMPACT_FRAC = 0.625
# Batches up to this size run one fused loop that evaluates both update
# rules and selects per element; beyond it, per-rule subsets iterate
# separately so large batches never pay for the rule they don't use.
_FUSE_MAX = 256


def _steffensen(v: np.ndarray, lo, hi, aux: tuple, make_step, inner_iters: int) -> np.ndarray:
    """Reweighted iteration accelerated by Aitken extrapolation.

    One iteration applies the update map twice and combines the three
    iterates as ``v - (t1-v)^2 / (t2 - 2*t1 + v)``.  Fixed points of the
    map are preserved exactly, while convergence stays fast even where the
    raw map's slope approaches 1 (p near its lower bound with strong
    regularization) or -1 (inputs at the method-switch threshold) — both
    regimes where a plain or uniformly damped iteration cannot reach the
    root within a fixed step budget.  Candidates are clamped into
    ``[lo, hi]`` (a per-element interval the caller guarantees to contain
    the root), and the extrapolation falls back to the plain double step
    where it is degenerate.

    Each element freezes once its own update falls below `EXIT_TOL`, and
    every element's iterate sequence depends only on its own lane, so
    results are independent of how inputs are batched.  Frozen elements
    are periodically compacted out of the working arrays; ``aux`` holds
    the per-element parameter arrays that ``make_step(aux)`` turns into
    the update map, so they can be compacted alongside ``v``.
    """
    out = v
    idx = None
    done = np.zeros(v.shape, dtype=bool)
    step = make_step(aux)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(inner_iters):
            t1 = step(v)
            t2 = step(t1)
            d1 = t1 - v
            den = (t2 - t1) - d1
            cand = v - d1 * d1 / den
            # Extrapolation solves the local geometric model, whose fixed
            # point is attracting only while the sequence contracts or
            # oscillates (den and d1 of opposite sign).  While the map is
            # locally expanding the model's fixed point is the repelling
            # one behind the iterates, so extrapolating would walk back
            # into it; ride the raw double step instead, which moves away
            # from repelling points and into the root's basin.
            accept = (den * d1 < 0.0) & np.isfinite(cand)
            cand = np.where(accept, cand, t2)
            np.clip(cand, lo, hi, out=cand)
            # A candidate clamped back onto the current iterate while the
            # raw double step still moves is a pinned candidate, not
            # convergence; take the double step so the latch below can
            # only fire at a genuine fixed point of the update map.
            t2c = np.clip(t2, lo, hi)
            stuck = (np.abs(cand - v) <= EXIT_TOL) & (np.abs(t2c - v) > EXIT_TOL)
            if stuck.any():
                cand = np.where(stuck, t2c, cand)
            vn = np.where(done, v, cand)
            done |= np.abs(vn - v) <= EXIT_TOL
            v = vn
            if idx is None:
                out = v
            else:
                out[idx] = v
            if done.all():
                break
            if v.size >= _COMPACT_MIN:
                n_done = int(done.sum())
                if v.size - n_done < _COMPACT_FRAC * v.size:
                    keep = np.nonzero(~done)[0]
                    if idx is None:
                        out = v
                        idx = keep
                    else:
                        idx = idx[keep]
                    lo = lo[keep]
                    hi = hi[keep]
                    v = v[keep]
                    aux = tuple(x[keep] for x in aux)
                    done = np.zeros(keep.size, dtype=bool)
                    step = make_step(aux)
    return out


def _start_from(default: np.ndarray, v0, lo, hi) -> np.ndarray:
    """Caller-provided warm start clamped into the clip interval;
    non-finite entries fall back to the method's default start."""
    v = np.clip(v0, lo, hi)
    bad = ~np.isfinite(v)
    if bad.any():
        v[bad] = default[bad]
    return v


def _make_step1(lam: float):
    def make_step(aux):
        a, p, pm2, floor = aux

        def step(v: np.ndarray) -> np.ndarray:
            w = np.abs(v)
            np.maximum(w, EPS_V, out=w, where=floor)
            return a / (1.0 + lam * p * w**pm2)

        return step

    return make_step


def _make_step2(lam: float):
    def make_step(aux):
        a, sgn, inv, ex = aux

        def step(v: np.ndarray) -> np.ndarray:
            return sgn * (np.abs(a - v) * inv) ** ex

        return step

    return make_step


def _make_step_fused(lam: float):
    def make_step(aux):
        a, p, pm2, floor, sgn, inv, ex, use2 = aux
        any2 = bool(use2.any())

        def step(v: np.ndarray) -> np.ndarray:
            w = np.abs(v)
            np.maximum(w, EPS_V, out=w, where=floor)
            s1 = a / (1.0 + lam * p * w**pm2)
            if not any2:
                return s1
            s2 = sgn * (np.abs(a - v) * inv) ** ex
            return np.where(use2, s2, s1)

        return step

    return make_step


def _method2_bounds(a, p, lam: float):
    """Per-element start and clip interval for the inverted update rule.

    The rule maps iterates near ``a`` onto values near zero (the argument
    ``|a - v|`` collapses), so the iteration must never be clamped onto
    the input itself: the root satisfies ``|a - v| = lam*p*|v|**(p-1) >=
    v_tau/(p-1)`` above the switch threshold, which leaves room to pull
    the a-side bound in by half that margin.  Starting at ``sign(a) *
    v_tau`` (the root's magnitude at the threshold itself, a lower bound
    above it) keeps the start inside the map's contraction region.
    """
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        vtau = _threshold_output(p, lam)
        inset = vtau / (2.0 * (p - 1.0))
    start = np.sign(a) * vtau
    neg = a < 0.0
    pos = a > 0.0
    lo = np.where(neg, a + inset, 0.0)
    hi = np.where(pos, a - inset, 0.0)
    return start, lo, hi


def _iterate_method1(a, p, lam: float, inner_iters: int, v0=None) -> np.ndarray:
    lo = np.minimum(a, 0.0)
    hi = np.maximum(a, 0.0)
    v = a.copy() if v0 is None else _start_from(a, v0, lo, hi)
    aux = (a, p, p - 2.0, p < 2.0)
    return _steffensen(v, lo, hi, aux, _make_step1(lam), inner_iters)


def _iterate_method2(a, p, lam: float, inner_iters: int, v0=None) -> np.ndarray:
    start, lo, hi = _method2_bounds(a, p, lam)
    v = start if v0 is None else _start_from(start, v0, lo, hi)
    aux = (a, np.sign(a), 1.0 / (lam * p), 1.0 / (p - 1.0))
    return _steffensen(v, lo, hi, aux, _make_step2(lam), inner_iters)


def _iterate_fused(a, p, lam: float, use2, inner_iters: int, v0=None) -> np.ndarray:
    lo1 = np.minimum(a, 0.0)
    hi1 = np.maximum(a, 0.0)
    if use2.any():
        start2, lo2, hi2 = _method2_bounds(a, p, lam)
        start = np.where(use2, start2, a)
        lo = np.where(use2, lo2, lo1)
        hi = np.where(use2, hi2, hi1)
    else:
        start, lo, hi = a, lo1, hi1
    v = start.copy() if v0 is None else _start_from(start, v0, lo, hi)
    aux = (a, p, p - 2.0, p < 2.0, np.sign(a), 1.0 / (lam * p), 1.0 / (p - 1.0), use2)
    return _steffensen(v, lo, hi, aux, _make_step_fused(lam), inner_iters)


def evaluate_many(a, p, lam: float, inner_iters: int = 100, v0=None) -> np.ndarray:
    """Evaluate the activation elementwise; ``a`` and ``p`` broadcast.

    This is the array kernel behind `evaluate` and the network forward
    pass.  Elements are iterated independently (each freezes once its own
    update falls below `EXIT_TOL`), so results are identical no matter how
    inputs are batched.  ``v0`` optionally provides a starting iterate per
    element (clamped into the root bracket; default is ``a``): the root is
    unchanged, only the path to it, which lets a caller that solves many
    slowly-drifting instances reuse its previous solution.
    """
    a = _as_float_array(a)
    p = _as_float_array(p)
    shape = np.broadcast_shapes(a.shape, p.shape)
    af = np.ascontiguousarray(np.broadcast_to(a, shape)).ravel()
    if not np.all(np.isfinite(af)):
        raise ValueError("activation input must be finite")
    if lam == 0.0:
        return af.copy().reshape(shape)
    pf = np.ascontiguousarray(np.broadcast_to(p, shape)).ravel()
    vf = None
    if v0 is not None:
        vf = np.ascontiguousarray(np.broadcast_to(_as_float_array(v0), shape)).ravel()
    out = np.empty(af.shape, dtype=np.float64)

    is_p2 = pf == 2.0
    all_p2 = bool(is_p2.all())
    if all_p2:
        np.divide(af, 1.0 + 2.0 * lam, out=out)
        return out.reshape(shape)
    if is_p2.any():
        out[is_p2] = af[is_p2] / (1.0 + 2.0 * lam)
        rest = ~is_p2
        ar = af[rest]
        pr = pf[rest]
        vr = None if vf is None else vf[rest]
    else:
        rest = None
        ar = af
        pr = pf
        vr = vf
    a_tau = np.where(pr > 2.0, _threshold_many(pr, lam), np.inf)
    use2 = np.abs(ar) >= a_tau
    if ar.size <= _FUSE_MAX:
        vals = _iterate_fused(ar, pr, lam, use2, inner_iters, vr)
    else:
        vals = np.empty(ar.shape, dtype=np.float64)
        m1 = ~use2
        if m1.any():
            vals[m1] = _iterate_method1(
                ar[m1], pr[m1], lam, inner_iters, None if vr is None else vr[m1]
            )
        if use2.any():
            vals[use2] = _iterate_method2(
                ar[use2], pr[use2], lam, inner_iters, None if vr is None else vr[use2]
            )
    if rest is None:
        return vals.reshape(shape)
    out[rest] = vals
    return out.reshape(shape)


def evaluate(a, params: ActivationParams):
    """Activation output for input ``a`` (scalar or array).

    Dispatch: identity when ``lam == 0``; closed form when ``p == 2``;
    otherwise `method1_step` iteration below `threshold_input` (and for
    all inputs when ``p < 2``), `method2_step` iteration at or above it.
    Method 1 starts at ``v = a``; method 2 starts at the switch-point
    output magnitude (its rule degenerates at ``v = a``).  The loop runs
    at most ``inner_iters`` accelerated steps and exits early once
    successive iterates differ by at most `EXIT_TOL`.
    """
    out = evaluate_many(a, params.p, params.lam, params.inner_iters)
    return _scalar_or_array(np.asarray(out))


def _solve_scalar(a, p, lam: float, inner_iters: int, v0=None) -> float:
    """Root of `residual` for a single (a, p) pair in plain Python floats.

    Same dispatch, bracket, start, acceleration, and exit rule as
    `evaluate_many`, specialized to one element.  Per-sample training
    loops call this directly: on layers of a few neurons the array
    kernel's per-call overhead dwarfs the arithmetic, and a scalar loop
    is an order of magnitude faster.  Agreement with the array kernel is
    within root tolerance (the two paths share every algorithmic choice
    but may differ in final-ulp rounding).
    """
    a = float(a)
    p = float(p)
    if lam == 0.0:
        return a
    if p == 2.0:
        return a / (1.0 + 2.0 * lam)
    use2 = False
    if p > 2.0:
        base = 1.0 / (lam * p * (p - 1.0))
        try:
            vtau = base ** (1.0 / (p - 2.0))
        except OverflowError:
            vtau = math.inf
        use2 = abs(a) >= vtau * (1.0 + 1.0 / (p - 1.0))
    if use2:
        sgn = 1.0 if a > 0.0 else -1.0
        inset = vtau / (2.0 * (p - 1.0))
        start = sgn * vtau
        lo = a + inset if a < 0.0 else 0.0
        hi = a - inset if a > 0.0 else 0.0
        c = 1.0 / (lam * p)
        e = 1.0 / (p - 1.0)

        def step(v: float) -> float:
            return sgn * (abs(a - v) * c) ** e

    else:
        start = a
        lo = a if a < 0.0 else 0.0
        hi = a if a > 0.0 else 0.0
        floor_small = p < 2.0
        pm2 = p - 2.0

        def step(v: float) -> float:
            av = abs(v)
            if floor_small and av < EPS_V:
                av = EPS_V
            try:
                reg = lam * p * av**pm2
            except OverflowError:
                return math.copysign(0.0, a)
            return a / (1.0 + reg)

    v = start
    if v0 is not None:
        w = float(v0)
        if math.isfinite(w):
            v = lo if w < lo else hi if w > hi else w
    for _ in range(inner_iters):
        t1 = step(v)
        t2 = step(t1)
        d1 = t1 - v
        den = (t2 - t1) - d1
        if den * d1 < 0.0:
            cand = v - d1 * d1 / den
            if not math.isfinite(cand):
                cand = t2
        else:
            cand = t2
        if cand < lo:
            cand = lo
        elif cand > hi:
            cand = hi
        if abs(cand - v) <= EXIT_TOL:
            t2c = lo if t2 < lo else hi if t2 > hi else t2
            if abs(t2c - v) > EXIT_TOL:
                cand = t2c
            else:
                return cand
        v = cand
    return v


def _dv_da_scalar(v, p, lam: float) -> float:
    """`dv_da` for one element in plain Python floats."""
    if lam == 0.0:
        return 1.0
    av = abs(float(v))
    p = float(p)
    if av == 0.0 and p < 2.0:
        return 0.0
    try:
        d = lam * p * (p - 1.0) * av ** (p - 2.0)
    except OverflowError:
        return 0.0
    return 1.0 / (1.0 + d)


def _dv_dp_scalar(v, p, lam: float) -> float:
    """`dv_dp` for one element in plain Python floats."""
    if lam == 0.0:
        return 0.0
    v = float(v)
    p = float(p)
    av = abs(v)
    if av < EPS_V:
        return 0.0
    s = 1.0 if v > 0.0 else -1.0
    lg = math.log(av)
    if av >= 1.0:
        num = -lam * av * s * (1.0 + p * lg)
        try:
            den = lam * p * (p - 1.0) + av ** (2.0 - p)
        except OverflowError:
            return 0.0
        return num / den
    try:
        num = -lam * av ** (p - 1.0) * s * (1.0 + p * lg)
        den = lam * p * (p - 1.0) * av ** (p - 2.0) + 1.0
    except OverflowError:
        return 0.0
    return num / den


def dv_da_many(v, p, lam: float) -> np.ndarray:
    """Slope of the activation at a converged output ``v`` (array form)."""
    v = _as_float_array(v)
    p = _as_float_array(p)
    shape = np.broadcast_shapes(v.shape, p.shape)
    if lam == 0.0:
        return np.ones(shape, dtype=np.float64)
    with np.errstate(over="ignore", divide="ignore"):
        d = lam * p * (p - 1.0) * np.abs(v) ** (p - 2.0)
        out = 1.0 / (1.0 + d)
    return np.broadcast_to(out, shape).copy() if out.shape != shape else out


def dv_da(v, params: ActivationParams):
    """dv/da = 1 / (lam*p*(p-1)*|v|**(p-2) + 1).

    Limits: 0 for ``v = 0, p < 2`` (denominator blows up), 1 for
    ``v = 0, p > 2``, and ``1/(2*lam + 1)`` for ``p = 2`` where
    ``|0|**0`` is taken as 1.  Always in ``[0, 1]``.
    """
    return _scalar_or_array(dv_da_many(v, params.p, params.lam))


def dv_dp_many(v, p, lam: float) -> np.ndarray:
    """Sensitivity of the activation output to ``p`` (array form)."""
    v = _as_float_array(v)
    p = _as_float_array(p)
    shape = np.broadcast_shapes(v.shape, p.shape)
    vb = np.broadcast_to(v, shape)
    pb = np.broadcast_to(p, shape)
    out = np.zeros(shape, dtype=np.float64)
    if lam == 0.0:
        return out
    av = np.abs(vb)
    small = av < EPS_V
    big = av >= 1.0
    mid = ~small & ~big
    if mid.any():
        avm = av[mid]
        pm = pb[mid]
        lg = np.log(avm)
        with np.errstate(over="ignore", under="ignore"):
            num = -lam * avm ** (pm - 1.0) * np.sign(vb[mid]) * (1.0 + pm * lg)
            den = lam * pm * (pm - 1.0) * avm ** (pm - 2.0) + 1.0
        out[mid] = num / den
    if big.any():
        # Same ratio with numerator and denominator divided by |v|**(p-2),
        # which avoids overflow of the bare power for large p.
        avb = av[big]
        pbig = pb[big]
        lg = np.log(avb)
        with np.errstate(under="ignore"):
            num = -lam * avb * np.sign(vb[big]) * (1.0 + pbig * lg)
            den = lam * pbig * (pbig - 1.0) + avb ** (2.0 - pbig)
        out[big] = num / den
    return out


def dv_dp(v, params: ActivationParams):
    """dv/dp = -lam*|v|**(p-1)*sign(v)*(1 + p*ln|v|) / (lam*p*(p-1)*|v|**(p-2) + 1).

    Returns 0 when ``|v| < EPS_V`` (the numerator vanishes faster than the
    logarithm diverges).
    """
    return _scalar_or_array(dv_dp_many(v, params.p, params.lam))
