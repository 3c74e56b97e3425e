"""General large-margin softmax (GLM-Softmax).

The target logit ``|x| |w_t| cos(theta_t)`` is replaced by
``|x| |w_t| psi(theta_t)`` with

    psi(theta) = (-1)^k cos(m1 theta + m2) - m3 - 2k,
    k = floor((m1 theta + m2) / pi)

which keeps psi continuous and non-increasing for any real ``m1``.
Non-target logits are left as plain cosines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ._accel import USE_NUMBA, njit
from .numerics import ContractError

GRID_POINTS = 10_001
GRID_TOL = 1e-12
SIN_FLOOR = 1e-7
UNIT_NORM_TOL = 1e-6


class InvalidMarginError(ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__(report.describe())


class DegenerateAngleError(ValueError):
    pass


@dataclass(frozen=True)
class MarginParams:
    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0

    def as_tuple(self):
        return (self.m1, self.m2, self.m3)

    @property
    def is_identity(self):
        return self.as_tuple() == (1.0, 0.0, 0.0)

    def __str__(self):
        return f"({self.m1:g}, {self.m2:g}, {self.m3:g})"


MODIFIED_SOFTMAX = MarginParams(1.0, 0.0, 0.0)


@dataclass(frozen=True)
class PsiEvaluation:
    theta: float
    k: int
    value: float


@dataclass(frozen=True)
class Violation:
    kind: str  # "monotonicity" | "dominance"
    theta: float
    psi: float
    reference: float  # previous psi (monotonicity) or cos(theta) (dominance)


@dataclass(frozen=True)
class ValidationReport:
    params: MarginParams
    violation: Violation | None = None

    @property
    def ok(self):
        return self.violation is None

    def describe(self):
        if self.ok:
            return f"margin params {self.params} are valid"
        v = self.violation
        if v.kind == "dominance":
            return (f"margin params {self.params}: dominance violation, psi exceeds cos at theta={v.theta:.6f} "
                    f"(psi={v.psi:.12g}, cos={v.reference:.12g})")
        return (f"margin params {self.params}: monotonicity violation, psi increases at theta={v.theta:.6f} "
                f"(psi={v.psi:.12g}, previous={v.reference:.12g})")


@dataclass(frozen=True)
class LossResult:
    loss: float
    target_logit: float
    grad_x: np.ndarray | None = None
    grad_w: np.ndarray | None = None


# ---------------------------------------------------------------------------
# psi
# ---------------------------------------------------------------------------

def _check_theta(theta):
    if not (0.0 <= theta <= math.pi):
        raise ContractError(f"theta={theta!r} is outside [0, pi]")


def k_index(theta: float, m1: float, m2: float) -> int:
    """Piece index of psi at ``theta``; exact multiples of pi take the upper piece."""
    _check_theta(theta)
    if m1 <= 0:
        raise ContractError("m1 must be positive")
    k = math.floor((m1 * theta + m2) / math.pi)
    return int(min(max(k, 0), math.floor(m1) + 1))


@njit
def _psi_loop(theta, m1, m2, m3):
    n = theta.shape[0]
    values = np.empty(n)
    ks = np.empty(n, dtype=np.int64)
    kmax = math.floor(m1) + 1
    for i in range(n):
        arg = m1 * theta[i] + m2
        k = math.floor(arg / math.pi)
        if k < 0:
            k = 0
        elif k > kmax:
            k = kmax
        sign = 1.0 if k % 2 == 0 else -1.0
        values[i] = sign * math.cos(arg) - m3 - 2.0 * k
        ks[i] = k
    return values, ks


def _psi_numpy(theta, m1, m2, m3):
    arg = m1 * theta + m2
    k = np.clip(np.floor(arg / np.pi), 0, math.floor(m1) + 1).astype(np.int64)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return sign * np.cos(arg) - m3 - 2.0 * k, k


def psi_values(theta, params: MarginParams):
    """Vectorised psi over an array of angles. Returns ``(values, k)``."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    kernel = _psi_loop if USE_NUMBA else _psi_numpy
    return kernel(theta, float(params.m1), float(params.m2), float(params.m3))


def psi(theta: float, params: MarginParams) -> PsiEvaluation:
    _check_theta(theta)
    report = validate_params(params)
    if not report.ok:
        raise InvalidMarginError(report)
    k = k_index(theta, params.m1, params.m2)
    value = (-1) ** k * math.cos(params.m1 * theta + params.m2) - params.m3 - 2 * k
    return PsiEvaluation(theta, k, value)


def psi_approx(theta: float, params: MarginParams) -> float:
    """The k-free approximation ``cos(m1 theta + m2) - m3``. Comparison only."""
    _check_theta(theta)
    return math.cos(params.m1 * theta + params.m2) - params.m3


def psi_approx_values(theta, params: MarginParams):
    theta = np.asarray(theta, dtype=np.float64)
    return np.cos(params.m1 * theta + params.m2) - params.m3


@lru_cache(maxsize=4096)
def _validate_cached(m1, m2, m3):
    params = MarginParams(m1, m2, m3)
    if not m1 > 0:
        return ValidationReport(params, Violation("monotonicity", 0.0, math.nan, math.nan))
    grid = np.linspace(0.0, math.pi, GRID_POINTS)
    values, _ = psi_values(grid, params)
    cos = np.cos(grid)
    over = np.nonzero(values > cos + GRID_TOL)[0]
    rise = np.nonzero(np.diff(values) > GRID_TOL)[0] + 1
    first_over = over[0] if over.size else GRID_POINTS
    first_rise = rise[0] if rise.size else GRID_POINTS
    if first_over == first_rise == GRID_POINTS:
        return ValidationReport(params)
    if first_over <= first_rise:
        i = first_over
        return ValidationReport(params, Violation("dominance", grid[i], values[i], cos[i]))
    i = first_rise
    return ValidationReport(params, Violation("monotonicity", grid[i], values[i], values[i - 1]))


def validate_params(params: MarginParams) -> ValidationReport:
    """Grid check that psi is non-increasing and never above cos on [0, pi]."""
    return _validate_cached(float(params.m1), float(params.m2), float(params.m3))


def piece_boundaries(params: MarginParams):
    """Angles in (0, pi) where m1*theta + m2 crosses a multiple of pi."""
    out = []
    k = 1
    while True:
        tb = (k * math.pi - params.m2) / params.m1
        if tb >= math.pi:
            break
        if tb > 0:
            out.append(tb)
        k += 1
    return out


def decision_regions(params: MarginParams, grid_points: int):
    """Two-class decision map over (theta1, theta2) in [0, pi]^2.

    Region codes: 1 where a class-1 sample meets the strict criterion
    ``psi(theta1) > cos(theta2)``, 2 for the mirrored class-2 criterion, 0
    for the margin band where both criteria fail strictly, and -1 for points
    lying exactly on a boundary.
    """
    grid = np.linspace(0.0, math.pi, grid_points)
    p, _ = psi_values(grid, params)
    c = np.cos(grid)
    t1, t2 = np.meshgrid(grid, grid, indexing="ij")
    p1, c2 = np.meshgrid(p, c, indexing="ij")
    c1, p2 = np.meshgrid(c, p, indexing="ij")
    region = np.zeros(t1.shape, dtype=np.int64)
    region[p1 - c2 > GRID_TOL] = 1
    region[p2 - c1 > GRID_TOL] = 2
    neither = (p1 - c2 < -GRID_TOL) & (p2 - c1 < -GRID_TOL)
    region[(region == 0) & ~neither] = -1
    return t1, t2, region


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

@njit
def _glm_batch_loop(x, w, targets, m1, m2, m3, approx, sin_floor):
    b, d = x.shape
    c = w.shape[0]
    losses = np.zeros(b)
    tlogits = np.zeros(b)
    thetas = np.zeros(b)
    gx = np.zeros((b, d))
    gw = np.zeros((c, d))
    wnorm = np.empty(c)
    for j in range(c):
        acc = 0.0
        for i in range(d):
            acc += w[j, i] * w[j, i]
        wnorm[j] = math.sqrt(acc)
    z = np.empty(c)
    dzt_x = np.empty(d)
    dzt_w = np.empty(d)
    for n in range(b):
        t = targets[n]
        xn = 0.0
        for i in range(d):
            xn += x[n, i] * x[n, i]
        xn = math.sqrt(xn)
        if xn == 0.0:
            losses[n] = math.log(c)
            thetas[n] = math.nan
            continue
        for j in range(c):
            acc = 0.0
            for i in range(d):
                acc += x[n, i] * w[j, i]
            z[j] = acc
        cos_t = z[t] / (xn * wnorm[t])
        if cos_t > 1.0:
            cos_t = 1.0
        elif cos_t < -1.0:
            cos_t = -1.0
        theta = math.acos(cos_t)
        arg = m1[n] * theta + m2[n]
        if approx:
            k = 0
        else:
            k = math.floor(arg / math.pi)
            kmax = math.floor(m1[n]) + 1
            if k < 0:
                k = 0
            elif k > kmax:
                k = kmax
        sign = 1.0 if k % 2 == 0 else -1.0
        p = sign * math.cos(arg) - m3[n] - 2.0 * k
        z[t] = xn * wnorm[t] * p
        zmax = z[0]
        for j in range(1, c):
            if z[j] > zmax:
                zmax = z[j]
        se = 0.0
        for j in range(c):
            se += math.exp(z[j] - zmax)
        lse = zmax + math.log(se)
        losses[n] = lse - z[t]
        tlogits[n] = z[t]
        thetas[n] = theta
        s = math.sin(theta)
        if s < sin_floor:
            s = sin_floor
        if not approx and arg == k * math.pi:
            g = 0.0
        else:
            g = m1[n] * sign * math.sin(arg) / s
        for i in range(d):
            xh = x[n, i] / xn
            wh = w[t, i] / wnorm[t]
            dzt_x[i] = wnorm[t] * p * xh + g * (w[t, i] - cos_t * wnorm[t] * xh)
            dzt_w[i] = xn * p * wh + g * (x[n, i] - cos_t * xn * wh)
        for j in range(c):
            pj = math.exp(z[j] - lse)
            if j == t:
                coef = pj - 1.0
                for i in range(d):
                    gx[n, i] += coef * dzt_x[i]
                    gw[j, i] += coef * dzt_w[i]
            else:
                for i in range(d):
                    gx[n, i] += pj * w[j, i]
                    gw[j, i] += pj * x[n, i]
    return losses, tlogits, thetas, gx, gw


def _glm_batch_numpy(x, w, targets, m1, m2, m3, approx, sin_floor):
    b, d = x.shape
    rows = np.arange(b)
    wnorm = np.linalg.norm(w, axis=1)
    xn = np.linalg.norm(x, axis=1)
    alive = xn > 0.0
    xn_safe = np.where(alive, xn, 1.0)
    z = x @ w.T
    wt = w[targets]
    wtn = wnorm[targets]
    cos_t = np.clip(z[rows, targets] / (xn_safe * wtn), -1.0, 1.0)
    theta = np.arccos(cos_t)
    arg = m1 * theta + m2
    if approx:
        k = np.zeros(b, dtype=np.int64)
    else:
        k = np.clip(np.floor(arg / np.pi), 0, np.floor(m1) + 1).astype(np.int64)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    p = sign * np.cos(arg) - m3 - 2.0 * k
    z[rows, targets] = xn * wtn * p
    z[~alive] = 0.0
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    losses = lse - z[rows, targets]
    prob = np.exp(z - lse[:, None])
    s = np.maximum(np.sin(theta), sin_floor)
    g = m1 * sign * np.sin(arg) / s
    if not approx:
        g = np.where(arg == k * np.pi, 0.0, g)
    xh = x / xn_safe[:, None]
    wh = wt / wtn[:, None]
    dzt_x = (wtn * p)[:, None] * xh + g[:, None] * (wt - (cos_t * wtn)[:, None] * xh)
    dzt_w = (xn * p)[:, None] * wh + g[:, None] * (x - (cos_t * xn)[:, None] * wh)
    coef = prob.copy()
    coef[rows, targets] = 0.0
    coef[~alive] = 0.0
    pt = np.where(alive, prob[rows, targets] - 1.0, 0.0)
    gx = coef @ w + pt[:, None] * dzt_x
    gw = coef.T @ x
    np.add.at(gw, targets, pt[:, None] * dzt_w)
    tlogits = np.where(alive, z[rows, targets], 0.0)
    losses = np.where(alive, losses, math.log(w.shape[0]))
    theta = np.where(alive, theta, np.nan)
    return losses, tlogits, theta, gx, gw


def glm_softmax_batch(x, weights, targets, m1, m2=None, m3=None, approx=False,
                      sin_floor=SIN_FLOOR):
    """Per-sample GLM-Softmax losses and gradients for a batch.

    ``m1``, ``m2``, ``m3`` are scalars or per-sample arrays, which is how
    overlap gating mixes margin settings inside one batch. Weight rows may
    have any norm. ``|sin theta|`` is floored at ``sin_floor``; all-zero
    embeddings get loss ``ln C`` and zero gradient.

    Returns ``(losses, target_logits, thetas, grad_x, grad_w)`` where
    ``grad_w`` is summed over the batch.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    b = x.shape[0]
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    if isinstance(m1, MarginParams):
        m1, m2, m3 = m1.as_tuple()
    m1 = np.broadcast_to(np.asarray(m1, dtype=np.float64), (b,)).copy()
    m2 = np.broadcast_to(np.asarray(m2, dtype=np.float64), (b,)).copy()
    m3 = np.broadcast_to(np.asarray(m3, dtype=np.float64), (b,)).copy()
    kernel = _glm_batch_loop if USE_NUMBA else _glm_batch_numpy
    return kernel(x, w, targets, m1, m2, m3, bool(approx), float(sin_floor))


def _check_inputs(x, weights, target):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ContractError(f"shape mismatch: x {x.shape}, weights {w.shape}")
    if not 0 <= target < w.shape[0]:
        raise ContractError(f"target {target} out of range for {w.shape[0]} classes")
    if np.linalg.norm(x) == 0.0:
        raise ContractError("zero embedding")
    dev = np.abs(np.linalg.norm(w, axis=1) - 1.0)
    if np.any(dev > UNIT_NORM_TOL):
        bad = int(np.argmax(dev))
        raise ContractError(f"weight row {bad} is not unit-norm (|w|-1 = {dev[bad]:.3g})")
    return x, w


def glm_softmax_loss(x, weights, target: int, params: MarginParams) -> LossResult:
    x, w = _check_inputs(x, weights, target)
    losses, tlogits, _, _, _ = glm_softmax_batch(x[None], w, [target], params)
    return LossResult(float(losses[0]), float(tlogits[0]))


def glm_softmax_grad(x, weights, target: int, params: MarginParams) -> LossResult:
    x, w = _check_inputs(x, weights, target)
    cos_t = np.clip(x @ w[target] / (np.linalg.norm(x) * np.linalg.norm(w[target])), -1, 1)
    theta = math.acos(cos_t)
    if theta < SIN_FLOOR or theta > math.pi - SIN_FLOOR:
        raise DegenerateAngleError(
            f"theta_t={theta:.3g} is within {SIN_FLOOR:g} of 0 or pi; gradient is ill-defined")
    losses, tlogits, _, gx, gw = glm_softmax_batch(x[None], w, [target], params)
    return LossResult(float(losses[0]), float(tlogits[0]), gx[0], gw)


# ---------------------------------------------------------------------------
# schedule and overlap gating
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarginSchedule:
    target: MarginParams
    eta: float
    live: MarginParams = MODIFIED_SOFTMAX
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ContractError(f"eta must lie in (0, 1), got {self.eta}")

    def closed_form(self, n: int) -> MarginParams:
        decay = (1.0 - self.eta) ** n
        start = MODIFIED_SOFTMAX.as_tuple()
        return MarginParams(*(t - (t - s) * decay for t, s in zip(self.target.as_tuple(), start)))


def schedule_step(schedule: MarginSchedule) -> MarginSchedule:
    eta = schedule.eta
    live = MarginParams(*(m + eta * (t - m) for m, t in
                          zip(schedule.live.as_tuple(), schedule.target.as_tuple())))
    return replace(schedule, live=live, step_count=schedule.step_count + 1)


def steps_to_fraction(eta: float, fraction: float = 0.95) -> int:
    """Smallest n with (1 - eta)^n <= 1 - fraction."""
    return math.ceil(math.log(1.0 - fraction) / math.log(1.0 - eta))


def eta_for_steps(steps: int, fraction: float = 0.95) -> float:
    """Step factor that brings the live margins within ``fraction`` after ``steps`` updates."""
    return 1.0 - (1.0 - fraction) ** (1.0 / steps)


def effective_params(is_overlap: bool, schedule: MarginSchedule) -> MarginParams:
    return MODIFIED_SOFTMAX if is_overlap else schedule.live
