"""Gradient-based minimization of the transfer objective.

The default method is L-BFGS with a strong-Wolfe line search, which keeps
the loss trace monotone non-increasing; Adam is available as a fallback
for configurations where curvature information misbehaves. The two-stage
schedule first minimizes the unregularized (content + segmented style)
objective from seeded noise, then adds the photorealism term and
warm-starts from the stage-1 result.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import OptimizationError
from .features import ExtractorSpec
from .losses import (
    LossBreakdown,
    ObjectiveConfig,
    ObjectiveState,
    build_objective_state,
    total_loss,
)

_GRAD_FLOOR = 1e-14  # infinity-norm below which a gradient counts as zero
_CURVATURE_GUARD = 1e-10


@dataclass(frozen=True)
class OptimizerParams:
    """Settings for one optimization stage (shared by both stages unless
    the caller overrides stage 2)."""

    method: str = "lbfgs"
    max_iters: int = 500
    history: int = 10
    step_size: float = 1e-2
    tol: float = 1e-6
    tol_window: int = 5
    seed: int = 0
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9

    def __post_init__(self):
        if self.method not in ("lbfgs", "adam"):
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.history < 1:
            raise ValueError("history must be >= 1")


@dataclass
class StageResult:
    image: np.ndarray
    trace: list[LossBreakdown]
    termination: str  # max_iters | converged | line_search_failure

    @property
    def final(self) -> LossBreakdown:
        return self.trace[-1]


def _check_finite(value: float, grad: np.ndarray, iteration: int) -> None:
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise OptimizationError(
            f"non-finite loss or gradient at iteration {iteration}", iteration
        )


def _two_loop_direction(g, s_list, y_list, rho_list):
    q = -g
    if not s_list:
        return q
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y = s_list[-1], y_list[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def _strong_wolfe(evaluate, x, d, f0, g0, c1, c2, alpha0):
    """Strong-Wolfe line search (bracket + zoom with bisection).

    evaluate(z) -> (breakdown, grad). Returns (alpha, breakdown, grad, x_new)
    or None when not even an Armijo point was found.
    """
    dphi0 = float(np.dot(g0, d))
    if dphi0 >= 0:
        return None

    def probe(alpha):
        z = x + alpha * d
        bd, g = evaluate(z)
        phi = bd.weighted_total
        if not np.isfinite(phi) or not np.all(np.isfinite(g)):
            return np.inf, 0.0, None, None, z
        return phi, float(np.dot(g, d)), bd, g, z

    armijo = lambda alpha, phi: phi <= f0 + c1 * alpha * dphi0

    best = None  # lowest Armijo-satisfying point seen

    def consider(alpha, phi, bd, g, z):
        nonlocal best
        if bd is not None and armijo(alpha, phi):
            if best is None or phi < best[1].weighted_total:
                best = (alpha, bd, g, z)

    def zoom(lo, phi_lo, hi):
        for _ in range(30):
            alpha = 0.5 * (lo + hi)
            phi, dphi, bd, g, z = probe(alpha)
            consider(alpha, phi, bd, g, z)
            if not armijo(alpha, phi) or phi >= phi_lo:
                hi = alpha
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return alpha, bd, g, z
                if dphi * (hi - lo) >= 0:
                    hi = lo
                lo, phi_lo = alpha, phi
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return best

    alpha_prev, phi_prev = 0.0, f0
    alpha = alpha0
    for i in range(20):
        phi, dphi, bd, g, z = probe(alpha)
        consider(alpha, phi, bd, g, z)
        if not armijo(alpha, phi) or (i > 0 and phi >= phi_prev):
            return zoom(alpha_prev, phi_prev, alpha)
        if abs(dphi) <= -c2 * dphi0:
            return alpha, bd, g, z
        if dphi >= 0:
            return zoom(alpha, phi, alpha_prev)
        alpha_prev, phi_prev = alpha, phi
        alpha *= 2.0
    return best


def _converged(totals: list[float], tol: float, window: int) -> bool:
    if len(totals) <= window:
        return False
    earlier = totals[-1 - window]
    drop = earlier - totals[-1]
    return drop >= 0 and drop < tol * max(abs(earlier), 1e-300)


def minimize(objective, init: np.ndarray, params: OptimizerParams, callback=None) -> StageResult:
    """Minimize a value-and-gradient objective from an initial image.

    objective(image) -> (LossBreakdown, gradient array of the same shape).
    The callback, when given, receives (iteration, image, breakdown) for
    the initial point and after every accepted step.
    """
    if params.method == "adam":
        return _minimize_adam(objective, init, params, callback)
    return _minimize_lbfgs(objective, init, params, callback)


def _minimize_lbfgs(objective, init, params, callback) -> StageResult:
    shape = init.shape
    x = np.array(init, dtype=np.float64).ravel()

    def evaluate(z):
        bd, g = objective(z.reshape(shape))
        return bd, np.asarray(g, dtype=np.float64).ravel()

    bd, g = evaluate(x)
    _check_finite(bd.weighted_total, g, 0)
    trace = [bd]
    if callback:
        callback(0, x.reshape(shape), bd)
    if np.max(np.abs(g)) <= _GRAD_FLOOR:
        return StageResult(x.reshape(shape).copy(), trace, "converged")

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    totals = [bd.weighted_total]
    termination = "max_iters"

    for it in range(1, params.max_iters + 1):
        d = _two_loop_direction(g, s_list, y_list, rho_list)
        if np.dot(d, g) >= 0:
            s_list, y_list, rho_list = [], [], []
            d = -g
        alpha0 = 1.0 if s_list else min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-12))
        hit = _strong_wolfe(
            evaluate, x, d, bd.weighted_total, g, params.wolfe_c1, params.wolfe_c2, alpha0
        )
        if hit is None:
            termination = "line_search_failure"
            break
        _, bd_new, g_new, x_new = hit
        _check_finite(bd_new.weighted_total, g_new, it)
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > _CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > params.history:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, bd, g = x_new, bd_new, g_new
        trace.append(bd)
        totals.append(bd.weighted_total)
        if callback:
            callback(it, x.reshape(shape), bd)
        if np.max(np.abs(g)) <= _GRAD_FLOOR or _converged(
            totals, params.tol, params.tol_window
        ):
            termination = "converged"
            break
    return StageResult(x.reshape(shape).copy(), trace, termination)


def _minimize_adam(objective, init, params, callback) -> StageResult:
    shape = init.shape
    x = np.array(init, dtype=np.float64).ravel()
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(x)
    v = np.zeros_like(x)

    def evaluate(z):
        bd, g = objective(z.reshape(shape))
        return bd, np.asarray(g, dtype=np.float64).ravel()

    bd, g = evaluate(x)
    _check_finite(bd.weighted_total, g, 0)
    trace = [bd]
    totals = [bd.weighted_total]
    if callback:
        callback(0, x.reshape(shape), bd)
    if np.max(np.abs(g)) <= _GRAD_FLOOR:
        return StageResult(x.reshape(shape).copy(), trace, "converged")
    termination = "max_iters"
    for it in range(1, params.max_iters + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**it)
        vhat = v / (1 - beta2**it)
        x = x - params.step_size * mhat / (np.sqrt(vhat) + eps)
        bd, g = evaluate(x)
        _check_finite(bd.weighted_total, g, it)
        trace.append(bd)
        totals.append(bd.weighted_total)
        if callback:
            callback(it, x.reshape(shape), bd)
        if np.max(np.abs(g)) <= _GRAD_FLOOR or _converged(
            totals, params.tol, params.tol_window
        ):
            termination = "converged"
            break
    return StageResult(x.reshape(shape).copy(), trace, termination)


# ---------------------------------------------------------------------------
# two-stage schedule


@dataclass
class TwoStageResult:
    stage1: StageResult
    stage2: StageResult


def noise_image(shape: tuple[int, int, int], seed: int) -> np.ndarray:
    """Stage-1 initialization: uniform(0, 1) per channel from the seed."""
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=shape)


def two_stage_transfer(
    input_image: np.ndarray,
    style_image: np.ndarray,
    masks,
    objective: ObjectiveConfig,
    spec: ExtractorSpec,
    params: OptimizerParams,
    params_stage2: OptimizerParams | None = None,
    snapshot_callback=None,
    state: ObjectiveState | None = None,
) -> TwoStageResult:
    """Run both optimization stages and return their results and traces.

    Stage 1 drops the photorealism term and starts from seeded noise;
    stage 2 optimizes the full objective from the stage-1 image. A
    prebuilt ObjectiveState may be passed to avoid recomputing targets.
    """
    if state is None:
        state = build_objective_state(input_image, style_image, masks, objective, spec)
    state1 = state.without_matting()

    def cb(stage):
        if snapshot_callback is None:
            return None
        return lambda it, img, bd: snapshot_callback(stage, it, img, bd)

    init = noise_image(input_image.shape, params.seed)
    stage1 = minimize(lambda x: total_loss(state1, x), init, params, cb(1))
    stage2 = minimize(
        lambda x: total_loss(state, x),
        stage1.image,
        params_stage2 or params,
        cb(2),
    )
    return TwoStageResult(stage1, stage2)


def lambda_sweep(
    input_image: np.ndarray,
    style_image: np.ndarray,
    masks,
    objective: ObjectiveConfig,
    spec: ExtractorSpec,
    params: OptimizerParams,
    lambdas,
    params_stage2: OptimizerParams | None = None,
) -> tuple[StageResult, list[tuple[float, StageResult]]]:
    """Share one stage-1 run across a list of photorealism weights.

    Stage 1 does not involve the regularizer, so each lambda only reruns
    stage 2 from the common warm start. Returns (stage1, [(lambda,
    stage2_result), ...]) in the given lambda order.
    """
    lambdas = [float(v) for v in lambdas]
    base_config = objective if objective.lam > 0 else replace(objective, lam=1.0)
    state = build_objective_state(
        input_image, style_image, masks, base_config, spec
    )
    state1 = state.without_matting()
    init = noise_image(input_image.shape, params.seed)
    stage1 = minimize(lambda x: total_loss(state1, x), init, params)
    results = []
    p2 = params_stage2 or params
    for lam in lambdas:
        state_l = replace(state, lam=lam)
        stage2 = minimize(lambda x: total_loss(state_l, x), stage1.image, p2)
        results.append((lam, stage2))
    return stage1, results
