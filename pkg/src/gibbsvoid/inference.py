"""Likelihood-based inference for the pairwise families.

The density of a finite Gibbs process is written as
``j(x) = lambda^n(x; empty) * V(S)``: a telescoping product of conditional
intensities times the void probability of the whole window. The product
is always computed exactly; where ``V(S)`` comes from is delegated to a
void provider:

* :class:`ConjectureVoid` -- ``V(S) = exp(-int_S lambda(u; empty) du)``
  by quadrature (the closed-form conjecture),
* :class:`MonteCarloVoid` -- a batch-means estimate from a sample set of
  the same model,
* :class:`ExactDiscreteVoid` -- exact enumeration on a finite site set.

All energies use ``E(empty) = 0``, so ``log Z = -log V(S)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .geometry import QuadratureScheme, Window, _as_points, min_pairwise_distance
from .models import (
    ModelSpec,
    PARAM_BOUNDS,
    ZeroIntensityError,
    cond_intensity_many,
    grad_log_cond_intensity_many,
    log_cond_intensity_many,
    sequential_log_intensities,
)

__all__ = [
    "VoidProviderError",
    "ConjectureVoid",
    "MonteCarloVoid",
    "ExactDiscreteVoid",
    "FitResult",
    "exact_log_likelihood",
    "likelihood_metadata",
    "conjectured_void",
    "conjectured_log_partition",
    "pseudo_log_likelihood",
    "pseudo_score",
    "score",
    "mle_fit",
    "log_likelihood_ratio",
    "log_posterior_unnorm",
    "posterior_grid",
    "PosteriorGrid",
    "BETA_FLOOR",
]

BETA_FLOOR = 1e-10
GAMMA_FLOOR = 1e-12
GRAD_TOL = 1e-8
FTOL = 1e-12


class VoidProviderError(RuntimeError):
    pass


def _empty(d: int) -> np.ndarray:
    return np.empty((0, d))


@dataclass(frozen=True)
class ConjectureVoid:
    q: QuadratureScheme
    mode: str = field(default="conjecture", init=False)

    def log_void(self, m: ModelSpec) -> float:
        return -self.q.integrate(cond_intensity_many(m, self.q.nodes, _empty(self.q.window.d)))


@dataclass(frozen=True)
class MonteCarloVoid:
    """Void probability of the whole window estimated from a sample set of ``m``."""

    samples: object
    mode: str = field(default="monte_carlo", init=False)

    def estimate(self) -> tuple[float, float]:
        from .simulate import estimate_void

        if self.samples is None or len(self.samples) == 0:
            raise VoidProviderError("monte carlo void provider has no samples")
        return estimate_void(self.samples, self.samples.window)

    def log_void(self, m: ModelSpec) -> float:
        if getattr(self.samples, "model", None) is not None and self.samples.model != m:
            raise VoidProviderError(f"samples were drawn from {self.samples.model}, not {m}")
        v, _ = self.estimate()
        if v <= 0:
            raise VoidProviderError("no recorded pattern was empty; void estimate is 0")
        return math.log(v)


@dataclass(frozen=True)
class ExactDiscreteVoid:
    summary: object
    mode: str = field(default="exact_discrete", init=False)

    def log_void(self, m: ModelSpec) -> float:
        params = getattr(self.summary.model, "params", None)
        if params and params != m.to_dict():
            raise VoidProviderError(f"summary was enumerated for {params}, not {m.to_dict()}")
        return self.summary.log_void


def likelihood_metadata(void) -> dict:
    meta = {"void_mode": void.mode, "energy_convention": "E(empty)=0"}
    if isinstance(void, ConjectureVoid):
        meta["quadrature_resolution"] = void.q.resolution
    if isinstance(void, MonteCarloVoid):
        v, se = void.estimate()
        meta.update(void_estimate=v, void_se=se)
    return meta


def _log_prod_sequential(m: ModelSpec, X: np.ndarray) -> float:
    ll = sequential_log_intensities(m, X)
    if np.any(ll == -math.inf):
        return -math.inf
    return math.fsum(ll)


def exact_log_likelihood(m: ModelSpec, x, q: QuadratureScheme | None = None, void=None) -> float:
    """``sum_i log lambda(x_i; x_1..x_{i-1}) + log V(S)``; ``-inf`` for forbidden patterns."""
    if void is None:
        if q is None:
            raise ValueError("need a quadrature scheme or a void provider")
        void = ConjectureVoid(q)
    X = _as_points(x)
    data = _log_prod_sequential(m, X)
    log_v = void.log_void(m)
    return data + log_v if data != -math.inf else -math.inf


def _region_measure(region) -> float:
    if isinstance(region, Window):
        return region.measure
    lo, hi = (np.asarray(v, dtype=float) for v in region)
    return float(np.prod(np.clip(hi - lo, 0.0, None)))


def conjectured_void(m: ModelSpec, region, q: QuadratureScheme) -> float:
    """``exp(-int_B lambda(u; empty) du)`` with the quadrature cells clipped to ``B``."""
    if _region_measure(region) == 0.0:
        return 1.0
    if not isinstance(region, Window):
        region = Window(*region)
    lam0 = cond_intensity_many(m, q.nodes, _empty(q.window.d))
    return math.exp(-q.integrate_over(lam0, region))


def conjectured_log_partition(m: ModelSpec, q: QuadratureScheme) -> float:
    """``log Z = -E(empty) + int_S lambda(u; empty) du`` with ``E(empty) = 0``."""
    return -ConjectureVoid(q).log_void(m)


def pseudo_log_likelihood(m: ModelSpec, x, q: QuadratureScheme) -> float:
    X = _as_points(x)
    ll_data = log_cond_intensity_many(m, X, X) if len(X) else np.empty(0)
    if np.any(ll_data == -math.inf):
        return -math.inf
    integral = q.integrate(cond_intensity_many(m, q.nodes, X))
    return math.fsum(ll_data) - integral


def _grad_params(m: ModelSpec, params) -> tuple[str, ...]:
    return tuple(params) if params is not None else m.smooth_params


def score(m: ModelSpec, x, q: QuadratureScheme, params: Sequence[str] | None = None) -> np.ndarray:
    """Gradient of the conjectured log-likelihood in the smooth parameters."""
    params = _grad_params(m, params)
    X = _as_points(x)
    d = q.window.d
    total = np.zeros(len(params))
    for i in range(len(X)):
        total += grad_log_cond_intensity_many(m, X[i : i + 1], X[:i], params)[0]
    lam0 = cond_intensity_many(m, q.nodes, _empty(d))
    g0 = grad_log_cond_intensity_many(m, q.nodes, _empty(d), params)
    return total - np.array([q.integrate(lam0 * g0[:, j]) for j in range(len(params))])


def pseudo_score(m: ModelSpec, x, q: QuadratureScheme, params: Sequence[str] | None = None) -> np.ndarray:
    params = _grad_params(m, params)
    X = _as_points(x)
    data = grad_log_cond_intensity_many(m, X, X, params).sum(axis=0) if len(X) else np.zeros(len(params))
    lam = cond_intensity_many(m, q.nodes, X)
    pos = lam > 0
    g = np.zeros((len(lam), len(params)))
    if pos.any():
        g[pos] = grad_log_cond_intensity_many(m, q.nodes[pos], X, params)
    return data - np.array([q.integrate(lam * g[:, j]) for j in range(len(params))])


# --- fitting ---------------------------------------------------------------


@dataclass
class FitResult:
    theta_hat: dict[str, float]
    objective: str
    log_objective_at_optimum: float
    iterations: int
    converged: bool
    fixed_parameters: list[dict] = field(default_factory=list)
    gradient_norm: float = math.nan
    message: str = ""
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_hat": dict(self.theta_hat),
            "objective": self.objective,
            "log_objective_at_optimum": self.log_objective_at_optimum,
            "iterations": self.iterations,
            "converged": self.converged,
            "fixed_parameters": list(self.fixed_parameters),
            "gradient_norm": self.gradient_norm,
            "message": self.message,
            "metadata": dict(self.metadata),
        }


def _box(name: str) -> tuple[float, float]:
    if name == "beta":
        return BETA_FLOOR, math.inf
    if name == "gamma":
        return GAMMA_FLOOR, 1.0
    raise ValueError(name)


def _projected(theta: np.ndarray, grad: np.ndarray, bounds) -> np.ndarray:
    """Ascent gradient with components pushing out of the box removed."""
    g = grad.copy()
    for j, (lo, hi) in enumerate(bounds):
        if (theta[j] <= lo and g[j] < 0) or (theta[j] >= hi and g[j] > 0):
            g[j] = 0.0
    return g


def newton_polish(f, grad, theta, bounds, max_iter: int = 50):
    """Newton refinement of a maximiser with a finite-difference Hessian of ``grad``.

    Steps are clipped to the box and only accepted when ``f`` does not drop.
    Returns ``(theta, f(theta), n_iterations, converged)``.
    """
    theta = np.asarray(theta, dtype=float).copy()
    fval = f(theta)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    for it in range(1, max_iter + 1):
        g = grad(theta)
        pg = _projected(theta, g, bounds)
        if np.linalg.norm(pg) < GRAD_TOL:
            return theta, fval, it - 1, True
        free = pg != 0
        idx = np.flatnonzero(free)
        H = np.empty((len(idx), len(idx)))
        for a, j in enumerate(idx):
            h = 1e-5 * max(1.0, abs(theta[j]))
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            H[:, a] = (grad(tp)[idx] - grad(tm)[idx]) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, -g[idx])
        except np.linalg.LinAlgError:
            return theta, fval, it, False
        if not np.all(np.isfinite(step)) or np.dot(step, g[idx]) <= 0:
            step = g[idx] / max(np.linalg.norm(g[idx]), 1.0)  # fall back to an ascent direction
        accepted = False
        for shrink in (1.0, 0.5, 0.25, 0.1, 0.01):
            cand = theta.copy()
            cand[idx] = np.clip(theta[idx] + shrink * step, lo[idx], hi[idx])
            fc = f(cand)
            if fc >= fval - 1e-14 * max(1.0, abs(fval)):
                accepted = True
                break
        if not accepted:
            return theta, fval, it, abs(fc - fval) < FTOL
        change = abs(fc - fval)
        theta, fval = cand, fc
        if change < FTOL and np.linalg.norm(_projected(theta, grad(theta), bounds)) < 1e-6:
            return theta, fval, it, True
    return theta, fval, max_iter, np.linalg.norm(_projected(theta, grad(theta), bounds)) < GRAD_TOL


def _maximise(f, grad, theta0, bounds):
    """L-BFGS-B on ``-f`` followed by a Newton polish. Returns (theta, fval, nit, converged, gnorm)."""

    def neg(t):
        v = f(t)
        return 1e300 if v == -math.inf else -v

    def neg_grad(t):
        try:
            return -grad(t)
        except ZeroIntensityError:
            return np.zeros_like(t)

    res = optimize.minimize(neg, theta0, jac=neg_grad, method="L-BFGS-B", bounds=bounds,
                            options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 2000})
    theta, fval, nit, conv = newton_polish(f, grad, res.x, bounds)
    gnorm = float(np.linalg.norm(_projected(theta, grad(theta), bounds)))
    return theta, fval, res.nit + nit, conv or gnorm < GRAD_TOL, gnorm


def _fix_R(family: str, x: np.ndarray, R: float | None) -> tuple[float, dict]:
    if R is not None:
        return float(R), {"name": "R", "value": float(R), "how": "user-supplied"}
    gap = min_pairwise_distance(x)
    if gap is None:
        return 0.0, {"name": "R", "value": 0.0, "how": "fewer than two points; min gap undefined"}
    if family == "strauss":
        warnings.warn("Strauss fit without R: fixing R just below the minimum gap leaves gamma unidentifiable",
                      stacklevel=3)
    value = gap * (1 - 1e-9)
    return value, {"name": "R", "value": value, "how": "min_pairwise_distance*(1-1e-9)"}


def mle_fit(family, x, q: QuadratureScheme, objective: str = "exact", R: float | None = None,
            start: Mapping[str, float] | None = None, void: str = "conjecture",
            mc_config=None) -> FitResult:
    """Maximise the conjectured likelihood (``exact``) or the pseudolikelihood over the smooth parameters.

    ``R`` is never optimised. Hard-core fits fix it just below the smallest
    inter-point distance unless a value is supplied. ``void="monte_carlo"``
    re-estimates ``V(S)`` by simulation at every evaluation (experimental).
    """
    template = family if isinstance(family, ModelSpec) else None
    fam = template.family if template else str(family).lower()
    if objective not in ("exact", "pseudo"):
        raise ValueError(f"objective must be 'exact' or 'pseudo', got {objective!r}")
    X = _as_points(x)
    fixed: list[dict] = []
    base: dict[str, float] = {}
    if "R" in PARAM_BOUNDS[fam]:
        if R is None and template is not None and fam == "strauss":
            R = template.R
        base["R"], info = _fix_R(fam, X, R)
        fixed.append(info)
    free = list(ModelSpec(fam, 1.0, 0.5 if fam == "strauss" else 1.0, base.get("R", 0.0)).smooth_params)
    bounds = [_box(p) for p in free]
    n, area = len(X), q.window.measure
    init = {"beta": max(n, 1) / area, "gamma": 0.5}
    if template is not None:
        init.update({p: getattr(template, p) for p in free})
    if start:
        init.update(start)
    theta0 = np.array([min(max(init[p], lo), hi) for p, (lo, hi) in zip(free, bounds)])

    def model_at(t) -> ModelSpec:
        return ModelSpec(fam, **{**{"beta": 1.0}, **base, **dict(zip(free, map(float, t)))})

    meta = {"void_mode": void if objective == "exact" else "none (pseudo)", "energy_convention": "E(empty)=0",
            "quadrature_resolution": q.resolution}
    if objective == "exact" and n == 0:
        warnings.warn("empty pattern: beta is driven to its lower bound", stacklevel=2)
        theta = np.array([BETA_FLOOR if p == "beta" else init[p] for p in free])
        m = model_at(theta)
        return FitResult(dict(zip(free, theta.tolist())), objective, exact_log_likelihood(m, X, q), 0, True,
                         fixed, 0.0, "empty pattern; beta at lower bound", meta)

    if objective == "exact" and void == "monte_carlo":
        return _fit_mc(fam, X, q, free, bounds, theta0, model_at, fixed, meta, mc_config)
    if objective == "exact" and void != "conjecture":
        raise ValueError(f"void mode {void!r} is not available for continuum fits")

    if objective == "exact":
        f = lambda t: exact_log_likelihood(model_at(t), X, q)
        g = lambda t: score(model_at(t), X, q, free)
    else:
        f = lambda t: pseudo_log_likelihood(model_at(t), X, q)
        g = lambda t: pseudo_score(model_at(t), X, q, free)
    theta, fval, nit, conv, gnorm = _maximise(f, g, theta0, bounds)
    return FitResult(dict(zip(free, theta.tolist())), objective, float(fval), int(nit), bool(conv),
                     fixed, gnorm, "" if conv else "did not meet the gradient/objective tolerance", meta)


def _fit_mc(fam, X, q, free, bounds, theta0, model_at, fixed, meta, mc_config) -> FitResult:
    from .simulate import MCMCConfig, sample_gibbs

    cfg = mc_config or MCMCConfig(steps=20_000, burn_in=2_000, thin=5, seed=0)

    def f(t):
        m = model_at(t)
        try:
            return exact_log_likelihood(m, X, void=MonteCarloVoid(sample_gibbs(m, q.window, cfg)))
        except VoidProviderError:
            return -math.inf

    def neg(t):
        v = f(t)
        return -v if np.isfinite(v) else 1e300

    hi = [min(b[1], 10 * max(theta0[j], 1.0)) for j, b in enumerate(bounds)]
    if len(free) == 1:
        # a zero void estimate makes the objective flat, so bracket on a coarse grid first
        lo = max(bounds[0][0], theta0[0] / 20)
        coarse = np.geomspace(lo, hi[0], 25)
        vals = [neg([b]) for b in coarse]
        j = int(np.argmin(vals))
        br = (coarse[max(j - 1, 0)], coarse[min(j + 1, len(coarse) - 1)])
        res = optimize.minimize_scalar(lambda b: neg([b]), bounds=br, method="bounded", options={"xatol": 1e-6})
        theta, nit, conv = np.array([res.x]), int(res.nfev) + len(coarse), bool(res.success)
    else:
        res = optimize.minimize(neg, theta0, method="Nelder-Mead", bounds=list(zip([b[0] for b in bounds], hi)))
        theta, nit, conv = res.x, int(res.nit), bool(res.success)
    meta = {**meta, "experimental": True, "mc_config": vars(cfg) if hasattr(cfg, "__dict__") else str(cfg)}
    return FitResult(dict(zip(free, theta.tolist())), "exact", float(-res.fun), nit, conv, fixed, math.nan,
                     "monte carlo void; common random numbers across evaluations", meta)


# --- likelihood ratio and posterior ----------------------------------------


def _as_model(m: ModelSpec, theta) -> ModelSpec:
    if isinstance(theta, ModelSpec):
        return theta
    return m.with_params(**dict(theta))


def log_likelihood_ratio(m: ModelSpec, theta1, theta2, x, q: QuadratureScheme) -> float:
    """``log j_theta1(x) - log j_theta2(x)`` in telescoped form; ``nan`` when both vanish."""
    m1, m2 = _as_model(m, theta1), _as_model(m, theta2)
    X = _as_points(x)
    l1, l2 = sequential_log_intensities(m1, X), sequential_log_intensities(m2, X)
    z1, z2 = bool(np.any(l1 == -math.inf)), bool(np.any(l2 == -math.inf))
    if z1 and z2:
        return math.nan
    if z1:
        return -math.inf
    if z2:
        return math.inf
    d = q.window.d
    diff = cond_intensity_many(m1, q.nodes, _empty(d)) - cond_intensity_many(m2, q.nodes, _empty(d))
    return math.fsum(l1 - l2) - q.integrate(diff)


def log_posterior_unnorm(m: ModelSpec, log_prior: Callable[[dict], float], x, q: QuadratureScheme,
                         void=None) -> Callable[[dict], float]:
    """``theta -> log j_theta(x) + log prior(theta)`` with ``theta`` a dict of free parameters."""

    def evaluate(theta) -> float:
        lp = float(log_prior(dict(theta)))
        if lp == -math.inf:
            return -math.inf
        return exact_log_likelihood(_as_model(m, theta), x, q, void) + lp

    return evaluate


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    names: tuple[str, ...]
    axes: tuple[np.ndarray, ...]
    log_unnorm: np.ndarray
    density: np.ndarray
    probabilities: np.ndarray

    @property
    def argmax(self) -> dict[str, float]:
        idx = np.unravel_index(np.argmax(self.log_unnorm), self.log_unnorm.shape)
        return {n: float(a[i]) for n, a, i in zip(self.names, self.axes, idx)}


def _trapezoid_weights(a: np.ndarray) -> np.ndarray:
    if len(a) == 1:
        return np.ones(1)
    h = np.diff(a)
    w = np.zeros(len(a))
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def posterior_grid(m: ModelSpec, log_prior: Callable[[dict], float], x, q: QuadratureScheme,
                   grid: Mapping[str, Sequence[float]], void=None) -> PosteriorGrid:
    """Posterior tabulated on a 1- or 2-d grid of free parameters, normalised by the trapezoid rule."""
    names = tuple(grid)
    if not 1 <= len(names) <= 2:
        raise ValueError("posterior grids support one or two free parameters; use MCMC for more")
    axes = tuple(np.asarray(grid[n], dtype=float) for n in names)
    post = log_posterior_unnorm(m, log_prior, x, q, void)
    shape = tuple(len(a) for a in axes)
    logp = np.empty(shape)
    for idx in np.ndindex(*shape):
        logp[idx] = post({n: float(a[i]) for n, a, i in zip(names, axes, idx)})
    w = _trapezoid_weights(axes[0])
    for a in axes[1:]:
        w = np.multiply.outer(w, _trapezoid_weights(a))
    shift = np.max(logp)
    unnorm = np.exp(logp - shift)
    mass = float(np.sum(unnorm * w))
    density = unnorm / mass
    probs = density * w
    probs = probs / probs.sum()
    return PosteriorGrid(names, axes, logp, density, probs)
