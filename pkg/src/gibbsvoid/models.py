"""Parametric Papangelou conditional intensities for pairwise Gibbs models.

Three families are shipped: Poisson, hard-core and Strauss. All of them
share the form ``beta * gamma ** t(u, x)`` where ``t`` counts points of
``x`` within distance ``R`` of ``u`` (Poisson: gamma = 1, hard-core:
gamma = 0), so the vectorised kernels below are written once.

Conventions
-----------
* ``E(empty) = 0`` for every family.
* ``u`` is always removed from ``x`` before evaluating ``lambda(u; x)``:
  a point of ``x`` at distance exactly zero from ``u`` is ignored.
* ``0 * log 0 = 0`` in the Strauss energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import _as_points

__all__ = [
    "FAMILIES",
    "PARAM_BOUNDS",
    "ModelError",
    "ZeroIntensityError",
    "NonSmoothParameterError",
    "ModelSpec",
    "model_from_dict",
    "cond_intensity",
    "cond_intensity_many",
    "energy",
    "sequential_intensities",
    "sequential_log_intensities",
    "log_cond_intensity_many",
    "higher_order_cond_intensity",
    "log_higher_order_cond_intensity",
    "local_stability_bound",
    "grad_log_cond_intensity",
    "grad_log_cond_intensity_many",
    "close_pair_count",
]

FAMILIES = ("poisson", "hardcore", "strauss")

# (lower, upper) boxes of the parameters each family carries.
PARAM_BOUNDS: dict[str, dict[str, tuple[float, float]]] = {
    "poisson": {"beta": (0.0, math.inf)},
    "hardcore": {"beta": (0.0, math.inf), "R": (0.0, math.inf)},
    "strauss": {"beta": (0.0, math.inf), "gamma": (0.0, 1.0), "R": (0.0, math.inf)},
}
SMOOTH_PARAMS = {"poisson": ("beta",), "hardcore": ("beta",), "strauss": ("beta", "gamma")}
INTERACTION_CLASS = {"poisson": "both", "hardcore": "repulsive", "strauss": "repulsive"}


class ModelError(ValueError):
    pass


def _normalise_family(name) -> str:
    fam = str(name).lower().replace("-", "").replace("_", "")
    # on a finite site set the Poisson model is the independent-sites model
    return "poisson" if fam == "independent" else fam


class ZeroIntensityError(ArithmeticError):
    """log-derivative requested where the conditional intensity vanishes."""


class NonSmoothParameterError(ValueError):
    """Gradient requested for a parameter the model is not smooth in (R)."""


@dataclass(frozen=True)
class ModelSpec:
    family: str
    beta: float
    gamma: float = 1.0
    R: float = 0.0

    def __post_init__(self):
        fam = _normalise_family(self.family)
        if fam not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}; supported: {', '.join(FAMILIES)}")
        object.__setattr__(self, "family", fam)
        for name in ("beta", "gamma", "R"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if fam == "poisson" and (self.gamma != 1.0 or self.R != 0.0):
            object.__setattr__(self, "gamma", 1.0)
            object.__setattr__(self, "R", 0.0)
        if fam == "hardcore":
            object.__setattr__(self, "gamma", 0.0)
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ModelError(f"beta must be a positive finite number, got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ModelError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not (self.R >= 0 and math.isfinite(self.R)):
            raise ModelError(f"R must be a non-negative finite number, got {self.R}")

    @classmethod
    def poisson(cls, beta: float) -> "ModelSpec":
        return cls("poisson", beta)

    @classmethod
    def hardcore(cls, beta: float, R: float) -> "ModelSpec":
        return cls("hardcore", beta, 0.0, R)

    @classmethod
    def strauss(cls, beta: float, gamma: float, R: float) -> "ModelSpec":
        return cls("strauss", beta, gamma, R)

    @property
    def params(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PARAM_BOUNDS[self.family]}

    @property
    def smooth_params(self) -> tuple[str, ...]:
        return SMOOTH_PARAMS[self.family]

    @property
    def interaction_class(self) -> str:
        return INTERACTION_CLASS[self.family]

    @property
    def interacting(self) -> bool:
        return self.R > 0 and self.gamma < 1.0

    def with_params(self, **params) -> "ModelSpec":
        unknown = set(params) - set(PARAM_BOUNDS[self.family])
        if unknown:
            raise ModelError(f"{self.family} has no parameter(s) {sorted(unknown)}")
        return replace(self, **params)

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}


def model_from_dict(data: dict) -> ModelSpec:
    """Build a model from its JSON form, e.g. ``{"family": "strauss", "beta": 2, "gamma": 0.5, "R": 0.1}``."""
    if not isinstance(data, dict) or "family" not in data:
        raise ModelError("model: expected an object with a 'family' key")
    fam = _normalise_family(data["family"])
    if fam not in FAMILIES:
        raise ModelError(f"model.family: unknown family {data['family']!r}; supported: {', '.join(FAMILIES)}")
    allowed = set(PARAM_BOUNDS[fam])
    extra = set(data) - allowed - {"family"}
    if extra:
        raise ModelError(f"model: unexpected key(s) {sorted(extra)} for family {fam}")
    missing = allowed - set(data)
    if missing:
        raise ModelError(f"model: missing key(s) {sorted(missing)} for family {fam}")
    for key in allowed:
        if not isinstance(data[key], (int, float)) or isinstance(data[key], bool):
            raise ModelError(f"model.{key}: expected a number, got {data[key]!r}")
    try:
        return ModelSpec(fam, **{k: data[k] for k in allowed})
    except ModelError as exc:
        raise ModelError(f"model: {exc}") from None


# --- kernels ---------------------------------------------------------------


def _neighbour_counts(m: ModelSpec, U: np.ndarray, X: np.ndarray) -> np.ndarray:
    """t(u, x \\ {u}) for each row of U."""
    if len(X) == 0 or m.R <= 0 or m.gamma == 1.0:
        return np.zeros(len(U), dtype=np.int64)
    counts = np.zeros(len(U), dtype=np.int64)
    R2 = m.R * m.R
    # chunk to bound memory for large quadrature grids
    step = max(1, 2_000_000 // max(len(X), 1))
    for s in range(0, len(U), step):
        diff = U[s : s + step, None, :] - X[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        counts[s : s + step] = np.count_nonzero((d2 <= R2) & (d2 > 0.0), axis=1)
    return counts


def _from_counts(m: ModelSpec, t: np.ndarray) -> np.ndarray:
    return m.beta * np.power(m.gamma, t.astype(float))


def _log_from_counts(m: ModelSpec, t: np.ndarray) -> np.ndarray:
    # log space avoids gamma**t underflowing to 0 for tiny gamma
    out = np.full(len(t), math.log(m.beta))
    if m.gamma == 0.0:
        out[t > 0] = -math.inf
    elif m.gamma != 1.0:
        out += t * math.log(m.gamma)
    return out


def cond_intensity_many(m: ModelSpec, U, x) -> np.ndarray:
    """Vectorised ``lambda(u; x \\ {u})`` over the rows of ``U``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return _from_counts(m, _neighbour_counts(m, U, _as_points(x)))


def log_cond_intensity_many(m: ModelSpec, U, x) -> np.ndarray:
    """``log lambda(u; x \\ {u})`` over the rows of ``U``; ``-inf`` where forbidden."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return _log_from_counts(m, _neighbour_counts(m, U, _as_points(x)))


def cond_intensity(m: ModelSpec, u, x) -> float:
    return float(cond_intensity_many(m, np.asarray(u, dtype=float)[None, :], x)[0])


def close_pair_count(m: ModelSpec, x) -> int:
    """Number of unordered pairs at distance <= R."""
    X = _as_points(x)
    if len(X) < 2 or m.R <= 0:
        return 0
    from scipy.spatial import cKDTree

    return len(cKDTree(X).query_pairs(m.R))


def energy(m: ModelSpec, x) -> float:
    """Energy with ``E(empty) = 0``; ``+inf`` for forbidden configurations."""
    n = len(_as_points(x))
    e = -n * math.log(m.beta)
    if m.family == "poisson":
        return e
    s = close_pair_count(m, x)
    if s == 0:
        return e
    if m.gamma == 0.0:
        return math.inf
    return e - s * math.log(m.gamma)


def _sequential_counts(m: ModelSpec, points, base=None) -> np.ndarray:
    P = _as_points(points)
    n = len(P)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    B = _as_points(base) if base is not None else np.empty((0, P.shape[1]))
    t = _neighbour_counts(m, P, B) if len(B) else np.zeros(n, dtype=np.int64)
    if n > 1 and m.R > 0 and m.gamma != 1.0:
        diff = P[:, None, :] - P[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        close = np.tril((d2 <= m.R * m.R) & (d2 > 0.0), k=-1)
        t = t + close.sum(axis=1)
    return t


def sequential_intensities(m: ModelSpec, points, base=None) -> np.ndarray:
    """``lambda(x_i; base + {x_1..x_{i-1}})`` for i = 1..n, in the given order."""
    return _from_counts(m, _sequential_counts(m, points, base))


def sequential_log_intensities(m: ModelSpec, points, base=None) -> np.ndarray:
    """Log of :func:`sequential_intensities`, computed without underflow."""
    return _log_from_counts(m, _sequential_counts(m, points, base))


def _check_distinct(points, base) -> None:
    P = _as_points(points)
    if len(P) > 1 and len(np.unique(P, axis=0)) < len(P):
        raise ValueError("points must be distinct")
    if base is not None and len(P):
        B = _as_points(base)
        if len(B) and (np.abs(P[:, None, :] - B[None, :, :]).sum(axis=2) == 0).any():
            raise ValueError("points must be disjoint from the base configuration")


def log_higher_order_cond_intensity(m: ModelSpec, points, base=None) -> float:
    _check_distinct(points, base)
    ll = sequential_log_intensities(m, points, base)
    if np.any(ll == -math.inf):
        return -math.inf
    return float(math.fsum(ll))


def higher_order_cond_intensity(m: ModelSpec, points, base=None) -> float:
    """Telescoping product ``lambda(x1; b) lambda(x2; b+x1) ... lambda(xn; b+x1..x_{n-1})``."""
    return math.exp(log_higher_order_cond_intensity(m, points, base))


def local_stability_bound(m: ModelSpec) -> float:
    # gamma <= 1 for every shipped family, so the empty configuration is the worst case
    return m.beta


def grad_log_cond_intensity_many(m: ModelSpec, U, x, params: Sequence[str] | None = None) -> np.ndarray:
    """Rows of partial derivatives of ``log lambda(u; x)`` with respect to ``params``."""
    params = tuple(params) if params is not None else m.smooth_params
    for p in params:
        if p == "R" or (p not in m.smooth_params):
            if p in PARAM_BOUNDS[m.family]:
                raise NonSmoothParameterError(f"{m.family} is not differentiable in {p!r}")
            raise ModelError(f"{m.family} has no parameter {p!r}")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    t = _neighbour_counts(m, U, _as_points(x))
    lam = _from_counts(m, t)
    if np.any(lam == 0):
        raise ZeroIntensityError("log-derivative undefined at zero intensity")
    cols = []
    for p in params:
        if p == "beta":
            cols.append(np.full(len(U), 1.0 / m.beta))
        else:  # gamma
            with np.errstate(divide="ignore", invalid="ignore"):
                cols.append(np.where(t == 0, 0.0, t / m.gamma))
    return np.column_stack(cols) if cols else np.empty((len(U), 0))


def grad_log_cond_intensity(m: ModelSpec, u, x, params: Sequence[str] | None = None) -> np.ndarray:
    return grad_log_cond_intensity_many(m, np.asarray(u, dtype=float)[None, :], x, params)[0]

