"""Binary Ising fields on finite lattices.

Fields are 0/1 integer vectors in row-major site order; spins
``s = 2x - 1`` are used internally. The joint law is

    p(x) proportional to exp{ (theta1 * sum_i s_i + theta2 * sum_{i~j} s_i s_j) / 2 }

which makes the local characteristic exactly
``sigmoid(theta1 + theta2 * sum_{j~i} s_j)``.

Viewing occupied sites as a point pattern, ``field_cond_intensity`` is the
local characteristic of the field in which every site outside the
conditioning set is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit, log_expit, logsumexp

from .inference import FitResult, GRAD_TOL, newton_polish
from .oracle import MAX_SITES, EnumerationLimitError, SiteModel, enumerate_exact

__all__ = [
    "Lattice",
    "IsingParams",
    "as_field",
    "ising_potential_sum",
    "local_characteristic",
    "local_characteristics",
    "field_to_pattern",
    "pattern_to_field",
    "field_cond_intensity",
    "field_conjectured_log_likelihood",
    "field_exact_log_likelihood",
    "field_exact_probabilities",
    "field_pseudo_log_likelihood",
    "field_fit",
    "gibbs_sample_field",
    "ising_site_model",
    "field_conjecture_report",
    "read_field",
    "write_field",
]


@dataclass(frozen=True, eq=False)
class Lattice:
    """Sites of ``Z^d`` inside a box of the given shape, nearest-neighbour adjacency.

    ``shape`` is ``(height, width)`` in 2-d; site ``r * width + c`` sits at
    row ``r``, column ``c``.
    """

    shape: tuple[int, ...]
    torus: bool = False

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f"invalid lattice shape {self.shape!r}")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def grid(cls, width: int, height: int, torus: bool = False) -> "Lattice":
        return cls((height, width), torus)

    @classmethod
    def parse(cls, spec: str, torus: bool = False) -> "Lattice":
        """``"WxH"`` -> ``Lattice.grid(W, H)``."""
        try:
            w, h = (int(v) for v in spec.lower().split("x"))
        except ValueError:
            raise ValueError(f"lattice must look like WxH, got {spec!r}") from None
        return cls.grid(w, h, torus)

    @property
    def k(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def sites(self) -> np.ndarray:
        return np.array(list(np.ndindex(*self.shape)), dtype=np.int64).reshape(self.k, len(self.shape))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[set[int]] = [set() for _ in range(self.k)]
        for i, site in enumerate(self.sites):
            for axis in range(len(self.shape)):
                for step in (-1, 1):
                    other = site.copy()
                    other[axis] += step
                    if self.torus:
                        other[axis] %= self.shape[axis]
                    elif not 0 <= other[axis] < self.shape[axis]:
                        continue
                    j = int(np.ravel_multi_index(tuple(other), self.shape))
                    if j != i:
                        nbrs[i].add(j)
        return tuple(tuple(sorted(s)) for s in nbrs)

    @cached_property
    def edges(self) -> np.ndarray:
        e = [(i, j) for i, ns in enumerate(self.neighbors) for j in ns if i < j]
        return np.array(e, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.k, self.k))
        if len(self.edges):
            A[self.edges[:, 0], self.edges[:, 1]] = 1.0
            A[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return A

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class IsingParams:
    theta1: float
    theta2: float

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2])


def _theta(theta) -> IsingParams:
    if isinstance(theta, IsingParams):
        return theta
    if isinstance(theta, dict):
        return IsingParams(theta["theta1"], theta["theta2"])
    t1, t2 = theta
    return IsingParams(t1, t2)


def as_field(values, lattice) -> np.ndarray:
    f = np.asarray(values).astype(np.int64).ravel()
    if len(f) != lattice.k:
        raise ValueError(f"field has {len(f)} entries, lattice has {lattice.k} sites")
    if np.any((f != 0) & (f != 1)):
        raise ValueError("field entries must be 0 or 1")
    return f


def _spins(f: np.ndarray) -> np.ndarray:
    return 2.0 * f - 1.0


def ising_potential_sum(lattice: Lattice, f, theta) -> float:
    """``theta1 * sum s_i + theta2 * sum_{i~j} s_i s_j`` over unordered neighbour pairs."""
    th = _theta(theta)
    s = _spins(as_field(f, lattice))
    e = lattice.edges
    pair = float(np.sum(s[e[:, 0]] * s[e[:, 1]])) if len(e) else 0.0
    return th.theta1 * float(s.sum()) + th.theta2 * pair


def _field_strengths(lattice: Lattice, f: np.ndarray, th: IsingParams) -> np.ndarray:
    return th.theta1 + th.theta2 * (lattice.adjacency @ _spins(f))


def local_characteristic(lattice: Lattice, f, i: int, theta) -> float:
    """``P(x_i = 1 | rest)``."""
    th = _theta(theta)
    s = _spins(as_field(f, lattice))
    h = th.theta1 + th.theta2 * sum(s[j] for j in lattice.neighbors[i])
    return float(expit(h))


def local_characteristics(lattice: Lattice, f, theta) -> np.ndarray:
    return expit(_field_strengths(lattice, as_field(f, lattice), _theta(theta)))


def field_to_pattern(f) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(np.asarray(f)))


def pattern_to_field(subset: Iterable[int], lattice: Lattice) -> np.ndarray:
    f = np.zeros(lattice.k, dtype=np.int64)
    for i in subset:
        i = int(i)
        if not 0 <= i < lattice.k:
            raise IndexError(f"site {i} is not on the lattice")
        f[i] = 1
    return f


def field_cond_intensity(lattice: Lattice, i: int, occupied: Iterable[int], theta) -> float:
    """Local characteristic at ``i`` of the field that is 1 exactly on ``occupied`` (``i`` excluded)."""
    th = _theta(theta)
    occ = set(int(j) for j in occupied) - {int(i)}
    c = sum(1 for j in lattice.neighbors[i] if j in occ)
    return float(expit(th.theta1 + th.theta2 * (2 * c - len(lattice.neighbors[i]))))


def field_conjectured_log_likelihood(lattice: Lattice, f, theta, order: Sequence[int] | None = None) -> float:
    """Conjectured log-likelihood: sequential data term minus the sum over sites at the empty field.

    Occupied sites are added in canonical order (or in ``order``, a
    permutation of site indices), each conditioned on those added before.
    """
    th = _theta(theta)
    f = as_field(f, lattice)
    rank = np.empty(lattice.k, dtype=np.int64)
    rank[np.arange(lattice.k) if order is None else np.asarray(order)] = np.arange(lattice.k)
    deg = lattice.degrees
    occ = f.astype(bool)
    A = lattice.adjacency
    earlier = (rank[None, :] < rank[:, None]) & occ[None, :]
    c = np.sum(A * earlier, axis=1)
    h_data = th.theta1 + th.theta2 * (2 * c - deg)
    data = math.fsum(log_expit(h_data[occ]))
    void = math.fsum(expit(th.theta1 - th.theta2 * deg))
    return data - void


# --- exact enumeration -----------------------------------------------------


def _ising_stats(lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """``sum s`` and ``sum_{i~j} s_i s_j`` for every configuration bitmask."""
    k = lattice.k
    if k > MAX_SITES:
        raise EnumerationLimitError(k)
    masks = np.arange(1 << k, dtype=np.int64)
    t1 = 2.0 * np.bitwise_count(masks).astype(np.float64) - k
    disagree = np.zeros(1 << k, dtype=np.int16)
    for i, j in lattice.edges:
        disagree += ((masks >> i) ^ (masks >> j)) & 1
    t2 = (len(lattice.edges) - 2 * disagree).astype(np.float64)
    return t1, t2


_STATS_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _cached_stats(lattice: Lattice):
    key = (lattice.shape, lattice.torus)
    if key not in _STATS_CACHE:
        if len(_STATS_CACHE) > 8:
            _STATS_CACHE.clear()
        _STATS_CACHE[key] = _ising_stats(lattice)
    return _STATS_CACHE[key]


def _mask(f: np.ndarray) -> int:
    return int(np.sum(f.astype(np.int64) << np.arange(len(f), dtype=np.int64)))


def _log_partition(lattice: Lattice, th: IsingParams) -> float:
    t1, t2 = _cached_stats(lattice)
    return float(logsumexp(0.5 * (th.theta1 * t1 + th.theta2 * t2)))


def field_exact_log_likelihood(lattice: Lattice, f, theta) -> float:
    th = _theta(theta)
    return 0.5 * ising_potential_sum(lattice, f, th) - _log_partition(lattice, th)


def field_exact_probabilities(lattice: Lattice, theta) -> np.ndarray:
    """Probability of every configuration, indexed by bitmask (bit ``i`` = site ``i``)."""
    th = _theta(theta)
    t1, t2 = _cached_stats(lattice)
    logw = 0.5 * (th.theta1 * t1 + th.theta2 * t2)
    return np.exp(logw - logsumexp(logw))


def field_pseudo_log_likelihood(lattice: Lattice, f, theta) -> float:
    f = as_field(f, lattice)
    h = _field_strengths(lattice, f, _theta(theta))
    return math.fsum(np.where(f == 1, log_expit(h), log_expit(-h)))


# --- gradients and fitting -------------------------------------------------


def _grad_pseudo(lattice: Lattice, f: np.ndarray, t: np.ndarray) -> np.ndarray:
    nb = lattice.adjacency @ _spins(f)
    resid = f - expit(t[0] + t[1] * nb)
    return np.array([resid.sum(), np.dot(resid, nb)])


def _grad_conjectured(lattice: Lattice, f: np.ndarray, t: np.ndarray) -> np.ndarray:
    deg = lattice.degrees
    occ = f.astype(bool)
    idx = np.arange(lattice.k)
    earlier = (idx[None, :] < idx[:, None]) & occ[None, :]
    c = np.sum(lattice.adjacency * earlier, axis=1)
    dh = (2 * c - deg)[occ]
    r = 1 - expit(t[0] + t[1] * dh)
    p0 = expit(t[0] - t[1] * deg)
    v0 = p0 * (1 - p0)
    return np.array([r.sum() - v0.sum(), np.dot(r, dh) + np.dot(v0, deg)])


def _grad_exact(lattice: Lattice, f: np.ndarray, t: np.ndarray) -> np.ndarray:
    t1, t2 = _cached_stats(lattice)
    logw = 0.5 * (t[0] * t1 + t[1] * t2)
    p = np.exp(logw - logsumexp(logw))
    m = _mask(f)
    return 0.5 * np.array([t1[m] - np.dot(p, t1), t2[m] - np.dot(p, t2)])


_OBJECTIVES = {
    "exact": (field_exact_log_likelihood, _grad_exact),
    "conjectured": (field_conjectured_log_likelihood, _grad_conjectured),
    "pseudo": (field_pseudo_log_likelihood, _grad_pseudo),
}


def field_score(lattice: Lattice, f, theta, objective: str) -> np.ndarray:
    """Analytic gradient of an objective in ``(theta1, theta2)``."""
    return _OBJECTIVES[objective][1](lattice, as_field(f, lattice), _theta(theta).as_array())


def field_fit(lattice: Lattice, f, objective: str = "pseudo", fixed: dict | None = None,
              start: Sequence[float] = (0.0, 0.0)) -> FitResult:
    """Maximise one of the field objectives over ``(theta1, theta2)``.

    ``fixed`` pins parameters, e.g. ``{"theta2": 0.0}``.
    """
    if objective not in _OBJECTIVES:
        raise ValueError(f"objective must be one of {sorted(_OBJECTIVES)}")
    if objective == "exact" and lattice.k > MAX_SITES:
        raise EnumerationLimitError(lattice.k)
    f = as_field(f, lattice)
    fixed = dict(fixed or {})
    names = ["theta1", "theta2"]
    free = [j for j, n in enumerate(names) if n not in fixed]
    obj, grad = _OBJECTIVES[objective]
    base = np.array([fixed.get(n, start[j]) for j, n in enumerate(names)], dtype=float)

    def full(t):
        v = base.copy()
        v[free] = t
        return v

    F = lambda t: obj(lattice, f, full(t))
    G = lambda t: grad(lattice, f, full(t))[free]
    bounds = [(-50.0, 50.0)] * len(free)
    if free:
        res = optimize.minimize(lambda t: -F(t), base[free], jac=lambda t: -G(t), method="L-BFGS-B",
                                bounds=bounds, options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 2000})
        theta, fval, nit, conv = newton_polish(F, G, res.x, bounds)
        nit += res.nit
        gnorm = float(np.linalg.norm(G(theta)))
        conv = conv or gnorm < GRAD_TOL
    else:
        theta, fval, nit, conv, gnorm = np.empty(0), F(np.empty(0)), 0, True, 0.0
    est = full(theta)
    return FitResult(
        {"theta1": float(est[0]), "theta2": float(est[1])}, objective, float(fval), int(nit), bool(conv),
        [{"name": n, "value": float(v), "how": "user-supplied"} for n, v in fixed.items()], gnorm,
        "" if conv else "did not meet the gradient/objective tolerance",
        {"lattice": list(lattice.shape), "torus": lattice.torus, "energy_convention": "E(empty)=0"},
    )


# --- heat-bath sampler -----------------------------------------------------


def gibbs_sample_field(lattice: Lattice, theta, sweeps: int, seed=None, burn_in: int = 0, thin: int = 1,
                       init=None) -> np.ndarray:
    """Systematic-scan heat-bath sampler; returns recorded fields as rows (one per kept sweep)."""
    if sweeps < 1 or burn_in < 0 or thin < 1 or burn_in >= sweeps:
        raise ValueError("need sweeps >= 1, 0 <= burn_in < sweeps, thin >= 1")
    th = _theta(theta)
    from .simulate import philox_rng

    rng = philox_rng(seed if seed is not None else 0, 0)
    k = lattice.k
    nbrs = [list(n) for n in lattice.neighbors]
    s = [2 * int(v) - 1 for v in (as_field(init, lattice) if init is not None else np.zeros(k, dtype=int))]
    t1, t2 = th.theta1, th.theta2
    out = []
    for sweep in range(sweeps):
        u = rng.random(k)
        for i in range(k):
            h = t1 + t2 * sum(s[j] for j in nbrs[i])
            p = 1.0 / (1.0 + math.exp(-h)) if h >= 0 else math.exp(h) / (1.0 + math.exp(h))
            s[i] = 1 if u[i] < p else -1
        if sweep >= burn_in and (sweep - burn_in) % thin == 0:
            out.append([(v + 1) // 2 for v in s])
    return np.array(out, dtype=np.int64).reshape(-1, k)


# --- point-process view and conjecture report ------------------------------


def ising_site_model(lattice: Lattice, theta, intensity: str = "local_characteristic") -> SiteModel:
    """Site model whose intensity depends on the number of occupied neighbours.

    ``local_characteristic`` uses ``field_cond_intensity``; ``odds`` uses the
    ratio ``p(A + i) / p(A) = exp(theta1 + theta2 * sum_{j~i} s_j)``.
    """
    th = _theta(theta)
    k = lattice.k
    deg = lattice.degrees
    maxdeg = int(deg.max()) if k else 0
    c = np.arange(maxdeg + 1)
    h = th.theta1 + th.theta2 * (2 * c[None, :] - deg[:, None])
    table = expit(h) if intensity == "local_characteristic" else np.exp(h)
    table = np.where(c[None, :] <= deg[:, None], table, 0.0)
    masks = np.zeros(k, dtype=np.int64)
    for i, ns in enumerate(lattice.neighbors):
        for j in ns:
            masks[i] |= 1 << j
    return SiteModel(masks, table, np.ones(k), f"ising/{intensity}", {"theta1": th.theta1, "theta2": th.theta2})


def field_conjecture_report(lattice: Lattice, theta, data=None, seed: int = 0, grid: dict | None = None) -> dict:
    """Exact (joint enumeration) versus conjectured quantities for an Ising field."""
    th = _theta(theta)
    k = lattice.k
    if k > MAX_SITES:
        raise EnumerationLimitError(k)
    probs = field_exact_probabilities(lattice, th)
    log_void_exact = math.log(probs[0])
    lc0 = expit(th.theta1 - th.theta2 * lattice.degrees)
    log_void_conj = -math.fsum(lc0)
    odds0 = np.exp(th.theta1 - th.theta2 * lattice.degrees)

    # conjectured log-likelihood of every configuration (canonical order)
    seq = enumerate_exact(ising_site_model(lattice, th))
    conj_ll = seq.log_weights + log_void_conj
    exact_ll = np.log(probs)
    err = np.abs(conj_ll - exact_ll)
    ex = "exact-enumeration"
    p_ind = float(expit(th.theta1))
    report = {
        "lattice": list(lattice.shape),
        "torus": lattice.torus,
        "theta": {"theta1": th.theta1, "theta2": th.theta2},
        "void": {
            "exact": {"value": math.exp(log_void_exact), "provenance": ex},
            "conjectured": {"value": math.exp(log_void_conj), "provenance": "conjecture"},
            "conjectured_with_odds_intensity": {"value": math.exp(-math.fsum(odds0)), "provenance": "conjecture"},
            "log_diff": {"value": log_void_exact - log_void_conj, "provenance": ex},
        },
        "log_partition": {
            "exact": {"value": -log_void_exact, "provenance": ex},
            "conjectured": {"value": -log_void_conj, "provenance": "conjecture"},
            "convention": "E(empty)=0",
        },
        "conjectured_total_mass": {"value": float(np.exp(logsumexp(conj_ll))), "provenance": ex},
        "log_likelihood_error": {
            "max": {"value": float(err.max()), "provenance": ex},
            "mean": {"value": float(err.mean()), "provenance": ex},
        },
        "checks": {
            "total_probability": float(math.fsum(probs)),
            "theta2_zero_identity": (
                {"lhs": log_void_exact - log_void_conj,
                 "rhs": k * (math.log1p(-p_ind) + p_ind)} if th.theta2 == 0 else None
            ),
        },
    }
    if data is None:
        data = int(np.random.default_rng(seed).choice(len(probs), p=probs))
    f = pattern_to_field([i for i in range(k) if int(data) >> i & 1], lattice)
    report["mle_argmax"] = _field_grid_argmax(lattice, f, grid)
    return report


def _field_grid_argmax(lattice: Lattice, f: np.ndarray, grid: dict | None) -> dict:
    g1 = np.linspace(-2, 2, 41) if grid is None else np.asarray(grid["theta1"], dtype=float)
    g2 = np.linspace(-1, 1, 21) if grid is None else np.asarray(grid["theta2"], dtype=float)
    t1, t2 = _cached_stats(lattice)
    m = _mask(f)
    T1, T2 = np.meshgrid(g1, g2, indexing="ij")
    ll_exact = np.empty(T1.shape)
    ll_conj = np.empty(T1.shape)
    for idx in np.ndindex(*T1.shape):
        th = (T1[idx], T2[idx])
        ll_exact[idx] = 0.5 * (th[0] * t1[m] + th[1] * t2[m]) - logsumexp(0.5 * (th[0] * t1 + th[1] * t2))
        ll_conj[idx] = field_conjectured_log_likelihood(lattice, f, th)
    ie = np.unravel_index(np.argmax(ll_exact), T1.shape)
    ic = np.unravel_index(np.argmax(ll_conj), T1.shape)
    return {
        "data": field_to_pattern(f),
        "exact": {"theta1": float(g1[ie[0]]), "theta2": float(g2[ie[1]])},
        "conjectured": {"theta1": float(g1[ic[0]]), "theta2": float(g2[ic[1]])},
        "cell_shift": [int(ic[0] - ie[0]), int(ic[1] - ie[1])],
        "provenance": "exact-enumeration",
    }


# --- field files -----------------------------------------------------------


def read_field(path) -> tuple[np.ndarray, Lattice]:
    """CSV grid of 0/1 (rows = lattice rows), or a ``width,height`` header followed by a flat list."""
    from .geometry import PatternFormatError

    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise PatternFormatError("empty field file", 1)
    if lines[0].replace(" ", "").lower() == "width,height":
        try:
            w, h = (int(v) for v in lines[1].split(","))
        except (ValueError, IndexError):
            raise PatternFormatError("expected 'W,H' after the header", 2) from None
        values = []
        for n, ln in enumerate(lines[2:], start=3):
            try:
                values += [int(v) for v in ln.split(",") if v.strip()]
            except ValueError:
                raise PatternFormatError(f"non-integer value in {ln!r}", n) from None
        lattice = Lattice.grid(w, h)
    else:
        rows = []
        for n, ln in enumerate(lines, start=1):
            try:
                rows.append([int(v) for v in ln.split(",")])
            except ValueError:
                raise PatternFormatError(f"non-integer value in {ln!r}", n) from None
            if len(rows[-1]) != len(rows[0]):
                raise PatternFormatError(f"expected {len(rows[0])} columns, got {len(rows[-1])}", n)
        values = [v for r in rows for v in r]
        lattice = Lattice.grid(len(rows[0]), len(rows))
    if any(v not in (0, 1) for v in values):
        raise PatternFormatError("field values must be 0 or 1")
    return as_field(values, lattice), lattice


def write_field(path, f, lattice: Lattice) -> None:
    grid = np.asarray(f).reshape(lattice.shape)
    Path(path).write_text("\n".join(",".join(str(int(v)) for v in row) for row in grid) + "\n")
