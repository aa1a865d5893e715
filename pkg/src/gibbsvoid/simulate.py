"""Samplers and Monte Carlo estimators.

Birth-death Metropolis-Hastings for the pairwise families in
:mod:`gibbsvoid.models` (continuum window or finite site set), Poisson
sampling, independent thinning, and batch-means estimators of void
probabilities, generating functionals, intensities and the retention
probabilities implied by a void-probability estimate.

Random numbers come from a Philox generator keyed by ``(seed, chain)``,
so each chain is reproducible regardless of how chains are scheduled.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .geometry import PointPattern, QuadratureScheme, Window, build_quadrature, _as_points
from .models import ModelSpec, cond_intensity_many, local_stability_bound

__all__ = [
    "MCMCConfig",
    "SampleSet",
    "SiteSampleSet",
    "EmptySampleSetError",
    "batch_means",
    "philox_rng",
    "sample_poisson",
    "thin_independent",
    "sample_gibbs",
    "sample_gibbs_sites",
    "estimate_void",
    "estimate_generating_functional",
    "estimate_intensity",
    "estimate_mean_intensity",
    "implied_retention",
    "grid_partition",
    "continuum_conjecture_report",
    "write_samples_ndjson",
    "read_samples_ndjson",
]

N_BATCHES = 50
_CHUNK = 100_000


class EmptySampleSetError(ValueError):
    pass


def philox_rng(seed: int, *stream: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def batch_means(values, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean of a chain and its batch-means standard error.

    The chain is cut into ``n_batches`` consecutive batches of equal length
    (a leading remainder is dropped from the error estimate only).
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n == 0:
        raise EmptySampleSetError("no samples")
    mean = float(v.mean())
    nb = min(n_batches, n)
    if nb < 2:
        return mean, math.inf
    b = n // nb
    means = v[n - nb * b :].reshape(nb, b).mean(axis=1)
    return mean, float(np.sqrt(means.var(ddof=1) / nb))


@dataclass(frozen=True)
class MCMCConfig:
    steps: int = 200_000
    burn_in: int = 20_000
    thin: int = 10
    seed: int = 0
    chains: int = 1

    def __post_init__(self):
        if not (self.steps > self.burn_in >= 0):
            raise ValueError(f"need steps > burn_in >= 0, got steps={self.steps}, burn_in={self.burn_in}")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("thin and chains must be >= 1")

    @property
    def records_per_chain(self) -> int:
        return -(-(self.steps - self.burn_in) // self.thin)


# --- sample containers -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Recorded states of one or more chains, stored flat.

    ``coords[offsets[i]:offsets[i+1]]`` are the points of pattern ``i``.
    """

    window: Window
    coords: np.ndarray
    offsets: np.ndarray
    model: ModelSpec | None = None
    config: MCMCConfig | None = None
    acceptance_rate: float = math.nan

    @classmethod
    def from_patterns(cls, window: Window, patterns: Sequence, **kw) -> "SampleSet":
        arrays = [_as_points(p).reshape(-1, window.d) for p in patterns]
        counts = np.array([len(a) for a in arrays], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        coords = np.concatenate(arrays) if arrays else np.empty((0, window.d))
        return cls(window, coords.reshape(-1, window.d), offsets, **kw)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def pattern_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), self.counts)

    def pattern(self, i: int) -> PointPattern:
        return PointPattern(self.coords[self.offsets[i] : self.offsets[i + 1]], self.window, check_window=False)

    @property
    def patterns(self) -> list[PointPattern]:
        return [self.pattern(i) for i in range(len(self))]

    def _require(self):
        if len(self) == 0:
            raise EmptySampleSetError("sample set is empty")


@dataclass(frozen=True, eq=False)
class SiteSampleSet:
    """Recorded occupied-site bitmasks of a chain on a finite site set."""

    masks: np.ndarray
    k: int
    acceptance_rate: float = math.nan

    def frequencies(self) -> np.ndarray:
        return np.bincount(self.masks, minlength=2**self.k) / len(self.masks)


# --- Poisson and thinning --------------------------------------------------


def sample_poisson(w: Window, beta: float, seed=None) -> PointPattern:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = rng.poisson(beta * w.measure)
    pts = np.asarray(w.lower) + rng.random((n, w.d)) * w.sides
    return PointPattern(pts, w, check_window=False)


def thin_independent(x: PointPattern, p, seed=None) -> PointPattern:
    """Keep each point independently with probability ``p(point)`` (callable or constant)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = np.broadcast_to(np.asarray(p(x.points) if callable(p) else p, dtype=float), (len(x),))
    if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
        raise ValueError("retention probabilities must lie in [0, 1]")
    keep = rng.random(len(x)) < probs
    return PointPattern(x.points[keep], x.window, check_window=False)


# --- birth-death kernels ---------------------------------------------------


@njit(cache=True, nogil=True)
def _bd_continuum(lower, sides, area, beta, gamma, R, rand, start, n_start, burn_in, thin, step0, rec_counts, rec_coords, n_rec, n_coords):
    d = lower.shape[0]
    pts = start
    n = n_start
    R2 = R * R
    accepted = 0
    for s in range(rand.shape[0]):
        if rand[s, 0] < 0.5:
            u = lower + sides * rand[s, 3 : 3 + d]
            t = 0
            for j in range(n):
                d2 = 0.0
                for k in range(d):
                    diff = pts[j, k] - u[k]
                    d2 += diff * diff
                if d2 <= R2 and d2 > 0.0:
                    t += 1
            lam = beta * gamma**t if t > 0 else beta
            if rand[s, 2] * (n + 1) < lam * area:
                if n == pts.shape[0]:
                    grown = np.empty((2 * pts.shape[0] + 1, d))
                    grown[:n] = pts[:n]
                    pts = grown
                pts[n] = u
                n += 1
                accepted += 1
        elif n > 0:
            i = min(int(rand[s, 1] * n), n - 1)
            t = 0
            for j in range(n):
                if j == i:
                    continue
                d2 = 0.0
                for k in range(d):
                    diff = pts[j, k] - pts[i, k]
                    d2 += diff * diff
                if d2 <= R2 and d2 > 0.0:
                    t += 1
            lam = beta * gamma**t if t > 0 else beta
            if rand[s, 2] * lam * area < n:
                pts[i] = pts[n - 1]
                n -= 1
                accepted += 1
        g = step0 + s
        if g >= burn_in and (g - burn_in) % thin == 0:
            rec_counts[n_rec] = n
            if n_coords + n > rec_coords.shape[0]:
                grown2 = np.empty((2 * rec_coords.shape[0] + n, d))
                grown2[:n_coords] = rec_coords[:n_coords]
                rec_coords = grown2
            rec_coords[n_coords : n_coords + n] = pts[:n]
            n_coords += n
            n_rec += 1
    return pts, n, accepted, rec_coords, n_rec, n_coords


def _run_chain(m: ModelSpec, w: Window, cfg: MCMCConfig, chain: int):
    rng = philox_rng(cfg.seed, chain)
    d = w.d
    lower = np.asarray(w.lower, dtype=float)
    sides = np.asarray(w.sides, dtype=float)
    pts = np.empty((64, d))
    n = 0
    rec_counts = np.empty(cfg.records_per_chain, dtype=np.int64)
    rec_coords = np.empty((max(64, cfg.records_per_chain), d))
    n_rec = n_coords = accepted = 0
    for step0 in range(0, cfg.steps, _CHUNK):
        size = min(_CHUNK, cfg.steps - step0)
        rand = rng.random((size, 3 + d))
        pts, n, acc, rec_coords, n_rec, n_coords = _bd_continuum(
            lower, sides, w.measure, m.beta, m.gamma, m.R, rand, pts, n,
            cfg.burn_in, cfg.thin, step0, rec_counts, rec_coords, n_rec, n_coords,
        )
        accepted += acc
    return rec_counts[:n_rec], rec_coords[:n_coords].copy(), accepted


def sample_gibbs(m: ModelSpec, w: Window, cfg: MCMCConfig = MCMCConfig(), threads: int = 1) -> SampleSet:
    """Birth-death Metropolis-Hastings sampler; chains are concatenated in chain order."""
    local_stability_bound(m)
    if threads > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _run_chain(m, w, cfg, c), range(cfg.chains)))
    else:
        results = [_run_chain(m, w, cfg, c) for c in range(cfg.chains)]
    counts = np.concatenate([r[0] for r in results])
    coords = np.concatenate([r[1] for r in results]).reshape(-1, w.d)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    rate = sum(r[2] for r in results) / (cfg.steps * cfg.chains)
    return SampleSet(w, coords, offsets, model=m, config=cfg, acceptance_rate=rate)


@njit(cache=True, nogil=True)
def _bd_sites(nbr, table, weights, total, rand, burn_in, thin, out):
    k = nbr.shape[0]
    cum = np.cumsum(weights)
    occ = np.empty(k, dtype=np.int64)
    pos = np.full(k, -1, dtype=np.int64)
    n = 0
    mask = np.int64(0)
    accepted = 0
    n_rec = 0
    for s in range(rand.shape[0]):
        if rand[s, 0] < 0.5:
            site = min(np.searchsorted(cum, rand[s, 1] * total, side="right"), k - 1)
            if pos[site] < 0:
                c = 0
                m = mask & nbr[site]
                while m:
                    m &= m - 1
                    c += 1
                lam = table[site, c]
                if rand[s, 2] * (n + 1) < lam * total:
                    occ[n] = site
                    pos[site] = n
                    n += 1
                    mask |= np.int64(1) << site
                    accepted += 1
        elif n > 0:
            i = min(int(rand[s, 1] * n), n - 1)
            site = occ[i]
            rest = mask & ~(np.int64(1) << site)
            c = 0
            m = rest & nbr[site]
            while m:
                m &= m - 1
                c += 1
            lam = table[site, c]
            if rand[s, 2] * lam * total < n:
                last = occ[n - 1]
                occ[i] = last
                pos[last] = i
                pos[site] = -1
                n -= 1
                mask = rest
                accepted += 1
        if s >= burn_in and (s - burn_in) % thin == 0:
            out[n_rec] = mask
            n_rec += 1
    return accepted, n_rec


def sample_gibbs_sites(site_model, cfg: MCMCConfig = MCMCConfig()) -> SiteSampleSet:
    """Birth-death chain on a finite site set with counting (or weighted) reference measure.

    ``site_model`` is an :class:`gibbsvoid.oracle.SiteModel`; birth sites are
    proposed proportionally to the site weights.
    """
    k = site_model.k
    if k > 62:
        raise ValueError("site chains support at most 62 sites")
    rng = philox_rng(cfg.seed, 0)
    rand = rng.random((cfg.steps, 3))
    out = np.empty(cfg.records_per_chain, dtype=np.int64)
    weights = np.asarray(site_model.weights, dtype=float)
    accepted, n_rec = _bd_sites(
        np.asarray(site_model.neighbor_masks, dtype=np.int64),
        np.asarray(site_model.table, dtype=float),
        weights, float(weights.sum()), rand, cfg.burn_in, cfg.thin, out,
    )
    return SiteSampleSet(out[:n_rec], k, accepted / cfg.steps)


# --- estimators ------------------------------------------------------------


def _region_bounds(B) -> tuple[np.ndarray, np.ndarray, float]:
    if isinstance(B, Window):
        lo, hi = np.asarray(B.lower), np.asarray(B.upper)
    else:
        lo, hi = (np.asarray(v, dtype=float) for v in B)
    return lo, hi, float(np.prod(np.clip(hi - lo, 0.0, None)))


def _void_indicator(S: SampleSet, B) -> np.ndarray:
    lo, hi, vol = _region_bounds(B)
    if vol == 0.0:
        return np.ones(len(S))
    inside = np.all((S.coords >= lo) & (S.coords <= hi), axis=1)
    hits = np.bincount(S.pattern_index[inside], minlength=len(S))
    return (hits == 0).astype(float)


def estimate_void(S: SampleSet, B) -> tuple[float, float]:
    """Fraction of recorded patterns with no point in the box ``B``, with batch-means s.e."""
    S._require()
    lo, hi, vol = _region_bounds(B)
    if vol == 0.0:
        return 1.0, 0.0
    return batch_means(_void_indicator(S, B))


def estimate_generating_functional(S: SampleSet, g: Callable | float) -> tuple[float, float]:
    """Average of ``prod_x (1 - g(x))`` over recorded patterns."""
    S._require()
    gx = np.broadcast_to(np.asarray(g(S.coords) if callable(g) else g, dtype=float), (len(S.coords),))
    if np.any((gx < 0) | (gx > 1)) or not np.all(np.isfinite(gx)):
        raise ValueError("g must take values in [0, 1]")
    f = 1.0 - gx
    idx = S.pattern_index
    zero = np.bincount(idx[f == 0.0], minlength=len(S)) > 0
    with np.errstate(divide="ignore"):
        logs = np.bincount(idx, weights=np.where(f > 0, np.log(np.where(f > 0, f, 1.0)), 0.0), minlength=len(S))
    values = np.where(zero, 0.0, np.exp(logs))
    return batch_means(values)


@dataclass(frozen=True, eq=False)
class IntensityEstimate:
    nodes: np.ndarray
    values: np.ndarray
    std_error: np.ndarray
    cell_area: float


def estimate_intensity(S: SampleSet, q: QuadratureScheme, n_batches: int = N_BATCHES) -> IntensityEstimate:
    """Per-cell mean counts divided by the cell area, on the cells of ``q``."""
    S._require()
    res, d = q.resolution, q.window.d
    ncell = res**d
    cell_area = float(np.prod(q.cell_sides))
    npat = len(S)
    if len(S.coords):
        ij = np.floor((S.coords - q.window.lower) / q.cell_sides).astype(np.int64)
        ij = np.clip(ij, 0, res - 1)
        cell = np.ravel_multi_index(tuple(ij.T), (res,) * d)
    else:
        cell = np.empty(0, dtype=np.int64)
    nb = min(n_batches, npat)
    b = npat // nb
    start = npat - nb * b
    pidx = S.pattern_index
    total = np.bincount(cell, minlength=ncell) / npat
    keep = pidx >= start
    batch = (pidx[keep] - start) // b
    per_batch = np.bincount(batch * ncell + cell[keep], minlength=nb * ncell).reshape(nb, ncell) / b
    se = np.sqrt(per_batch.var(axis=0, ddof=1) / nb) if nb > 1 else np.full(ncell, np.inf)
    return IntensityEstimate(q.nodes, total / cell_area, se / cell_area, cell_area)


def estimate_mean_intensity(S: SampleSet) -> tuple[float, float]:
    S._require()
    mean, se = batch_means(S.counts)
    return mean / S.window.measure, se / S.window.measure


def grid_partition(w: Window, cells_per_axis: int) -> list[Window]:
    edges = [np.linspace(lo, hi, cells_per_axis + 1) for lo, hi in zip(w.lower, w.upper)]
    out = []
    for idx in np.ndindex(*(cells_per_axis,) * w.d):
        lo = tuple(edges[a][i] for a, i in enumerate(idx))
        hi = tuple(edges[a][i + 1] for a, i in enumerate(idx))
        out.append(Window(lo, hi))
    return out


def implied_retention(S: SampleSet, m: ModelSpec, partition: Sequence[Window], alpha: float | None = None) -> list[dict]:
    """Mean retention probability per cell implied by the void estimate.

    ``p_hat(B) = -log V_hat(B) / (alpha |B|)``, delta-method s.e.
    ``se_V / (V_hat alpha |B|)``. Each row also carries the mean of
    ``lambda(u; empty) / alpha`` over the cell for comparison.
    """
    S._require()
    alpha = local_stability_bound(m) if alpha is None else float(alpha)
    if alpha < local_stability_bound(m):
        raise ValueError(f"alpha={alpha} is below the local stability bound {local_stability_bound(m)}")
    rows = []
    for B in partition:
        area = B.measure
        v, se = estimate_void(S, B)
        cq = build_quadrature(B, 8)
        p_conj = cq.integrate(cond_intensity_many(m, cq.nodes, np.empty((0, B.d)))) / (alpha * area)
        row = {
            "lower": list(B.lower),
            "upper": list(B.upper),
            "void_hat": v,
            "void_se": se,
            "p_conjectured": p_conj,
        }
        if v >= 1.0:
            row.update(p_hat=0.0, p_se=math.nan, status="p_hat=0 within resolution")
        elif v <= 0.0:
            row.update(p_hat=math.log(len(S)) / (alpha * area), p_se=math.nan, status="lower bound only (cell never empty)")
        else:
            row.update(p_hat=-math.log(v) / (alpha * area), p_se=se / (v * alpha * area), status="ok")
        row["discrepancy"] = row["p_hat"] - p_conj
        row["z"] = row["discrepancy"] / row["p_se"] if row["status"] == "ok" and row["p_se"] > 0 else math.nan
        rows.append(row)
    return rows


def continuum_conjecture_report(m: ModelSpec, w: Window, cfg: MCMCConfig, cells_per_axis: int = 2,
                                alpha: float | None = None, threads: int = 1) -> dict:
    """Monte Carlo void probability of the whole window and implied retention table."""
    S = sample_gibbs(m, w, cfg, threads=threads)
    alpha = local_stability_bound(m) if alpha is None else float(alpha)
    v, se = estimate_void(S, w)
    lam0 = cond_intensity_many(m, build_quadrature(w, 10).nodes, np.empty((0, w.d)))
    v_conj = math.exp(-float(np.mean(lam0)) * w.measure)
    gf, gf_se = estimate_generating_functional(S, lambda u: np.all((u >= w.lower) & (u <= w.upper), axis=1).astype(float))
    rho, rho_se = estimate_mean_intensity(S)
    table = implied_retention(S, m, grid_partition(w, cells_per_axis), alpha)
    mc = "monte-carlo±se"
    return {
        "void_window": {
            "mc": {"value": v, "se": se, "provenance": mc},
            "conjectured": {"value": v_conj, "provenance": "conjecture"},
            "discrepancy": {"value": v - v_conj, "z": (v - v_conj) / se if se > 0 else None, "provenance": mc},
        },
        "mean_intensity": {"value": rho, "se": rho_se, "lambda_empty": float(np.mean(lam0)), "provenance": mc},
        "void_bound_from_intensity": {
            "value": math.exp(-rho * w.measure),
            "note": "repulsive models satisfy V >= exp(-int rho) only if the conjecture holds; reported, not asserted",
            "provenance": mc,
        },
        "checks": {
            "generating_functional_equals_void": gf == v and gf_se == se,
            "acceptance_rate": S.acceptance_rate,
            "n_records": len(S),
        },
        "alpha": alpha,
        "retention": table,
    }


# --- serialization ---------------------------------------------------------


def write_samples_ndjson(S: SampleSet, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(S)):
            fh.write(json.dumps(S.coords[S.offsets[i] : S.offsets[i + 1]].tolist()) + "\n")


def read_samples_ndjson(path, window: Window) -> SampleSet:
    patterns = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    return SampleSet.from_patterns(window, [np.asarray(p, dtype=float).reshape(-1, window.d) for p in patterns])
