"""Acceptance suite: one test (or a few) per criterion, each at its stated tolerance.

Every check records a verdict line; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import json
import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from _oracles import site_weights
from conftest import random_pattern, record
from gibbsvoid.cli import main
from gibbsvoid.geometry import PointPattern, Window, build_quadrature, min_pairwise_distance
from gibbsvoid.inference import exact_log_likelihood, mle_fit, pseudo_log_likelihood, score
from gibbsvoid.models import ModelSpec, cond_intensity, log_higher_order_cond_intensity
from gibbsvoid.oracle import DiscreteSpace, enumerate_exact, site_model
from gibbsvoid.randomfield import (
    Lattice,
    field_conjectured_log_likelihood,
    field_exact_log_likelihood,
    field_exact_probabilities,
    field_pseudo_log_likelihood,
    gibbs_sample_field,
    local_characteristics,
)
from gibbsvoid.simulate import (
    MCMCConfig,
    estimate_generating_functional,
    estimate_mean_intensity,
    estimate_void,
    grid_partition,
    implied_retention,
    sample_gibbs,
    sample_gibbs_sites,
)

W = Window.unit()
Q = build_quadrature(W)  # default resolution


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# --- 1 ---------------------------------------------------------------------


def test_c01_poisson_reduction():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        beta = rng.uniform(1, 200)
        x = random_pattern(rng, rng.poisson(beta))
        ref = x.n * math.log(beta) - beta
        m = ModelSpec.poisson(beta)
        worst = max(worst, abs(exact_log_likelihood(m, x, Q) - ref), abs(pseudo_log_likelihood(m, x, Q) - ref))
    ok = worst <= 1e-10
    record(1, "exact=pseudo=n log b - b", ok, f"max abs err {worst:.2e} over 100 patterns")
    assert ok


# --- 2 ---------------------------------------------------------------------


def test_c02_hardcore_mle():
    rng = np.random.default_rng(202)
    worst, r_ok = 0.0, True
    for _ in range(20):
        n = int(rng.integers(2, 60))
        x = random_pattern(rng, n, min_gap=rng.uniform(0.005, 0.05))
        fit = mle_fit("hardcore", x, Q)
        worst = max(worst, abs(fit.theta_hat["beta"] - n / W.measure))
        (info,) = fit.fixed_parameters
        r_ok &= info["name"] == "R" and info["value"] == pytest.approx(min_pairwise_distance(x) * (1 - 1e-9), rel=1e-15)
        r_ok &= "min_pairwise_distance" in info["how"]
    ok = worst <= 1e-8 and r_ok
    record(2, "beta_hat = n/|S|, R fixed at min gap", ok, f"max |beta_hat - n| {worst:.2e}; R recorded {r_ok}")
    assert ok


# --- 3 ---------------------------------------------------------------------


def test_c03a_higher_order_permutation_invariance():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(200):
        m = ModelSpec.strauss(rng.uniform(1, 100), rng.uniform(0.05, 1), rng.uniform(0.01, 0.3))
        x = rng.random((int(rng.integers(1, 40)), 2))
        a = log_higher_order_cond_intensity(m, x)
        b = log_higher_order_cond_intensity(m, x[rng.permutation(len(x))])
        worst = max(worst, _rel(a, b))
    ok = worst <= 1e-10
    record(3, "lambda^n", ok, f"max rel dev {worst:.1e}, 200 trials")
    assert ok


def test_c03b_exact_loglik_permutation_invariance():
    rng = np.random.default_rng(304)
    q = build_quadrature(W, 20)
    worst = 0.0
    for _ in range(200):
        fam = rng.choice(["poisson", "strauss"])
        m = ModelSpec(fam, rng.uniform(1, 100), rng.uniform(0.05, 1), rng.uniform(0.01, 0.3))
        x = PointPattern(rng.random((int(rng.integers(0, 40)), 2)), W)
        a = exact_log_likelihood(m, x, q)
        b = exact_log_likelihood(m, x.permuted(rng.permutation(x.n)), q)
        worst = max(worst, _rel(a, b))
    ok = worst <= 1e-10
    record(3, "exact_log_likelihood", ok, f"max rel dev {worst:.1e}, 200 trials")
    assert ok


def test_c03c_field_conjectured_loglik_relabeling_invariance():
    # The sequential product of local characteristics is not a telescoping
    # Papangelou product when theta2 != 0, so relabeling changes the value.
    # Implemented as specified; the deviation is measured and reported here.
    rng = np.random.default_rng(305)
    L = Lattice.grid(3, 3)
    worst = 0.0
    for _ in range(200):
        f = rng.integers(0, 2, L.k)
        theta = (rng.uniform(-1, 1), rng.uniform(-1, 1))
        a = field_conjectured_log_likelihood(L, f, theta)
        b = field_conjectured_log_likelihood(L, f, theta, order=rng.permutation(L.k))
        worst = max(worst, _rel(a, b))
    ok = worst <= 1e-10
    record(3, "field_conjectured_log_likelihood", ok, f"max rel dev {worst:.1e}, 200 trials")
    assert ok, f"relabeling changes the field conjectured log-likelihood (max rel dev {worst:.3g})"


# --- 4 ---------------------------------------------------------------------


def test_c04_score_correctness():
    rng = np.random.default_rng(404)
    q = build_quadrature(W, 30)
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        beta, gamma, R = rng.uniform(10, 150), rng.uniform(0.05, 0.95), rng.uniform(0.01, 0.15)
        x = rng.random((int(rng.integers(1, 50)), 2))
        ll = lambda b, g: exact_log_likelihood(ModelSpec.strauss(b, g, R), x, q)
        fd = np.array([(ll(beta + h, gamma) - ll(beta - h, gamma)) / (2 * h),
                       (ll(beta, gamma + h) - ll(beta, gamma - h)) / (2 * h)])
        an = score(ModelSpec.strauss(beta, gamma, R), x, q)
        worst = max(worst, np.linalg.norm(an - fd) / np.linalg.norm(fd))
    pois = 0.0
    for _ in range(20):
        x = random_pattern(rng, int(rng.integers(1, 80)))
        pois = max(pois, abs(score(ModelSpec.poisson(x.n / W.measure), x, Q)[0]))
    ok = worst <= 1e-4 and pois <= 1e-10
    record(4, "score vs FD / Poisson score at n/|S|", ok, f"max rel err {worst:.1e}; max |score| {pois:.1e}")
    assert ok


# --- 5 ---------------------------------------------------------------------


def _discrete_cases():
    rng = np.random.default_rng(505)
    for k in (1, 2, 5, 8, 12):
        space = DiscreteSpace(rng.random((k, 2)))
        yield ModelSpec.poisson(rng.uniform(0.1, 5)), space
        yield ModelSpec.hardcore(rng.uniform(0.1, 5), 0.3), space
        yield ModelSpec.strauss(rng.uniform(0.1, 5), rng.uniform(0.05, 0.95), 0.3), space


def test_c05_oracle_exactness():
    sum_err = empty_err = ratio_err = indep_err = 0.0
    for m, space in _discrete_cases():
        s = enumerate_exact(m, space)
        p = s.probabilities
        sum_err = max(sum_err, abs(math.fsum(p) - 1))
        total = math.fsum(site_weights(m.beta, m.gamma, m.R, [tuple(v) for v in space.sites]))
        empty_err = max(empty_err, abs(p[0] - 1 / total))
        k = space.k
        for A in np.random.default_rng(k).integers(0, 1 << k, 64):
            A = int(A)
            if not np.isfinite(s.log_weights[A]):
                continue
            for i in range(k):
                if A >> i & 1:
                    continue
                occ = space.sites[[j for j in range(k) if A >> j & 1]]
                lam = cond_intensity(m, space.sites[i], occ)
                ratio = math.exp(s.log_weights[A | 1 << i] - s.log_weights[A])
                ratio_err = max(ratio_err, abs(ratio - lam) / max(lam, 1e-300) if lam > 0 else ratio)
    for k in range(1, 13):
        for beta in (0.1, 1.0, 4.0):
            s = enumerate_exact(ModelSpec("independent", beta), DiscreteSpace.grid(k, 1))
            indep_err = max(indep_err, abs(s.void_exact - (1 + beta) ** -k))
    ok = max(sum_err, empty_err, ratio_err, indep_err) <= 1e-12
    record(5, "oracle", ok, f"sum {sum_err:.1e}, p(empty) {empty_err:.1e}, ratio {ratio_err:.1e}, "
                            f"independent void {indep_err:.1e}")
    assert ok


# --- 6 ---------------------------------------------------------------------


def test_c06_sampler_validity():
    S = sample_gibbs(ModelSpec.poisson(50), W, MCMCConfig(400_000, 20_000, 10, seed=606))
    mean, se = estimate_mean_intensity(S)
    B = Window((0.2, 0.3), (0.4, 0.5))
    v, vse = estimate_void(S, B)
    ok_count = abs(mean - 50) <= 3 * se
    ok_void = abs(v - math.exp(-50 * B.measure)) <= 3 * vse
    pvals = []
    for space, m in ((DiscreteSpace([[0.0, 0.0]]), ModelSpec.poisson(1.7)),
                     (DiscreteSpace([[0.0, 0.0], [0.5, 0.0]]), ModelSpec.strauss(2.0, 0.3, 1.0))):
        sm = site_model(m, space)
        T = sample_gibbs_sites(sm, MCMCConfig(200_000, 5_000, 10, seed=607))
        obs = np.bincount(T.masks, minlength=1 << space.k)
        pvals.append(stats.chisquare(obs, enumerate_exact(sm).probabilities * obs.sum()).pvalue)
    ok_sites = all(p > 1e-3 for p in pvals)
    ok = ok_count and ok_void and ok_sites
    record(6, "BD-MCMC", ok, f"mean {mean:.3f}±{se:.3f}; void {v:.4f}±{vse:.4f} vs {math.exp(-2):.4f}; "
                              f"chi2 p {pvals[0]:.3f}, {pvals[1]:.3f}")
    assert ok


# --- 7 ---------------------------------------------------------------------


def test_c07_retention_and_generating_functional():
    beta = 4.0
    m = ModelSpec.poisson(beta)
    S = sample_gibbs(m, W, MCMCConfig(400_000, 20_000, 10, seed=707))
    rows = implied_retention(S, m, grid_partition(W, 2), alpha=2 * beta)
    zs = [(r["p_hat"] - 0.5) / r["p_se"] for r in rows]
    ok_ret = all(r["status"] == "ok" for r in rows) and all(abs(z) <= 3 for z in zs)
    c = 0.3
    g, gse = estimate_generating_functional(S, c)
    ok_gf = abs(g - math.exp(-beta * c * W.measure)) <= 3 * gse
    ok = ok_ret and ok_gf
    record(7, "retention 1/2 and G(c)", ok, f"cell z-scores {[round(z, 2) for z in zs]}; "
                                            f"G {g:.4f}±{gse:.4f} vs {math.exp(-1.2):.4f}")
    assert ok


# --- 8 ---------------------------------------------------------------------


def test_c08_repulsive_intensity_bound():
    m = ModelSpec.strauss(100, 0.3, 0.05)
    S = sample_gibbs(m, W, MCMCConfig(400_000, 20_000, 10, seed=808))
    rho, se = estimate_mean_intensity(S)
    ok = rho <= m.beta + 3 * se
    record(8, "rho <= beta", ok, f"rho {rho:.2f}±{se:.2f}, beta 100")
    assert ok


# --- 9 ---------------------------------------------------------------------


def test_c09_ising_consistency():
    rng = np.random.default_rng(909)
    lc_err = sum_err = collapse_err = 0.0
    for w in (1, 2, 3):
        for h in (1, 2, 3):
            L = Lattice.grid(w, h)
            for _ in range(10):
                t = rng.uniform(-1.5, 1.5, 2)
                p = field_exact_probabilities(L, t)
                sum_err = max(sum_err, abs(math.fsum(p) - 1))
                for mask in range(1 << L.k):
                    f = np.array([mask >> i & 1 for i in range(L.k)])
                    lc = local_characteristics(L, f, t)
                    on = mask | (1 << np.arange(L.k))
                    off = mask & ~(1 << np.arange(L.k))
                    lc_err = max(lc_err, float(np.max(np.abs(lc - p[on] / (p[on] + p[off])))))
                    q = expit(t[0])
                    n = f.sum()
                    bern = n * math.log(q) + (L.k - n) * math.log1p(-q)
                    collapse_err = max(collapse_err,
                                       abs(field_exact_log_likelihood(L, f, (t[0], 0.0)) - bern),
                                       abs(field_pseudo_log_likelihood(L, f, (t[0], 0.0)) - bern))
    L2 = Lattice.grid(2, 2)
    t = (0.3, 0.5)
    fields = gibbs_sample_field(L2, t, 40_000, seed=910, burn_in=500)
    obs = np.bincount(fields @ (1 << np.arange(4)), minlength=16)
    pval = stats.chisquare(obs, field_exact_probabilities(L2, t) * obs.sum()).pvalue
    ok = max(lc_err, sum_err, collapse_err) <= 1e-12 and pval > 1e-3
    record(9, "Ising", ok, f"local char {lc_err:.1e}; sum {sum_err:.1e}; theta2=0 collapse {collapse_err:.1e}; "
                           f"heat-bath chi2 p {pval:.3f}")
    assert ok


# --- 10 --------------------------------------------------------------------


def _verify(tmp_path, name, *args):
    out = tmp_path / f"{name}.json"
    code = main(["verify-conjecture", *args, "--out", str(out)])
    return code, (json.loads(out.read_text())["report"] if code == 0 else None)


def test_c10_conjecture_reports(tmp_path):
    details, ok = [], True
    code, r = _verify(tmp_path, "a", "--discrete", "--lattice", "3x3", "--model", '{"family":"independent","beta":0.7}')
    good = code == 0 and abs(r["checks"]["total_probability"] - 1) <= 1e-12 and abs(r["checks"]["p_empty_minus_void"]) <= 1e-12
    good &= abs(r["void"]["exact"]["value"] - 1.7**-9) <= 1e-12
    details.append(f"(a) {'ok' if good else 'bad'} void rel diff {r['void']['rel_diff']['value']:.3f}")
    ok &= good
    code, r = _verify(tmp_path, "b", "--discrete", "--lattice", "3x3",
                      "--model", '{"family":"strauss","beta":0.7,"gamma":0.4,"R":1.0}')
    good = code == 0 and abs(r["checks"]["total_probability"] - 1) <= 1e-12 and abs(r["checks"]["p_empty_minus_void"]) <= 1e-12
    details.append(f"(b) {'ok' if good else 'bad'} void rel diff {r['void']['rel_diff']['value']:.3f}")
    ok &= good
    code, r = _verify(tmp_path, "c", "--field", "--lattice", "3x3", "--theta1", "0.3", "--theta2", "0.5")
    good = code == 0 and abs(r["checks"]["total_probability"] - 1) <= 1e-12
    details.append(f"(c) {'ok' if good else 'bad'} log-void diff {r['void']['log_diff']['value']:.3f}")
    ok &= good
    worst_id = 0.0
    for t1 in (-1.0, 0.0, 0.3, 1.5):
        code, r = _verify(tmp_path, f"c0_{t1}", "--field", "--lattice", "3x3", "--theta1", str(t1), "--theta2", "0")
        ident = r["checks"]["theta2_zero_identity"]
        worst_id = max(worst_id, abs(ident["lhs"] - ident["rhs"]))
    details.append(f"theta2=0 identity {worst_id:.1e}")
    ok &= worst_id <= 1e-12
    code, r = _verify(tmp_path, "d", "--continuum", "--model", '{"family":"strauss","beta":100,"gamma":0.3,"R":0.05}',
                      "--steps", "200000", "--burn-in", "20000", "--seed", "1010")
    mi = r["mean_intensity"]
    good = code == 0 and r["checks"]["generating_functional_equals_void"] and mi["value"] <= 100 + 3 * mi["se"]
    details.append(f"(d) {'ok' if good else 'bad'} rho {mi['value']:.1f}±{mi['se']:.1f}")
    ok &= good
    record(10, "verify-conjecture reports", ok, "; ".join(details))
    assert ok


# --- 11 --------------------------------------------------------------------


def test_c11_reproducibility(tmp_path):
    pattern = tmp_path / "pts.csv"
    pts = np.random.default_rng(0).random((20, 2))
    pattern.write_text("x,y\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in pts))
    runs = {
        "simulate": (["simulate", "--model", '{"family":"strauss","beta":80,"gamma":0.5,"R":0.05}',
                      "--steps", "30000", "--burn-in", "3000", "--chains", "2", "--seed", "5"], ["", ".meta.json"]),
        "fit": (["fit", "--model", '{"family":"strauss","beta":20,"gamma":0.5,"R":0.05}', "--pattern", str(pattern),
                 "--objective", "pseudo", "--resolution", "50"], [""]),
        "verify": (["verify-conjecture", "--continuum", "--model", '{"family":"poisson","beta":5}',
                    "--steps", "30000", "--burn-in", "3000", "--seed", "2"], [""]),
        "field-sim": (["field-sim", "--lattice", "3x3", "--theta1", "0.1", "--theta2", "0.4", "--sweeps", "100",
                       "--seed", "3"], ["", ".meta.json"]),
    }
    results = {}
    for name, (args, suffixes) in runs.items():
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{name}_{rep}.out"
            assert main(args + ["--out", str(out)]) == 0
            blob = []
            for s in suffixes:
                text = (tmp_path / f"{name}_{rep}.out{s}").read_text()
                blob.append(text.replace(f"{name}_{rep}.out", "OUT"))
            blobs.append(blob)
        results[name] = blobs[0] == blobs[1]
    write = tmp_path / "field_src.csv"
    assert main(["field-sim", "--lattice", "3x3", "--theta1", "0.1", "--theta2", "0.4", "--sweeps", "20",
                 "--seed", "4", "--out", str(write)]) == 0
    outs = []
    for rep in range(2):
        out = tmp_path / f"ff_{rep}.json"
        assert main(["field-fit", "--field", str(write), "--objective", "exact", "--out", str(out)]) == 0
        outs.append(out.read_text().replace(f"ff_{rep}.json", "OUT"))
    results["field-fit"] = outs[0] == outs[1]
    ok = all(results.values())
    record(11, "same config and seed, identical bytes", ok, ", ".join(f"{k} {v}" for k, v in results.items()))
    assert ok
