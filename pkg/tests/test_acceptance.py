"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import json
import time

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import expit

from conftest import random_group_params, random_params, record_criterion, small_dataset
from harness.cli import main
from harness.data import GroupHierarchy, build_group_design, scale_covariates
from harness.dnr import DnrConfig, dnr_predict
from harness.experiment import ExperimentConfig, run_experiment
from harness.hyperopt import OptimizerConfig, UnconstrainedParams, hypergradient, sample_draw, train_sgd
from harness.kernel import (KINDS, GroupKernelParams, HarnessGram, KernelParams, brute_force_kernel_oracle,
                            elementary_symmetric, group_multiplier, harness_kernel_matrix, harness_kernel_pair,
                            univariate_kernel_eval)
from harness.klr import SolverConfig, fit_klr, klr_objective, predict_out_of_sample
from harness.metrics import auroc, block_means, kernel_heatmap, prauc
from harness.simulate import (BASE_MEANS, BLOCK_SIZES, SimConfig, SimSetting, draw_coefficients, generate_dataset,
                              latent_blocks)


def _random_instance(rng, p_max=6, pg_max=6, q_max=3):
    p, p_g = rng.integers(1, p_max + 1), rng.integers(1, pg_max + 1)
    Q, Q_g = rng.integers(1, q_max + 1), rng.integers(1, q_max + 1)
    params = random_params(rng, p, Q, zero_prob=0.2)
    params_g = random_group_params(rng, p_g, Q_g)
    kinds = tuple(rng.choice(KINDS, p))
    return params, params_g, kinds


# 1 -----------------------------------------------------------------------------

def test_criterion_1_kernel_oracle_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        params, params_g, kinds = _random_instance(rng)
        x, xt = rng.uniform(-1, 1, (2, params.p))
        z, zt = (rng.uniform(size=(2, params_g.p)) < 0.5).astype(float)
        oracle = brute_force_kernel_oracle(x, xt, z, zt, params, params_g, kinds)
        fast = harness_kernel_matrix(x[None], z[None], xt[None], zt[None], params=params, params_g=params_g,
                                     kinds=kinds).values[0, 0]
        pair = harness_kernel_pair(x, xt, z, zt, params, params_g, kinds)
        worst = max(worst, abs(fast - oracle) / abs(oracle), abs(pair - oracle) / abs(oracle))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed <= 10.0
    record_criterion(1, ok, f"1000 instances, max rel err {worst:.2e} (<= 1e-10), {elapsed:.2f}s (<= 10s)")
    assert ok


# 2 -----------------------------------------------------------------------------

def test_criterion_2_psd_and_symmetry():
    rng = np.random.default_rng(202)
    worst_sym, worst_eig = 0.0, np.inf
    for _ in range(50):
        n = rng.integers(2, 65)
        params, params_g, kinds = _random_instance(rng)
        X = rng.uniform(-1, 1, (n, params.p))
        Z = (rng.uniform(size=(n, params_g.p)) < 0.5).astype(float)
        K = harness_kernel_matrix(X, Z, params=params, params_g=params_g, kinds=kinds, jitter=0.0).values
        worst_sym = max(worst_sym, np.max(np.abs(K - K.T)))
        worst_eig = min(worst_eig, np.linalg.eigvalsh(K).min() / np.trace(K))
    ok = worst_sym <= 1e-12 and worst_eig >= -1e-8
    record_criterion(2, ok, f"50 self-Grams, max |K-K^T| {worst_sym:.1e}, min eig/trace {worst_eig:.2e} (>= -1e-8)")
    assert ok


# 3 -----------------------------------------------------------------------------

def _order_components(x, params, kinds, xt):
    k = np.array([univariate_kernel_eval(kd, a, b) for kd, a, b in zip(kinds, x, xt)])
    w = params.order_weights() * k[:, None]
    return [params.eta[q] ** 2 * elementary_symmetric(w[:, q - 1], q)[q] for q in range(1, params.Q + 1)]


def test_criterion_3_selection_semantics():
    rng = np.random.default_rng(303)
    invariant = 0
    order_ok = 0
    for _ in range(100):
        p = rng.integers(2, 7)
        params = random_params(rng, p, 2)
        params_g = random_group_params(rng, 3, 1)
        kinds = tuple(rng.choice(KINDS, p))
        j = rng.integers(p)
        kappa = params.kappa.copy()
        kappa[j] = 0.0
        dropped = KernelParams(kappa, params.tau, params.eta)
        X = rng.uniform(-1, 1, (2, p))
        Xp = X.copy()
        Xp[:, j] = rng.uniform(-1, 1, 2)
        Z = (rng.uniform(size=(2, 3)) < 0.5).astype(float)
        a = harness_kernel_matrix(X, Z, params=dropped, params_g=params_g, kinds=kinds).values
        b = harness_kernel_matrix(Xp, Z, params=dropped, params_g=params_g, kinds=kinds).values
        pa = harness_kernel_pair(X[0], X[1], Z[0], Z[1], dropped, params_g, kinds)
        pb = harness_kernel_pair(Xp[0], Xp[1], Z[0], Z[1], dropped, params_g, kinds)
        invariant += int(np.array_equal(a, b) and pa == pb)

        tau = params.tau.copy()
        tau[j, 0] = 0.0
        no_main = KernelParams(params.kappa, tau, params.eta)
        c1 = _order_components(X[0], no_main, kinds, X[1])
        c2 = _order_components(Xp[0], no_main, kinds, Xp[1])
        order_ok += int(c1[0] == c2[0] and c1[1] != c2[1])
    ok = invariant == 100 and order_ok == 100
    record_criterion(3, ok, f"kappa_j=0 invariance {invariant}/100 exact; tau_j1=0 order-1 fixed and order-2 "
                            f"moves {order_ok}/100")
    assert ok


# 4 -----------------------------------------------------------------------------

def test_criterion_4_group_block_structure(tmp_path):
    rng = np.random.default_rng(404)
    violations = 0
    configs = 0
    for _ in range(50):
        counts = (int(rng.integers(2, 5)), int(rng.integers(1, 4)))
        h = GroupHierarchy(counts)
        labels = np.column_stack([rng.integers(0, c, 40) for c in counts])
        Z = build_group_design(labels, h).Z
        params_g = GroupKernelParams(rng.uniform(0.05, 2.0, h.p_g), rng.uniform(0.05, 2.0, (h.p_g, 2)),
                                     rng.uniform(0.1, 2.0, 3))
        M = np.array([[group_multiplier(Z[i], Z[k], params_g) for k in range(40)] for i in range(40)])
        joint = labels[:, 0] * counts[1] + labels[:, 1]
        same = joint[:, None] == joint[None, :]
        cross = labels[:, 0][:, None] != labels[:, 0][None, :]
        violations += int(M[same].min() < M[cross].max())
        configs += 1

    # heatmap on simulated data with trained parameters
    sim = generate_dataset(SimConfig(n=1000, p=20), 1, seed=4)
    X, spec = scale_covariates(sim.dataset.X)
    ds = sim.dataset.with_X(X)
    trace = train_sgd(ds, OptimizerConfig(iterations=60, batch_size=128, holdout_size=128, seed=4), SolverConfig(),
                      spec.kinds())
    params, params_g = trace.params
    pick = np.sort(np.random.default_rng(4).choice(ds.n, 150, replace=False))
    sub = ds.subset(pick)
    path = tmp_path / "heatmap.csv"
    K, order = kernel_heatmap(sub, params, params_g, spec.kinds(), path)
    g = sub.group_labels[order, 0]
    contiguous = np.all(np.diff(g) >= 0)
    header = path.read_text().splitlines()[0].split(",")[1:]
    ids_match = [int(v) for v in header] == sub.ids[order].tolist()
    within, across = block_means(K, g)
    off = ~np.eye(len(g), dtype=bool)
    per_group = all(K[np.ix_(g == a, g == a)][off[np.ix_(g == a, g == a)]].mean() > K[np.ix_(g == a, g != a)].mean()
                    for a in np.unique(g))
    ok = violations == 0 and contiguous and ids_match and within > across and per_group
    record_criterion(4, ok, f"same>=cross multiplier in {configs - violations}/{configs} configs; heatmap sorted "
                            f"by group, within-block mean {within:.3f} > cross-block {across:.3f}")
    assert ok


# 5 -----------------------------------------------------------------------------

def test_criterion_5_klr_correctness():
    root = brentq(lambda f: expit(-f) - 2.0 * f, 0.0, 1.0, xtol=1e-15)
    scalar = fit_klr(np.array([[1.0]]), np.array([1.0]), SolverConfig(lam=1.0)).f_hat[0]
    scalar_err = abs(scalar - root)

    rng = np.random.default_rng(505)
    monotone, worst_grad, worst_drop = 0, 0.0, 0.0
    for _ in range(100):
        n = rng.integers(2, 60)
        A = rng.normal(size=(n, rng.integers(1, 8))) * rng.uniform(0.1, 5)
        K = A @ A.T + rng.uniform(1e-4, 1.0) * np.eye(n)
        y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        m = fit_klr(K, y, SolverConfig(lam=float(rng.uniform(0.05, 5))))
        path = np.array(m.psi_path)
        d = np.diff(path)
        worst_drop = min(worst_drop, d.min() if d.size else 0.0)
        monotone += int(np.all(d >= -1e-12 * (1 + np.abs(path[:-1]))))
        worst_grad = max(worst_grad, m.grad_norm if m.converged else np.inf)

    worst_gen = 0.0
    for _ in range(20):
        n = rng.integers(2, 21)
        A = rng.normal(size=(n, n))
        K = A @ A.T / n + 0.2 * np.eye(n)
        y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        lam = float(rng.uniform(0.1, 3))
        Kinv = np.linalg.inv(K)
        res = minimize(lambda f: -klr_objective(f, K, y, lam), np.zeros(n),
                       jac=lambda f: -((y + 1) / 2 - expit(f) - 2 * lam * Kinv @ f), method="BFGS",
                       options={"gtol": 1e-12, "maxiter": 10_000})
        worst_gen = max(worst_gen, np.max(np.abs(fit_klr(K, y, SolverConfig(lam=lam)).f_hat - res.x)))
    ok = scalar_err <= 1e-6 and monotone == 100 and worst_grad <= 1e-8 and worst_gen <= 1e-6
    record_criterion(5, ok, f"scalar |f-root| {scalar_err:.1e}; Psi non-decreasing {monotone}/100 (largest drop "
                            f"{worst_drop:.1e}, rounding floor); max grad {worst_grad:.1e}; vs BFGS {worst_gen:.1e}")
    assert ok


# 6 -----------------------------------------------------------------------------

def test_criterion_6_hypergradient_agreement():
    rng = np.random.default_rng(606)
    start = time.perf_counter()
    worst = 0.0
    hierarchies = [(1,), (2,), (3,), (1, 2)]
    for _ in range(50):
        n = int(rng.integers(12, 41))
        p = int(rng.integers(3, 6))
        counts = hierarchies[rng.integers(len(hierarchies))]
        ds = small_dataset(rng, n=n, p=p, counts=counts)
        assert ds.design.p_g <= 3
        u = UnconstrainedParams.initial(p, ds.design.p_g, int(rng.integers(1, 3)), len(counts))
        u = u.unflatten(u.flatten() + rng.normal(scale=0.3, size=u.flatten().size))
        m = int(rng.integers(3, n // 3 + 1))
        draw = sample_draw(n, n - m, m, seed=int(rng.integers(1000)), t=0)
        _, g_unrolled = hypergradient(u, ds, draw, "unrolled_newton")
        _, g_fd = hypergradient(u, ds, draw, "finite_difference", h=1e-4)
        a, b = g_unrolled.flatten(), g_fd.flatten()
        worst = max(worst, np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed <= 60.0
    record_criterion(6, ok, f"50 instances, max rel err {worst:.2e} (<= 1e-4), {elapsed:.1f}s (<= 60s)")
    assert ok


# 7 -----------------------------------------------------------------------------

def _pair_count(s, y):
    pos = [a for a, l in zip(s, y) if l > 0]
    neg = [b for b, l in zip(s, y) if l < 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def _threshold_sweep(s, y):
    order = sorted(range(len(s)), key=lambda i: (-s[i], i))
    n_pos = sum(1 for v in y if v > 0)
    total, prev_recall = 0.0, 0.0
    for k in range(1, len(s) + 1):
        top = order[:k]
        tp = sum(1 for i in top if y[i] > 0)
        recall = tp / n_pos
        total += (recall - prev_recall) * (tp / k)
        prev_recall = recall
    return total


def test_criterion_7_metric_oracles():
    rng = np.random.default_rng(707)
    checked, worst = 0, 0.0
    for m in range(1, 13):
        scores_tied = rng.integers(0, 4, m).astype(float)
        scores_cont = rng.normal(size=m)
        for bits in itertools.product((-1.0, 1.0), repeat=m):
            y = np.array(bits)
            for s in (scores_tied, scores_cont):
                if (y > 0).any():
                    worst = max(worst, abs(prauc(s, y) - _threshold_sweep(s, y)))
                if (y > 0).any() and (y < 0).any():
                    worst = max(worst, abs(auroc(s, y) - _pair_count(s, y)))
                checked += 1
    exhaustive = worst
    for _ in range(1000):
        m = int(rng.integers(13, 300))
        s = rng.integers(0, 20, m).astype(float) if rng.uniform() < 0.5 else rng.normal(size=m)
        y = np.where(rng.uniform(size=m) < rng.uniform(0.05, 0.95), 1.0, -1.0)
        y[0], y[1] = 1.0, -1.0
        worst = max(worst, abs(auroc(s, y) - _pair_count(s, y)), abs(prauc(s, y) - _threshold_sweep(s, y)))
    ok = worst <= 1e-12
    record_criterion(7, ok, f"{checked} exhaustive cases (m<=12) max err {exhaustive:.1e}; 1000 random larger, "
                            f"overall max err {worst:.1e} (<= 1e-12)")
    assert ok


# 8 -----------------------------------------------------------------------------

def test_criterion_8_dgp_fidelity():
    # linearity probe on the setting-4 latent surface
    sim4 = generate_dataset(SimConfig(n=500, p=30), 4, seed=8)
    coef = sim4.coefficients
    rng = np.random.default_rng(808)
    rows = rng.choice(500, 50, replace=False)
    g = sim4.dataset.group_labels[rows, 0]
    t = sim4.dataset.year[rows] - sim4.config.first_year
    cells = np.c_[g, t]
    X = sim4.dataset.X[rows]
    h = 0.3

    def latent(Xq, setting):
        return sum(latent_blocks(Xq, cells, coef, setting).values())

    worst_lin, probe_nonlinear = 0.0, 0.0
    s1 = SimSetting.from_id(1)
    for j in range(30):
        e = np.zeros(30)
        e[j] = h
        d2 = latent(X + e, sim4.setting) - 2 * latent(X, sim4.setting) + latent(X - e, sim4.setting)
        worst_lin = max(worst_lin, np.max(np.abs(d2)))
        d2n = latent(X + e, s1) - 2 * latent(X, s1) + latent(X - e, s1)
        probe_nonlinear = max(probe_nonlinear, np.max(np.abs(d2n)))
    full_cells = np.c_[sim4.dataset.group_labels[:, 0], sim4.dataset.year - sim4.config.first_year]
    np.testing.assert_allclose(sim4.latent, sum(latent_blocks(sim4.dataset.X, full_cells, coef, sim4.setting).values()),
                               atol=1e-12)

    # equal block variances in settings 1-3
    worst_var = 0.0
    for setting in (1, 2, 3):
        v = [np.var(b) for b in generate_dataset(SimConfig(n=5000), setting, seed=setting).blocks.values()]
        worst_var = max(worst_var, max(v) / min(v) - 1)

    # coefficient dispersion moments vs the stated normals (mean, variance)
    cfg = SimConfig()
    s = SimSetting.from_id(1)
    draws = [draw_coefficients(cfg, s, seed) for seed in range(2000)]
    z_scores = []
    for key in ("alpha", "beta", "gamma", "zeta"):
        base = np.concatenate([c.base[key] for c in draws])
        grp = np.concatenate([(c.group[key] - c.base[key]).ravel() for c in draws])
        yr = np.concatenate([(c.cell[key] - c.group[key][:, None, :]).ravel() for c in draws])
        for sample, mean, var in ((base, BASE_MEANS[key], cfg.base_var), (grp, 0.0, cfg.group_var),
                                  (yr, 0.0, cfg.year_var)):
            N = sample.size
            z_scores.append(abs(sample.mean() - mean) / np.sqrt(var / N))
            z_scores.append(abs(sample.var(ddof=1) - var) / (var * np.sqrt(2.0 / (N - 1))))
    assert sum(BLOCK_SIZES.values()) == 35
    ok = worst_lin <= 1e-8 and probe_nonlinear > 1e-3 and worst_var <= 0.05 and max(z_scores) <= 3.0
    record_criterion(8, ok, f"setting-4 max 2nd difference {worst_lin:.1e} (setting-1 control {probe_nonlinear:.2f}); "
                            f"block variance spread {worst_var:.1e} (<= 5%); max moment z {max(z_scores):.2f} (<= 3)")
    assert ok


# 9 -----------------------------------------------------------------------------

STUDY = {
    "n": 5000,
    "p": 100,
    "replicates": 10,
    "optimizer": {"iterations": 200, "batch_size": 256, "holdout_size": 256, "learning_rate": 0.01},
}


def _study(setting, out_dir):
    tree = {
        "seed": 1000 * setting,
        "sim": {"setting": setting, "n": STUDY["n"], "p": STUDY["p"]},
        "optimizer": STUDY["optimizer"],
        "variants": ["harness", "no_order", "no_group", "baseline"],
        "outputs": {"models": False, "traces": False},
    }
    report = run_experiment(ExperimentConfig.from_dict(tree), STUDY["replicates"], str(out_dir))
    assert report["failures"] == []
    return {v: report["summary"][v]["prospective"]["overall"]["auroc"]["mean"] for v in report["summary"]}


def test_criterion_9_simulation_study(tmp_path):
    start = time.perf_counter()
    means = {s: _study(s, tmp_path / f"setting{s}") for s in (1, 2, 3, 4)}
    elapsed = time.perf_counter() - start
    for s, m in means.items():
        print(f"setting {s}: " + ", ".join(f"{k}={v:.4f}" for k, v in m.items()))
    gap = means[4]["harness"] - means[4]["baseline"]
    a = abs(gap) <= 0.02
    b = means[3]["harness"] >= means[3]["no_order"]
    c = all(means[s]["harness"] >= means[s]["no_group"] for s in means)
    summary = ("(a) setting 4 harness {:.4f} vs baseline {:.4f}, gap {:+.4f} ({}); (b) setting 3 harness {:.4f} vs "
               "no-order {:.4f} ({}); (c) harness >= no-group in {}/4 settings ({}); {:.0f}s").format(
        means[4]["harness"], means[4]["baseline"], gap, "ok" if a else "FAIL", means[3]["harness"],
        means[3]["no_order"], "ok" if b else "FAIL", sum(means[s]["harness"] >= means[s]["no_group"] for s in means),
        "ok" if c else "FAIL", elapsed)
    (tmp_path / "study.json").write_text(json.dumps(means, indent=1))
    ok = a and b and c and elapsed <= 7200
    record_criterion(9, ok, summary)
    assert ok


# 10 ----------------------------------------------------------------------------

def test_criterion_10_end_to_end_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 7,
        "sim": {"setting": 2, "n": 600, "p": 25},
        "optimizer": {"iterations": 10, "batch_size": 64, "holdout_size": 64},
        "metrics": {"min_group_size": 20},
        "variants": ["harness", "no_order", "no_group", "baseline"],
    }))
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["replicate", "--config", str(cfg), "--replicates", "2", "--out-dir", str(out)]) == 0
        metric_files = sorted(p.relative_to(out) for p in out.rglob("*") if p.suffix in (".json", ".csv"))
        runs.append((out, metric_files))
    (out_a, files_a), (out_b, files_b) = runs
    identical = files_a == files_b and all((out_a / f).read_bytes() == (out_b / f).read_bytes() for f in files_a)

    rng = np.random.default_rng(1010)
    train = small_dataset(rng, n=60, p=4, counts=(2, 2))
    test = small_dataset(rng, n=15, p=4, counts=(2, 2))
    params = random_params(rng, 4, 2)
    params_g = random_group_params(rng, train.design.p_g, 2)
    dnr = dnr_predict(train, test, params, params_g, DnrConfig(D=1))
    K = HarnessGram(train.X, train.Z, params, params_g, jitter=1e-8).values
    direct = predict_out_of_sample(fit_klr(K, train.y), HarnessGram(test.X, test.Z, params, params_g,
                                                                    X_tilde=train.X, Z_tilde=train.Z).values)
    diff = float(np.max(np.abs(dnr - direct)))
    ok = identical and diff <= 1e-10
    record_criterion(10, ok, f"replicate outputs byte-identical across runs ({len(files_a)} files): {identical}; "
                             f"D=1 vs direct max diff {diff:.1e} (<= 1e-10)")
    assert ok
