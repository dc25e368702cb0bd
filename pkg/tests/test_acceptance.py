"""End-to-end acceptance checks.

Property-based verification of the bound hierarchy, natural-gradient
exactness, gradient correctness, quadrature accuracy, special-case
collapses, persistence, the mixing initializer, and scaled-down
directional benchmark comparisons on the bundled synthetic datasets.
"""

import numpy as np
import pytest
from conftest import make_model

from gpcde import autodiff as ad
from gpcde import config as cfg
from gpcde import density
from gpcde.baselines import KdeModel, kde_nlpp, kde_select_bandwidth
from gpcde.bounds import (GaussianLatentPosterior, expected_loglik,
                          expected_loglik_terms)
from gpcde.cli import natgrad_demo
from gpcde.data import (conditional_mixture, heteroscedastic_sinusoid,
                        split_farthest_point)
from gpcde.kernels import gram, gram_with_jitter
from gpcde.linear_maps import OutputMixing, init_mixing_matern, \
    matern_pixel_gram
from gpcde.model import (build_elbo_graph, elbo_gaussian_qw_deterministic,
                         elbo_gp, elbo_optimal_qw)
from gpcde.optim import (NatGradState, analytic_optimal_qu,
                         deterministic_w_grid, natgrad_step)
from gpcde.persistence import load_model, save_model
from gpcde.quadrature import gauss_hermite_rule
from gpcde.sparse_gp import conditional
from gpcde.trainer import train


def test_bound_ordering_50_models():
    # the free-form quadrature posterior dominates every Gaussian q(w)
    rng = np.random.default_rng(0)
    rule = gauss_hermite_rule(30, 1)
    worst = np.inf
    for _ in range(50):
        n = int(rng.integers(5, 21))
        m = int(rng.integers(3, 9))
        model, X, Y = make_model(rng, n=n, m=m, d_w=1, d_y=1,
                                 latent_mode=cfg.QUADRATURE)
        opt = elbo_optimal_qw(model, X, Y, rule=rule)
        for _ in range(20):
            q = GaussianLatentPosterior.from_diagonal(
                0.7 * rng.standard_normal((n, 1)),
                rng.uniform(0.1, 1.5, (n, 1)))
            gauss = elbo_gaussian_qw_deterministic(model, X, Y, rule=rule,
                                                   q_w_override=q)
            worst = min(worst, opt - gauss)
    assert worst > -1e-8, f"ordering violated by {worst}"


def _qu_grads(model, X, Y, rule=None):
    kind = "gp" if model.config.d_w == 0 else "deterministic"
    g = build_elbo_graph(model, X, Y, kind=kind, rule=rule,
                         sample_projection=False)
    grads = ad.grad(g.elbo, [g.u_mean_leaf] + g.u_cov_leaves)
    return grads[0], grads[1:]


def test_natural_gradient_exactness_20_inits():
    rng = np.random.default_rng(1)
    rule = gauss_hermite_rule(15, 1)
    for trial in range(20):
        d_w = trial % 2
        model, X, Y = make_model(
            rng, n=int(rng.integers(5, 10)), m=int(rng.integers(3, 6)),
            d_w=d_w, d_y=int(rng.integers(1, 3)),
            latent_mode=cfg.PERPOINT if d_w else cfg.AMORTIZED)
        gm, gcovs = _qu_grads(model, X, Y, rule if d_w else None)
        mean, chol = natgrad_step(NatGradState(gamma=1.0), model.u_mean,
                                  model.u_chol, gm, gcovs)
        w_pts, w_wts = deterministic_w_grid(model, X, Y, rule) if d_w \
            else (None, None)
        m_star, chol_star = analytic_optimal_qu(model, X, Y, w_pts, w_wts)
        assert np.max(np.abs(mean - m_star)) < 1e-6
        for ell in range(chol.shape[0]):
            assert np.max(np.abs(chol[ell] @ chol[ell].T -
                                 chol_star[ell] @ chol_star[ell].T)) < 1e-6
        model.u_mean, model.u_chol = mean, chol
        gm2, gcovs2 = _qu_grads(model, X, Y, rule if d_w else None)
        norm = np.linalg.norm(gm2) + sum(np.linalg.norm(g) for g in gcovs2)
        assert norm < 1e-6


def test_natgrad_demo_margins():
    # same latent model trained three ways; natural gradients must beat
    # plain gradients by a clear margin and land near the analytic run
    results = natgrad_demo(n=100, iterations=2000, seed=0, quiet=True)
    analytic = results["analytic"][0]
    natgrad = results["natgrad"][0]
    adam = results["adam"][0]
    assert natgrad - adam >= 0.3, f"natgrad-adam gap {natgrad - adam}"
    assert abs(natgrad - analytic) <= 0.05, \
        f"natgrad-analytic gap {natgrad - analytic}"


def _fd_gradient_check(model, X, Y, kind, rule=None, fixed_eps=None,
                       fixed_a_eps=None, coords_per_model=40, rng=None):
    """Reverse-mode gradients vs central finite differences on a random
    subset of raw parameter coordinates."""
    def value():
        return build_elbo_graph(
            model, X, Y, kind=kind, rule=rule,
            sample_projection=fixed_a_eps is not None,
            fixed_eps=fixed_eps, fixed_a_eps=fixed_a_eps).value

    g = build_elbo_graph(model, X, Y, kind=kind, rule=rule,
                         sample_projection=fixed_a_eps is not None,
                         fixed_eps=fixed_eps, fixed_a_eps=fixed_a_eps)
    names = list(model.store.specs)
    grads = dict(zip(names, ad.grad(g.elbo, [g.leaves[n] for n in names])))
    all_coords = [(n, c) for n in names
                  for c in np.ndindex(model.store.raw[n].shape
                                      if model.store.raw[n].shape else (1,))]
    picks = [all_coords[i] for i in
             rng.choice(len(all_coords),
                        min(coords_per_model, len(all_coords)),
                        replace=False)]
    eps = 1e-5
    for name, coord in picks:
        raw = model.store.raw[name]
        c = coord if raw.shape else ()
        orig = raw[c]
        raw[c] = orig + eps
        fp = value()
        raw[c] = orig - eps
        fm = value()
        raw[c] = orig
        fd = (fp - fm) / (2 * eps)
        gc = grads[name][c] if grads[name].shape else float(grads[name])
        err = abs(fd - gc) / max(abs(fd), abs(gc), 1e-6)
        assert err < 1e-4, f"{kind} {name}{c}: rel err {err}"


def test_gradient_correctness_all_variants():
    rng = np.random.default_rng(2)
    for trial in range(10):
        model, X, Y = make_model(rng, n=4, m=3, d_w=0, d_y=2,
                                 variational_optimizer="adam")
        _fd_gradient_check(model, X, Y, "gp", rng=rng)

        model, X, Y = make_model(rng, n=4, m=3, d_w=1,
                                 latent_mode=cfg.PERPOINT,
                                 variational_optimizer="adam")
        eps_fixed = rng.standard_normal((1, 4, 1))
        _fd_gradient_check(model, X, Y, "mc", fixed_eps=eps_fixed, rng=rng)

        model, X, Y = make_model(rng, n=4, m=3, d_w=1,
                                 latent_mode=cfg.AMORTIZED,
                                 variational_optimizer="adam")
        _fd_gradient_check(model, X, Y, "deterministic",
                           rule=gauss_hermite_rule(8, 1), rng=rng)

        model, X, Y = make_model(rng, n=4, m=3, d_w=1,
                                 latent_mode=cfg.QUADRATURE,
                                 variational_optimizer="adam")
        _fd_gradient_check(model, X, Y, "optimal",
                           rule=gauss_hermite_rule(8, 1), rng=rng)

        model, X, Y = make_model(rng, n=4, m=3, d_x=3, d_y=3, d_w=1,
                                 latent_mode=cfg.PERPOINT,
                                 input_projection_dim=2, num_gp_outputs=2,
                                 variational_optimizer="adam")
        _fd_gradient_check(model, X, Y, "mc",
                           fixed_eps=rng.standard_normal((1, 4, 1)),
                           fixed_a_eps=rng.standard_normal((2, 3)),
                           rng=rng)


def test_expected_loglik_vs_mc_20_cases():
    for case in range(20):
        rng = np.random.default_rng(300 + case)
        mixed = case % 2 == 1
        l = int(rng.integers(1, 4))
        d_y = int(rng.integers(l, 5)) if mixed else l
        y = rng.standard_normal(d_y)
        mu = rng.standard_normal(l)
        var = rng.uniform(0.1, 2.0, l)
        s2 = rng.uniform(0.2, 1.5)
        p = rng.standard_normal((l, d_y)) if mixed else None
        val = expected_loglik(y, mu, var, s2,
                              OutputMixing(p) if mixed else None)
        n = 100_000
        f = mu + np.sqrt(var) * rng.standard_normal((n, l))
        mean_y = f if p is None else f @ p
        ll = -0.5 * d_y * np.log(2 * np.pi * s2) - \
            np.sum((y - mean_y) ** 2, axis=1) / (2 * s2)
        se = ll.std() / np.sqrt(n)
        assert abs(val - ll.mean()) < 3 * se + 1e-12


def _loglik_of_w(model, x_row, y_row):
    """L_w(w) = E_q(f)[log p(y|f)] at the augmented input (x, w)."""
    def f(w):
        xaug = np.concatenate([x_row, [w]])[None, :]
        mu, var = conditional(model.inducing(), model.kernel_spec(), xaug)
        return np.sum(expected_loglik_terms(y_row[None, :], mu, var,
                                            model.sigma2))
    return f


def test_quadrature_accuracy_20_cases():
    rng = np.random.default_rng(3)
    rule = gauss_hermite_rule(100, 1)
    for _ in range(20):
        # moderate lengthscales keep L_w resolvable at 100 nodes; very
        # rough integrands are outside any fixed rule's reach
        model, X, Y = make_model(rng, n=5, m=3, d_w=1, d_y=1,
                                 latent_mode=cfg.QUADRATURE,
                                 randomize=False)
        model.u_mean = 0.3 * rng.standard_normal(model.u_mean.shape)
        model.store.set_constrained("lengthscales",
                                    rng.uniform(2.0, 4.0, 3))
        model.store.set_constrained("sigma2", rng.uniform(0.5, 1.5))
        f = _loglik_of_w(model, X[0], Y[0])
        vals = np.array([f(w) for w in rule.nodes[:, 0]])
        shift = vals.max()
        log_gh = np.log(rule.weights @ np.exp(vals - shift)) + shift
        grid = np.linspace(-10.0, 10.0, 20001)
        fg = np.array([f(w) for w in grid])
        dens = np.exp(fg - shift) * np.exp(-grid ** 2 / 2) / \
            np.sqrt(2 * np.pi)
        log_tr = np.log(np.trapezoid(dens, grid)) + shift
        assert abs(log_gh - log_tr) < 1e-8

    # exact Gaussian case: log E[exp(-w^2/2)] = -log(2)/2
    vals = -rule.nodes[:, 0] ** 2 / 2
    log_gh = np.log(rule.weights @ np.exp(vals))
    assert abs(log_gh + 0.5 * np.log(2.0)) < 1e-10


def _svgp_elbo_oracle(model, X, Y):
    """Independently coded sparse-GP regression ELBO (naive inverses)."""
    spec = model.kernel_spec()
    q = model.inducing()
    s2 = model.sigma2
    kzz = gram_with_jitter(spec, q.Z)
    kzz_inv = np.linalg.inv(kzz)
    kzx = gram(spec, q.Z, X)
    proj = kzx.T @ kzz_inv
    total = 0.0
    m = q.Z.shape[0]
    for ell in range(q.num_outputs):
        s = q.cov(ell)
        mu = proj @ q.mean[:, ell]
        var = spec.signal_variance - \
            np.sum(kzx * (kzz_inv @ (kzz - s) @ kzz_inv @ kzx), axis=0)
        total += np.sum(-0.5 * np.log(2 * np.pi * s2) -
                        ((Y[:, ell] - mu) ** 2 + var) / (2 * s2))
        mvec = q.mean[:, ell]
        total -= 0.5 * (np.trace(kzz_inv @ s) + mvec @ kzz_inv @ mvec -
                        m + np.linalg.slogdet(kzz)[1] -
                        np.linalg.slogdet(s)[1])
    return total


def test_special_case_collapses():
    rng = np.random.default_rng(4)
    # no latents: the bound reduces to sparse GP regression
    for _ in range(5):
        model, X, Y = make_model(rng, d_w=0, d_y=2, jitter=1e-8)
        val = elbo_gp(model, X, Y)
        oracle = _svgp_elbo_oracle(model, X, Y)
        assert abs(val - oracle) < 1e-10 * max(1.0, abs(oracle))
    # identity mixing equals the unmixed expected log-likelihood
    for _ in range(5):
        d = int(rng.integers(1, 4))
        y = rng.standard_normal(d)
        mu = rng.standard_normal(d)
        var = rng.uniform(0.1, 2.0, d)
        s2 = rng.uniform(0.2, 1.5)
        assert abs(expected_loglik(y, mu, var, s2,
                                   OutputMixing(np.eye(d))) -
                   expected_loglik(y, mu, var, s2)) < 1e-12


def test_persistence_and_determinism(tmp_path):
    ds = heteroscedastic_sinusoid(n=60, seed=0).standardized()
    config = cfg.ModelConfig(d_w=1, latent_mode=cfg.AMORTIZED,
                             num_inducing=6, iterations=60, batch_size=20,
                             seed=0, encoder_widths=(4,), quad_points=8)
    a = train(ds, config)
    b = train(ds, config)
    for name in a.model.store.raw:
        assert np.array_equal(a.model.store.raw[name],
                              b.model.store.raw[name])
    assert np.array_equal(a.model.u_mean, b.model.u_mean)
    assert np.array_equal(a.model.u_chol, b.model.u_chol)

    path = tmp_path / "m.gpcde"
    save_model(a, path)
    loaded = load_model(path)
    before = density.nlpp(a.model, ds.X, ds.Y, 400,
                          np.random.default_rng(1))
    after = density.nlpp(loaded.model, ds.X, ds.Y, 400,
                         np.random.default_rng(1))
    assert abs(before - after) < 1e-10


def test_matern_mixing_initializer_6x6():
    side = 6
    coords = np.array([[i, j] for i in range(side) for j in range(side)],
                      dtype=np.float64)
    k = matern_pixel_gram(coords, 1.0)
    d_y = side * side
    mix = init_mixing_matern(coords, d_y, 1.0)
    assert np.linalg.norm(mix.P.T @ mix.P - k) < 1e-8
    # truncated reconstruction error matches the eigenvalue tail
    evals = np.sort(np.linalg.eigvalsh(k))[::-1]
    for l in (1, 6, 18, 30):
        trunc = init_mixing_matern(coords, l, 1.0)
        err = np.linalg.norm(trunc.P.T @ trunc.P - k)
        tail = np.sqrt(np.sum(evals[l:] ** 2))
        assert abs(err - tail) < 1e-8


def _split_standardized(ds, n_test, seed):
    tr_idx, te_idx = split_farthest_point(ds.X, n_test, seed)
    test = ds.subset(te_idx)
    trs = ds.subset(tr_idx).standardized()
    return trs, test.apply_stats(trs.x_stats, trs.y_stats)


def test_conditional_mixture_directional():
    # bimodal conditional mixture: the latent-variable model must beat
    # both a plain GP and an unconditional KDE
    gp_nlpp, cde_nlpp, ukde_nlpp = [], [], []
    for seed in (0, 1, 2):
        trs, test = _split_standardized(conditional_mixture(n=1200,
                                                            seed=seed),
                                        200, seed)
        for label, kw in (("gp", dict(d_w=0)),
                          ("cde", dict(d_w=1, latent_mode=cfg.QUADRATURE,
                                       quad_points=30))):
            c = cfg.ModelConfig(num_inducing=32, iterations=600,
                                batch_size=128, seed=seed,
                                learning_rate=0.01, **kw)
            t = train(trs, c)
            score = density.nlpp(t.model, test.X, test.Y, 2000,
                                 np.random.default_rng(seed))
            (gp_nlpp if label == "gp" else cde_nlpp).append(score)
        h = kde_select_bandwidth(trs.Y, seed=seed)
        ukde_nlpp.append(kde_nlpp(KdeModel(trs.Y, h), None, test.Y))
    gp, cde, ukde = map(np.mean, (gp_nlpp, cde_nlpp, ukde_nlpp))
    assert gp - cde >= 0.05, f"GP {gp:.4f} vs GP-CDE {cde:.4f}"
    assert ukde - cde >= 0.05, f"U-KDE {ukde:.4f} vs GP-CDE {cde:.4f}"


def test_heteroscedastic_directional():
    # input-dependent noise: quadrature posterior > amortized >= plain GP
    # in held-out log-likelihood
    logliks = {"gp": [], "amortized": [], "quad": []}
    for seed in (0, 1, 2):
        trs, test = _split_standardized(
            heteroscedastic_sinusoid(n=450, seed=seed), 150, seed)
        for label, kw in (
                ("gp", dict(d_w=0)),
                ("amortized", dict(d_w=1, latent_mode=cfg.AMORTIZED)),
                ("quad", dict(d_w=1, latent_mode=cfg.QUADRATURE,
                              quad_points=30))):
            c = cfg.ModelConfig(num_inducing=24, iterations=500,
                                batch_size=128, seed=seed,
                                learning_rate=0.01, **kw)
            t = train(trs, c)
            logliks[label].append(-density.nlpp(
                t.model, test.X, test.Y, 2000, np.random.default_rng(seed)))
    gp, amort, quad = (np.mean(logliks[k])
                       for k in ("gp", "amortized", "quad"))
    assert quad >= amort + 0.02, f"quad {quad:.4f} vs amortized {amort:.4f}"
    assert amort >= gp, f"amortized {amort:.4f} vs GP {gp:.4f}"
