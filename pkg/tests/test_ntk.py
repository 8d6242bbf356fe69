import numpy as np
import pytest

from neurotopo import density, embed, net, ntk
from neurotopo.errors import DegenerateProfile, NegativeSpectrum, SizeExceeded, UnknownDual

RHOS = [-0.9, -0.5, 0.0, 0.5, 0.9, 1.0]


def torus_config(beta=0.2, omega=3.0, width=64):
    return net.NetworkConfig((4, width, width, 1), beta=beta, activation="cosine", omega=omega)


class TestDuals:
    def test_relu_spot_values(self):
        d = ntk.dual_activation("relu")
        assert d.dual(0.0) == pytest.approx(1 / np.pi, abs=1e-15)
        assert d.dual_deriv(0.0) == pytest.approx(0.5)
        assert d.dual(1.0) == pytest.approx(1.0)
        assert d.dual_deriv(1.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("omega", [0.5, 3.0, 5.0, 8.0])
    def test_cosine_unit_at_one(self, omega):
        assert ntk.cosine_dual(1.0, omega) == pytest.approx(1.0, rel=1e-14)
        assert ntk.cosine_dual_deriv(1.0, omega) == pytest.approx(omega**2 * np.tanh(omega**2))

    def test_cosine_matches_cosh_form(self):
        rho = np.linspace(-1, 1, 21)
        np.testing.assert_allclose(ntk.cosine_dual(rho, 2.0), np.cosh(4 * rho) / np.cosh(4.0), rtol=1e-13)
        np.testing.assert_allclose(
            ntk.cosine_dual_deriv(rho, 2.0), 4 * np.sinh(4 * rho) / np.cosh(4.0), rtol=1e-12, atol=1e-15
        )

    @pytest.mark.parametrize("name", ["relu", "cosine"])
    def test_monotone_on_unit_interval(self, name):
        d = ntk.dual_activation(name, 3.0)
        assert np.all(np.diff(d.dual(np.linspace(0, 1, 200))) >= 0)

    def test_unknown(self):
        with pytest.raises(UnknownDual):
            ntk.dual_activation("tanh")

    def test_relu_mc_zero(self):
        assert ntk.monte_carlo_dual("relu", 0.0, 10**6) == pytest.approx(1 / np.pi, abs=0.005)

    @pytest.mark.parametrize("name", ["relu", "cosine"])
    def test_mc_standardised(self, name):
        est, se = ntk.monte_carlo_dual(name, 1.0, 10**5, omega=5.0, seed=1, return_stderr=True)
        assert abs(est - 1.0) <= 3 * se

    def test_cosine_mc_half(self):
        est, se = ntk.monte_carlo_dual("cosine", 0.5, 10**6, omega=5.0, seed=2, return_stderr=True)
        assert abs(est - np.cosh(12.5) / np.cosh(25.0)) <= 3 * se

    @pytest.mark.parametrize("rho", RHOS)
    @pytest.mark.parametrize("name,omega", [("relu", 0.0), ("cosine", 1.5), ("cosine", 5.0)])
    @pytest.mark.parametrize("deriv", [False, True])
    def test_analytic_vs_mc(self, rho, name, omega, deriv):
        d = ntk.dual_activation(name, omega)
        exact = (d.dual_deriv if deriv else d.dual)(rho)
        est, se = ntk.monte_carlo_dual(name, rho, 10**6, omega=omega, seed=3,
                                       derivative=deriv, return_stderr=True)
        assert abs(est - exact) <= 4 * se + 1e-12

    @pytest.mark.parametrize("name", ["relu", "cosine"])
    def test_general_variance_moments(self, name):
        # non-unit variances, checked against direct sampling
        s1, s2, c = 1.7, 0.6, -0.4
        rng = np.random.default_rng(4)
        L = np.linalg.cholesky([[s1, c], [c, s2]])
        xy = rng.standard_normal((10**6, 2)) @ L.T
        mu, dmu = net.activation_fns(name, 1.3)
        T, Td = ntk._moments(name, 1.3, s1, s2, c)
        for exact, p in [(T, mu(xy[:, 0]) * mu(xy[:, 1])), (Td, dmu(xy[:, 0]) * dmu(xy[:, 1]))]:
            assert abs(p.mean() - exact) <= 4 * p.std() / 1e3


class TestLimitingNTK:
    def test_depth_one_affine(self):
        c = net.NetworkConfig((2, 1), beta=0.3, activation="identity")
        Z = np.random.default_rng(0).normal(size=(5, 2))
        G = ntk.limiting_ntk(c, Z).G
        np.testing.assert_allclose(G, c.beta**2 + c.alpha**2 / 2 * Z @ Z.T, rtol=1e-14)

    def test_relu_two_layer_diagonal(self):
        beta = 0.5
        c = net.NetworkConfig((3, 100, 1), beta=beta)
        z = np.array([[1.0, 1.0, -1.0]])  # |z|^2 = n0, unit variance
        # theta^2 = alpha^2 * rdot(1) * 1 + 1
        assert ntk.limiting_ntk(c, z).G[0, 0] == pytest.approx((1 - beta**2) + 1.0)

    def test_cosine_three_layer_diagonal(self):
        beta, w = 0.1, 5.0
        c = net.NetworkConfig((4, 8, 8, 1), beta=beta, activation="cosine", omega=w)
        z = embed.TorusEmbedding()(np.array([[2.0, 3.0]]))
        sd = (1 - beta**2) * w**2 * np.tanh(w**2)
        assert ntk.limiting_ntk(c, z).G[0, 0] == pytest.approx(1 + sd * (1 + sd * 1))

    def test_matches_unit_recursion_on_torus_diagonal(self):
        beta, w, delta = 0.3, 4.0, np.pi / 80
        c = net.NetworkConfig((4, 8, 8, 1), beta=beta, activation="cosine", omega=w)
        e = embed.TorusEmbedding(np.sqrt(2), delta)
        r = np.arange(0, 40, 3.0)
        p0 = np.array([[5.0, 5.0]])
        G = ntk.limiting_ntk_cross(c, e(p0), e(p0 + np.column_stack([r, r])))[0]
        np.testing.assert_allclose(G, ntk.profile_torus(beta, w, delta)(r), rtol=1e-12)

    def test_psd_and_symmetric(self):
        c = net.NetworkConfig((2, 10, 10, 1), beta=0.2)
        Z = np.random.default_rng(1).normal(size=(40, 2)) * 3
        ntk.limiting_ntk(c, Z).validate()

    def test_relu_homogeneity(self):
        # the ReLU recursion does not need normalised inputs
        c = net.NetworkConfig((2, 10, 1), beta=0.0)
        Z = np.random.default_rng(2).normal(size=(6, 2))
        np.testing.assert_allclose(ntk.limiting_ntk(c, 3 * Z).G, 9 * ntk.limiting_ntk(c, Z).G, rtol=1e-7)

    def test_rho_clamp_no_nan(self):
        c = net.NetworkConfig((4, 10, 10, 10, 1), beta=0.1)
        Z = np.repeat(embed.TorusEmbedding()(np.array([[1.0, 2.0]])), 3, axis=0) * (1 + 1e-15)
        assert np.all(np.isfinite(ntk.limiting_ntk(c, Z).G))


class TestEmpiricalNTK:
    def test_affine_exact(self):
        c = net.NetworkConfig((2, 1), beta=0.4, activation="identity", seed=3)
        Z = np.random.default_rng(3).normal(size=(4, 2))
        G = ntk.empirical_ntk(net.jacobian_rows(net.init_params(c), c, Z)).G
        np.testing.assert_allclose(G, c.beta**2 + c.alpha**2 / 2 * Z @ Z.T, rtol=1e-13)

    @pytest.mark.parametrize("act", ["relu", "cosine"])
    def test_layerwise_equals_jacobian(self, act):
        c = net.NetworkConfig.mlp(3, [12, 9], beta=0.3, activation=act, omega=2.0, seed=4)
        p = net.init_params(c)
        Z = np.random.default_rng(4).normal(size=(7, 3))
        G1 = ntk.empirical_ntk(net.jacobian_rows(p, c, Z)).G
        G2 = ntk.empirical_ntk_network(p, c, Z).G
        np.testing.assert_allclose(G2, G1, rtol=1e-11)
        assert np.all(np.diag(G1) >= 0)
        np.testing.assert_array_equal(G1, G1.T)

    def test_converges_with_width(self):
        Z = embed.embed_grid(embed.GaussianEmbedding(200, 2.0, seed=0), 5, 5)
        errs = []
        for width in [64, 1024]:
            e = []
            for s in range(4):
                c = net.NetworkConfig((200, width, 1), beta=0.5, seed=s)
                G = ntk.empirical_ntk_network(net.init_params(c), c, Z).G
                e.append(ntk.relative_frobenius(G, ntk.limiting_ntk(c, Z).G))
            errs.append(np.mean(e))
        assert errs[1] < errs[0]

    def test_evolution_operators_agree(self):
        # D_X Theta D_X g through the network (J applied to a backward pass)
        # against explicit dense assembly
        c = net.NetworkConfig((2, 1), beta=0.5, activation="identity", seed=5)
        p = net.init_params(c)
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(9, 2))
        t = density.sigma_transform(rng.normal(size=9), 4.0)
        g = rng.normal(size=9)
        _, cache = net.forward(p, c, Z)
        grad_theta = net.backward(p, c, cache, density.apply_DX(t, g)).flat
        J = net.jacobian_rows(p, c, Z)
        via_network = density.apply_DX(t, J @ grad_theta)
        D = density.dense_DX(t)
        explicit = D @ ntk.empirical_ntk(J).G @ D @ g
        np.testing.assert_allclose(via_network, explicit, atol=1e-10)

    def test_constant_shift_of_kernel_irrelevant(self):
        rng = np.random.default_rng(6)
        t = density.sigma_transform(rng.normal(size=12), 5.0)
        A = rng.normal(size=(12, 12))
        G = A @ A.T
        D = density.dense_DX(t)
        np.testing.assert_allclose(D @ (G + 3.7) @ D, D @ G @ D, atol=1e-12)


class TestProfiles:
    def test_gaussian_peak(self):
        assert ntk.profile_gaussian(0.5, 4.0)(0.0) == pytest.approx(2.0)

    def test_gaussian_far_limit(self):
        assert ntk.profile_gaussian(0.0, 1.0)(1e3) == pytest.approx(1 / np.pi, abs=1e-12)

    def test_gaussian_paper_formula(self):
        beta, ell = 0.3, 2.0
        d = np.linspace(0, 10, 50)
        G = beta**2 + (1 - beta**2) * np.exp(-d**2 / (2 * ell**2))
        r, rd = ntk.relu_dual(G), ntk.relu_dual_deriv(G)
        np.testing.assert_allclose(ntk.profile_gaussian(beta, ell)(d), r + G * rd, rtol=1e-13)

    def test_gaussian_vs_mc_dual(self):
        beta, ell = 0.5, 4.0
        G4 = 0.25 + 0.75 * np.exp(-0.5)
        r, se = ntk.monte_carlo_dual("relu", G4, 10**6, seed=7, return_stderr=True)
        rd, sed = ntk.monte_carlo_dual("relu", G4, 10**6, seed=8, derivative=True, return_stderr=True)
        assert abs(ntk.profile_gaussian(beta, ell)(4.0) - (r + G4 * rd)) <= 4 * (se + G4 * sed)

    def test_gaussian_profile_vs_embedding(self):
        # large-n0 embedding: (Theta^2 - beta^2) / alpha^2 tracks the profile
        beta, ell = 0.5, 3.0
        e = embed.GaussianEmbedding(40_000, ell, seed=1)
        c = net.NetworkConfig((40_000, 10, 1), beta=beta)
        d = np.array([0.0, 1.0, 2.0, 4.0, 8.0])
        P = np.column_stack([d, np.zeros_like(d)]) + 3.0
        G = ntk.limiting_ntk_cross(c, e(P[:1]), e(P))[0]
        np.testing.assert_allclose((G - beta**2) / (1 - beta**2),
                                   ntk.profile_gaussian(beta, ell)(d), atol=0.03)

    def test_torus_origin(self):
        beta, w = 0.2, 3.0
        sd = (1 - beta**2) * w**2 * np.tanh(w**2)
        assert ntk.profile_torus(beta, w, np.pi / 80)(0.0) == pytest.approx(1 + sd * (1 + sd))

    def test_torus_chaos_with_omega(self):
        ratios = [ntk.profile_torus(0.2, w, np.pi / 80) for w in [2, 3, 5, 8]]
        ratios = [p(10.0) / p(0.0) for p in ratios]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))

    def test_torus_beta_widens(self):
        lo = ntk.profile_torus(0.2, 3.0, np.pi / 80)
        hi = ntk.profile_torus(0.5, 3.0, np.pi / 80)
        assert hi(10.0) / hi(0.0) > lo(10.0) / lo(0.0)

    def test_torus_monotone_before_minimum(self):
        p = ntk.profile_torus(0.1, 5.0, np.pi / 80)
        v = p(np.linspace(0, 80, 800))
        k = np.argmin(v)
        assert np.all(v[0] >= v[:k + 1])


class TestRadius:
    @pytest.mark.parametrize("ell", [0.5, 1.0, 4.0])
    def test_gaussian_closed_form(self, ell):
        prof = ntk.KernelProfile(lambda d: np.exp(-d**2 / (2 * ell**2)))
        assert ntk.half_max_radius(prof, 20 * ell) == pytest.approx(ell * np.sqrt(2 * np.log(2)), abs=1e-6)

    def test_monotone_in_ell(self):
        r = [ntk.half_max_radius(ntk.profile_gaussian(0.5, ell), 63.0) for ell in [0.5, 1, 1.4, 2, 4]]
        assert all(a < b for a, b in zip(r, r[1:]))

    def test_torus_trends(self):
        d = np.pi / 80
        rw = [ntk.half_max_radius(ntk.profile_torus(0.1, w, d)) for w in [2, 3, 5, 8]]
        rb = [ntk.half_max_radius(ntk.profile_torus(b, 5.0, d)) for b in [0.1, 0.3, 0.5]]
        assert all(a > b for a, b in zip(rw, rw[1:]))
        assert all(a < b for a, b in zip(rb, rb[1:]))

    def test_constant_profile(self):
        with pytest.raises(DegenerateProfile):
            ntk.half_max_radius(ntk.KernelProfile(lambda r: np.ones_like(r)), 10.0)

    def test_level_crossing(self):
        prof = ntk.profile_torus(0.3, 3.0, np.pi / 80)
        R = ntk.half_max_radius(prof)
        v = prof(np.linspace(0, np.pi / (np.pi / 80), 5000))
        assert prof(R) == pytest.approx(0.5 * (prof(0.0) + v.min()), rel=1e-6)

    def test_squared_filter_heuristic_gaussian(self):
        # a Gaussian filter g of width s has g*g of width s sqrt(2)
        s = 2.0
        sq = ntk.KernelProfile(lambda d: np.exp(-d**2 / (4 * s**2)))
        g = ntk.KernelProfile(lambda d: np.exp(-d**2 / (2 * s**2)))
        assert ntk.half_max_radius(sq, 40) / np.sqrt(2) == pytest.approx(ntk.half_max_radius(g, 40), rel=1e-8)


class TestSpectrum:
    def test_identity(self):
        vals, imgs = ntk.spectrum(np.eye(12), 5, (4, 3))
        np.testing.assert_allclose(vals, 1.0)
        assert imgs.shape == (5, 4, 3)

    def test_residuals(self):
        A = np.random.default_rng(0).normal(size=(30, 30))
        G = A @ A.T
        vals, vecs = ntk.spectrum(G, 10)
        assert np.all(np.diff(vals) <= 0)
        for lam, v in zip(vals, vecs):
            assert np.linalg.norm(G @ v - lam * v) <= 1e-8 * np.linalg.norm(G)

    def test_size_limit(self):
        with pytest.raises(SizeExceeded):
            ntk.spectrum(np.zeros((4097, 4097)), 1)

    def test_torus_eigenvalues_are_dft(self):
        n = 8
        c = torus_config()
        _, Z = ntk.torus_grid(n)
        G = ntk.limiting_ntk(c, Z).G
        khat, _ = ntk.sqrt_stencil(G[0].reshape(n, n))
        vals, _ = ntk.spectrum(G, n * n)
        np.testing.assert_allclose(vals, np.sort(khat.ravel())[::-1], atol=1e-8 * vals[0])

    def test_gaussian_low_frequencies_first(self):
        e = embed.GaussianEmbedding(1000, 4.0, seed=0)
        c = net.NetworkConfig((1000, 1000, 1), beta=0.5)
        G = ntk.limiting_ntk(c, embed.embed_grid(e, 16, 16))
        vals, imgs = ntk.spectrum(G, 20, (16, 16))
        assert np.all(np.diff(vals) <= 0)
        energy = [ntk.dirichlet_energy(im) for im in imgs]
        assert energy[1] < energy[19]


class TestTorusFilter:
    def test_gram_is_circulant(self):
        n = 12
        _, Z = ntk.torus_grid(n)
        G = ntk.limiting_ntk(torus_config(), Z).G
        row0 = G[0].reshape(n, n)
        for i in range(n * n):
            ix, iy = divmod(i, n)
            assert np.abs(G[i].reshape(n, n) - np.roll(row0, (ix, iy), axis=(0, 1))).max() <= 1e-10

    def test_square_root_dense(self):
        f = ntk.torus_sqrt_filter(torus_config(), 3, 2)
        assert f.n == 12
        M = ntk.circulant_matrix(f.sqrt_stencil)
        K = ntk.circulant_matrix(f.kernel)
        assert ntk.relative_frobenius(M @ M, K) <= 1e-8
        np.testing.assert_allclose(M, M.T, atol=1e-12)
        assert np.linalg.eigvalsh(M).min() >= -1e-10

    def test_delta(self):
        K = np.zeros((8, 8))
        K[0, 0] = 1.0
        _, g = ntk.sqrt_stencil(K)
        np.testing.assert_allclose(g, K, atol=1e-15)

    def test_separable_gaussian_vs_eigh(self):
        n = 10
        d = np.minimum(np.arange(n), n - np.arange(n))
        k1 = np.exp(-d**2 / 4.0)
        K = np.outer(k1, k1)
        _, g = ntk.sqrt_stencil(K)
        M = ntk.circulant_matrix(K)
        w, V = np.linalg.eigh(M)
        ref = (V * np.sqrt(np.clip(w, 0, None))) @ V.T
        np.testing.assert_allclose(ntk.circulant_matrix(g), ref, atol=1e-10)

    def test_negative_spectrum(self):
        K = np.zeros((4, 4))
        K[0, 0] = -1.0
        with pytest.raises(NegativeSpectrum):
            ntk.sqrt_stencil(K)

    def test_paper_setting_smoothing_filter(self):
        f = ntk.torus_sqrt_filter(torus_config(0.2, 3.0), 8, 8)
        g = np.fft.fftshift(f.sqrt_stencil)
        c = f.n // 2
        assert g[c, c] == g.max()
        assert f.spectrum.min() >= -1e-10

    def test_circulant_apply_matches_matrix(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=(5, 5))
        x = rng.normal(size=(5, 5))
        np.testing.assert_allclose(ntk.circulant_apply(s, x).ravel(),
                                   ntk.circulant_matrix(s) @ x.ravel(), atol=1e-12)
