"""Distribution alignment: Gaussian construction, Wasserstein metric, batch loss."""
import math

import numpy as np
import pytest

from mgcma.attention import AttentionConfig
from mgcma.contrastive import symmetric_infonce
from mgcma.distribution import (
    SIGMA_FLOOR,
    ContrastiveConfig,
    DistributionConstructorParams,
    GaussianEmbedding,
    construct_distribution,
    distribution_contrastive_loss,
    similarity,
    similarity_matrix,
    wasserstein2_sq,
)
from mgcma.errors import ContractError, EmptySequenceError, ShapeError
from mgcma.tensor import ParameterStore, Tensor, backward, grad_check

# Frozen outputs of an independent high-precision (50-digit) evaluation of the
# distance / similarity / softmax chain on the seeded batch below, computed
# before this module was written. Batch: default_rng(42) drawing, in order,
# mus_s = normal(size=(3,4)); sigmas_s = uniform(0.5, 1.5, (3,4));
# mus_t = normal(size=(3,4)); sigmas_t = uniform(0.5, 1.5, (3,4)),
# scored with tau=0.07, p=1, q=0.
ORACLE_L_DA = 44.422161160266591955
ORACLE_S2T = [17.161776414125005387, 125.93601597069440963, 0.0051031433356931516566]
ORACLE_T2S = [4.2014429228167097704, 111.5281010991936713, 7.7005274114340624932]


def _gauss(mu, sigma):
    return GaussianEmbedding(mu=Tensor(np.asarray(mu, dtype=float)),
                             sigma=Tensor(np.asarray(sigma, dtype=float)))


def _seeded_batch():
    rng = np.random.default_rng(42)
    mus_s = rng.normal(size=(3, 4))
    sigmas_s = rng.uniform(0.5, 1.5, (3, 4))
    mus_t = rng.normal(size=(3, 4))
    sigmas_t = rng.uniform(0.5, 1.5, (3, 4))
    speech = [_gauss(mus_s[i], sigmas_s[i]) for i in range(3)]
    text = [_gauss(mus_t[i], sigmas_t[i]) for i in range(3)]
    return speech, text


class TestConfig:
    def test_defaults(self):
        cfg = ContrastiveConfig()
        assert cfg.p == 1.0 and cfg.q == 0.0 and cfg.tau == 0.07

    def test_nonpositive_rejected(self):
        with pytest.raises(ContractError):
            ContrastiveConfig(p=0.0)
        with pytest.raises(ContractError):
            ContrastiveConfig(tau=-1.0)


class TestConstructDistribution:
    def _make(self, d=8, k=2, seed=0):
        store = ParameterStore(rng_seed=seed)
        params = DistributionConstructorParams(store, "dc", AttentionConfig(d, k))
        return store, params

    def test_shapes_and_positivity(self):
        _, params = self._make()
        g = construct_distribution(Tensor(np.random.default_rng(1).normal(size=(5, 8))), params)
        assert g.mu.shape == (8,) and g.sigma.shape == (8,)
        assert np.all(g.sigma.data > 0)

    def test_zero_sigma_branch_gives_softplus_floor(self):
        _, params = self._make()
        for w, b in params.sigma_layers:
            w.data[...] = 0.0
            b.data[...] = 0.0
        g = construct_distribution(Tensor(np.random.default_rng(2).normal(size=(3, 8))), params)
        assert np.allclose(g.sigma.data, math.log(2.0) + SIGMA_FLOOR, atol=1e-12)

    def test_empty_sequence_rejected(self):
        _, params = self._make()
        with pytest.raises(EmptySequenceError):
            construct_distribution(Tensor(np.empty((0, 8))), params)

    def test_matches_step_by_step_oracle(self):
        # recompute attention, residual, branch linears, pooling, softplus
        # with plain numpy, independent of the Tensor graph
        store, params = self._make(d=8, k=2, seed=3)
        x = np.random.default_rng(4).normal(size=(4, 8))

        def np_att(q, k, v):
            s = q @ k.T / math.sqrt(q.shape[1])
            s = s - s.max(axis=1, keepdims=True)
            w = np.exp(s)
            return (w / w.sum(axis=1, keepdims=True)) @ v

        heads = [
            np_att(x @ wq.data, x @ wk.data, x @ wv.data)
            for wq, wk, wv in params.attention.heads
        ]
        h = x + np.concatenate(heads, axis=1) @ params.attention.out_proj.data
        mu_seq, sigma_seq = h, h
        for w, b in params.mu_layers:
            mu_seq = mu_seq @ w.data + b.data
        for w, b in params.sigma_layers:
            sigma_seq = sigma_seq @ w.data + b.data
        mu_exp = mu_seq.mean(axis=0)
        sigma_exp = np.logaddexp(0.0, sigma_seq.mean(axis=0)) + SIGMA_FLOOR

        g = construct_distribution(Tensor(x), params)
        assert np.allclose(g.mu.data, mu_exp, atol=1e-12)
        assert np.allclose(g.sigma.data, sigma_exp, atol=1e-12)


class TestWasserstein:
    def test_identical_gaussians_give_zero(self):
        g = _gauss([1.0, -2.0], [0.5, 3.0])
        assert wasserstein2_sq(g, g).item() == 0.0

    def test_hand_example(self):
        g1 = _gauss([0.0, 0.0], [1.0, 1.0])
        g2 = _gauss([1.0, 0.0], [2.0, 1.0])
        assert wasserstein2_sq(g1, g2).item() == pytest.approx(2.0, abs=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            wasserstein2_sq(_gauss([0.0], [1.0]), _gauss([0.0, 0.0], [1.0, 1.0]))

    def test_matches_general_covariance_oracle(self):
        # diagonal-case formula vs the full matrix expression
        # ||dmu||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})
        from scipy.linalg import sqrtm

        rng = np.random.default_rng(7)
        for _ in range(50):
            mu1, mu2 = rng.normal(size=3), rng.normal(size=3)
            s1, s2 = rng.uniform(0.2, 2.0, 3), rng.uniform(0.2, 2.0, 3)
            got = wasserstein2_sq(_gauss(mu1, s1), _gauss(mu2, s2)).item()
            c1, c2 = np.diag(s1**2), np.diag(s2**2)
            r1 = sqrtm(c1)
            inner = sqrtm(r1 @ c2 @ r1)
            expected = float(np.sum((mu1 - mu2) ** 2) + np.trace(c1 + c2 - 2 * np.real(inner)))
            assert got == pytest.approx(expected, abs=1e-9)

    def test_symmetry_nonnegativity_triangle(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            gs = [_gauss(rng.normal(size=4), rng.uniform(0.1, 2.0, 4)) for _ in range(3)]
            dab = wasserstein2_sq(gs[0], gs[1]).item()
            dba = wasserstein2_sq(gs[1], gs[0]).item()
            dbc = wasserstein2_sq(gs[1], gs[2]).item()
            dac = wasserstein2_sq(gs[0], gs[2]).item()
            assert dab == pytest.approx(dba, abs=1e-12)
            assert dab >= 0.0
            # triangle inequality holds for the distance, not its square
            assert math.sqrt(dac) <= math.sqrt(dab) + math.sqrt(dbc) + 1e-9


class TestSimilarity:
    def test_zero_distance(self):
        g = _gauss([1.0, 2.0], [1.0, 1.0])
        assert similarity(g, g, ContrastiveConfig(p=1.0, q=0.0)).item() == 0.0

    def test_hand_example(self):
        g1 = _gauss([0.0, 0.0], [1.0, 1.0])
        g2 = _gauss([1.0, 0.0], [2.0, 1.0])
        # W2^2 = 2, p = 0.5, q = 1 -> 0
        assert similarity(g1, g2, ContrastiveConfig(p=0.5, q=1.0)).item() == pytest.approx(0.0, abs=1e-12)

    def test_matrix_matches_pairwise(self):
        speech, text = _seeded_batch()
        cfg = ContrastiveConfig(p=0.7, q=-2.0, tau=0.1)
        mat = similarity_matrix(speech[:2], text[:2], cfg).data
        for i in range(2):
            for j in range(2):
                assert mat[i, j] == pytest.approx(
                    similarity(speech[i], text[j], cfg).item(), abs=1e-12
                )


class TestDistributionLoss:
    def test_single_pair_is_zero(self):
        g = _gauss([1.0, 2.0], [1.0, 0.5])
        h = _gauss([0.0, 1.0], [2.0, 0.5])
        res = distribution_contrastive_loss([g], [h], ContrastiveConfig())
        assert res.loss.item() == pytest.approx(0.0, abs=1e-15)

    def test_two_identical_pairs_give_ln2(self):
        g = _gauss([1.0, 0.0], [1.0, 1.0])
        res = distribution_contrastive_loss([g, g], [g, g], ContrastiveConfig())
        assert res.loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_seeded_batch_matches_high_precision_oracle(self):
        speech, text = _seeded_batch()
        res = distribution_contrastive_loss(speech, text, ContrastiveConfig(p=1.0, q=0.0, tau=0.07))
        assert res.loss.item() == pytest.approx(ORACLE_L_DA, abs=1e-9)
        assert np.allclose(res.s2t.data, ORACLE_S2T, atol=1e-9)
        assert np.allclose(res.t2s.data, ORACLE_T2S, atol=1e-9)

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptySequenceError):
            distribution_contrastive_loss([], [], ContrastiveConfig())

    def test_count_mismatch_rejected(self):
        g = _gauss([1.0], [1.0])
        with pytest.raises(ShapeError):
            distribution_contrastive_loss([g, g], [g], ContrastiveConfig())

    def test_q_shift_invariance(self):
        speech, text = _seeded_batch()
        base = distribution_contrastive_loss(speech, text, ContrastiveConfig(q=0.0)).loss.item()
        for q in (-5.0, 7.0):
            shifted = distribution_contrastive_loss(speech, text, ContrastiveConfig(q=q)).loss.item()
            assert shifted == pytest.approx(base, abs=1e-12)

    def test_p_tau_equivalence(self):
        speech, text = _seeded_batch()
        tau0 = 0.2
        for c in (0.5, 2.0, 10.0):
            a = distribution_contrastive_loss(speech, text, ContrastiveConfig(p=c, tau=tau0)).loss.item()
            b = distribution_contrastive_loss(speech, text, ContrastiveConfig(p=1.0, tau=tau0 / c)).loss.item()
            assert a == pytest.approx(b, abs=1e-12)

    def test_batch_permutation_invariance(self):
        speech, text = _seeded_batch()
        cfg = ContrastiveConfig()
        base = distribution_contrastive_loss(speech, text, cfg).loss.item()
        perm = [2, 0, 1]
        permuted = distribution_contrastive_loss(
            [speech[i] for i in perm], [text[i] for i in perm], cfg
        ).loss.item()
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_positive_similarity_monotonicity(self):
        # raising the diagonal entry, all else fixed, must lower that row's term
        base = np.array([[1.0, 0.3, -0.2], [0.1, 0.4, 0.0], [-0.5, 0.2, 0.8]])
        prev = None
        for bump in (0.0, 0.5, 1.0, 2.0):
            mat = base.copy()
            mat[1, 1] += bump
            term = symmetric_infonce(Tensor(mat), tau=0.5).s2t.data[1]
            if prev is not None:
                assert term < prev
            prev = term

    def test_gradient_check_through_constructor_and_loss(self):
        store = ParameterStore(rng_seed=11)
        params = DistributionConstructorParams(store, "dc", AttentionConfig(4, 2))
        rng = np.random.default_rng(12)
        xs = [Tensor(rng.normal(size=(3, 4)), requires_grad=True) for _ in range(2)]
        xt = [Tensor(rng.normal(size=(2, 4)), requires_grad=True) for _ in range(2)]
        cfg = ContrastiveConfig(tau=0.5)

        def f():
            speech = [construct_distribution(x, params) for x in xs]
            text = [construct_distribution(x, params) for x in xt]
            return distribution_contrastive_loss(speech, text, cfg).loss

        max_err = grad_check(f, [*xs, *xt, *store.parameters()])
        assert max_err < 1e-4

    def test_loss_backward_populates_parameter_grads(self):
        store = ParameterStore(rng_seed=13)
        params = DistributionConstructorParams(store, "dc", AttentionConfig(4, 1))
        rng = np.random.default_rng(14)
        speech = [construct_distribution(Tensor(rng.normal(size=(3, 4))), params) for _ in range(2)]
        text = [construct_distribution(Tensor(rng.normal(size=(3, 4))), params) for _ in range(2)]
        res = distribution_contrastive_loss(speech, text, ContrastiveConfig())
        backward(res.loss)
        assert any(np.any(p.grad != 0) for p in store.parameters())
