import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cran_dynrc import linkmodel as lm
from cran_dynrc.netgen import ChannelState


def scalar_channel(h_vals, noise=1.0):
    """Channel with one antenna per RRH from a (U, R) complex matrix."""
    h = np.asarray(h_vals, dtype=complex)[:, :, None]
    return ChannelState(h=h, noise_power=noise)


def beams(w_vals):
    return lm.BeamformerSet(w=np.asarray(w_vals, dtype=complex)[:, :, None])


def clusters(s):
    return lm.ClusterAssignment(s=np.asarray(s))


class TestCoupling:
    def test_zero_beams(self):
        ch = scalar_channel([[1.0]])
        assert lm.coupling(ch, beams([[0.0]]), clusters([[1]]), 0, 0) == 0

    def test_scalar_product(self):
        ch = scalar_channel([[2.0]])
        assert lm.coupling(ch, beams([[3.0]]), clusters([[1]]), 0, 0) == pytest.approx(6.0)

    def test_empty_cluster_sum(self):
        ch = scalar_channel([[2.0]])
        assert lm.coupling(ch, beams([[3.0]]), clusters([[0]]), 0, 0) == 0

    def test_dimension_mismatch(self):
        ch = scalar_channel([[1.0]])
        bad = lm.BeamformerSet(w=np.zeros((1, 2, 1), dtype=complex))
        with pytest.raises(ValueError):
            lm.coupling(ch, bad, clusters([[1]]), 0, 0)

    def test_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4))
        w = rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4))
        s = np.array([[1, 0], [1, 1], [0, 1]])
        ch = ChannelState(h=h, noise_power=1.0)
        bs, cl = lm.BeamformerSet(w=w), lm.ClusterAssignment(s=s)
        psi = lm.coupling_matrix(ch, bs, cl)
        for u in range(3):
            for v in range(3):
                assert psi[u, v] == pytest.approx(lm.coupling(ch, bs, cl, u, v))


class TestSinr:
    def test_signal_equals_noise(self):
        ch = scalar_channel([[1.0]], noise=4.0)
        assert lm.sinr(ch, beams([[2.0]]), clusters([[1]]), 0) == pytest.approx(1.0)

    def test_zero_own_signal(self):
        ch = scalar_channel([[1.0]], noise=1.0)
        assert lm.sinr(ch, beams([[0.0]]), clusters([[1]]), 0) == 0.0

    def test_two_user_hand_value(self):
        # |Psi_1|^2 = 4, |Psi_12|^2 = 1, sigma^2 = 1 -> gamma_1 = 2
        h = [[1.0, 1.0], [1.0, 1.0]]
        w = [[2.0, 0.0], [0.0, 1.0]]
        s = [[1, 0], [0, 1]]
        ch = scalar_channel(h, noise=1.0)
        assert lm.sinr(ch, beams(w), clusters(s), 0) == pytest.approx(2.0)

    @given(scale=st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=30, deadline=None)
    def test_scale_invariance(self, scale):
        rng = np.random.default_rng(5)
        h = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
        w = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
        s = np.ones((3, 2), dtype=int)
        base = lm.sinr_all(ChannelState(h=h, noise_power=1.0), lm.BeamformerSet(w=w), lm.ClusterAssignment(s=s))
        scaled = lm.sinr_all(
            ChannelState(h=h * scale, noise_power=scale**2),
            lm.BeamformerSet(w=w),
            lm.ClusterAssignment(s=s),
        )
        assert np.allclose(base, scaled, rtol=1e-9)


class TestRate:
    def test_values(self):
        assert lm.rate(0.0) == 0.0
        assert lm.rate(1.0) == pytest.approx(1.0)
        assert lm.rate(3.0) == pytest.approx(2.0)

    def test_monotone_and_concave(self):
        g = np.linspace(0, 50, 400)
        r = lm.rate(g)
        d1 = np.diff(r)
        assert np.all(d1 > 0)
        assert np.all(np.diff(d1) < 1e-12)

    def test_physical_units(self):
        ch = ChannelState(
            h=np.ones((1, 1, 1), dtype=complex),
            noise_power=1.0,
            bandwidth_hz=10e6,
            spectral_eff=0.8,
            coding_eff=0.5,
        )
        assert lm.rate_bps(3.0, ch) == pytest.approx(0.8 * 10e6 * np.log2(2.5))


class TestWsrsu:
    def test_zero_beams(self):
        ch = scalar_channel([[1.0]])
        assert lm.wsrsu(ch, beams([[0.0]]), clusters([[1]]), np.array([1.0])) == 0.0

    def test_single_user_weighted(self):
        # gamma = 3, q = 0.5 -> 0.5 * 2 = 1.0
        ch = scalar_channel([[1.0]], noise=1.0)
        w = beams([[np.sqrt(3.0)]])
        assert lm.wsrsu(ch, w, clusters([[1]]), np.array([0.5])) == pytest.approx(1.0)

    def test_two_users_sum(self):
        # gammas (1, 3) with unit weights -> 1 + 2 = 3
        h = [[1.0, 0.0], [0.0, 1.0]]
        s = [[1, 0], [0, 1]]
        w = [[1.0, 0.0], [0.0, np.sqrt(3.0)]]
        ch = scalar_channel(h, noise=1.0)
        assert lm.wsrsu(ch, beams(w), clusters(s), np.array([1.0, 1.0])) == pytest.approx(3.0)

    def test_weight_scaling_scales_objective(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((4, 3, 2)) + 1j * rng.standard_normal((4, 3, 2))
        w = rng.standard_normal((4, 3, 2)) + 1j * rng.standard_normal((4, 3, 2))
        s = rng.integers(0, 2, (4, 3))
        ch = ChannelState(h=h, noise_power=1.0)
        bs, cl = lm.BeamformerSet(w=w), lm.ClusterAssignment(s=s)
        q = rng.uniform(0.1, 1.0, 4)
        base = lm.wsrsu(ch, bs, cl, q)
        assert lm.wsrsu(ch, bs, cl, 7.5 * q) == pytest.approx(7.5 * base, rel=1e-12)

    def test_weight_scaling_preserves_ranking(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
        ch = ChannelState(h=h, noise_power=1.0)
        s = np.ones((3, 2), dtype=int)
        cl = lm.ClusterAssignment(s=s)
        q = rng.uniform(0.1, 1.0, 3)
        cands = [
            lm.BeamformerSet(w=rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2)))
            for _ in range(5)
        ]
        vals = [lm.wsrsu(ch, b, cl, q) for b in cands]
        scaled = [lm.wsrsu(ch, b, cl, 3.3 * q) for b in cands]
        assert np.argsort(vals).tolist() == np.argsort(scaled).tolist()

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            lm.UtilityWeights(q=np.array([0.5, 0.0]))


class TestPhaseRotate:
    def test_already_real_untouched(self):
        ch = scalar_channel([[2.0]])
        w = beams([[3.0]])
        out = lm.phase_rotate(ch, w)
        assert np.allclose(out.w, w.w)

    def test_negative_real_flipped(self):
        ch = scalar_channel([[1.0]])
        out = lm.phase_rotate(ch, beams([[-1.0]]))
        assert out.w[0, 0, 0] == pytest.approx(1.0)

    def test_zero_stays_zero(self):
        ch = scalar_channel([[1.0]])
        out = lm.phase_rotate(ch, beams([[0.0]]))
        assert out.w[0, 0, 0] == 0.0

    @given(seed=st.integers(min_value=0, max_value=10000))
    @settings(max_examples=25, deadline=None)
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        h = rng.standard_normal((3, 2, 3)) + 1j * rng.standard_normal((3, 2, 3))
        w = rng.standard_normal((3, 2, 3)) + 1j * rng.standard_normal((3, 2, 3))
        ch = ChannelState(h=h, noise_power=1.0)
        bs = lm.BeamformerSet(w=w)
        out = lm.phase_rotate(ch, bs)
        # norms and |h.w| preserved exactly; products real and nonnegative
        assert np.allclose(
            np.linalg.norm(out.w, axis=2), np.linalg.norm(w, axis=2), rtol=1e-12
        )
        prod_before = np.einsum("urn,urn->ur", h, w)
        prod_after = np.einsum("urn,urn->ur", h, out.w)
        assert np.allclose(np.abs(prod_before), np.abs(prod_after), rtol=1e-12)
        assert np.all(prod_after.real >= -1e-12)
        assert np.allclose(prod_after.imag, 0.0, atol=1e-9)
        # single-RRH-cluster SINRs unchanged
        s = np.zeros((3, 2), dtype=int)
        s[np.arange(3), [0, 1, 0]] = 1
        cl = lm.ClusterAssignment(s=s)
        assert np.allclose(
            lm.sinr_all(ch, bs, cl), lm.sinr_all(ch, out, cl), rtol=1e-9
        )


class TestClusterAssignment:
    def test_validate_antenna_limit(self):
        s = np.ones((3, 1), dtype=int)
        cl = lm.ClusterAssignment(s=s)
        with pytest.raises(ValueError):
            cl.validate(n_antennas=2)
        cl.validate(n_antennas=3)

    def test_validate_candidate_membership(self):
        cl = lm.ClusterAssignment(s=np.array([[1, 1]]), candidate_sets=[np.array([0])])
        with pytest.raises(ValueError):
            cl.validate(n_antennas=4)
