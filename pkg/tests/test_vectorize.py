import numpy as np
import pytest

from bundlechoice.errors import ConfigError
from bundlechoice.model_core import EquationParams, ParamLayout, enumerate_choice_set, mean_utility
from bundlechoice.vectorize import (StackedSystem, build_design_blocks, build_H_f, build_H_lambda,
                                    covariance_summary, joint_error_covariance, mapping_matrix, pack_loadings,
                                    structural_errors, unpack_loadings)

from _helpers import random_panel

SHARED = [["z_1_1", "z_2_1", "z_3_1"], ["w_1_2_1", "w_1_3_1", "w_2_3_1"]]


@pytest.fixture(scope="module")
def system():
    d = random_panel(0, N=4, T=3)
    lay = ParamLayout.for_data(d, shared=SHARED)
    return d, lay, StackedSystem(d, lay)


def test_gram_matches_dense(system):
    _, _, ss = system
    H = ss.dense()
    np.testing.assert_allclose(H.T @ H, ss.gram, atol=1e-12)


def test_rmatvec_matches_dense(system):
    _, _, ss = system
    v = np.random.default_rng(1).normal(size=(ss.data.n_obs, ss.E))
    np.testing.assert_allclose(ss.dense().T @ v.ravel(), ss.rmatvec(v), atol=1e-12)


def test_vectorized_mean_equals_loop(system):
    d, lay, ss = system
    th = np.random.default_rng(2).normal(size=lay.dim)
    ep = EquationParams(lay, th)
    M = ss.mean(th)
    R = d.choice_set.R
    for n in range(d.n_obs):
        i, t = d.ids[n], d.periods[n]
        loop = [mean_utility(ep, d, i, t, r) for r in range(1, R + 1)]
        np.testing.assert_allclose(M[n, :R], loop, atol=1e-12)
        blocks = build_design_blocks(d.choice_set, d, lay, i, t)
        np.testing.assert_allclose(blocks.h_it @ th, M[n], atol=1e-12)
    # first-stage rows are z^p' theta^p
    for k in range(d.J_p):
        cols = [lay.index_of(f"zp_{k + 1}_{c + 1}") for c in range(d.zp[k].shape[1])]
        np.testing.assert_allclose(M[:, R + k], d.zp[k] @ th[cols], atol=1e-12)


def test_mapping_matrix_blocks():
    cs = enumerate_choice_set(3)
    I_nu = mapping_matrix(cs, 2)
    assert I_nu.shape == (9, 5)
    np.testing.assert_array_equal(I_nu[:7, :3], cs.membership)
    np.testing.assert_array_equal(I_nu[7:, 3:], np.eye(2))
    assert not I_nu[:7, 3:].any() and not I_nu[7:, :3].any()


@pytest.mark.parametrize("T_L", [1, 3])
def test_H_identities(system, T_L):
    d, lay, ss = system
    rng = np.random.default_rng(T_L)
    mask = rng.random((T_L, 6, 2)) < 0.7
    Lam = np.where(mask, rng.normal(size=mask.shape), 0.0)
    f = rng.normal(size=(d.N, 2))
    lam = pack_loadings(Lam, mask)
    np.testing.assert_array_equal(unpack_loadings(lam, mask), Lam)
    HL = build_H_lambda(d, Lam)
    Hf = build_H_f(d, f, mask)
    np.testing.assert_allclose(HL @ f.ravel(), Hf @ lam, atol=1e-12)
    nu = structural_errors(d, Lam, f) @ ss.I_nu.T
    np.testing.assert_allclose(nu.ravel(), HL @ f.ravel(), atol=1e-12)


def test_pack_order_is_period_then_factor_then_equation():
    mask = np.ones((2, 3, 2), dtype=bool)
    Lam = np.arange(12, dtype=float).reshape(2, 3, 2)
    lam = pack_loadings(Lam, mask)
    expected = [Lam[t, j, l] for t in range(2) for l in range(2) for j in range(3)]
    np.testing.assert_array_equal(lam, expected)


def test_tri_factor_covariance():
    # two goods, two endogenous prices, three factors with the sparse pattern of the worked example
    l11, l12, l21, l23, l32, l43 = 0.7, -0.4, 1.3, 0.6, 0.9, -1.1
    Lam = np.array([[l11, l12, 0], [l21, 0, l23], [0, l32, 0], [0, 0, l43]])
    Om = joint_error_covariance(enumerate_choice_set(2), 2, Lambda=Lam)
    expected = np.array([
        [l11 ** 2 + l12 ** 2 + 1, 0, 0, 0, 0],
        [l11 * l21, l21 ** 2 + l23 ** 2 + 1, 0, 0, 0],
        [l11 ** 2 + l11 * l21 + l12 ** 2, l11 * l21 + l21 ** 2 + l23 ** 2,
         (l11 + l21) ** 2 + l12 ** 2 + l23 ** 2 + 1, 0, 0],
        [l12 * l32, 0, l12 * l32, l32 ** 2 + 1, 0],
        [0, l23 * l43, l23 * l43, 0, l43 ** 2 + 1],
    ])
    lower = np.tril_indices(5)
    np.testing.assert_allclose(Om[lower], expected[lower], atol=1e-14)
    np.testing.assert_allclose(Om, Om.T)


def test_panel_covariance_intertemporal():
    cs = enumerate_choice_set(2)
    rng = np.random.default_rng(0)
    Lam = rng.normal(size=(3, 4, 2))
    big = joint_error_covariance(cs, 2, Lambda=Lam)
    E = 5
    I_nu = mapping_matrix(cs, 2)
    for t1 in range(3):
        for t2 in range(3):
            block = big[t1 * E:(t1 + 1) * E, t2 * E:(t2 + 1) * E]
            want = I_nu @ Lam[t1] @ Lam[t2].T @ I_nu.T + (np.eye(E) if t1 == t2 else 0)
            np.testing.assert_allclose(block, want, atol=1e-13)


def test_re_covariance():
    cs = enumerate_choice_set(2)
    S = np.array([[1.0, 0.3], [0.3, 2.0]])
    Om = joint_error_covariance(cs, 0, Sigma=S)
    np.testing.assert_allclose(Om[2, 2], 1 + 1 + 2 + 0.6)
    with pytest.raises(ConfigError):
        joint_error_covariance(cs, 0)


def test_covariance_summary_entries():
    cs = enumerate_choice_set(2)
    Lam = np.array([[[1.0, 0.5], [0.2, -1.0], [0.3, 0.0], [0.0, 2.0]]])
    rows = covariance_summary(cs, 2, Lambda=Lam)
    kinds = {r["element"] for r in rows}
    assert {"utility_error_variance", "unobserved_tastes", "regressor_endogeneity",
            "first_stage_error_variance"} <= kinds
    var1 = next(r for r in rows if r["element"] == "utility_error_variance" and r["j1"] == 1)
    assert var1["value"] == pytest.approx(1 + 1.0 + 0.25)
    endo = next(r for r in rows if r["element"] == "regressor_endogeneity" and r["j1"] == 2 and r["j2"] == 2)
    assert endo["value"] == pytest.approx(-2.0)
