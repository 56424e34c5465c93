import json

import numpy as np
import pytest

from sddtmpc import ctrl_linear as cl
from sddtmpc import setops, synthesis
from sddtmpc.synthesis import SynthesisError, dlqr, mrpi_approx, max_positive_invariant, rk4_step, terminal_cost, zoh_scalar


def riccati_oracle(a, b, q, r, iters=10_000):
    p = q
    for _ in range(iters):
        p = q + a * a * p - (a * b * p) ** 2 / (r + b * b * p)
    return a * b * p / (r + b * b * p)


def test_scalar_lqr_golden_ratio():
    K = dlqr([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    phi = (1 + np.sqrt(5)) / 2
    assert abs(K[0, 0]) == pytest.approx(phi / (1 + phi), abs=1e-9)
    assert abs(K[0, 0]) == pytest.approx(riccati_oracle(1.0, 1.0, 1.0, 1.0), abs=1e-9)


def test_ancillary_gain_values():
    S = synthesis.holonomic_system()
    K = dlqr(S.A, S.B, cl.Q_ANCILLARY, np.eye(2))
    expected = np.array([[7.98, 0, 4.42, 0], [0, 7.98, 0, 4.42]])
    assert np.all(np.abs(np.abs(K) - expected) <= 0.05)
    assert synthesis.spectral_radius(S.A + S.B @ K) < 1


def test_zero_input_matrix_gives_zero_gain():
    K = dlqr(0.5 * np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1))
    assert np.allclose(K, 0.0)


def test_terminal_cost_fixed_points():
    F = terminal_cost(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((1, 2)), np.eye(2), np.eye(1))
    assert np.allclose(F, 2 * np.eye(2))
    f = terminal_cost([[0.5]], [[0.0]], [[0.0]], [[1.0]], [[0.0]])
    assert f[0, 0] == pytest.approx(4.0, rel=1e-9)


def test_terminal_cost_divergence_is_reported():
    with pytest.raises(SynthesisError, match="diverges"):
        terminal_cost([[0.9]], [[0.0]], [[0.0]], [[1.0]], [[1.0]])


def test_designed_terminal_matrix():
    d = cl.build_design()
    expected = np.array([[805, 0, -571, 0], [0, 805, 0, -571], [-571, 0, 655, 0], [0, -571, 0, 655.0]])
    nz = expected != 0
    assert np.all(np.abs(d.F[nz] - expected[nz]) <= 0.01 * np.abs(expected[nz]))
    assert np.allclose(d.F, d.F.T, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(d.F) >= -1e-9)


def test_mrpi_examples():
    W = setops.box([-1], [1])
    E = mrpi_approx([[0.0]], W)
    assert np.allclose(E.offsets, W.offsets)
    eps = 0.01
    E = mrpi_approx([[0.5]], W, eps)
    assert np.all(E.offsets >= 2.0 - 1e-9)
    assert np.all(E.offsets <= 2.0 + 2 * eps + 1e-9)


def test_designed_tube_is_robustly_invariant():
    d = cl.build_design()
    W = setops.embed_position_disturbance(d.W2)
    E = d.Emax
    image = setops.minkowski_sum(setops.linear_map(d.Acl, E), W, template=E.normals)
    assert setops.is_subset(image, E, tol=1e-8)


def test_mrpi_rejects_unstable():
    with pytest.raises(SynthesisError):
        mrpi_approx([[1.1]], setops.box([-1], [1]))


def test_mpi_examples():
    X = setops.box([-1, -1], [1, 1])
    U = setops.box([-0.5], [0.5])
    Kt = np.array([[1.0, 0.0]])
    omega = max_positive_invariant(np.zeros((2, 2)), X, U, Kt)
    assert setops.support(omega, [1, 0]) == pytest.approx(0.5)
    assert setops.support(omega, [0, 1]) == pytest.approx(1.0)
    omega = max_positive_invariant([[0.5]], setops.box([-1], [1]))
    assert np.allclose(sorted(omega.offsets), [1.0, 1.0])


def test_terminal_sets_invariant_and_compatible():
    d = cl.build_design()
    Acl_k = d.A + d.B @ d.kappa
    for Z in (d.Zf_mpc, d.Zf_tmpc):
        assert setops.is_subset(setops.linear_map(Acl_k, Z), Z, tol=1e-8)
    X = setops.TemplatePolytope(cl.VEL_ROWS, np.full(4, cl.V_MAX))
    S = setops.minkowski_sum(d.Zf_tmpc, d.Emax, template=X.normals)
    assert setops.is_subset(S, X, tol=1e-8)


def _terminal_samples(Z, n=1000):
    rng = np.random.default_rng(0)
    lo = np.array([setops.support(Z, -e) for e in np.eye(4)])
    hi = np.array([setops.support(Z, e) for e in np.eye(4)])
    pts = rng.uniform(-lo, hi, size=(20_000, 4))
    return pts[Z.contains(pts)][:n]


def _decrease_excess(F, d, pts):
    Acl_k = d.A + d.B @ d.kappa
    nxt = pts @ Acl_k.T
    u = pts @ d.kappa.T
    lhs = np.einsum("ni,ij,nj->n", nxt, F, nxt) - np.einsum("ni,ij,nj->n", pts, F, pts)
    stage = np.einsum("ni,ij,nj->n", pts, cl.Q_STAGE, pts) + np.einsum("ni,ij,nj->n", u, cl.R_STAGE, u)
    return lhs + stage


def test_lyapunov_terminal_cost_decreases_on_terminal_set():
    d = cl.build_design()
    pts = _terminal_samples(d.Zf_mpc)
    assert len(pts) >= 200
    F = terminal_cost(d.A, d.B, d.kappa, cl.Q_STAGE, cl.R_STAGE, scale=1.0)
    assert np.max(_decrease_excess(F, d, pts)) <= 1e-6


def test_reference_terminal_matrix_lacks_decrease():
    # the reference-valued matrix used by the controllers does not satisfy the decrease
    # condition everywhere in the terminal set; pinned here so a change is noticed
    d = cl.build_design()
    pts = _terminal_samples(d.Zf_mpc)
    assert np.max(_decrease_excess(d.F, d, pts)) > 1.0


def test_zoh_examples():
    assert zoh_scalar(2.3, 0.2) == pytest.approx(0.6313, abs=1e-4)
    assert zoh_scalar(0.0, 0.2) == 1.0
    assert zoh_scalar(np.inf, 0.2) == 0.0
    assert zoh_scalar(1e6, 0.2) == pytest.approx(0.0, abs=1e-12)


def test_rk4_examples():
    assert np.allclose(rk4_step(lambda x, u, w: np.zeros(1), [3.0], 0, 0, 0.2), [3.0])
    assert rk4_step(lambda x, u, w: np.ones(1), [0.0], 0, 0, 0.2)[0] == pytest.approx(0.2, abs=1e-15)
    assert rk4_step(lambda x, u, w: -x, [1.0], 0, 0, 0.1)[0] == pytest.approx(np.exp(-0.1), abs=1e-7)


def test_synthesis_json_round_trip():
    r = cl.build_design().synthesis_result()
    back = synthesis.SynthesisResult.from_json(r.to_json())
    assert np.allclose(back.K, r.K) and np.allclose(back.F, r.F)
    assert np.allclose(back.Emax.offsets, r.Emax.offsets)
    json.loads(r.to_json())
