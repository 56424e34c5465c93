import json

import numpy as np
import pytest

from sddtmpc import fis, setops, world
from sddtmpc.fis import FisModel, GaConfig, MembershipFn, eval_fis, gen_dataset, train_ga


def direct_eval(model, nu, beta):
    """Independent weighted-average evaluation straight from the rule list."""
    nu = min(max(nu, model.nu_range[0]), model.nu_range[1])
    beta = min(max(beta, model.beta_range[0]), model.beta_range[1])
    num = den = 0.0
    for rule in model.rules:
        mn, mb = rule.antecedents
        mu = max(0.0, 1 - abs(nu - mn.center) / mn.half_width) * max(0.0, 1 - abs(beta - mb.center) / mb.half_width)
        c = rule.consequent_coeffs
        h = c[0] * nu ** 2 + c[1] * beta ** 2 + c[2] * nu * beta + c[3] * nu + c[4] * beta + c[5]
        num += mu * h
        den += mu
    return min(max(num / den, 0.0), model.wmax_radius)


def test_membership_fn():
    m = MembershipFn(1.0, 0.5)
    assert m(1.0) == 1.0 and m(1.5) == 0.0 and m(1.25) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        MembershipFn(0.0, 0.0)


def test_vertex_input_returns_that_rule():
    rng = np.random.default_rng(0)
    m = FisModel(rng.uniform(0, 0.05, (25, 6)))
    (cn, _), (cb, _) = m.nu_centers, m.beta_centers
    for i in range(5):
        for j in range(5):
            w = m.firing(cn[i], cb[j])
            assert np.sum(w == 1.0) == 1 and w[i * 5 + j] == 1.0
            c = m.coeffs[i * 5 + j]
            h = float(fis.regressors(cn[i], cb[j]) @ c)
            assert eval_fis(m, cn[i], cb[j]) == pytest.approx(min(max(h, 0), m.wmax_radius), abs=1e-15)


def test_midpoint_between_two_rules_is_mean():
    coeffs = np.zeros((25, 6))
    coeffs[0, 5] = 0.1
    coeffs[5, 5] = 0.3
    m = FisModel(coeffs)
    (cn, _), _ = m.nu_centers, m.beta_centers
    assert eval_fis(m, 0.5 * (cn[0] + cn[1]), 0.0) == pytest.approx(0.2)


def test_matches_direct_evaluation(rng):
    for _ in range(20):
        m = FisModel(rng.normal(scale=0.1, size=(25, 6)))
        for _ in range(20):
            nu, beta = rng.uniform(0, fis.NU_MAX), rng.uniform(0, 1)
            assert eval_fis(m, nu, beta) == pytest.approx(direct_eval(m, nu, beta), abs=1e-12)


def test_output_bounded_and_clamping_flagged(rng):
    m = FisModel(rng.normal(scale=5.0, size=(25, 6)))
    nu, beta = rng.uniform(-1, 4, 5000), rng.uniform(-0.5, 1.5, 5000)
    out = eval_fis(m, nu, beta)
    assert np.all(out >= 0) and np.all(out <= m.wmax_radius)
    diag = {}
    eval_fis(m, 5.0, 0.5, diag)
    assert diag["clamped"]
    diag = {}
    eval_fis(m, 1.0, 0.5, diag)
    assert not diag["clamped"]


def test_firing_strengths_partition_unity(rng):
    m = FisModel(np.zeros((25, 6)))
    w = m.firing(rng.uniform(0, fis.NU_MAX, 1000), rng.uniform(0, 1, 1000))
    assert np.allclose(w.sum(axis=1), 1.0)


def test_dataset_examples():
    ds = gen_dataset(n_train_val=1240, n_test=10, seed=0)
    assert len(ds.train) == 660 and len(ds.validation) == 580
    assert not set(ds.train) & set(ds.validation)
    assert np.all(ds.targets >= 0)
    assert np.allclose(world.true_radii(0.0, 0.7), (0, 0))
    r_max, r_min = world.true_radii(2 * np.sqrt(2), 1.0)
    assert r_min == pytest.approx(0.225 * np.sqrt(2 * np.sqrt(2)), abs=1e-12)
    assert r_max == pytest.approx(0.202 * 2 * np.sqrt(2) + r_min, abs=1e-12)
    assert r_min == pytest.approx(0.3784, abs=1e-4) and r_max == pytest.approx(0.9498, abs=1e-4)
    again = gen_dataset(n_train_val=1240, n_test=10, seed=0)
    assert np.array_equal(ds.inputs, again.inputs)


def test_constant_target_learned():
    X = np.column_stack([np.random.default_rng(1).uniform(0, fis.NU_MAX, 300), np.random.default_rng(2).uniform(0, 1, 300)])
    m = train_ga(X, np.full(300, 0.3), GaConfig(generations=30, seed=0))
    grid = np.meshgrid(np.linspace(0, fis.NU_MAX, 30), np.linspace(0, 1, 30))
    assert np.max(np.abs(m(grid[0], grid[1]) - 0.3)) <= 0.01


def test_random_fis_is_recovered():
    rng = np.random.default_rng(4)
    truth = FisModel(rng.uniform(0.0, 0.05, (25, 6)) + np.array([0, 0, 0, 0, 0, 0.1]))
    X = np.column_stack([rng.uniform(0, fis.NU_MAX, 1500), rng.uniform(0, 1, 1500)])
    y = truth(X[:, 0], X[:, 1])
    m = train_ga(X, y, GaConfig(generations=50, seed=0))
    Xt = np.column_stack([rng.uniform(0, fis.NU_MAX, 5000), rng.uniform(0, 1, 5000)])
    assert np.mean((m(Xt[:, 0], Xt[:, 1]) - truth(Xt[:, 0], Xt[:, 1])) ** 2) <= 1e-4


def test_training_is_deterministic():
    ds = gen_dataset(n_train_val=200, n_test=0, seed=3)
    a = train_ga(ds.inputs, ds.targets[:, 0], GaConfig(generations=10, seed=9))
    b = train_ga(ds.inputs, ds.targets[:, 0], GaConfig(generations=10, seed=9))
    assert np.array_equal(a.coeffs, b.coeffs)


def test_training_curve_rows():
    ds = gen_dataset(n_train_val=200, n_test=0, seed=3)
    curve = []
    train_ga(ds.inputs, ds.targets[:, 1], GaConfig(generations=15, seed=0), curve=curve)
    assert [r["generation"] for r in curve] == list(range(15))
    best = [r["best_fitness"] for r in curve]
    assert np.all(np.diff(best) <= 0)
    assert all(0 <= r["neg_error_rate"] <= 1 for r in curve)


def test_model_json_round_trip(rng):
    m = fis.DisturbanceModel(FisModel(rng.normal(size=(25, 6))), FisModel(rng.normal(size=(25, 6)), "minor"))
    back = fis.DisturbanceModel.from_json(m.to_json())
    assert np.array_equal(back.major.coeffs, m.major.coeffs)
    assert back.minor.output_label == "minor"
    d = json.loads(m.to_json())
    assert len(d["major"]["rules"]) == 25 and set(d["major"]["rules"][0]) == {"centers", "coeffs"}


def test_disturbance_set_examples():
    zero = fis.disturbance_set(fis.GroundTruthModel(), np.zeros(4), 1.0)
    assert np.allclose(setops.supports(zero, setops.polygon_template(16)), 0.0, atol=1e-12)
    exact = fis.GroundTruthModel(Ts=1.0)
    P = fis.disturbance_set(exact, [0, 0, 1.0, 0], 1.0)
    ref = setops.circumscribe_ellipse(setops.Ellipse2(0.427, 0.225, 0.0), 8)
    assert np.allclose(setops.supports(P, ref.normals), ref.offsets, atol=1e-9)


def test_disturbance_set_inside_bound(rng):
    m = fis.DisturbanceModel(FisModel(rng.uniform(0, 2, (25, 6))), FisModel(rng.uniform(0, 2, (25, 6)), "minor"))
    W = fis.wmax_set()
    for _ in range(100):
        x = np.array([0, 0, *rng.uniform(-2, 2, 2)])
        assert setops.is_subset(fis.disturbance_set(m, x, rng.uniform()), W)


def test_wmax_holds_every_admissible_ellipse(rng):
    W = fis.wmax_set()
    for _ in range(200):
        v = rng.uniform(-2, 2, 2)
        e = world.true_disturbance_set([0, 0, *v], rng.uniform())
        P = setops.circumscribe_ellipse(setops.Ellipse2(0.1 * e.r_max, 0.1 * e.r_min, e.heading))
        assert setops.is_subset(P, W)


@pytest.mark.slow
def test_trained_pair_is_conservative():
    from sddtmpc import sim

    m = sim.train_default_model(seed=0)
    ds = gen_dataset(seed=0)
    for k, model in enumerate((m.major, m.minor)):
        s = fis.error_stats(model, ds.test_inputs, ds.test_targets[:, k])
        assert s["negative_rate"] <= 0.05
        assert s["mean_positive"] <= 0.05
        assert s["max_negative"] <= 0.03
