import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gallop.errors import ConfigError
from gallop.head import (
    AlignmentMap,
    ScaleSchedule,
    Temperature,
    align_locals,
    class_probabilities,
    local_class_probability,
    topk_mask,
    topk_similarity,
)
from gallop.model import new_model


def sims_of(z_l, t):
    return z_l @ t


def oracle_topk_mean(sims, k):
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    return sum(sims[i] for i in order[:k]) / k


def test_topk_similarity_sorted_oracle_case():
    z_l = np.array([[0.9, 0.0], [0.5, 0.0], [0.1, 0.0]])
    t = np.array([1.0, 0.0])
    assert topk_similarity(z_l, t, 2) == pytest.approx(0.7, abs=1e-15)


def test_topk_k_equals_l_is_mean_and_k1_is_max():
    rng = np.random.default_rng(0)
    z_l = rng.standard_normal((7, 4))
    t = rng.standard_normal(4)
    sims = sims_of(z_l, t)
    assert topk_similarity(z_l, t, 7) == pytest.approx(sims.mean(), rel=1e-12)
    assert topk_similarity(z_l, t, 1) == pytest.approx(sims.max(), rel=1e-12)


def test_topk_mask_examples():
    z_l = np.array([[0.9], [0.5], [0.1]])
    t = np.array([1.0])
    np.testing.assert_array_equal(topk_mask(z_l, t, 2), [1, 1, 0])
    np.testing.assert_array_equal(topk_mask(z_l, t, 3), [1, 1, 1])
    tied = np.ones((4, 1))
    np.testing.assert_array_equal(topk_mask(tied, t, 2), [1, 1, 0, 0])


def test_topk_out_of_range_k():
    z_l = np.zeros((3, 2))
    t = np.zeros(2)
    for k in (0, 4):
        with pytest.raises(ValueError):
            topk_similarity(z_l, t, k)
        with pytest.raises(ValueError):
            topk_mask(z_l, t, k)


@settings(max_examples=60, deadline=None)
@given(
    L=st.integers(1, 16),
    d=st.integers(1, 5),
    k_frac=st.floats(0.01, 1.0),
    seed=st.integers(0, 2**16),
    tie=st.booleans(),
)
def test_topk_properties(L, d, k_frac, seed, tie):
    rng = np.random.default_rng(seed)
    z_l = rng.standard_normal((L, d))
    if tie and L >= 2:
        z_l[1] = z_l[0]
    t = rng.standard_normal(d)
    k = max(1, min(L, int(round(k_frac * L))))
    sims = sims_of(z_l, t)
    # oracle agreement
    assert topk_similarity(z_l, t, k) == pytest.approx(
        oracle_topk_mean(list(sims), k), rel=1e-12, abs=1e-12
    )
    # mask consistency, exact count
    mask = topk_mask(z_l, t, k)
    assert mask.sum() == k
    assert topk_similarity(z_l, t, k) == pytest.approx(
        float(mask @ sims) / k, rel=1e-15, abs=1e-15
    )
    # permutation invariance
    perm = rng.permutation(L)
    assert topk_similarity(z_l[perm], t, k) == pytest.approx(
        topk_similarity(z_l, t, k), rel=1e-12, abs=1e-12
    )
    # monotone nonincreasing in k
    values = [topk_similarity(z_l, t, kk) for kk in range(1, L + 1)]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_align_identity_and_scaling():
    rng = np.random.default_rng(1)
    z_l = rng.standard_normal((5, 4))
    t = rng.standard_normal(4)
    ident = AlignmentMap.identity(4)
    np.testing.assert_array_equal(align_locals(ident, z_l), z_l)
    doubled = AlignmentMap(theta=2 * np.eye(4))
    np.testing.assert_allclose(align_locals(doubled, z_l), 2 * z_l, rtol=1e-15)
    np.testing.assert_array_equal(
        topk_mask(align_locals(doubled, z_l), t, 2), topk_mask(z_l, t, 2)
    )
    assert topk_similarity(align_locals(doubled, z_l), t, 2) == pytest.approx(
        2 * topk_similarity(z_l, t, 2), rel=1e-12
    )


def test_align_matches_naive_triple_loop():
    rng = np.random.default_rng(2)
    theta = rng.standard_normal((4, 4))
    z_l = rng.standard_normal((3, 4))
    aligned = align_locals(AlignmentMap(theta=theta), z_l)
    naive = np.zeros((3, 4))
    for i in range(3):
        for r in range(4):
            for c in range(4):
                naive[i, r] += theta[r, c] * z_l[i, c]
    assert np.abs(aligned - naive).max() < 1e-12


def test_align_shape_mismatch():
    with pytest.raises(ValueError):
        align_locals(AlignmentMap.identity(3), np.zeros((2, 4)))


def test_class_probabilities_uniform_and_closed_form():
    np.testing.assert_allclose(
        class_probabilities(np.array([0.3, 0.3, 0.3, 0.3]), 1.0), np.full(4, 0.25),
        rtol=1e-15,
    )
    probs = class_probabilities(np.array([1.0, 0.0]), 1.0)
    e = np.e
    np.testing.assert_allclose(probs, [e / (e + 1), 1 / (e + 1)], rtol=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_class_probabilities_shift_invariance_and_argmax_tau():
    rng = np.random.default_rng(3)
    sims = rng.standard_normal(6)
    a = class_probabilities(sims, 0.07)
    b = class_probabilities(sims + 5.0, 0.07)
    assert np.abs(a - b).max() <= 1e-12
    for tau in (0.01, 0.5, 10.0):
        assert np.argmax(class_probabilities(sims, tau)) == np.argmax(a)


def test_temperature_positive():
    with pytest.raises(ConfigError):
        Temperature(0.0)
    with pytest.raises(ValueError):
        class_probabilities(np.array([1.0]), -1.0)


def test_scale_schedule_values_and_validation():
    sched = ScaleSchedule(k1=2, delta_k=3, n=3)
    assert sched.scales == [2, 5, 8]
    sched.validate_for(8)
    with pytest.raises(ConfigError) as exc:
        sched.validate_for(7)
    assert "k_3=8" in str(exc.value)


def make_test_model(seed=0, m=1, n=2, d=8, k1=1, delta_k=1, num_classes=3, tau=0.01):
    return new_model(seed=seed, m=m, n=n, V=4, d_prime=8, d=d,
                     scales=ScaleSchedule(k1=k1, delta_k=delta_k, n=n),
                     tau=tau, num_classes=num_classes)


def test_local_class_probability_identity_reduction():
    """With theta == I the aligned path equals softmax of raw top-k sims."""
    rng = np.random.default_rng(4)
    for trial in range(100):
        model = make_test_model(seed=trial % 5, num_classes=3)
        z_l = rng.standard_normal((6, 8))
        j = trial % 2
        probs = local_class_probability(model, z_l, j)
        from gallop.encoder import encode_classes

        text = encode_classes(model.encoder, model.prompts.local_prompts[j],
                              model.class_tokens(3))
        k = model.scales.scales[j]
        sims = np.array([topk_similarity(z_l, text[c], k) for c in range(3)])
        direct = class_probabilities(sims, model.tau)
        assert np.abs(probs - direct).max() <= 1e-12


def test_local_class_probability_single_class():
    model = make_test_model(num_classes=1)
    probs = local_class_probability(model, np.random.default_rng(5).standard_normal((4, 8)), 0)
    np.testing.assert_array_equal(probs, [1.0])


def test_local_class_probability_permutation_invariant():
    rng = np.random.default_rng(6)
    model = make_test_model()
    z_l = rng.standard_normal((6, 8))
    a = local_class_probability(model, z_l, 1)
    b = local_class_probability(model, z_l[rng.permutation(6)], 1)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_local_class_probability_scale_overflow():
    model = make_test_model(k1=5, delta_k=5)
    with pytest.raises(ConfigError) as exc:
        local_class_probability(model, np.zeros((6, 8)), 1)
    assert "k_2=10" in str(exc.value)


def test_local_class_probability_engineered_confidence():
    """Top-k rows equal to class 0's text direction, orthogonal to class 1's."""
    model = make_test_model(num_classes=2, n=1, m=0, k1=2, delta_k=0, tau=0.01)
    from gallop.encoder import encode_classes

    text = encode_classes(model.encoder, model.prompts.local_prompts[0],
                          model.class_tokens(2))
    t0 = text[0]
    t1_perp = text[1] - t0 * (text[1] @ t0)
    z_l = np.stack([t0, t0, t1_perp * 0.0, -t0])  # top-2 rows exactly t0
    probs = local_class_probability(model, z_l, 0)
    sims = np.array([
        topk_similarity(z_l, text[0], 2),
        topk_similarity(z_l, text[1], 2),
    ])
    np.testing.assert_allclose(probs, class_probabilities(sims, 0.01), atol=1e-12)
    assert probs[0] > 1 - 1e-10
