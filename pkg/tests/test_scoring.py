import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gallop.encoder import encode_classes
from gallop.features import FeatureRecord, SynthSpec, generate_synthetic
from gallop.head import ScaleSchedule, align_locals, topk_similarity
from gallop.model import new_model
from gallop.scoring import (
    auroc,
    classify,
    ensemble_similarity,
    evaluate_top1,
    fpr_at_95_tpr,
    glmcm_score,
    lmcm_from_table,
    mcm_from_sims,
    ood_metrics,
    score_dataset,
    write_score_csv,
)
from gallop.train import TrainConfig, train


def make_model(m=2, n=2, d=8, num_classes=3, seed=0, tau=0.01, k1=1, delta_k=1):
    return new_model(seed=seed, m=m, n=n, V=4, d_prime=8, d=d,
                     scales=ScaleSchedule(k1=k1, delta_k=delta_k, n=n), tau=tau,
                     num_classes=num_classes)


def make_record(rng, d=8, L=6, label=0):
    z_g = rng.standard_normal(d)
    z_g /= np.linalg.norm(z_g)
    z_l = rng.standard_normal((L, d))
    return FeatureRecord(label=label, z_g=z_g.astype(np.float32),
                         z_l=z_l.astype(np.float32))


# ensemble similarity


def test_ensemble_global_only_reduces_to_cosine():
    model = make_model(m=1, n=0)
    rec = make_record(np.random.default_rng(0))
    text = encode_classes(model.encoder, model.prompts.global_prompts[0],
                          model.class_tokens(3))
    np.testing.assert_allclose(
        ensemble_similarity(model, rec), text @ rec.z_g.astype(np.float64), rtol=1e-12
    )


def test_ensemble_duplicate_global_prompts_mean_invariant():
    model = make_model(m=2, n=0)
    model.prompts.global_prompts[1] = model.prompts.global_prompts[0]
    single = make_model(m=1, n=0)
    single.prompts.global_prompts[0] = model.prompts.global_prompts[0]
    rec = make_record(np.random.default_rng(1))
    np.testing.assert_allclose(
        ensemble_similarity(model, rec), ensemble_similarity(single, rec), rtol=1e-12
    )


def test_ensemble_matches_loop_oracle():
    model = make_model(m=2, n=2)
    rec = make_record(np.random.default_rng(2))
    tokens = model.class_tokens(3)
    expected = np.zeros(3)
    for i in range(2):
        text = encode_classes(model.encoder, model.prompts.global_prompts[i], tokens)
        expected += text @ rec.z_g.astype(np.float64) / 2
    aligned = align_locals(model.alignment, rec.z_l.astype(np.float64))
    for j in range(2):
        text = encode_classes(model.encoder, model.prompts.local_prompts[j], tokens)
        k = model.scales.scales[j]
        expected += np.array([topk_similarity(aligned, text[c], k) for c in range(3)]) / 2
    assert np.abs(ensemble_similarity(model, rec) - expected).max() < 1e-12


def test_ensemble_local_only():
    model = make_model(m=0, n=2)
    rec = make_record(np.random.default_rng(3))
    sims = ensemble_similarity(model, rec)
    assert sims.shape == (3,)
    assert np.isfinite(sims).all()


# classify


def test_classify_single_class():
    model = make_model(num_classes=1)
    rec = make_record(np.random.default_rng(4))
    probs, predicted = classify(model, rec)
    np.testing.assert_array_equal(probs, [1.0])
    assert predicted == 0


def test_classify_argmax_invariant_under_tau():
    model = make_model()
    rec = make_record(np.random.default_rng(5))
    _, p1 = classify(model, rec, tau=0.01)
    _, p2 = classify(model, rec, tau=0.1)
    assert p1 == p2


def test_classify_trained_model_predicts_planted_class():
    spec = SynthSpec(num_classes=2, shots_per_class=16, d=16, L=8,
                     planted_patches_per_image=6, noise_sigma=0.0, seed=11)
    tr, te, _ = generate_synthetic(spec)
    model, _ = train(tr, TrainConfig(epochs=30, seed=0))
    assert evaluate_top1(model, te) == 1.0


# GL-MCM


def test_glmcm_single_class_degenerate():
    model = make_model(num_classes=1)
    rec = make_record(np.random.default_rng(6))
    s_g, s_l, s_gl = glmcm_score(model, rec)
    assert (s_g, s_l, s_gl) == (1.0, 1.0, 2.0)


def test_glmcm_shift_invariance():
    sims = np.array([0.2, -0.1, 0.4])
    assert mcm_from_sims(sims + 7.0, 0.05) == pytest.approx(
        mcm_from_sims(sims, 0.05), abs=1e-12
    )
    table = np.random.default_rng(7).standard_normal((5, 3))
    assert lmcm_from_table(table + 3.0, 0.05) == pytest.approx(
        lmcm_from_table(table, 0.05), abs=1e-12
    )


def test_lmcm_hand_table():
    table = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert lmcm_from_table(table, 1.0) == pytest.approx(math.e / (math.e + 1), abs=1e-12)


def test_glmcm_sum_structure_and_ranges():
    model = make_model()
    for trial in range(10):
        rec = make_record(np.random.default_rng(trial))
        s_g, s_l, s_gl = glmcm_score(model, rec)
        assert s_gl == pytest.approx(s_g + s_l, abs=1e-15)
        assert 0 < s_g <= 1 and 0 < s_l <= 1 and 0 < s_gl <= 2


def test_glmcm_no_locals_reduces_to_global_mcm():
    model = make_model(m=2, n=0)
    rec = make_record(np.random.default_rng(8))
    s_g, s_l, s_gl = glmcm_score(model, rec)
    assert s_l == 0.0 and s_gl == s_g


def test_glmcm_no_globals_reduces_to_local_term():
    model = make_model(m=0, n=2)
    rec = make_record(np.random.default_rng(9))
    s_g, s_l, s_gl = glmcm_score(model, rec)
    assert s_g == 0.0 and s_gl == s_l


def test_glmcm_alignment_switch_changes_scores():
    model = make_model(m=1, n=1, tau=1.0)  # graded scores, no saturation
    model.alignment.theta[0, 1] = 0.7
    rec = make_record(np.random.default_rng(10))
    on = glmcm_score(model, rec, align_for_scoring=True)
    off = glmcm_score(model, rec, align_for_scoring=False)
    assert on[1] != off[1]


# metrics: brute-force oracles


def oracle_fpr95(id_scores, ood_scores):
    id_scores = sorted(id_scores)
    n = len(id_scores)
    best = None
    for t in id_scores:
        count = sum(1 for s in id_scores if s >= t)
        if 100 * count >= 95 * n:
            best = t if best is None else max(best, t)
    return sum(1 for s in ood_scores if s >= best) / len(ood_scores)


def oracle_auroc(id_scores, ood_scores):
    wins = ties = 0
    for a in id_scores:
        for b in ood_scores:
            if a > b:
                wins += 1
            elif a == b:
                ties += 1
    return (wins + 0.5 * ties) / (len(id_scores) * len(ood_scores))


def test_fpr95_perfect_separation():
    assert fpr_at_95_tpr([1.0] * 10, [0.0] * 7) == 0.0


def test_fpr95_identical_multisets():
    scores = [0.3, 0.5, 0.5, 0.9, 1.2] * 4
    assert fpr_at_95_tpr(scores, scores) >= 0.95


def test_fpr95_worked_example():
    id_scores = [round(0.1 * i, 10) for i in range(1, 21)]
    ood_scores = [0.0, 0.15, 0.5]
    got = fpr_at_95_tpr(id_scores, ood_scores)
    assert got == oracle_fpr95(id_scores, ood_scores)
    assert got == pytest.approx(1 / 3)


def test_auroc_examples():
    assert auroc([3.0, 1.0], [2.0, 0.0]) == 0.75
    assert auroc([1.0] * 5, [0.0] * 5) == 1.0
    assert auroc([0.5] * 4, [0.5] * 6) == 0.5


def test_metrics_empty_inputs():
    with pytest.raises(ValueError):
        fpr_at_95_tpr([], [1.0])
    with pytest.raises(ValueError):
        auroc([1.0], [])


@settings(max_examples=80, deadline=None)
@given(
    id_scores=st.lists(st.integers(-20, 20), min_size=1, max_size=40),
    ood_scores=st.lists(st.integers(-20, 20), min_size=1, max_size=40),
)
def test_metrics_match_oracles(id_scores, ood_scores):
    # integer-valued scores exercise heavy ties without float-equality doubts
    id_f = [float(x) / 4 for x in id_scores]
    ood_f = [float(x) / 4 for x in ood_scores]
    assert fpr_at_95_tpr(id_f, ood_f) == oracle_fpr95(id_f, ood_f)
    assert auroc(id_f, ood_f) == pytest.approx(oracle_auroc(id_f, ood_f), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    id_scores=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30),
    ood_scores=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30),
)
def test_auroc_complement_property(id_scores, ood_scores):
    a = auroc(id_scores, ood_scores)
    b = auroc(ood_scores, id_scores)
    assert a + b == pytest.approx(1.0, abs=1e-12)


def test_mean_glmcm_separates_id_from_ood_sigma_zero():
    spec = SynthSpec(num_classes=2, shots_per_class=16, d=64, L=8,
                     planted_patches_per_image=4, noise_sigma=0.0, seed=9,
                     test_shots_per_class=32)
    tr, te, ood = generate_synthetic(spec)
    model, _ = train(tr, TrainConfig(epochs=100, batch_size=16, seed=0, tau=0.5))
    id_scores = [r.s_glmcm for r in score_dataset(model, te)]
    ood_scores = [r.s_glmcm for r in score_dataset(model, ood)]
    assert np.mean(id_scores) > np.mean(ood_scores)


# CSV dump


def test_score_csv_format(tmp_path):
    model = make_model()
    spec = SynthSpec(num_classes=3, shots_per_class=2, d=8, L=6,
                     planted_patches_per_image=2, noise_sigma=0.1, seed=3)
    ds, _, _ = generate_synthetic(spec)
    reports = score_dataset(model, ds)
    path = tmp_path / "scores.csv"
    write_score_csv(path, reports, [r.label for r in ds.records])
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["record_index", "label", "predicted", "prob_max",
                       "s_gmcm", "s_lmcm", "s_glmcm"]
    assert len(rows) == len(ds) + 1
    for i, row in enumerate(rows[1:]):
        assert int(row[0]) == i
        assert int(row[1]) == ds.records[i].label
        # 9 significant digits round-trip the stored doubles closely
        assert float(row[3]) == pytest.approx(reports[i].probs.max(), rel=1e-8)
        assert float(row[6]) == pytest.approx(
            float(row[4]) + float(row[5]), rel=1e-7
        )


def test_ood_metrics_bundle():
    m = ood_metrics([1.0, 0.9, 0.8], [0.1, 0.2])
    assert m.fpr95 == 0.0 and m.auroc == 1.0
