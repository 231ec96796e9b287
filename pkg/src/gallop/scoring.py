"""Ensemble inference, classification, and MCM / GL-MCM out-of-distribution
scoring with FPR95/AUROC metrics.

The ensemble similarity averages the global cosine term over the global
prompts and the top-k_j local term over the local prompts (each term over its
own prompt count). The local MCM term softmaxes the prompt-averaged
per-location similarity over classes at each location and takes the best
(class, location) confidence; no top-k is involved there.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .encoder import encode_classes
from .head import align_locals, class_probabilities


@dataclass
class ScoreReport:
    """Per-image outcome: class probabilities, prediction, OOD scores."""

    probs: np.ndarray
    predicted: int
    s_gmcm: float
    s_lmcm: float
    s_glmcm: float


@dataclass
class OodMetrics:
    fpr95: float
    auroc: float


def _text_embeddings(model, num_classes=None):
    """((m, C, d) global, (n, C, d) local) class text matrices."""
    tokens = model.class_tokens(num_classes)
    tg = [encode_classes(model.encoder, p, tokens) for p in model.prompts.global_prompts]
    tl = [encode_classes(model.encoder, p, tokens) for p in model.prompts.local_prompts]
    C = tokens.shape[0]
    d = model.d
    return (
        np.stack(tg) if tg else np.zeros((0, C, d)),
        np.stack(tl) if tl else np.zeros((0, C, d)),
    )


def _ensemble_from_embeddings(model, z_g, z_l, text_g, text_l):
    C = (text_g.shape[1] if text_g.size else text_l.shape[1])
    sims = np.zeros(C)
    if text_g.shape[0]:
        sims += (text_g @ np.asarray(z_g, dtype=np.float64)).mean(axis=0)
    if text_l.shape[0]:
        L = z_l.shape[0]
        model.scales.validate_for(L)
        aligned = align_locals(model.alignment, z_l)
        local = np.zeros(C)
        for j in range(text_l.shape[0]):
            k = model.scales.scales[j]
            table = aligned @ text_l[j].T  # (L, C)
            mask = _kernels.topk_block_mask(table[None, :, :], k)[0]
            local += (mask * table).sum(axis=0) / k
        sims += local / text_l.shape[0]
    return sims


def ensemble_similarity(model, record):
    """Length-C similarity vector averaging every prompt's contribution."""
    text_g, text_l = _text_embeddings(model)
    return _ensemble_from_embeddings(model, record.z_g, record.z_l, text_g, text_l)


def classify(model, record, tau=None):
    """(probs, predicted) from the softmaxed ensemble similarity; exact ties
    resolve to the lowest class index."""
    probs = class_probabilities(
        ensemble_similarity(model, record), model.tau if tau is None else tau
    )
    return probs, int(np.argmax(probs))


def mcm_from_sims(sims, tau):
    """Maximum concept matching: max softmax confidence of a similarity row."""
    return float(class_probabilities(sims, tau).max())


def lmcm_from_table(table, tau):
    """Max over (location, class) of the per-location class softmax of a
    (L, C) similarity table."""
    t = np.asarray(table, dtype=np.float64) / tau
    t = t - t.max(axis=1, keepdims=True)
    e = np.exp(t)
    return float((e / e.sum(axis=1, keepdims=True)).max())


def glmcm_score(model, record, tau=None, align_for_scoring=True):
    """(s_gmcm, s_lmcm, s_glmcm) for one record.

    With no local prompts the local term is defined as 0 and the combined
    score reduces to the global MCM; symmetrically for no global prompts.
    ``align_for_scoring`` routes the locals through the alignment map (the
    single local representation used everywhere else).
    """
    tau = model.tau if tau is None else tau
    text_g, text_l = _text_embeddings(model)
    s_gmcm = 0.0
    if text_g.shape[0]:
        global_sims = (text_g @ np.asarray(record.z_g, dtype=np.float64)).mean(axis=0)
        s_gmcm = mcm_from_sims(global_sims, tau)
    s_lmcm = 0.0
    if text_l.shape[0]:
        locals_ = (
            align_locals(model.alignment, record.z_l)
            if align_for_scoring
            else np.asarray(record.z_l, dtype=np.float64)
        )
        # (L, C) prompt-averaged per-location similarity; no top-k here
        table = np.einsum("ld,ncd->lc", locals_, text_l) / text_l.shape[0]
        s_lmcm = lmcm_from_table(table, tau)
    return s_gmcm, s_lmcm, s_gmcm + s_lmcm


def score_record(model, record, tau=None, align_for_scoring=True):
    probs, predicted = classify(model, record, tau=tau)
    s_g, s_l, s_gl = glmcm_score(model, record, tau=tau,
                                 align_for_scoring=align_for_scoring)
    return ScoreReport(probs=probs, predicted=predicted, s_gmcm=s_g, s_lmcm=s_l,
                       s_glmcm=s_gl)


def score_dataset(model, dataset, tau=None, align_for_scoring=True):
    """ScoreReports for every record, computing text embeddings once."""
    tau = model.tau if tau is None else tau
    text_g, text_l = _text_embeddings(model, dataset.num_classes)
    if text_l.shape[0]:
        model.scales.validate_for(dataset.L)
    reports = []
    for record in dataset.records:
        sims = _ensemble_from_embeddings(model, record.z_g, record.z_l, text_g, text_l)
        probs = class_probabilities(sims, tau)
        s_gmcm = 0.0
        if text_g.shape[0]:
            gsims = (text_g @ record.z_g.astype(np.float64)).mean(axis=0)
            s_gmcm = mcm_from_sims(gsims, tau)
        s_lmcm = 0.0
        if text_l.shape[0]:
            locals_ = (
                align_locals(model.alignment, record.z_l)
                if align_for_scoring
                else record.z_l.astype(np.float64)
            )
            table = np.einsum("ld,ncd->lc", locals_, text_l) / text_l.shape[0]
            s_lmcm = lmcm_from_table(table, tau)
        reports.append(
            ScoreReport(
                probs=probs,
                predicted=int(np.argmax(probs)),
                s_gmcm=s_gmcm,
                s_lmcm=s_lmcm,
                s_glmcm=s_gmcm + s_lmcm,
            )
        )
    return reports


def evaluate_top1(model, dataset):
    """Fraction of records whose ensemble prediction matches the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    reports = score_dataset(model, dataset)
    hits = sum(1 for rep, rec in zip(reports, dataset.records) if rep.predicted == rec.label)
    return hits / len(dataset)


def fpr_at_95_tpr(id_scores, ood_scores):
    """False-positive rate at the threshold keeping >= 95% of ID scores.

    The threshold is the largest value t with #{id >= t} >= ceil(0.95 * N)
    (ratios compared in exact integer arithmetic); the return value is the
    fraction of OOD scores >= t. Higher score = more in-distribution.
    """
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("fpr_at_95_tpr needs nonempty ID and OOD score sets")
    n = id_scores.size
    need = -((-95 * n) // 100)  # ceil(0.95 * n) without float error
    threshold = np.sort(id_scores)[n - need]
    return float((ood_scores >= threshold).sum() / ood_scores.size)


def auroc(id_scores, ood_scores):
    """Mann-Whitney AUROC: (#{id > ood} + 0.5 * #ties) / (|id| * |ood|)."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("auroc needs nonempty ID and OOD score sets")
    ood_sorted = np.sort(ood_scores)
    below = np.searchsorted(ood_sorted, id_scores, side="left").sum()
    ties = (np.searchsorted(ood_sorted, id_scores, side="right").sum() - below)
    return float((below + 0.5 * ties) / (id_scores.size * ood_scores.size))


def ood_metrics(id_scores, ood_scores):
    return OodMetrics(
        fpr95=fpr_at_95_tpr(id_scores, ood_scores), auroc=auroc(id_scores, ood_scores)
    )


def write_score_csv(path, reports, labels):
    """Score dump: one row per record, 9 significant digits on real values."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["record_index", "label", "predicted", "prob_max", "s_gmcm", "s_lmcm", "s_glmcm"]
        )
        for i, (rep, label) in enumerate(zip(reports, labels)):
            writer.writerow(
                [
                    i,
                    int(label),
                    rep.predicted,
                    f"{rep.probs.max():.9g}",
                    f"{rep.s_gmcm:.9g}",
                    f"{rep.s_lmcm:.9g}",
                    f"{rep.s_glmcm:.9g}",
                ]
            )
