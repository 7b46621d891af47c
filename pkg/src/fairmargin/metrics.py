"""Embedding-geometry and fairness statistics.

Per group: the mean angle/cosine between samples and their identity
centers (intra), the mean nearest-neighbor angle/cosine between identity
centers (inter), the absolute gaps of those cosines to an anchor group
(the skew terms driving the margin controller), best-threshold
verification accuracy, and the accuracy-dispersion criteria STD and SER.

Reductions use exact (fsum) summation so every statistic is invariant to
sample and identity ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import GroupedDataset, VerificationPair
from .errors import (
    ConfigurationError,
    DegenerateSerError,
    InsufficientIdentitiesError,
    NumericDomainError,
)


@dataclass(frozen=True)
class GroupGeometry:
    """Angle/cosine compactness and separation statistics for one group."""

    group_id: int
    theta_intra: float
    theta_inter: float
    d_intra: float
    d_inter: float
    n_identities_used: int


@dataclass(frozen=True)
class BiasReport:
    """Per-group verification accuracy plus the fairness criteria.

    Accuracies are fractions in [0, 1]; ``std`` is the sample standard
    deviation of the accuracies expressed in percent; ``ser`` is the
    max/min error ratio (``inf`` when some group has zero error).
    """

    per_group_accuracy: tuple[float, ...]
    avg_accuracy: float
    std: float
    ser: float
    per_group_geometry: tuple[GroupGeometry, ...] = ()


def _fsum_rows(rows):
    """Exact per-coordinate sum of a [n, d] array."""
    arr = np.asarray(rows, dtype=np.float64)
    return np.asarray([math.fsum(arr[:, k]) for k in range(arr.shape[1])])


def _cosine(u, v):
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    if nu == 0.0 or nv == 0.0:
        raise NumericDomainError("cosine against a zero-norm vector")
    return float(np.dot(u, v)) / (nu * nv)


def _angle_deg(cosine):
    return math.degrees(math.acos(min(1.0, max(-1.0, cosine))))


def embed_dataset(model, ds: GroupedDataset):
    """Unit-norm embeddings for every sample, ``[len(ds), d]``."""
    return model.embed_batch(ds.features)


def identity_centers_from_arrays(embeddings, identity_ids, n_identities=None):
    """Mean embedding per identity (centers are not renormalized)."""
    identity_ids = np.asarray(identity_ids)
    if n_identities is None:
        n_identities = int(identity_ids.max()) + 1
    centers = {}
    for ident in range(n_identities):
        idx = np.nonzero(identity_ids == ident)[0]
        if len(idx) == 0:
            continue
        centers[ident] = _fsum_rows(embeddings[idx]) / len(idx)
    return centers


def identity_centers(model, ds: GroupedDataset):
    """Feature center of each identity under the given model."""
    return identity_centers_from_arrays(embed_dataset(model, ds), ds.identity_ids,
                                        ds.n_identities)


def intra_stats_from_arrays(embeddings, identity_ids, group_ids, group, centers=None):
    """(mean angle deg, mean cosine) between samples and their identity center.

    Double mean: per identity over its samples, then over the group's
    identities.
    """
    identity_ids = np.asarray(identity_ids)
    group_ids = np.asarray(group_ids)
    if centers is None:
        centers = identity_centers_from_arrays(embeddings, identity_ids)
    idents = sorted({int(i) for i, g in zip(identity_ids, group_ids) if g == group})
    if not idents:
        raise ConfigurationError(f"group {group} has no identities")
    per_ident_angle, per_ident_cos = [], []
    for ident in idents:
        idx = np.nonzero(identity_ids == ident)[0]
        center = centers[ident]
        cosines = [_cosine(embeddings[i], center) for i in idx]
        per_ident_angle.append(math.fsum(_angle_deg(c) for c in cosines) / len(idx))
        per_ident_cos.append(math.fsum(cosines) / len(idx))
    theta = math.fsum(per_ident_angle) / len(idents)
    dist = math.fsum(per_ident_cos) / len(idents)
    return theta, dist


def inter_stats_from_arrays(embeddings, identity_ids, group_ids, group, centers=None):
    """(mean nearest-center angle deg, mean max cosine) within one group.

    For each identity, the closest *other* center of the same group by
    cosine; averaged over the group's identities.
    """
    identity_ids = np.asarray(identity_ids)
    group_ids = np.asarray(group_ids)
    if centers is None:
        centers = identity_centers_from_arrays(embeddings, identity_ids)
    idents = sorted({int(i) for i, g in zip(identity_ids, group_ids) if g == group})
    if len(idents) < 2:
        raise InsufficientIdentitiesError(
            f"group {group} needs >= 2 identities for inter-class statistics"
        )
    nearest_cos = []
    for ident in idents:
        best = -np.inf
        for other in idents:
            if other == ident:
                continue
            best = max(best, _cosine(centers[ident], centers[other]))
        nearest_cos.append(best)
    theta = math.fsum(_angle_deg(c) for c in nearest_cos) / len(idents)
    dist = math.fsum(nearest_cos) / len(idents)
    return theta, dist


def intra_stats(model, ds: GroupedDataset, group):
    emb = embed_dataset(model, ds)
    return intra_stats_from_arrays(emb, ds.identity_ids, ds.group_ids, group)


def inter_stats(model, ds: GroupedDataset, group):
    emb = embed_dataset(model, ds)
    return inter_stats_from_arrays(emb, ds.identity_ids, ds.group_ids, group)


def group_geometry(model, ds: GroupedDataset, group) -> GroupGeometry:
    emb = embed_dataset(model, ds)
    centers = identity_centers_from_arrays(emb, ds.identity_ids, ds.n_identities)
    theta_intra, d_intra = intra_stats_from_arrays(
        emb, ds.identity_ids, ds.group_ids, group, centers)
    theta_inter, d_inter = inter_stats_from_arrays(
        emb, ds.identity_ids, ds.group_ids, group, centers)
    return GroupGeometry(group, theta_intra, theta_inter, d_intra, d_inter,
                         len(ds.identities_in_group(group)))


def skew_inter(model, val_ds: GroupedDataset, group, anchor_group) -> float:
    """Absolute gap between the group's and the anchor's inter-class cosine."""
    emb = embed_dataset(model, val_ds)
    centers = identity_centers_from_arrays(emb, val_ds.identity_ids, val_ds.n_identities)
    _, d_g = inter_stats_from_arrays(emb, val_ds.identity_ids, val_ds.group_ids,
                                     group, centers)
    _, d_anchor = inter_stats_from_arrays(emb, val_ds.identity_ids, val_ds.group_ids,
                                          anchor_group, centers)
    return abs(d_g - d_anchor)


def skew_intra(model, val_ds: GroupedDataset, group, anchor_group) -> float:
    """Absolute gap between the group's and the anchor's intra-class cosine."""
    emb = embed_dataset(model, val_ds)
    centers = identity_centers_from_arrays(emb, val_ds.identity_ids, val_ds.n_identities)
    _, d_g = intra_stats_from_arrays(emb, val_ds.identity_ids, val_ds.group_ids,
                                     group, centers)
    _, d_anchor = intra_stats_from_arrays(emb, val_ds.identity_ids, val_ds.group_ids,
                                          anchor_group, centers)
    return abs(d_g - d_anchor)


def skew_pair(model, val_ds: GroupedDataset, group, anchor_group):
    """(inter skew, intra skew) for one group in a single embedding pass."""
    emb = embed_dataset(model, val_ds)
    centers = identity_centers_from_arrays(emb, val_ds.identity_ids, val_ds.n_identities)
    args = (emb, val_ds.identity_ids, val_ds.group_ids)
    _, inter_g = inter_stats_from_arrays(*args, group, centers)
    _, inter_anchor = inter_stats_from_arrays(*args, anchor_group, centers)
    _, intra_g = intra_stats_from_arrays(*args, group, centers)
    _, intra_anchor = intra_stats_from_arrays(*args, anchor_group, centers)
    return abs(inter_g - inter_anchor), abs(intra_g - intra_anchor)


def skew_pairs_all_groups(model, val_ds: GroupedDataset, anchor_group):
    """{group: (inter skew, intra skew)} for every non-anchor group."""
    emb = embed_dataset(model, val_ds)
    centers = identity_centers_from_arrays(emb, val_ds.identity_ids, val_ds.n_identities)
    args = (emb, val_ds.identity_ids, val_ds.group_ids)
    inter = {g: inter_stats_from_arrays(*args, g, centers)[1] for g in range(val_ds.n_groups)}
    intra = {g: intra_stats_from_arrays(*args, g, centers)[1] for g in range(val_ds.n_groups)}
    return {
        g: (abs(inter[g] - inter[anchor_group]), abs(intra[g] - intra[anchor_group]))
        for g in range(val_ds.n_groups) if g != anchor_group
    }


def reward(prev, curr) -> float:
    """Improvement of total negative skewness between two measurements.

    Both arguments are ``(inter_skew, intra_skew)`` pairs; positive reward
    means the total skew went down.
    """
    prev_total = -(prev[0] + prev[1])
    curr_total = -(curr[0] + curr[1])
    return curr_total - prev_total


def pair_similarities(model, pairs):
    """Cosine similarity of each pair's two embeddings."""
    a = model.embed_batch(np.stack([p.sample_a.features for p in pairs]))
    b = model.embed_batch(np.stack([p.sample_b.features for p in pairs]))
    return np.sum(a * b, axis=1)


def best_threshold_accuracy(similarities, labels):
    """Best accuracy over all thresholds and both orientations.

    Candidate cuts are the midpoints between consecutive sorted
    similarities plus the two extremes; the better of "above the cut is
    positive" and its flip is taken, so relabeling leaves the result
    unchanged.  Returns ``(accuracy, threshold)``.
    """
    similarities = np.asarray(similarities, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n = len(labels)
    if n == 0:
        raise ConfigurationError("no pairs to score")
    order = np.argsort(similarities, kind="stable")
    sorted_sims = similarities[order]
    sorted_labels = labels[order]
    # correct_above[k] = hits when the first k sorted pairs predict negative
    pos_prefix = np.concatenate([[0], np.cumsum(sorted_labels)])
    total_pos = pos_prefix[-1]
    ks = np.arange(n + 1)
    correct_above = (total_pos - pos_prefix) + (ks - pos_prefix)
    correct = np.maximum(correct_above, n - correct_above)
    # a cut inside a run of equal similarities is not realizable by any threshold
    realizable = np.ones(n + 1, dtype=bool)
    realizable[1:n] = sorted_sims[:-1] < sorted_sims[1:]
    correct = np.where(realizable, correct, -1)
    best_k = int(np.argmax(correct))
    if best_k == 0:
        threshold = sorted_sims[0] - 1.0
    elif best_k == n:
        threshold = sorted_sims[-1] + 1.0
    else:
        threshold = 0.5 * (sorted_sims[best_k - 1] + sorted_sims[best_k])
    return float(correct[best_k]) / n, float(threshold)


def verification_accuracy(model, pairs, per_group=True):
    """Best-threshold accuracy, with one threshold per group by default.

    Returns ``{group: accuracy}`` when ``per_group`` is true, else a single
    pooled accuracy.
    """
    if not pairs:
        raise ConfigurationError("no verification pairs supplied")
    sims = pair_similarities(model, pairs)
    labels = np.asarray([p.same_identity for p in pairs])
    if not per_group:
        acc, _ = best_threshold_accuracy(sims, labels)
        return acc
    groups = np.asarray([p.group_id for p in pairs])
    result = {}
    for g in sorted(set(groups.tolist())):
        mask = groups == g
        if not mask.any():
            raise ConfigurationError(f"group {g} has no pairs")
        acc, _ = best_threshold_accuracy(sims[mask], labels[mask])
        result[g] = acc
    return result


def roc_points(similarities, labels):
    """(threshold, FPR, TPR) rows over all midpoint thresholds."""
    similarities = np.asarray(similarities, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(similarities, kind="stable")
    sorted_sims = similarities[order]
    sorted_labels = labels[order]
    n = len(labels)
    pos_prefix = np.concatenate([[0], np.cumsum(sorted_labels)])
    total_pos = pos_prefix[-1]
    total_neg = n - total_pos
    rows = []
    for k in range(n + 1):
        if k == 0:
            thr = sorted_sims[0] - 1.0
        elif k == n:
            thr = sorted_sims[-1] + 1.0
        elif sorted_sims[k - 1] < sorted_sims[k]:
            thr = 0.5 * (sorted_sims[k - 1] + sorted_sims[k])
        else:
            continue  # cut inside a tie: no threshold realizes it
        tp = total_pos - pos_prefix[k]
        fp = (n - k) - tp
        tpr = tp / total_pos if total_pos else 0.0
        fpr = fp / total_neg if total_neg else 0.0
        rows.append((float(thr), float(fpr), float(tpr)))
    return rows


def std_ser(per_group_accuracy):
    """Fairness criteria over per-group accuracies given as fractions.

    ``std`` is the n-1 sample standard deviation of the accuracies in
    percent; ``ser`` is the highest group error rate over the lowest.
    Raises :class:`DegenerateSerError` (carrying the std) when some group
    has zero error.
    """
    accs = [float(a) for a in per_group_accuracy]
    if len(accs) < 2:
        raise ConfigurationError("need >= 2 groups for dispersion statistics")
    if any(a < 0.0 or a > 1.0 for a in accs):
        raise ConfigurationError("accuracies must lie in [0, 1]")
    percents = [100.0 * a for a in accs]
    mean = math.fsum(percents) / len(percents)
    var = math.fsum((p - mean) ** 2 for p in percents) / (len(percents) - 1)
    std = math.sqrt(var)
    errors = [1.0 - a for a in accs]
    if min(errors) == 0.0:
        raise DegenerateSerError(std)
    return std, max(errors) / min(errors)


def build_report(per_group_accuracy, geometries=()) -> BiasReport:
    """Assemble a :class:`BiasReport`; SER becomes ``inf`` when degenerate."""
    accs = tuple(float(a) for a in per_group_accuracy)
    try:
        std, ser = std_ser(accs)
    except DegenerateSerError as exc:
        std, ser = exc.std, math.inf
    avg = math.fsum(accs) / len(accs)
    return BiasReport(accs, avg, std, ser, tuple(geometries))


def report_to_csv(report: BiasReport, group_names=None) -> str:
    """Two-line table: per-group accuracy (percent), Avg, STD, SER."""
    n = len(report.per_group_accuracy)
    names = list(group_names) if group_names else [f"group{g}" for g in range(n)]
    header = ",".join(names + ["Avg", "STD", "SER"])
    ser = "inf" if math.isinf(report.ser) else f"{report.ser:.2f}"
    row = [f"{100.0 * a:.2f}" for a in report.per_group_accuracy]
    row += [f"{100.0 * report.avg_accuracy:.2f}", f"{report.std:.2f}", ser]
    return header + "\n" + ",".join(row) + "\n"


def report_to_text(report: BiasReport, group_names=None) -> str:
    """Readable summary with full-precision values and geometry."""
    n = len(report.per_group_accuracy)
    names = list(group_names) if group_names else [f"group{g}" for g in range(n)]
    lines = ["verification accuracy:"]
    for name, acc in zip(names, report.per_group_accuracy):
        lines.append(f"  {name}: {repr(acc)}")
    lines.append(f"avg: {repr(report.avg_accuracy)}")
    lines.append(f"std_percent: {repr(report.std)}")
    lines.append(f"ser: {repr(report.ser)}")
    if report.per_group_geometry:
        lines.append("geometry (theta_intra, theta_inter, d_intra, d_inter):")
        for geo in report.per_group_geometry:
            lines.append(
                f"  group{geo.group_id}: {repr(geo.theta_intra)} {repr(geo.theta_inter)} "
                f"{repr(geo.d_intra)} {repr(geo.d_inter)} (n={geo.n_identities_used})"
            )
    return "\n".join(lines) + "\n"
