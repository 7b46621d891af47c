"""Synthetic grouped datasets with controllable per-group difficulty.

Identities are partitioned into groups.  Each group has two difficulty
knobs: ``group_concentration`` controls how tightly samples cluster around
their identity center (lower = noisier = harder), and ``group_center_spread``
controls how far identity centers stray from a per-group anchor direction
(lower = centers huddle together = harder to separate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

DATASET_FORMAT = "fairmargin-dataset v1"


@dataclass(frozen=True)
class Sample:
    """One labeled input vector."""

    features: np.ndarray
    identity_id: int
    group_id: int


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for :func:`generate_synthetic`.

    ``identities_per_group``, ``group_concentration`` and
    ``group_center_spread`` are indexed by group and must all have length
    ``n_groups``.
    """

    n_groups: int
    identities_per_group: tuple[int, ...]
    samples_per_identity: int
    d_in: int
    group_concentration: tuple[float, ...]
    group_center_spread: tuple[float, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "identities_per_group", tuple(self.identities_per_group))
        object.__setattr__(self, "group_concentration", tuple(self.group_concentration))
        object.__setattr__(self, "group_center_spread", tuple(self.group_center_spread))
        self.validate()

    def validate(self):
        if self.n_groups < 1:
            raise ConfigurationError("n_groups must be >= 1")
        if self.d_in < 2:
            raise ConfigurationError("d_in must be >= 2")
        for name in ("identities_per_group", "group_concentration", "group_center_spread"):
            if len(getattr(self, name)) != self.n_groups:
                raise ConfigurationError(f"{name} must have length n_groups={self.n_groups}")
        if any(n < 1 for n in self.identities_per_group):
            raise ConfigurationError("identities_per_group entries must be >= 1")
        if self.samples_per_identity < 2:
            raise ConfigurationError("samples_per_identity must be >= 2")
        if any(c <= 0 for c in self.group_concentration):
            raise ConfigurationError("group_concentration entries must be > 0")
        if any(s <= 0 for s in self.group_center_spread):
            raise ConfigurationError("group_center_spread entries must be > 0")


class GroupedDataset:
    """Immutable collection of samples with identity and group labels.

    Feature rows are stored as one read-only ``[n_samples, d_in]`` matrix;
    ``samples`` materializes :class:`Sample` views on demand.
    """

    def __init__(self, features, identity_ids, group_ids, n_groups, validate=True):
        self.features = np.ascontiguousarray(features, dtype=np.float64)
        self.identity_ids = np.ascontiguousarray(identity_ids, dtype=np.int64)
        self.group_ids = np.ascontiguousarray(group_ids, dtype=np.int64)
        self.n_groups = int(n_groups)
        for arr in (self.features, self.identity_ids, self.group_ids):
            arr.flags.writeable = False
        self.n_identities = int(self.identity_ids.max()) + 1 if len(self.identity_ids) else 0
        self.group_of_identity = self._build_group_map()
        if validate:
            self._check_invariants()

    def _build_group_map(self):
        mapping = np.full(self.n_identities, -1, dtype=np.int64)
        for ident, group in zip(self.identity_ids, self.group_ids):
            if mapping[ident] == -1:
                mapping[ident] = group
            elif mapping[ident] != group:
                raise ConfigurationError(f"identity {ident} appears in two groups")
        mapping.flags.writeable = False
        return mapping

    def _check_invariants(self):
        if not np.all(np.isfinite(self.features)):
            raise ConfigurationError("features must be finite")
        if self.n_identities and np.any(self.group_of_identity < 0):
            missing = int(np.nonzero(self.group_of_identity < 0)[0][0])
            raise ConfigurationError(f"identity ids are not contiguous (no samples for {missing})")
        counts = np.bincount(self.identity_ids, minlength=self.n_identities)
        if self.n_identities and counts.min() < 2:
            ident = int(np.argmin(counts))
            raise ConfigurationError(f"identity {ident} has fewer than 2 samples")
        if np.any(self.group_ids < 0) or np.any(self.group_ids >= self.n_groups):
            raise ConfigurationError("group ids out of range")

    def __len__(self):
        return self.features.shape[0]

    @property
    def d_in(self):
        return self.features.shape[1]

    @property
    def samples(self):
        return [
            Sample(self.features[i], int(self.identity_ids[i]), int(self.group_ids[i]))
            for i in range(len(self))
        ]

    def identities_in_group(self, group):
        return np.nonzero(self.group_of_identity == group)[0]

    def sample_indices_of_identity(self, identity):
        return np.nonzero(self.identity_ids == identity)[0]


@dataclass(frozen=True)
class VerificationPair:
    """A within-group pair of samples to score for same-identity."""

    sample_a: Sample
    sample_b: Sample
    same_identity: bool
    group_id: int

    def __post_init__(self):
        if self.sample_a.group_id != self.group_id or self.sample_b.group_id != self.group_id:
            raise ConfigurationError("verification pairs must stay within one group")


def _unit_rows(rng, n, dim):
    vec = rng.standard_normal((n, dim))
    return vec / np.linalg.norm(vec, axis=1, keepdims=True)


def generate_synthetic(spec: DatasetSpec) -> GroupedDataset:
    """Draw a grouped dataset on the unit hypersphere.

    Per group: an anchor direction, identity centers interpolated between
    the anchor and uniformly random directions by ``group_center_spread``,
    then ``samples_per_identity`` noisy copies of each center with noise
    scale ``1/sqrt(group_concentration)``.  Deterministic for a fixed seed.
    """
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    feats, idents, groups = [], [], []
    next_identity = 0
    for g in range(spec.n_groups):
        n_ids = spec.identities_per_group[g]
        spread = spec.group_center_spread[g]
        noise_scale = 1.0 / np.sqrt(spec.group_concentration[g])
        anchor = _unit_rows(rng, 1, spec.d_in)[0]
        raw = _unit_rows(rng, n_ids, spec.d_in)
        centers = anchor + spread * (raw - anchor)
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        for local in range(n_ids):
            noise = rng.standard_normal((spec.samples_per_identity, spec.d_in))
            points = centers[local] + noise_scale * noise
            points /= np.linalg.norm(points, axis=1, keepdims=True)
            feats.append(points)
            idents.extend([next_identity] * spec.samples_per_identity)
            groups.extend([g] * spec.samples_per_identity)
            next_identity += 1
    return GroupedDataset(
        np.concatenate(feats, axis=0),
        np.asarray(idents),
        np.asarray(groups),
        spec.n_groups,
    )


def _subset_by_identities(ds: GroupedDataset, keep: np.ndarray) -> GroupedDataset:
    """Restrict to the given identities, remapping ids to stay contiguous."""
    keep = np.sort(np.asarray(keep, dtype=np.int64))
    remap = np.full(ds.n_identities, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    mask = np.isin(ds.identity_ids, keep)
    return GroupedDataset(
        ds.features[mask].copy(),
        remap[ds.identity_ids[mask]],
        ds.group_ids[mask].copy(),
        ds.n_groups,
        validate=False,
    )


def split_train_val(ds: GroupedDataset, val_identities_per_group: int, seed: int):
    """Split off ``val_identities_per_group`` identities per group.

    Returns ``(train, val)`` with disjoint identity sets; both keep the
    full group count.  Identity ids are remapped to be contiguous within
    each output.
    """
    if val_identities_per_group < 0:
        raise ConfigurationError("val_identities_per_group must be >= 0")
    if val_identities_per_group == 0:
        return ds, GroupedDataset(
            np.empty((0, ds.d_in)), np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64), ds.n_groups, validate=False,
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    val_ids = []
    for g in range(ds.n_groups):
        members = ds.identities_in_group(g)
        if len(members) <= val_identities_per_group:
            raise ConfigurationError(
                f"group {g} has {len(members)} identities, "
                f"cannot hold out {val_identities_per_group}"
            )
        chosen = rng.choice(members, size=val_identities_per_group, replace=False)
        val_ids.extend(chosen.tolist())
    val_ids = np.asarray(val_ids, dtype=np.int64)
    train_ids = np.setdiff1d(np.arange(ds.n_identities), val_ids)
    return _subset_by_identities(ds, train_ids), _subset_by_identities(ds, val_ids)


def make_verification_pair_indices(ds: GroupedDataset, pairs_per_group: int, seed: int):
    """Index form of :func:`make_verification_pairs`.

    Returns rows ``(sample_index_a, sample_index_b, same_identity, group)``.
    """
    if pairs_per_group % 2 != 0:
        raise ConfigurationError("pairs_per_group must be even")
    half = pairs_per_group // 2
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    for g in range(ds.n_groups):
        members = ds.identities_in_group(g)
        if len(members) < 2:
            raise ConfigurationError(f"group {g} needs >= 2 identities for negative pairs")
        positives, negatives = [], []
        index_sets = [ds.sample_indices_of_identity(i) for i in members]
        for idx in index_sets:
            for a in range(len(idx)):
                for b in range(a + 1, len(idx)):
                    positives.append((idx[a], idx[b]))
        for ia in range(len(members)):
            for ib in range(ia + 1, len(members)):
                for a in index_sets[ia]:
                    for b in index_sets[ib]:
                        negatives.append((a, b))
        if len(positives) < half or len(negatives) < half:
            raise ConfigurationError(
                f"group {g} has only {len(positives)} positive / {len(negatives)} "
                f"negative unique pairs; {half} of each requested"
            )
        for pool, same in ((positives, True), (negatives, False)):
            chosen = rng.choice(len(pool), size=half, replace=False)
            for k in sorted(chosen.tolist()):
                a, b = pool[k]
                rows.append((int(a), int(b), same, g))
    return rows


def pairs_from_indices(ds: GroupedDataset, rows):
    samples = ds.samples
    return [VerificationPair(samples[a], samples[b], same, g)
            for a, b, same, g in rows]


def make_verification_pairs(ds: GroupedDataset, pairs_per_group: int, seed: int):
    """Sample balanced same/different identity pairs inside each group.

    Half the pairs share an identity, half do not; all pairs stay within
    one group and no unordered pair repeats.  Raises if a group cannot
    supply the requested counts without duplication.
    """
    return pairs_from_indices(ds, make_verification_pair_indices(ds, pairs_per_group, seed))


PAIRS_FORMAT = "fairmargin-pairs v1"


def save_pair_indices(rows, path):
    """One pair per line: sample indices, same-identity flag, group."""
    lines = [f"#{PAIRS_FORMAT}"]
    for a, b, same, g in rows:
        lines.append(f"{a} {b} {int(same)} {g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pair_indices(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines[0] != f"#{PAIRS_FORMAT}":
        raise ConfigurationError(f"unrecognized pairs header: {lines[0]!r}")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        a, b, same, g = line.split()
        rows.append((int(a), int(b), bool(int(same)), int(g)))
    return rows


def save_dataset(ds: GroupedDataset, path):
    """Write one sample per line: identity, group, then the feature values."""
    lines = [f"#{DATASET_FORMAT} n_groups={ds.n_groups} d_in={ds.d_in}"]
    for i in range(len(ds)):
        coords = " ".join(repr(float(v)) for v in ds.features[i])
        lines.append(f"{int(ds.identity_ids[i])} {int(ds.group_ids[i])} {coords}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path, validate=True) -> GroupedDataset:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith(f"#{DATASET_FORMAT}"):
            raise ConfigurationError(f"unrecognized dataset header: {header!r}")
        meta = dict(kv.split("=") for kv in header.split()[2:])
        n_groups, d_in = int(meta["n_groups"]), int(meta["d_in"])
        idents, groups, feats = [], [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            idents.append(int(parts[0]))
            groups.append(int(parts[1]))
            row = [float(v) for v in parts[2:]]
            if len(row) != d_in:
                raise ConfigurationError("feature row length does not match header d_in")
            feats.append(row)
    features = np.asarray(feats, dtype=np.float64).reshape(len(idents), d_in)
    return GroupedDataset(features, np.asarray(idents), np.asarray(groups), n_groups,
                          validate=validate)
