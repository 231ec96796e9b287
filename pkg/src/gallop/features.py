"""Precomputed vision features: on-disk format, validation, synthetic data.

File format (little-endian, magic ``GLFv1\\0``):

    magic[6] | u32 d | u32 L | u32 num_classes | u64 num_records
    num_classes * (u16 name_len | utf-8 name)
    per record: u32 label | d f32 (global vector) | L*d f32 (locals, row-major)

Features are stored float32 and L2-normalized, so cosine similarity reduces
to a dot product everywhere downstream. Datasets are immutable after load.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError, TruncatedFileError

MAGIC = b"GLFv1\x00"

# Global vectors off unit norm by more than this are corrupt; smaller
# deviations (float32 export rounding) are silently renormalized.
_NORM_REJECT = 1e-3
_NORM_OK = 1e-5


@dataclass
class FeatureRecord:
    """One image: class label, global vector z_g (d,), local matrix Z_l (L, d)."""

    label: int
    z_g: np.ndarray
    z_l: np.ndarray

    def validate(self, num_classes, index=None):
        if not (0 <= self.label < num_classes):
            raise DataError(
                f"record {index}: label {self.label} out of range [0, {num_classes})",
                record_index=index,
            )
        if not (np.isfinite(self.z_g).all() and np.isfinite(self.z_l).all()):
            raise DataError(f"record {index}: non-finite feature value", record_index=index)
        norm = float(np.linalg.norm(self.z_g.astype(np.float64)))
        if abs(norm - 1.0) > _NORM_OK:
            raise DataError(
                f"record {index}: global vector norm {norm:.6g} is not unit",
                record_index=index,
            )


@dataclass
class FeatureDataset:
    """Ordered collection of records sharing dimensions and a class table."""

    num_classes: int
    class_names: list
    d: int
    L: int
    records: list = field(default_factory=list)

    def validate(self):
        if len(self.class_names) != self.num_classes:
            raise DataError(
                f"class table has {len(self.class_names)} names for {self.num_classes} classes"
            )
        if len(set(self.class_names)) != self.num_classes or any(
            not n for n in self.class_names
        ):
            raise DataError("class names must be non-empty and unique")
        if self.d < 1 or self.L < 1:
            raise DataError(f"dimensions d={self.d}, L={self.L} must be >= 1")
        for i, rec in enumerate(self.records):
            if rec.z_g.shape != (self.d,) or rec.z_l.shape != (self.L, self.d):
                raise DataError(
                    f"record {i}: shape mismatch with dataset dims (d={self.d}, L={self.L})",
                    record_index=i,
                )
            rec.validate(self.num_classes, index=i)

    def __len__(self):
        return len(self.records)

    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    def global_matrix(self):
        """(N, d) float64 stack of global vectors."""
        if not self.records:
            return np.zeros((0, self.d), dtype=np.float64)
        return np.stack([r.z_g for r in self.records]).astype(np.float64)

    def local_tensor(self):
        """(N, L, d) float64 stack of local feature matrices."""
        if not self.records:
            return np.zeros((0, self.L, self.d), dtype=np.float64)
        return np.stack([r.z_l for r in self.records]).astype(np.float64)


@dataclass
class SynthSpec:
    """Synthetic dataset recipe: planted class-direction patches in noise."""

    num_classes: int
    shots_per_class: int
    d: int
    L: int
    planted_patches_per_image: int
    noise_sigma: float
    seed: int
    # Test splits default to the train split size; spec'd separately so
    # accuracy comparisons can use more resolution than the few-shot train set.
    test_shots_per_class: int = None

    def __post_init__(self):
        if self.test_shots_per_class is None:
            self.test_shots_per_class = self.shots_per_class
        if self.planted_patches_per_image > self.L:
            raise ConfigError(
                f"planted_patches_per_image {self.planted_patches_per_image} exceeds L={self.L}"
            )
        if self.shots_per_class < 1:
            raise ConfigError("shots_per_class must be >= 1")
        if self.planted_patches_per_image < 0 or self.noise_sigma < 0:
            raise ConfigError("planted patch count and noise sigma must be nonnegative")
        if self.d < 2 and self.num_classes >= 2:
            raise ConfigError(
                f"d={self.d} cannot host {self.num_classes} distinguishable class directions"
            )


def write_dataset(dataset, path):
    """Serialize a dataset; the file round-trips through read_dataset bit-exactly."""
    dataset.validate()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(
            struct.pack(
                "<IIIQ", dataset.d, dataset.L, dataset.num_classes, len(dataset.records)
            )
        )
        for name in dataset.class_names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        for rec in dataset.records:
            f.write(struct.pack("<I", rec.label))
            f.write(np.ascontiguousarray(rec.z_g, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(rec.z_l, dtype="<f4").tobytes())


def _read_exact(f, n, what, record_index=None):
    buf = f.read(n)
    if len(buf) != n:
        if record_index is not None:
            raise TruncatedFileError(
                f"file truncated at record {record_index} while reading {what}",
                record_index=record_index,
            )
        raise FormatError(f"file truncated while reading {what}", field=what)
    return buf


def read_dataset(path):
    """Load and validate a feature file written by write_dataset (or the exporter)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", field="magic")
        d, L, num_classes, num_records = struct.unpack(
            "<IIIQ", _read_exact(f, 20, "header")
        )
        if d < 1:
            raise FormatError(f"header field d={d} must be >= 1", field="d")
        if L < 1:
            raise FormatError(f"header field L={L} must be >= 1", field="L")
        if num_classes < 1:
            raise FormatError(
                f"header field num_classes={num_classes} must be >= 1", field="num_classes"
            )
        names = []
        for i in range(num_classes):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, f"class name {i} length"))
            names.append(_read_exact(f, name_len, f"class name {i}").decode("utf-8"))

        rec_bytes = 4 + 4 * d + 4 * L * d
        records = []
        for i in range(num_records):
            buf = _read_exact(f, rec_bytes, "record body", record_index=i)
            (label,) = struct.unpack_from("<I", buf, 0)
            flat = np.frombuffer(buf, dtype="<f4", count=d + L * d, offset=4)
            z_g = flat[:d].copy()
            z_l = flat[d:].reshape(L, d).copy()
            if not (np.isfinite(z_g).all() and np.isfinite(z_l).all()):
                raise DataError(f"record {i}: non-finite feature value", record_index=i)
            if label >= num_classes:
                raise DataError(
                    f"record {i}: label {label} out of range [0, {num_classes})",
                    record_index=i,
                )
            norm = float(np.linalg.norm(z_g.astype(np.float64)))
            if abs(norm - 1.0) > _NORM_REJECT:
                raise DataError(
                    f"record {i}: global vector norm {norm:.6g} off unit by more than "
                    f"{_NORM_REJECT}",
                    record_index=i,
                )
            if abs(norm - 1.0) > _NORM_OK:
                z_g = (z_g.astype(np.float64) / norm).astype(np.float32)
            records.append(FeatureRecord(label=int(label), z_g=z_g, z_l=z_l))
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after final record", field="num_records")

    dataset = FeatureDataset(
        num_classes=int(num_classes), class_names=names, d=int(d), L=int(L), records=records
    )
    dataset.validate()
    return dataset


def _unit(v):
    return v / np.linalg.norm(v)


def _class_directions(rng, num_classes, d):
    raw = rng.standard_normal((num_classes, d))
    if d >= num_classes:
        q, _ = np.linalg.qr(raw.T)
        return q.T[:num_classes]
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _make_record(rng, direction, L, planted, sigma, d, label):
    z_l = np.empty((L, d))
    positions = rng.choice(L, size=planted, replace=False)
    planted_rows = direction + rng.normal(0.0, sigma, size=(planted, d))
    planted_rows /= np.linalg.norm(planted_rows, axis=1, keepdims=True)
    noise = rng.standard_normal((L - planted, d))
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    mask = np.zeros(L, dtype=bool)
    mask[positions] = True
    z_l[mask] = planted_rows
    z_l[~mask] = noise
    if planted:
        z_g = _unit(planted_rows.mean(axis=0) + rng.normal(0.0, sigma, size=d))
    else:
        z_g = _unit(rng.standard_normal(d))
    return FeatureRecord(
        label=label, z_g=z_g.astype(np.float32), z_l=z_l.astype(np.float32)
    )


def generate_synthetic(spec):
    """Build (train, test_id, test_ood) datasets from a SynthSpec.

    Each in-distribution image of class c plants ``planted_patches_per_image``
    rows of normalize(mu_c + noise) among rows of class-independent unit
    noise; the global vector is the normalized mean of the planted rows plus
    noise. OOD images swap mu_c for a fresh direction orthogonal to all class
    directions (exactly orthogonal when d > num_classes allows it). Pure
    function of the spec: one seed, one output.
    """
    rng = np.random.default_rng(spec.seed)
    mu = _class_directions(rng, spec.num_classes, spec.d)
    names = [f"class_{c}" for c in range(spec.num_classes)]

    def id_split(shots):
        recs = []
        for c in range(spec.num_classes):
            for _ in range(shots):
                recs.append(
                    _make_record(
                        rng,
                        mu[c],
                        spec.L,
                        spec.planted_patches_per_image,
                        spec.noise_sigma,
                        spec.d,
                        label=c,
                    )
                )
        return FeatureDataset(
            num_classes=spec.num_classes,
            class_names=names,
            d=spec.d,
            L=spec.L,
            records=recs,
        )

    train = id_split(spec.shots_per_class)
    test_id = id_split(spec.test_shots_per_class)

    ood_records = []
    n_ood = spec.num_classes * spec.test_shots_per_class
    basis = mu.T  # (d, C); OOD directions are sampled in its orthogonal complement
    for _ in range(n_ood):
        g = rng.standard_normal(spec.d)
        if spec.d > spec.num_classes:
            g = g - basis @ (basis.T @ g)
        norm = np.linalg.norm(g)
        if norm < 1e-9:  # complement too small; fall back to an unconstrained direction
            g = rng.standard_normal(spec.d)
            norm = np.linalg.norm(g)
        ood_records.append(
            _make_record(
                rng,
                g / norm,
                spec.L,
                spec.planted_patches_per_image,
                spec.noise_sigma,
                spec.d,
                label=0,  # placeholder; OOD labels carry no meaning
            )
        )
    test_ood = FeatureDataset(
        num_classes=spec.num_classes,
        class_names=names,
        d=spec.d,
        L=spec.L,
        records=ood_records,
    )

    for ds in (train, test_id, test_ood):
        ds.validate()
    return train, test_id, test_ood
