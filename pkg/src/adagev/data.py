"""Sample pools, the known/unknown class-role protocol, and batch draws.

Raw labeled samples come from either a synthetic domain-shift generator
(Gaussian blobs on a circle, rotated and translated in the target
domain) or IDX-format image files. A role split partitions class ids
into known classes (re-indexed 0..K-1), source-unknown classes, and
target-unknown classes; applying it yields the three pools the training
loop draws from. Target ground-truth roles are kept out of every
trainer-visible accessor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

EXPORT_HEADER = "adagev-blobs v1"
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
UNKNOWN_ROLE = -1


class DataError(ValueError):
    """Malformed dataset files or inconsistent role configuration."""


@dataclass(frozen=True)
class RoleSplit:
    """Partition of class ids into known / source-unknown / target-unknown."""

    known: tuple[int, ...]
    source_unknown: tuple[int, ...] = ()
    target_unknown: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.known:
            raise DataError("known class list must be nonempty")
        pools = [set(self.known), set(self.source_unknown), set(self.target_unknown)]
        total = sum(len(p) for p in pools)
        if len(set().union(*pools)) != total:
            raise DataError("role class lists must be pairwise disjoint")

    @property
    def num_known(self) -> int:
        return len(self.known)


def digits_split() -> RoleSplit:
    """The conventional digits protocol: 0-3 known, 4-6 source unknown, 7-9 target unknown."""
    return RoleSplit(known=(0, 1, 2, 3), source_unknown=(4, 5, 6), target_unknown=(7, 8, 9))


@dataclass
class DomainBatch:
    """One training draw: B labeled source-known rows, B source-unknown rows,
    B target rows, plus an optional auxiliary target batch for the
    fresh-batch/combined partition-function estimates."""

    source_x: np.ndarray
    source_y: np.ndarray
    unknown_x: np.ndarray
    target_x: np.ndarray
    target_aux_x: np.ndarray | None = None


@dataclass
class DatasetPool:
    """The three sample pools after role assignment.

    Target roles (known-class label or UNKNOWN_ROLE) are held in a
    private field; only the evaluator should call eval_target_roles().
    """

    source_known_x: np.ndarray
    source_known_y: np.ndarray
    source_unknown_x: np.ndarray
    target_x: np.ndarray
    _target_roles: np.ndarray = field(repr=False, default=None)

    @property
    def feature_dim(self) -> int:
        return self.source_known_x.shape[1]

    def eval_target_roles(self) -> np.ndarray:
        """Ground-truth target roles, for evaluation only."""
        return self._target_roles.copy()


@dataclass(frozen=True)
class BlobShiftConfig:
    """Synthetic benchmark: Gaussian classes on a radius-3 circle; the
    target domain sees the class means rotated and translated."""

    class_count: int = 10
    dim: int = 2
    cluster_std: float = 0.35
    rotation: float = np.deg2rad(25.0)
    translation: tuple[float, ...] = (0.3, -0.2)
    source_per_class: int = 200
    target_per_class: int = 150
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 1 or self.dim < 2:
            raise DataError("need class_count >= 1 and dim >= 2")
        if self.cluster_std <= 0:
            raise DataError("cluster_std must be positive")
        if self.source_per_class < 1 or self.target_per_class < 1:
            raise DataError("per-class counts must be positive")
        if len(self.translation) != 2:
            raise DataError("translation applies to the circle plane, give 2 components")


def _class_means(cfg: BlobShiftConfig) -> np.ndarray:
    angles = 2 * np.pi * np.arange(cfg.class_count) / cfg.class_count
    means = np.zeros((cfg.class_count, cfg.dim))
    means[:, 0] = 3.0 * np.cos(angles)
    means[:, 1] = 3.0 * np.sin(angles)
    return means


def gen_shifted_blobs(cfg: BlobShiftConfig):
    """Returns (source_x, source_y, target_x, target_y), deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    means = _class_means(cfg)
    cos, sin = np.cos(cfg.rotation), np.sin(cfg.rotation)
    shifted = means.copy()
    shifted[:, 0] = cos * means[:, 0] - sin * means[:, 1] + cfg.translation[0]
    shifted[:, 1] = sin * means[:, 0] + cos * means[:, 1] + cfg.translation[1]

    def draw(centers, per_class):
        xs, ys = [], []
        for c in range(cfg.class_count):
            xs.append(centers[c] + cfg.cluster_std * rng.standard_normal((per_class, cfg.dim)))
            ys.append(np.full(per_class, c, dtype=np.int64))
        return np.concatenate(xs), np.concatenate(ys)

    src_x, src_y = draw(means, cfg.source_per_class)
    tgt_x, tgt_y = draw(shifted, cfg.target_per_class)
    return src_x, src_y, tgt_x, tgt_y


def save_blobs(path, source_x, source_y, target_x, target_y) -> None:
    """CSV export: header line, then 'domain,class,feat0,feat1,...' rows."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(EXPORT_HEADER + "\n")
        for domain, x, y in (("source", source_x, source_y), ("target", target_x, target_y)):
            for row, label in zip(x, y):
                feats = ",".join(repr(float(v)) for v in row)
                f.write(f"{domain},{int(label)},{feats}\n")


def load_blobs(path):
    """Inverse of save_blobs; returns (source_x, source_y, target_x, target_y)."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != EXPORT_HEADER:
            raise DataError(f"{path}: bad header {header!r}")
        rows = {"source": ([], []), "target": ([], [])}
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3 or parts[0] not in rows:
                raise DataError(f"{path}:{lineno}: malformed row")
            try:
                rows[parts[0]][0].append([float(v) for v in parts[2:]])
                rows[parts[0]][1].append(int(parts[1]))
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e
    out = []
    for domain in ("source", "target"):
        xs, ys = rows[domain]
        if not xs:
            raise DataError(f"{path}: no {domain} rows")
        out.extend([np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.int64)])
    return tuple(out)


def _read_idx(path, expected_magic, expected_ndim):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 * (1 + expected_ndim):
        raise DataError(f"{path}: truncated header")
    magic = struct.unpack_from(">I", data, 0)[0]
    if magic != expected_magic:
        raise DataError(f"{path}: bad magic {magic:#010x}, expected {expected_magic:#010x}")
    dims = struct.unpack_from(f">{expected_ndim}I", data, 4)
    payload = data[4 * (1 + expected_ndim):]
    count = int(np.prod(dims))
    if len(payload) < count:
        raise DataError(f"{path}: truncated payload ({len(payload)} bytes, need {count})")
    return dims, np.frombuffer(payload[:count], dtype=np.uint8)


def load_idx(images_path, labels_path):
    """IDX image/label pair -> (samples scaled to [0,1] and flattened, labels)."""
    img_dims, img_raw = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    lbl_dims, lbl_raw = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    n, rows, cols = img_dims
    if lbl_dims[0] != n:
        raise DataError(
            f"label count {lbl_dims[0]} != image count {n}"
        )
    x = img_raw.astype(np.float64).reshape(n, rows * cols) / 255.0
    return x, lbl_raw.astype(np.int64)


def apply_roles(source_x, source_y, target_x, target_y, rs: RoleSplit) -> DatasetPool:
    """Assign pools per the protocol.

    Source: known-class samples keep labels re-indexed by position in the
    known list; source-unknown samples drop their labels; target-unknown
    class samples are dropped. Target: known and target-unknown class
    samples are retained (with hidden roles); source-unknown class
    samples are dropped.
    """
    source_y = np.asarray(source_y, dtype=np.int64)
    target_y = np.asarray(target_y, dtype=np.int64)
    src_classes, tgt_classes = set(source_y.tolist()), set(target_y.tolist())
    for c in rs.known:
        if c not in src_classes or c not in tgt_classes:
            raise DataError(f"known class {c} missing from source or target")
    for c in rs.source_unknown:
        if c not in src_classes:
            raise DataError(f"source-unknown class {c} missing from source")
    for c in rs.target_unknown:
        if c not in tgt_classes:
            raise DataError(f"target-unknown class {c} missing from target")

    reindex = {c: i for i, c in enumerate(rs.known)}
    known_mask = np.isin(source_y, rs.known)
    unknown_mask = np.isin(source_y, rs.source_unknown)
    source_known_x = np.asarray(source_x)[known_mask]
    source_known_y = np.array([reindex[c] for c in source_y[known_mask]], dtype=np.int64)

    tgt_keep = np.isin(target_y, rs.known) | np.isin(target_y, rs.target_unknown)
    kept_y = target_y[tgt_keep]
    roles = np.array([reindex.get(c, UNKNOWN_ROLE) for c in kept_y], dtype=np.int64)
    return DatasetPool(
        source_known_x=source_known_x,
        source_known_y=source_known_y,
        source_unknown_x=np.asarray(source_x)[unknown_mask],
        target_x=np.asarray(target_x)[tgt_keep],
        _target_roles=roles,
    )


def sample_batch_triple(pool: DatasetPool, batch_size: int, rng: np.random.Generator,
                        with_aux: bool = False) -> DomainBatch:
    """Three independent uniform draws with replacement, each of size B."""
    for name, arr in (("source_known", pool.source_known_x),
                      ("source_unknown", pool.source_unknown_x),
                      ("target", pool.target_x)):
        if len(arr) < 1:
            raise DataError(f"{name} pool is empty")
    i_s = rng.integers(0, len(pool.source_known_x), size=batch_size)
    i_u = rng.integers(0, len(pool.source_unknown_x), size=batch_size)
    i_t = rng.integers(0, len(pool.target_x), size=batch_size)
    aux = None
    if with_aux:
        aux = pool.target_x[rng.integers(0, len(pool.target_x), size=batch_size)]
    return DomainBatch(
        source_x=pool.source_known_x[i_s],
        source_y=pool.source_known_y[i_s],
        unknown_x=pool.source_unknown_x[i_u],
        target_x=pool.target_x[i_t],
        target_aux_x=aux,
    )
