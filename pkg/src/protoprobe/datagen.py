"""Synthetic datasets for category discovery and their on-disk format.

Real image benchmarks are out of reach at desk scale, so experiments run
on Gaussian mixtures: class means drawn on a sphere (homogeneous pairwise
separations, so the merge/fragment regime of the clustering stage is
controlled by a single sep/noise ratio), points = mean + isotropic noise.
The labelled/unlabelled split follows the usual discovery protocol: a
fraction of classes is "old", a fraction of each old class is labelled,
everything else (rest of old + all new classes) is unlabelled.

Vector augmentation stands in for image augmentation: additive Gaussian
noise plus independent coordinate dropout, then L2 normalization.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DatasetFormatError,
    DegenerateInputError,
    ParameterError,
    SplitError,
)

_MAGIC = "gcd-dataset v1"
_DROPOUT_RETRIES = 16


@dataclass(frozen=True)
class GcdDataset:
    """Labelled/unlabelled split with hidden ground truth.

    ``unlabelled_hidden_y`` is never shown to training; it exists for
    evaluation only.
    """

    labelled_x: np.ndarray
    labelled_y: np.ndarray
    unlabelled_x: np.ndarray
    unlabelled_hidden_y: np.ndarray
    old_classes: tuple
    all_classes: tuple
    dim: int

    def __post_init__(self):
        old = set(self.old_classes)
        every = set(self.all_classes)
        if not old <= every:
            raise DatasetFormatError("old classes are not a subset of all classes")
        if self.labelled_x.shape[1] != self.dim or self.unlabelled_x.shape[1] != self.dim:
            raise DatasetFormatError("feature dimension mismatch")
        if len(self.labelled_x) != len(self.labelled_y):
            raise DatasetFormatError("labelled features/labels length mismatch")
        if len(self.unlabelled_x) != len(self.unlabelled_hidden_y):
            raise DatasetFormatError("unlabelled features/labels length mismatch")
        if not set(np.unique(self.labelled_y)) <= old:
            raise DatasetFormatError("a labelled instance carries a non-old class id")
        if not set(np.unique(self.unlabelled_hidden_y)) <= every:
            raise DatasetFormatError("an unlabelled instance carries an unknown class id")

    @property
    def num_labelled(self):
        return len(self.labelled_x)

    @property
    def num_unlabelled(self):
        return len(self.unlabelled_x)

    @property
    def new_classes(self):
        return tuple(c for c in self.all_classes if c not in set(self.old_classes))


@dataclass(frozen=True)
class ViewPair:
    """Two augmentation views of one source vector, both unit-norm."""

    view1: np.ndarray
    view2: np.ndarray
    source_index: int


def generate_mixture(num_classes, dim, per_class, class_sep, noise_sd, seed):
    """Sample a spherical Gaussian mixture.

    Class means are uniform directions scaled to radius ``class_sep``;
    points are mean + N(0, noise_sd^2 I). Returns ``(points, labels)``.
    """
    if num_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {num_classes}")
    if dim < 2:
        raise ParameterError(f"need dim >= 2, got {dim}")
    if per_class < 1:
        raise ParameterError(f"need at least one point per class, got {per_class}")
    if class_sep <= 0:
        raise ParameterError(f"class_sep must be > 0, got {class_sep}")
    if noise_sd < 0:
        raise ParameterError(f"noise_sd must be >= 0, got {noise_sd}")

    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= class_sep

    points = np.repeat(means, per_class, axis=0)
    if noise_sd > 0:
        points = points + rng.normal(scale=noise_sd, size=points.shape)
    labels = np.repeat(np.arange(num_classes), per_class)
    return points, labels


def split_gcd(points, old_fraction, labelled_fraction, seed):
    """Partition a labelled point set into the discovery layout.

    The first ``ceil(old_fraction * num_classes)`` classes (in sorted id
    order) become old; ``labelled_fraction`` of each old class's points
    (seeded shuffle, count rounded, clamped so both sides stay non-empty)
    go to the labelled set. Everything else is unlabelled.
    """
    if not 0 < old_fraction <= 1:
        raise ParameterError(f"old_fraction must be in (0, 1], got {old_fraction}")
    if not 0 < labelled_fraction < 1:
        raise ParameterError(
            f"labelled_fraction must be in (0, 1), got {labelled_fraction}"
        )
    x, y = points
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    classes = sorted(int(c) for c in np.unique(y))
    n_old = int(np.ceil(old_fraction * len(classes)))
    old = classes[:n_old]

    rng = np.random.default_rng(seed)
    lab_idx = []
    unlab_idx = []
    for c in classes:
        members = np.flatnonzero(y == c)
        if c in old:
            if len(members) < 2:
                raise SplitError(
                    f"class {c} has {len(members)} point(s); the labelled split "
                    "needs at least one point on each side"
                )
            n_lab = int(np.floor(labelled_fraction * len(members) + 0.5))
            n_lab = min(max(n_lab, 1), len(members) - 1)
            perm = rng.permutation(members)
            lab_idx.extend(perm[:n_lab])
            unlab_idx.extend(perm[n_lab:])
        else:
            unlab_idx.extend(members)

    lab_idx = np.array(sorted(lab_idx), dtype=int)
    unlab_idx = np.array(sorted(unlab_idx), dtype=int)
    return GcdDataset(
        labelled_x=x[lab_idx],
        labelled_y=y[lab_idx].astype(int),
        unlabelled_x=x[unlab_idx],
        unlabelled_hidden_y=y[unlab_idx].astype(int),
        old_classes=tuple(old),
        all_classes=tuple(classes),
        dim=x.shape[1],
    )


def _one_view(x, aug_noise_sd, dropout_p, rng):
    for _ in range(_DROPOUT_RETRIES):
        v = x + rng.normal(scale=aug_noise_sd, size=x.shape) if aug_noise_sd > 0 else x.copy()
        if dropout_p > 0:
            v = v * (rng.random(x.shape) >= dropout_p)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm
        if dropout_p == 0:
            break
    raise DegenerateInputError(
        "augmentation produced a near-zero vector after retries"
    )


def augment(x, aug_noise_sd, dropout_p, seed_tuple):
    """Produce a deterministic pair of augmentation views of ``x``.

    ``seed_tuple`` identifies the draw, e.g. (run seed, epoch, index); the
    two views use distinct sub-streams of it.
    """
    if not 0 <= dropout_p < 1:
        raise ParameterError(f"dropout_p must be in [0, 1), got {dropout_p}")
    if aug_noise_sd < 0:
        raise ParameterError(f"aug_noise_sd must be >= 0, got {aug_noise_sd}")
    x = np.asarray(x, dtype=np.float64)
    seed_tuple = tuple(int(s) for s in seed_tuple)
    rng1 = np.random.default_rng(np.random.SeedSequence(seed_tuple + (1,)))
    rng2 = np.random.default_rng(np.random.SeedSequence(seed_tuple + (2,)))
    index = seed_tuple[-1] if seed_tuple else 0
    return ViewPair(
        view1=_one_view(x, aug_noise_sd, dropout_p, rng1),
        view2=_one_view(x, aug_noise_sd, dropout_p, rng2),
        source_index=index,
    )


def _format_row(prefix, class_id, vec):
    coords = " ".join(repr(float(v)) for v in vec)
    return f"{prefix} {int(class_id)} {coords}\n"


def save_dataset(dataset, path):
    """Write the self-describing text format (see README).

    Floats are written with shortest round-trip repr, so load(save(d))
    reproduces the numeric payload bit-exactly.
    """
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"dim {dataset.dim}\n")
        fh.write("old_classes " + " ".join(str(c) for c in dataset.old_classes) + "\n")
        fh.write("all_classes " + " ".join(str(c) for c in dataset.all_classes) + "\n")
        fh.write(f"labelled {dataset.num_labelled}\n")
        fh.write(f"unlabelled {dataset.num_unlabelled}\n")
        for vec, c in zip(dataset.labelled_x, dataset.labelled_y):
            fh.write(_format_row("L", c, vec))
        for vec, c in zip(dataset.unlabelled_x, dataset.unlabelled_hidden_y):
            fh.write(_format_row("U", c, vec))


def _parse_header_line(lines, lineno, key):
    if lineno > len(lines):
        raise DatasetFormatError(f"missing header field {key!r}", line=lineno)
    parts = lines[lineno - 1].split()
    if not parts or parts[0] != key:
        raise DatasetFormatError(f"expected header field {key!r}", line=lineno)
    return parts[1:]


def load_dataset(path):
    """Parse a dataset file, validating header/body consistency."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise DatasetFormatError(f"bad magic, expected {_MAGIC!r}", line=1)

    def one_int(values, lineno, key):
        if len(values) != 1:
            raise DatasetFormatError(f"{key} takes one value", line=lineno)
        try:
            return int(values[0])
        except ValueError as exc:
            raise DatasetFormatError(f"{key}: {exc}", line=lineno) from None

    dim = one_int(_parse_header_line(lines, 2, "dim"), 2, "dim")
    old_classes = [int(v) for v in _parse_header_line(lines, 3, "old_classes")]
    all_classes = [int(v) for v in _parse_header_line(lines, 4, "all_classes")]
    n_lab = one_int(_parse_header_line(lines, 5, "labelled"), 5, "labelled")
    n_unlab = one_int(_parse_header_line(lines, 6, "unlabelled"), 6, "unlabelled")

    body = lines[6:]
    expected = n_lab + n_unlab
    if len(body) != expected:
        raise DatasetFormatError(
            f"header promises {expected} records, file has {len(body)}",
            line=len(lines),
        )

    lab_x, lab_y, unlab_x, unlab_y = [], [], [], []
    for offset, line in enumerate(body):
        lineno = offset + 7
        parts = line.split()
        if len(parts) != dim + 2 or parts[0] not in ("L", "U"):
            raise DatasetFormatError(
                f"expected 'L|U <class> <{dim} coords>'", line=lineno
            )
        try:
            cid = int(parts[1])
            vec = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        except ValueError as exc:
            raise DatasetFormatError(str(exc), line=lineno) from None
        if parts[0] == "L":
            lab_x.append(vec)
            lab_y.append(cid)
        else:
            unlab_x.append(vec)
            unlab_y.append(cid)

    if len(lab_x) != n_lab or len(unlab_x) != n_unlab:
        raise DatasetFormatError(
            f"record mix (L={len(lab_x)}, U={len(unlab_x)}) disagrees with header "
            f"(L={n_lab}, U={n_unlab})",
            line=len(lines),
        )

    stack = lambda rows: (
        np.array(rows, dtype=np.float64) if rows else np.zeros((0, dim))
    )
    try:
        return GcdDataset(
            labelled_x=stack(lab_x),
            labelled_y=np.array(lab_y, dtype=int),
            unlabelled_x=stack(unlab_x),
            unlabelled_hidden_y=np.array(unlab_y, dtype=int),
            old_classes=tuple(old_classes),
            all_classes=tuple(all_classes),
            dim=dim,
        )
    except DatasetFormatError:
        raise
