"""Prototype bookkeeping: cluster centers, the potential pool, buffers.

Every epoch the clustering stage hands over fresh cluster centers; those
fill the head of the student/teacher memory buffers while the tail comes
from a persistent pool of learnable "potential" prototypes that let the
classifier probe for categories beyond the ones currently discovered.
Within an epoch the buffer's potential slots are identified with the
leading pool rows; ``write_back`` commits their trained values at the
epoch boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolation,
    DatasetFormatError,
    ParameterError,
)
from .numerics import as_matrix, l2_normalize_rows


def init_potential_pool(dim, size, seed):
    """Seeded unit-normalized Gaussian rows, ``size`` x ``dim``."""
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if size < 1:
        raise ParameterError(f"size must be >= 1, got {size}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return l2_normalize_rows(rng.standard_normal((size, dim)))


def cluster_prototypes(features, assignment):
    """Per-cluster mean of the L2-normalized member rows.

    The averages are deliberately not re-normalized, so tight clusters
    produce near-unit prototypes while diffuse ones shrink toward zero
    (predictions stay well defined either way, they are plain dot
    products). Every cluster id up to the maximum must be populated.
    """
    v = l2_normalize_rows(as_matrix(features))
    assignment = np.asarray(
        getattr(assignment, "assignment", assignment), dtype=np.int64
    )
    if assignment.shape != (v.shape[0],):
        raise ContractViolation(
            f"assignment covers {assignment.shape[0] if assignment.ndim else 0} "
            f"rows, features have {v.shape[0]}"
        )
    if assignment.size == 0:
        raise ContractViolation("cannot build prototypes from zero rows")
    if assignment.min() < 0:
        raise ContractViolation("negative cluster id")
    num = int(assignment.max()) + 1
    counts = np.bincount(assignment, minlength=num)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ContractViolation(f"cluster id {missing} has no members")
    out = np.empty((num, v.shape[1]))
    for j in range(v.shape[1]):
        out[:, j] = np.bincount(assignment, weights=v[:, j], minlength=num)
    return out / counts[:, None]


@dataclass
class MemoryBuffer:
    """Prototype slots a prober classifies against.

    ``slots[:k_e]`` hold the epoch's cluster centers, the remainder the
    potential prototypes. The student buffer is a live trainable
    parameter; the teacher buffer only ever changes through EMA blending.
    """

    slots: np.ndarray
    k_e: int
    epoch_of_init: int
    role: str

    def __post_init__(self):
        if self.role not in ("student", "teacher"):
            raise ParameterError(f"unknown buffer role {self.role!r}")
        self.slots = as_matrix(self.slots)

    @property
    def size(self):
        return self.slots.shape[0]

    def potential_slots(self):
        """View of the rows backed by the potential pool."""
        return self.slots[self.k_e:]


@dataclass
class PrototypeBank:
    """Persistent prototype state: pool, labelled prototypes, centers.

    ``potential_pool`` and ``labelled_protos`` live across epochs and keep
    training; ``cluster_protos`` is refreshed from scratch each epoch by
    the clustering stage.
    """

    num_labelled_classes: int
    dim: int
    buffer_multiplier: int = 4
    seed: int = 0
    potential_pool: np.ndarray = field(default=None, repr=False)
    labelled_protos: np.ndarray = field(default=None, repr=False)
    cluster_protos: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_labelled_classes < 1:
            raise ConfigurationError("need at least one labelled class")
        if self.buffer_multiplier < 1:
            raise ConfigurationError(
                f"buffer_multiplier must be >= 1, got {self.buffer_multiplier}"
            )
        if self.potential_pool is None:
            self.potential_pool = init_potential_pool(
                self.dim, self.buffer_size, self.seed
            )
        if self.labelled_protos is None:
            self.labelled_protos = init_potential_pool(
                self.dim, self.num_labelled_classes, self.seed + 1
            )

    @property
    def buffer_size(self):
        """K^t: fixed slot count of the memory buffers."""
        return self.buffer_multiplier * self.num_labelled_classes

    def refresh_clusters(self, features, assignment):
        protos = cluster_prototypes(features, assignment)
        if protos.shape[1] != self.dim:
            raise ContractViolation(
                f"prototype dim {protos.shape[1]} != bank dim {self.dim}"
            )
        self.cluster_protos = protos
        return protos


def init_buffers(bank, k_e, epoch=0):
    """Fresh student/teacher buffers for an epoch.

    Both start as the concatenation of the ``k_e`` cluster centers with
    the first ``K^t - k_e`` pool rows, so they begin the epoch exactly
    equal. Raises when the estimate fills or overflows the buffer.
    """
    if bank.cluster_protos is None:
        raise ContractViolation("bank has no cluster prototypes yet")
    if k_e != bank.cluster_protos.shape[0]:
        raise ContractViolation(
            f"k_e={k_e} but bank holds {bank.cluster_protos.shape[0]} centers"
        )
    k_t = bank.buffer_size
    if k_e >= k_t:
        raise ConfigurationError(
            f"estimated {k_e} clusters but the buffer holds only {k_t} slots; "
            f"raise buffer_multiplier above {bank.buffer_multiplier}"
        )
    slots = np.concatenate(
        [bank.cluster_protos, bank.potential_pool[: k_t - k_e]], axis=0
    )
    student = MemoryBuffer(slots.copy(), k_e, epoch, "student")
    teacher = MemoryBuffer(slots.copy(), k_e, epoch, "teacher")
    return student, teacher


def write_back(bank, student_buffer):
    """Commit the trained potential slots into the persistent pool."""
    k_e = student_buffer.k_e
    tail = student_buffer.slots[k_e:]
    bank.potential_pool[: tail.shape[0]] = tail
    return bank


# ---------------------------------------------------------------------------
# checkpoint text format

_CKPT_MAGIC = "protoprobe-checkpoint v1"


def save_checkpoint(path, arrays, epoch):
    """Write named float64 matrices plus the epoch counter as text.

    Values are serialized with ``repr`` so the round-trip is bit exact.
    """
    with open(path, "w") as fh:
        fh.write(f"{_CKPT_MAGIC}\n")
        fh.write(f"epoch {int(epoch)}\n")
        fh.write(f"arrays {len(arrays)}\n")
        for name, arr in arrays.items():
            if any(ch.isspace() for ch in name):
                raise ParameterError(f"array name {name!r} contains whitespace")
            arr = as_matrix(arr)
            fh.write(f"array {name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns (arrays, epoch)."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    def bad(lineno, msg):
        return DatasetFormatError(msg, line=lineno)

    if not lines or lines[0] != _CKPT_MAGIC:
        raise bad(1, "not a checkpoint file (bad magic line)")
    try:
        epoch = int(lines[1].split()[1])
        count = int(lines[2].split()[1])
    except (IndexError, ValueError):
        raise bad(2, "malformed checkpoint header") from None
    arrays = {}
    at = 3
    for _ in range(count):
        if at >= len(lines):
            raise bad(at + 1, "truncated checkpoint: missing array header")
        parts = lines[at].split()
        if len(parts) != 4 or parts[0] != "array":
            raise bad(at + 1, f"expected array header, got {lines[at]!r}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        at += 1
        if at + rows > len(lines):
            raise bad(len(lines), f"truncated array {name!r}")
        data = np.empty((rows, cols))
        for r in range(rows):
            vals = lines[at].split()
            if len(vals) != cols:
                raise bad(at + 1, f"row has {len(vals)} values, expected {cols}")
            try:
                data[r] = [float(v) for v in vals]
            except ValueError:
                raise bad(at + 1, "non-numeric value in array row") from None
            at += 1
        arrays[name] = data
    if at != len(lines):
        raise bad(at + 1, "trailing content after final array")
    return arrays, epoch
