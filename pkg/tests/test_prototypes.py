import numpy as np
import pytest

from protoprobe.errors import (
    ConfigurationError,
    ContractViolation,
    DatasetFormatError,
    ParameterError,
)
from protoprobe.prototypes import (
    MemoryBuffer,
    PrototypeBank,
    cluster_prototypes,
    init_buffers,
    init_potential_pool,
    load_checkpoint,
    save_checkpoint,
    write_back,
)


def test_cluster_prototypes_mean_without_renormalization():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    protos = cluster_prototypes(feats, np.array([0, 0]))
    assert np.allclose(protos, [[0.5, 0.5]])  # NOT rescaled to unit norm


def test_cluster_prototypes_singleton_and_antipodal():
    protos = cluster_prototypes(np.array([[3.0, 4.0]]), np.array([0]))
    assert np.allclose(protos, [[0.6, 0.8]])  # the normalized member
    protos = cluster_prototypes(
        np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0, 0])
    )
    assert np.allclose(protos, 0.0)  # documented degenerate case


def test_cluster_prototypes_normalizes_members_first():
    feats = np.array([[2.0, 0.0], [0.0, 5.0]])
    protos = cluster_prototypes(feats, np.array([0, 0]))
    assert np.allclose(protos, [[0.5, 0.5]])


def test_cluster_prototypes_validation():
    feats = np.eye(3)
    with pytest.raises(ContractViolation):
        cluster_prototypes(feats, np.array([0, 2, 2]))  # id 1 empty
    with pytest.raises(ContractViolation):
        cluster_prototypes(feats, np.array([0, 1]))  # length mismatch
    with pytest.raises(ContractViolation):
        cluster_prototypes(feats, np.array([0, -1, 1]))


def test_potential_pool_seeded_unit_rows():
    pool = init_potential_pool(8, 20, seed=3)
    assert pool.shape == (20, 8)
    assert np.allclose(np.linalg.norm(pool, axis=1), 1.0)
    assert np.array_equal(pool, init_potential_pool(8, 20, seed=3))
    assert not np.array_equal(pool, init_potential_pool(8, 20, seed=4))
    # rows pairwise distinct across many seeds
    for seed in range(100):
        p = init_potential_pool(4, 6, seed)
        assert len(np.unique(p.round(12), axis=0)) == 6
    with pytest.raises(ParameterError):
        init_potential_pool(0, 5, 0)


def test_bank_sizes_and_buffer_init():
    bank = PrototypeBank(num_labelled_classes=5, dim=6, buffer_multiplier=4,
                         seed=0)
    assert bank.buffer_size == 20
    feats = np.random.default_rng(0).normal(size=(30, 6))
    bank.refresh_clusters(feats, np.arange(30) % 3)
    m_s, m_t = init_buffers(bank, 3, epoch=2)
    assert m_s.slots.shape == (20, 6)
    assert np.array_equal(m_s.slots, m_t.slots)  # equal at init
    assert m_s.slots is not m_t.slots
    assert np.array_equal(m_s.slots[:3], bank.cluster_protos)
    assert np.array_equal(m_s.slots[3:], bank.potential_pool[:17])
    assert m_s.role == "student" and m_t.role == "teacher"
    assert m_s.epoch_of_init == 2
    assert m_s.potential_slots().shape == (17, 6)


def test_buffer_overflow_is_config_error():
    bank = PrototypeBank(num_labelled_classes=2, dim=4, buffer_multiplier=2,
                         seed=0)
    feats = np.random.default_rng(1).normal(size=(8, 4))
    bank.refresh_clusters(feats, np.arange(8) % 4)
    with pytest.raises(ConfigurationError) as exc:
        init_buffers(bank, 4)  # k_e == K^t
    assert "buffer_multiplier" in str(exc.value)


def test_init_buffers_requires_matching_k_e():
    bank = PrototypeBank(num_labelled_classes=3, dim=4, seed=0)
    with pytest.raises(ContractViolation):
        init_buffers(bank, 2)  # no centers yet
    feats = np.random.default_rng(2).normal(size=(6, 4))
    bank.refresh_clusters(feats, np.arange(6) % 2)
    with pytest.raises(ContractViolation):
        init_buffers(bank, 3)


def test_write_back_commits_trained_tail():
    bank = PrototypeBank(num_labelled_classes=3, dim=4, buffer_multiplier=2,
                         seed=5)
    feats = np.random.default_rng(3).normal(size=(10, 4))
    bank.refresh_clusters(feats, np.arange(10) % 2)
    m_s, _ = init_buffers(bank, 2)
    m_s.slots[2:] = 7.0  # "training" moves the potential slots
    before = bank.potential_pool.copy()
    write_back(bank, m_s)
    assert np.allclose(bank.potential_pool[:4], 7.0)
    assert np.array_equal(bank.potential_pool[4:], before[4:])


def test_memory_buffer_role_validation():
    with pytest.raises(ParameterError):
        MemoryBuffer(np.eye(2), 1, 0, "oracle")


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    arrays = {
        "enc_w1": rng.normal(size=(5, 3)) * 1e-7,
        "pool": rng.normal(size=(4, 2)) * 1e9,
        "bias": rng.normal(size=(1, 5)),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, arrays, epoch=17)
    loaded, epoch = load_checkpoint(path)
    assert epoch == 17
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert np.array_equal(loaded[name], arrays[name])  # bit exact


def test_checkpoint_rejects_malformed(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": np.ones((2, 2))}, epoch=1)
    text = path.read_text().splitlines()

    for mutation, name in [
        (lambda t: t[1:], "missing magic"),
        (lambda t: t[:-1], "truncated"),
        (lambda t: t[:2] + ["arrays 5"] + t[3:], "wrong count"),
        (lambda t: [t[0], "epoch x"] + t[2:], "non-numeric epoch"),
    ]:
        bad = tmp_path / "bad.ckpt"
        bad.write_text("\n".join(mutation(list(text))) + "\n")
        with pytest.raises(DatasetFormatError):
            load_checkpoint(bad)

    corrupt = tmp_path / "corrupt.ckpt"
    lines = list(text)
    lines[4] = lines[4].replace(lines[4].split()[0], "not-a-float", 1)
    corrupt.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as exc:
        load_checkpoint(corrupt)
    assert exc.value.line is not None


def test_checkpoint_rejects_bad_names(tmp_path):
    with pytest.raises(ParameterError):
        save_checkpoint(tmp_path / "x.ckpt", {"two words": np.ones((1, 1))}, 0)
