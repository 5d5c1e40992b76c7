import numpy as np
import pytest

from protoprobe import datagen
from protoprobe.errors import (
    DatasetFormatError,
    DegenerateInputError,
    ParameterError,
    SplitError,
)

from conftest import make_planted


def test_mixture_shapes_and_determinism():
    pts, labels = datagen.generate_mixture(
        num_classes=4, dim=8, per_class=10, class_sep=5.0, noise_sd=1.0, seed=9
    )
    assert pts.shape == (40, 8)
    assert sorted(set(labels.tolist())) == [0, 1, 2, 3]
    pts2, labels2 = datagen.generate_mixture(
        num_classes=4, dim=8, per_class=10, class_sep=5.0, noise_sd=1.0, seed=9
    )
    assert np.array_equal(pts, pts2) and np.array_equal(labels, labels2)


def test_mixture_zero_noise_collapses_to_means():
    pts, labels = datagen.generate_mixture(
        num_classes=3, dim=5, per_class=4, class_sep=2.0, noise_sd=0.0, seed=0
    )
    for c in range(3):
        rows = pts[labels == c]
        assert np.allclose(rows, rows[0])


def test_mixture_sep_six_nearest_mean_is_perfect():
    pts, labels = datagen.generate_mixture(
        num_classes=10, dim=32, per_class=20, class_sep=6.0, noise_sd=1.0,
        seed=3,
    )
    means = np.stack([pts[labels == c].mean(axis=0) for c in range(10)])
    pred = np.argmin(
        ((pts[:, None, :] - means[None, :, :]) ** 2).sum(axis=2), axis=1
    )
    assert np.array_equal(pred, labels)


def test_mixture_validation():
    with pytest.raises(ParameterError):
        datagen.generate_mixture(num_classes=1, dim=4, per_class=5,
                                 class_sep=1.0, noise_sd=0.1, seed=0)
    with pytest.raises(ParameterError):
        datagen.generate_mixture(num_classes=3, dim=1, per_class=5,
                                 class_sep=1.0, noise_sd=0.1, seed=0)


def test_split_counting_example():
    # 10 classes, half old, half of old-class points labelled
    raw = datagen.generate_mixture(
        num_classes=10, dim=8, per_class=100, class_sep=6.0, noise_sd=1.0,
        seed=1,
    )
    ds = datagen.split_gcd(raw, old_fraction=0.5, labelled_fraction=0.5, seed=1)
    assert ds.num_labelled == 250
    assert ds.num_unlabelled == 750
    assert len(ds.old_classes) == 5
    assert len(ds.all_classes) == 10


def test_split_partitions_exactly_and_hides_new_classes():
    ds = make_planted(num_classes=5, per_class=20, seed=4, old_fraction=0.6)
    assert ds.num_labelled + ds.num_unlabelled == 100
    assert set(ds.old_classes) < set(ds.all_classes)
    assert set(ds.labelled_y) <= set(ds.old_classes)
    new_classes = set(ds.all_classes) - set(ds.old_classes)
    # every new class appears only among the hidden labels
    assert new_classes <= set(ds.unlabelled_hidden_y.tolist())


def test_split_minimal_two_point_class():
    pts = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 0])
    ds = datagen.split_gcd((pts, labels), old_fraction=1.0,
                           labelled_fraction=0.5, seed=0)
    assert ds.num_labelled == 1 and ds.num_unlabelled == 1


def test_split_error_when_class_too_small():
    pts = np.array([[1.0, 0.0]])
    labels = np.array([0])
    with pytest.raises(SplitError):
        datagen.split_gcd((pts, labels), old_fraction=1.0,
                          labelled_fraction=0.5, seed=0)


def test_dataset_roundtrip_bit_exact(tmp_path):
    ds = make_planted(seed=7)
    path = tmp_path / "d.gcd"
    datagen.save_dataset(ds, path)
    back = datagen.load_dataset(path)
    assert np.array_equal(ds.labelled_x, back.labelled_x)
    assert np.array_equal(ds.labelled_y, back.labelled_y)
    assert np.array_equal(ds.unlabelled_x, back.unlabelled_x)
    assert np.array_equal(ds.unlabelled_hidden_y, back.unlabelled_hidden_y)
    assert ds.old_classes == back.old_classes
    assert ds.all_classes == back.all_classes


def test_load_rejects_truncation_and_bad_header(tmp_path):
    ds = make_planted(num_classes=3, per_class=4, seed=0)
    path = tmp_path / "d.gcd"
    datagen.save_dataset(ds, path)
    text = path.read_text().splitlines()

    truncated = tmp_path / "trunc.gcd"
    truncated.write_text("\n".join(text[:-2]) + "\n")
    with pytest.raises(DatasetFormatError):
        datagen.load_dataset(truncated)

    bad_magic = tmp_path / "magic.gcd"
    bad_magic.write_text("not-a-dataset\n" + "\n".join(text[1:]) + "\n")
    with pytest.raises(DatasetFormatError):
        datagen.load_dataset(bad_magic)

    bad_count = tmp_path / "count.gcd"
    lines = list(text)
    lines[4] = "labelled 9999"
    bad_count.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as exc:
        datagen.load_dataset(bad_count)
    assert exc.value.line is not None


def test_augment_identity_when_parameters_zero():
    x = np.array([3.0, 4.0])
    pair = datagen.augment(x, 0.0, 0.0, (0, 0, 0))
    assert np.allclose(pair.view1, [0.6, 0.8])
    assert np.allclose(pair.view2, [0.6, 0.8])


def test_augment_deterministic_and_views_differ():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    a = datagen.augment(x, 0.1, 0.2, (5, 2, 17))
    b = datagen.augment(x, 0.1, 0.2, (5, 2, 17))
    assert np.array_equal(a.view1, b.view1)
    assert np.array_equal(a.view2, b.view2)
    assert not np.allclose(a.view1, a.view2)
    c = datagen.augment(x, 0.1, 0.2, (5, 2, 18))
    assert not np.array_equal(a.view1, c.view1)


def test_augment_views_unit_norm_and_perturbed():
    rng = np.random.default_rng(0)
    x = rng.normal(size=12)
    x /= np.linalg.norm(x)
    dists = []
    for i in range(200):
        pair = datagen.augment(x, 0.1, 0.1, (0, 0, i))
        assert np.isclose(np.linalg.norm(pair.view1), 1.0)
        assert np.isclose(np.linalg.norm(pair.view2), 1.0)
        dists.append(np.linalg.norm(pair.view1 - x))
    assert np.mean(dists) > 0.01


def test_augment_validates_dropout():
    with pytest.raises(ParameterError):
        datagen.augment(np.ones(3), 0.1, 1.0, (0, 0, 0))


def test_augment_degenerate_when_everything_drops():
    # dropout close to 1 keeps resampling, then gives up
    with pytest.raises((DegenerateInputError, ParameterError)):
        datagen.augment(np.ones(2), 0.0, 0.999999, (0, 0, 0))
