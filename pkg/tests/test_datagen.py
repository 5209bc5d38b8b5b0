import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from noisyjoint import _container
from noisyjoint.datagen import (DatasetSpec, blob_centers, gen_blobs, gen_patterns, load_dataset,
                                make_dataset, pattern_templates, save_dataset)
from noisyjoint.noise import NoiseConfig


def test_spec_defaults():
    assert DatasetSpec().n_classes == 4 and DatasetSpec().input_dim == 16 and DatasetSpec().continuous_dim == 2
    p = DatasetSpec(generator="patterns")
    assert p.n_classes == 10 and p.feature_dim == 256


@pytest.mark.parametrize("kw", [
    dict(n_classes=1), dict(n_train=3), dict(center_separation=5.0), dict(n_classes=20, input_dim=16),
    dict(class_anchors=[[0, 0], [0.1, 0], [0.5, 0.5], [-0.5, 0.5]]),
    dict(class_anchors=[[2, 0], [0, 0], [0.5, 0.5], [-0.5, 0.5]]),
    dict(generator="patterns", n_classes=13), dict(generator="patterns", side=6), dict(generator="spirals"),
])
def test_spec_rejects_bad_geometry(kw):
    with pytest.raises(ValueError):
        DatasetSpec(**kw).validate()


def test_blob_centres_pairwise_separation():
    spec = DatasetSpec()
    c = blob_centers(spec, np.random.default_rng(0))
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)[np.triu_indices(4, 1)]
    np.testing.assert_allclose(d, 6.0 * spec.blob_spread, rtol=1e-12)


def test_blobs_zero_spread_collapse_to_centres():
    spec = DatasetSpec(blob_spread=0.0, n_train=50, n_test=50)
    centers, (x, y, _), _ = gen_blobs(spec, np.random.default_rng(0))
    np.testing.assert_array_equal(x, centers[y])


def test_blobs_linearly_separable():
    ds = make_dataset(DatasetSpec(n_train=1000, n_test=2000, seed=2))
    clf = LogisticRegression(max_iter=2000).fit(ds.x_train, ds.y_train)
    assert clf.score(ds.x_test, ds.y_test) >= 0.95


def test_continuous_labels_centre_on_anchors():
    spec = DatasetSpec(n_train=50_000, n_test=4)
    _, (_, y, c), _ = gen_blobs(spec, np.random.default_rng(1))
    anchors = np.asarray(spec.class_anchors)
    for k in range(4):
        assert np.abs(c[y == k].mean(axis=0) - anchors[k]).max() <= 0.02
    assert c.min() >= -1 and c.max() <= 1


def test_continuous_label_predicts_class():
    spec = DatasetSpec(n_train=10_000, n_test=4)
    _, (_, y, c), _ = gen_blobs(spec, np.random.default_rng(2))
    anchors = np.asarray(spec.class_anchors)
    nearest = np.argmin(np.linalg.norm(c[:, None] - anchors[None], axis=-1), axis=1)
    assert (nearest == y).mean() >= 0.95


def test_patterns_distinct_and_binary():
    t = pattern_templates(16, 12)
    assert set(np.unique(t)) <= {0.0, 1.0}
    d = np.linalg.norm(t[:, None] - t[None], axis=-1)
    assert d[~np.eye(12, dtype=bool)].min() > 0


def _nearest_template(x, templates):
    return np.argmin(((x[:, None, :] - templates[None]) ** 2).sum(-1), axis=1)


def test_patterns_noiseless_samples_equal_template():
    spec = DatasetSpec(generator="patterns", pattern_noise=0.0, n_train=200, n_test=10)
    t, (x, y, _), _ = gen_patterns(spec, np.random.default_rng(0))
    np.testing.assert_array_equal(x, t[y])
    assert (_nearest_template(x, t) == y).all()


def test_patterns_template_matching_accuracy():
    spec = DatasetSpec(generator="patterns", n_train=10_000, n_test=10)
    t, (x, y, _), _ = gen_patterns(spec, np.random.default_rng(1))
    assert x.min() >= 0 and x.max() <= 1
    assert (_nearest_template(x, t) == y).mean() >= 0.99


def test_make_dataset_noise_and_clean_test():
    ds = make_dataset(DatasetSpec(n_train=4000, seed=3), NoiseConfig([0.2, 0.3, 0.4], [0.4]))
    stats = ds.noise_stats()
    for entry in stats["discrete"]:
        assert abs(entry["realized"] - entry["nominal"]) <= 0.03
    for noisy, mask in zip(ds.noisy_discrete, ds.flip_masks):
        np.testing.assert_array_equal(mask, noisy != ds.y_train)
    # independent masks per set
    assert not np.array_equal(ds.flip_masks[0], ds.flip_masks[1])
    assert len(ds.noisy_continuous) == 1 and ds.noisy_continuous[0].shape == ds.c_train.shape
    assert ds.x_train.shape[0] == 4000 and ds.x_test.shape[0] == 2000


def test_zero_rate_gives_exact_zero():
    ds = make_dataset(DatasetSpec(n_train=100, n_test=10), NoiseConfig([0.0], [0.0]))
    assert ds.noise_stats()["discrete"][0]["realized"] == 0.0
    assert ds.noise_stats()["continuous"][0]["realized"] == 0.0


def test_generation_is_pure():
    spec, noise = DatasetSpec(n_train=100, n_test=20, seed=7), NoiseConfig([0.4, 0.4])
    a, b = make_dataset(spec, noise), make_dataset(DatasetSpec(n_train=100, n_test=20, seed=7), noise)
    for name in ("x_train", "y_train", "c_train", "x_test", "y_test", "c_test"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    for u, v in zip(a.noisy_discrete, b.noisy_discrete):
        np.testing.assert_array_equal(u, v)
    c = make_dataset(DatasetSpec(n_train=100, n_test=20, seed=8), noise)
    assert not np.array_equal(a.x_train, c.x_train)


def test_train_test_disjoint_draws():
    ds = make_dataset(DatasetSpec(n_train=200, n_test=200, seed=1))
    rows = {r.tobytes() for r in ds.x_train}
    assert not any(r.tobytes() in rows for r in ds.x_test)


@pytest.mark.parametrize("generator", ["blobs", "patterns"])
def test_save_load_round_trip(tmp_path, generator):
    ds = make_dataset(DatasetSpec(generator=generator, n_train=40, n_test=30, seed=4),
                      NoiseConfig([0.2, 0.4], [0.3]))
    path = tmp_path / "d.njd"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.spec == ds.spec and back.noise == ds.noise
    for name in ("prototypes", "x_train", "y_train", "c_train", "x_test", "y_test", "c_test"):
        a, b = getattr(ds, name), getattr(back, name)
        assert a.dtype == b.dtype
        np.testing.assert_array_equal(a, b)
    for u, v in zip(ds.flip_masks + ds.outlier_masks, back.flip_masks + back.outlier_masks):
        np.testing.assert_array_equal(u, v)
    # the stored spec regenerates the stored data
    regen = make_dataset(back.spec, back.noise)
    np.testing.assert_array_equal(regen.x_train, back.x_train)
    np.testing.assert_array_equal(regen.noisy_discrete[1], back.noisy_discrete[1])


def test_save_is_byte_deterministic(tmp_path):
    ds = make_dataset(DatasetSpec(n_train=40, n_test=30, seed=4))
    save_dataset(ds, tmp_path / "a")
    save_dataset(make_dataset(DatasetSpec(n_train=40, n_test=30, seed=4)), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_load_rejects_corruption(tmp_path):
    ds = make_dataset(DatasetSpec(n_train=40, n_test=30))
    path = tmp_path / "d.njd"
    save_dataset(ds, path)
    raw = path.read_bytes()
    (tmp_path / "magic").write_bytes(raw.replace(b"NOISYJOINT-DATASET", b"NOISYJOINT-DATASEX", 1))
    with pytest.raises(_container.FormatError):
        load_dataset(tmp_path / "magic")
    (tmp_path / "version").write_bytes(raw.replace(b"version=1", b"version=9", 1))
    with pytest.raises(_container.FormatError, match="version"):
        load_dataset(tmp_path / "version")
    (tmp_path / "short").write_bytes(raw[:-5])
    with pytest.raises(_container.TruncatedFileError):
        load_dataset(tmp_path / "short")
