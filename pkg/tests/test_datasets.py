import numpy as np
import pytest
from scipy import ndimage, stats

from leafcount.datasets import (
    DatasetDescriptor,
    ImageSample,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    load_split_plan,
    make_split,
    partition_equal,
    pool_datasets,
    save_split_plan,
    write_dataset,
)
from leafcount.exceptions import (
    AnnotationError,
    DatasetError,
    GenerationError,
    PartitionError,
    PoolingError,
    SplitError,
)

from conftest import make_samples


# --- ImageSample -------------------------------------------------------------

def test_image_sample_validation():
    px = np.zeros((4, 4, 3), np.uint8)
    s = ImageSample("a/x.png", px, 3, "a")
    assert s.count == 3 and s.height == 4 and s.width == 4
    assert not s.pixels.flags.writeable
    with pytest.raises(ValueError):
        ImageSample("a/x.png", np.zeros((4, 4), np.uint8), 1, "a")
    with pytest.raises(ValueError):
        ImageSample("a/x.png", np.zeros((4, 4, 3), np.float32), 1, "a")
    with pytest.raises(ValueError):
        ImageSample("a/x.png", px, -1, "a")
    with pytest.raises(ValueError):
        ImageSample("", px, 1, "a")


# --- load_dataset ------------------------------------------------------------

def _write_fixture_dataset(root, dataset_id, entries, size=(10, 10)):
    """entries: list of (filename, count). Returns a descriptor."""
    import cv2

    d = root / dataset_id
    d.mkdir(parents=True)
    lines = ["image,count"]
    rng = np.random.default_rng(0)
    for filename, count in entries:
        img = rng.integers(0, 255, (size[0], size[1], 3)).astype(np.uint8)
        cv2.imwrite(str(d / filename), img)
        lines.append(f"{filename},{count}")
    (d / "counts.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return DatasetDescriptor(dataset_id=dataset_id, root_dir=d)


def test_load_dataset_a2_sized(tmp_path):
    entries = [(f"plant{i:03d}.png", (i % 9) + 1) for i in range(31)]
    descriptor = _write_fixture_dataset(tmp_path, "A2", entries)
    samples = load_dataset(descriptor)
    assert len(samples) == 31
    assert all(s.source_id == "A2" for s in samples)
    assert all(s.image_id.startswith("A2/") for s in samples)


def test_load_dataset_empty_annotation(tmp_path):
    d = tmp_path / "E"
    d.mkdir()
    (d / "counts.csv").write_text("image,count\n", encoding="utf-8")
    assert load_dataset(DatasetDescriptor("E", d)) == []


def test_load_dataset_reads_fields_back(tmp_path):
    descriptor = _write_fixture_dataset(tmp_path, "D", [("img7.png", 5)], size=(100, 100))
    samples = load_dataset(descriptor)
    assert len(samples) == 1
    s = samples[0]
    assert s.count == 5
    assert s.pixels.shape == (100, 100, 3)
    assert s.image_id == "D/img7.png"


def test_load_dataset_missing_image_named(tmp_path):
    descriptor = _write_fixture_dataset(tmp_path, "M", [("ok.png", 2)])
    ann = descriptor.annotation_file
    ann.write_text("image,count\nok.png,2\ngone.png,3\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="gone.png"):
        load_dataset(descriptor)


def test_load_dataset_malformed_row_has_line_number(tmp_path):
    descriptor = _write_fixture_dataset(tmp_path, "M2", [("ok.png", 2)])
    descriptor.annotation_file.write_text(
        "image,count\nok.png,2\nok.png,2,extra\n", encoding="utf-8")
    with pytest.raises(AnnotationError, match=":3"):
        load_dataset(descriptor)


def test_load_dataset_non_integer_count(tmp_path):
    descriptor = _write_fixture_dataset(tmp_path, "M3", [("ok.png", 2)])
    descriptor.annotation_file.write_text("image,count\nok.png,many\n", encoding="utf-8")
    with pytest.raises(AnnotationError, match="integer"):
        load_dataset(descriptor)


def test_load_dataset_duplicate_filename(tmp_path):
    descriptor = _write_fixture_dataset(tmp_path, "M4", [("ok.png", 2)])
    descriptor.annotation_file.write_text(
        "image,count\nok.png,2\nok.png,4\n", encoding="utf-8")
    with pytest.raises(AnnotationError, match="duplicate"):
        load_dataset(descriptor)


def test_load_dataset_missing_root():
    with pytest.raises(DatasetError, match="root"):
        load_dataset(DatasetDescriptor("X", "/nonexistent/place"))


def test_write_then_load_round_trip(tmp_path):
    samples = generate_synthetic(SyntheticConfig(n_images=5, seed=3), source_id="S")
    root = write_dataset(samples, tmp_path / "S")
    loaded = load_dataset(DatasetDescriptor("S", root))
    assert len(loaded) == 5
    by_id = {s.image_id: s for s in loaded}
    for s in samples:
        twin = by_id[s.image_id]
        assert twin.count == s.count
        np.testing.assert_array_equal(twin.pixels, s.pixels)  # png is lossless


# --- pooling -----------------------------------------------------------------

def test_pool_sizes_add_up():
    pools = [make_samples(128, "A1"), make_samples(31, "A2"),
             make_samples(27, "A3"), make_samples(624, "A4")]
    pooled = pool_datasets(pools)
    assert len(pooled) == 810


def test_pool_single_collection_is_identity():
    c = make_samples(9, "A1")
    assert pool_datasets([c]) == c


def test_pool_same_filename_different_sources():
    a = make_samples(3, "L1")
    b = make_samples(3, "L2")
    pooled = pool_datasets([a, b])
    assert len(pooled) == 6
    assert len({s.image_id for s in pooled}) == 6


def test_pool_collision_lists_ids():
    c = make_samples(3, "A1")
    with pytest.raises(PoolingError, match="A1/f0000.png"):
        pool_datasets([c, c])


def test_pool_is_size_additive_and_order_insensitive(rng):
    groups = [make_samples(int(rng.integers(1, 20)), f"g{i}") for i in range(5)]
    pooled = pool_datasets(groups)
    assert len(pooled) == sum(len(g) for g in groups)
    re_pooled = pool_datasets(groups[::-1])
    assert {s.image_id for s in pooled} == {s.image_id for s in re_pooled}


# --- make_split ----------------------------------------------------------------

def test_split_exact_division():
    plan = make_split(make_samples(100, "X"), seed=7)
    assert (len(plan.train_ids), len(plan.val_ids), len(plan.test_ids)) == (50, 25, 25)


def test_split_deterministic():
    samples = make_samples(73, "X")
    assert make_split(samples, seed=11) == make_split(samples, seed=11)
    assert make_split(samples, seed=11) != make_split(samples, seed=12)


def test_split_stratified_by_source():
    samples = make_samples(100, "P") + make_samples(100, "Q")
    plan = make_split(samples, seed=3)
    for src in ("P", "Q"):
        n_tr = sum(1 for i in plan.train_ids if i.startswith(src))
        n_va = sum(1 for i in plan.val_ids if i.startswith(src))
        n_te = sum(1 for i in plan.test_ids if i.startswith(src))
        assert abs(n_tr - 50) <= 1 and abs(n_va - 25) <= 1 and abs(n_te - 25) <= 1


def test_split_invariants_random_sweep(rng):
    for _ in range(150):
        n = int(rng.integers(4, 120))
        n_sources = int(rng.integers(1, 4))
        samples = []
        for j in range(n_sources):
            share = n // n_sources + (1 if j < n % n_sources else 0)
            samples += make_samples(share, f"s{j}", seed=int(rng.integers(2**31)))
        samples = samples[:n]
        plan = make_split(samples, seed=int(rng.integers(10000)))
        ids = [s.image_id for s in samples]
        got = list(plan.train_ids) + list(plan.val_ids) + list(plan.test_ids)
        assert sorted(got) == sorted(ids)  # disjoint + covering
        assert len(plan.train_ids) == int(np.floor(0.5 * n + 0.5))
        assert len(plan.val_ids) == int(np.floor(0.25 * n + 0.5))


def test_split_too_small():
    with pytest.raises(SplitError):
        make_split(make_samples(3, "X"), seed=0)


def test_split_bad_fractions():
    with pytest.raises(SplitError):
        make_split(make_samples(10, "X"), fractions=(0.5, 0.5, 0.5), seed=0)


def test_split_plan_round_trip(tmp_path):
    plan = make_split(make_samples(40, "X"), seed=9)
    path = tmp_path / "split.txt"
    save_split_plan(plan, path)
    assert load_split_plan(path) == plan


# --- partition_equal -----------------------------------------------------------

def test_partition_810_into_4():
    parts = partition_equal(make_samples(810, "Ac"), 4, seed=0)
    assert sorted(len(p) for p in parts) == [202, 202, 203, 203]
    ids = [s.image_id for p in parts for s in p]
    assert len(ids) == 810 and len(set(ids)) == 810


def test_partition_exact_division():
    parts = partition_equal(make_samples(8, "X"), 4, seed=0)
    assert [len(p) for p in parts] == [2, 2, 2, 2]


def test_partition_k1_identity():
    samples = make_samples(5, "X")
    parts = partition_equal(samples, 1, seed=0)
    assert len(parts) == 1
    assert sorted(s.image_id for s in parts[0]) == sorted(s.image_id for s in samples)


def test_partition_reconstructs_multiset(rng):
    samples = make_samples(37, "X")
    parts = partition_equal(samples, 5, seed=4)
    assert sorted(s.image_id for p in parts for s in p) == sorted(s.image_id for s in samples)
    assert max(len(p) for p in parts) - min(len(p) for p in parts) <= 1


def test_partition_k_too_large():
    with pytest.raises(PartitionError):
        partition_equal(make_samples(3, "X"), 4, seed=0)


# --- generate_synthetic ----------------------------------------------------------

def test_synthetic_degenerate_range():
    samples = generate_synthetic(SyntheticConfig(count_range=(3, 3), n_images=10, seed=0))
    assert len(samples) == 10
    assert all(s.count == 3 for s in samples)


def test_synthetic_deterministic():
    cfg = SyntheticConfig(count_range=(1, 6), n_images=8, seed=42)
    a = generate_synthetic(cfg)
    b = generate_synthetic(cfg)
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.pixels, t.pixels)
        assert s.count == t.count


def test_synthetic_count_histogram_uniform():
    # fixed typical seed; the counts are drawn from a true uniform
    cfg = SyntheticConfig(count_range=(1, 8), n_images=1000, seed=0)
    samples = generate_synthetic(cfg)
    hist = np.bincount([s.count for s in samples], minlength=9)[1:9]
    assert stats.chisquare(hist).pvalue > 0.01


@pytest.mark.parametrize("shape,background", [("disk", "flat"), ("ellipse", "textured")])
def test_synthetic_connected_components_match_count(shape, background):
    cfg = SyntheticConfig(image_size=64, count_range=(1, 8), shape=shape,
                          background_style=background, n_images=60, seed=5)
    samples, masks = generate_synthetic(cfg, return_masks=True)
    for s, m in zip(samples, masks):
        _, n_components = ndimage.label(m, structure=np.ones((3, 3)))
        assert n_components == s.count


def test_synthetic_impossible_placement():
    with pytest.raises(GenerationError, match="count_range"):
        generate_synthetic(SyntheticConfig(image_size=32, count_range=(60, 60),
                                           n_images=1, seed=0))


def test_synthetic_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(count_range=(0, 3))
    with pytest.raises(ValueError):
        SyntheticConfig(count_range=(5, 3))
    with pytest.raises(ValueError):
        SyntheticConfig(image_size=16)
    with pytest.raises(ValueError):
        SyntheticConfig(shape="square")
