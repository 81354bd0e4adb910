import os

import numpy as np
import pytest

from srnseg import formats
from srnseg.data import DatasetError, LabeledObservation, generate_dataset, read_dataset, write_dataset


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset("chair", instances=2, train_views=3, test_views=1, resolution=16, seed=7)


def test_view_counts(small_dataset):
    assert len(small_dataset) == 2
    for inst in small_dataset.instances:
        assert len(inst.train_views) == 3 and len(inst.test_views) == 1


def test_roundtrip(small_dataset, tmp_path):
    manifest = write_dataset(small_dataset, tmp_path)
    assert sum(len(e["views"]) for e in manifest["instances"]) == 2 * 4
    back = read_dataset(tmp_path)
    assert back.class_names == small_dataset.class_names
    for a, b in zip(small_dataset.instances, back.instances):
        assert a.id == b.id and a.seed == b.seed
        for va, vb in zip(a.views, b.views):
            assert np.array_equal(va.mask, vb.mask)
            assert np.max(np.abs(va.rgb - vb.rgb)) <= 1 / 255
            assert np.array_equal(va.depth, vb.depth)
            assert va.view.pose == vb.view.pose
            assert va.view.intrinsics == vb.view.intrinsics
            assert va.split == vb.split


def test_manifest_references_existing_files(small_dataset, tmp_path):
    manifest = write_dataset(small_dataset, tmp_path)
    for entry in manifest["instances"]:
        for v in entry["views"]:
            for key in ("pose", "rgb", "mask", "depth"):
                assert os.path.isfile(tmp_path / v[key])


def test_missing_file_reports_path(small_dataset, tmp_path):
    write_dataset(small_dataset, tmp_path)
    victim = tmp_path / small_dataset.instances[1].id / "002.pgm"
    os.remove(victim)
    with pytest.raises(DatasetError, match="002.pgm"):
        read_dataset(tmp_path)


def test_corrupt_image_rejected(small_dataset, tmp_path):
    write_dataset(small_dataset, tmp_path)
    victim = tmp_path / small_dataset.instances[0].id / "000.ppm"
    victim.write_bytes(b"P6\n16 16\n255\n" + b"\x00" * 10)
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)


def test_min_views_enforced(small_dataset, tmp_path):
    write_dataset(small_dataset, tmp_path)
    with pytest.raises(DatasetError):
        read_dataset(tmp_path, min_views=4)


def test_generation_deterministic():
    a = generate_dataset("table", 1, 2, 0, 8, seed=3)
    b = generate_dataset("table", 1, 2, 0, 8, seed=3)
    assert np.array_equal(a.instances[0].views[1].rgb, b.instances[0].views[1].rgb)


def test_observation_needs_a_modality(small_dataset):
    rec = small_dataset.instances[0].views[0]
    with pytest.raises(ValueError):
        LabeledObservation(rec.view)
    obs = LabeledObservation.from_record(rec, rgb=False)
    assert obs.rgb is None and obs.mask is not None


def test_ppm_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    mask = rng.integers(0, 6, size=(5, 7), dtype=np.uint8)
    formats.write_ppm(tmp_path / "a.ppm", rgb)
    formats.write_pgm(tmp_path / "a.pgm", mask)
    assert np.array_equal(formats.read_ppm(tmp_path / "a.ppm"), rgb)
    assert np.array_equal(formats.read_pgm(tmp_path / "a.pgm"), mask)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")


def test_wrong_magic(tmp_path):
    formats.write_pgm(tmp_path / "m.pgm", np.zeros((2, 2), np.uint8))
    with pytest.raises(formats.FormatError):
        formats.read_ppm(tmp_path / "m.pgm")


def test_depth_roundtrip_with_inf(tmp_path):
    d = np.array([[1.25, np.inf], [0.1 + 0.2, 3.0]])
    formats.write_depth(tmp_path / "d.depth", d)
    assert "inf" in (tmp_path / "d.depth").read_text()
    assert np.array_equal(formats.read_depth(tmp_path / "d.depth"), d)


def test_ply_header_count(tmp_path):
    pts = np.random.default_rng(1).normal(size=(9, 3))
    formats.write_ply(tmp_path / "c.ply", pts, np.full((9, 3), 0.5), np.arange(9) % 3)
    text = (tmp_path / "c.ply").read_text()
    assert "element vertex 9" in text and "property uchar label" in text
    back = formats.read_ply(tmp_path / "c.ply")
    assert back["count"] == 9
    assert back["labels"].tolist() == (np.arange(9) % 3).tolist()
    assert np.allclose(back["points"], pts, atol=1e-6)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    with pytest.raises(RuntimeError):
        with formats.atomic_open(tmp_path / "x.txt", "w") as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert os.listdir(tmp_path) == []
