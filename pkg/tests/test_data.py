import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import crafted_manifests, flip_alignment_failures
from osagdo import data
from osagdo.core import Image


def test_densify_center_peak():
    m = data.densify([(20, 15)], 31, 41)
    assert m[15, 20] == 1.0 and m.max() == 1.0 and m.min() >= 0


def test_densify_far_points():
    m = data.densify([(10, 10), (150, 90)], 100, 160, sigma=5)
    assert m[10, 10] == pytest.approx(1.0, abs=1e-6)
    assert m[90, 150] == pytest.approx(1.0, abs=1e-6)


def test_densify_density_increases_mass():
    a = data.densify([(20, 20)], 40, 40, normalize=False)
    b = data.densify([(20, 20), (21, 20), (19, 21)], 40, 40, normalize=False)
    assert b[15:26, 15:26].sum() > a[15:26, 15:26].sum()


def test_densify_empty_and_errors():
    assert np.all(data.densify([], 5, 7) == 0)
    with pytest.raises(ValueError):
        data.densify([(7, 1)], 5, 7)
    with pytest.raises(ValueError):
        data.densify([(1, 1)], 5, 7, sigma=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 63.9), st.floats(0, 47.9)), min_size=1, max_size=6),
       st.floats(1, 20))
def test_densify_peak_is_one(points, sigma):
    m = data.densify(points, 48, 64, sigma)
    assert m.max() == 1.0 and m.min() >= 0


def test_augmentation_offsets_and_determinism():
    rng = np.random.default_rng(0)
    augs = [data.draw_augmentation(rng) for _ in range(2000)]
    oy = {a.oy for a in augs}
    assert min(oy) == 0 and max(oy) == 32
    assert 0.4 < np.mean([a.flip for a in augs]) < 0.6
    again = [data.draw_augmentation(r) for r in [np.random.default_rng(0)] for _ in range(2000)]
    assert augs == again


def test_preprocess_train_bitwise_repeatable():
    img = Image(np.random.default_rng(1).integers(0, 256, (120, 90, 3), dtype=np.uint8))
    maps = {"put_center": data.densify([(40, 60)], 120, 90)}
    a = data.preprocess_train(img, maps, np.random.default_rng(5))
    b = data.preprocess_train(img, maps, np.random.default_rng(5))
    assert np.array_equal(a[0].pixels, b[0].pixels)
    assert np.array_equal(a[1]["put_center"], b[1]["put_center"])
    assert a[0].pixels.shape == (224, 224, 3)


def test_no_flip_moves_peak_by_offset():
    m = np.zeros((256, 256))
    m[100, 140] = 1.0
    img = Image(np.zeros((256, 256, 3), np.uint8))
    _, out = data.apply_augmentation(img, {"a": m}, data.Augmentation(7, 29, False))
    assert np.unravel_index(np.argmax(out["a"]), out["a"].shape) == (93, 111)


def test_flip_pair_alignment():
    assert flip_alignment_failures(200, seed=3) == 0


def test_eval_center_crop():
    m = np.zeros((256, 256))
    m[120, 50] = 1.0
    img = Image(np.zeros((256, 256, 3), np.uint8))
    _, out = data.preprocess_eval(img, {"a": m})
    assert np.unravel_index(np.argmax(out["a"]), out["a"].shape) == (104, 34)


def test_fixture_manifest_loads(fixture_manifest):
    m = data.load_manifest(fixture_manifest)
    assert len(m.records) == 9 and m.report["violations"] == 0
    used = {a for r in m.records for a in r.annotations}
    assert len(used) <= 9
    assert m.report["per_category"]["towel"] == 3
    assert sum(m.report["per_affordance"].values()) == 27
    assert len(m.categories) == 15 and len(m.affordances) == 15


def test_fixture_points_are_silhouette_vertices(tmp_path):
    rng = np.random.default_rng([7, 0, 0])
    _, anns, verts = data._fixture_image("towel", rng)
    vs = {tuple(map(float, v)) for v in verts}
    assert all(tuple(p) in vs for p in anns["pick_corner"] + anns["place_corner"])


def test_fixture_byte_identical(tmp_path):
    a = data.make_fixture(7, tmp_path / "a")
    b = data.make_fixture(7, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    files = sorted(p.name for p in (tmp_path / "a" / "images").iterdir())
    assert len(files) == 9
    for f in files:
        assert (tmp_path / "a/images" / f).read_bytes() == (tmp_path / "b/images" / f).read_bytes()
    c = data.make_fixture(8, tmp_path / "c")
    assert c.read_bytes() != a.read_bytes()


def test_one_shot_split(fixture_manifest):
    split = data.one_shot_split(data.load_manifest(fixture_manifest).records)
    assert [r.id for r in split.train] == ["towel_0", "short_sleeve_tshirt_0", "shorts_0"]
    assert len(split.test) == 6
    assert not {r.id for r in split.train} & {r.id for r in split.test}


def test_each_crafted_violation_names_its_record(fixture_manifest, tmp_path):
    cases = crafted_manifests(fixture_manifest, tmp_path)
    assert len(cases) == 5
    for name, path, rid in cases:
        with pytest.raises(data.ManifestError) as err:
            data.load_manifest(path)
        assert [v[0] for v in err.value.violations] == [rid], name


def test_manifest_top_level_and_duplicates(fixture_manifest, tmp_path):
    doc = json.loads(fixture_manifest.read_text())
    for r in doc["records"]:
        r["image"] = str(fixture_manifest.parent / r["image"])
    doc["records"].append(dict(doc["records"][0]))
    p = tmp_path / "dup.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(data.ManifestError, match="duplicate"):
        data.load_manifest(p)
    del doc["flip_pairs"]
    p.write_text(json.dumps(doc))
    with pytest.raises(data.ManifestError, match="flip_pairs"):
        data.load_manifest(p)


def test_heatmap_cache_round_trip(fixture_manifest):
    m = data.load_manifest(fixture_manifest)
    paths = data.write_dense_cache(m.records[0], 10.0)
    assert len(paths) == 3 and all(p.name.endswith(".s10.png") for p in paths)
    back = data.read_heatmap16(paths[0])
    assert back.max() == 1.0 and back.shape == data.FIXTURE_SIZE
