import json

import numpy as np
import pytest

from hyscdg.footprints import ClassStats, FootprintStore, InstanceFootprint, load_footprints


def feature(fid, coords, gtype="Polygon", class_id=None):
    props = {"id": fid}
    if class_id is not None:
        props["class_id"] = class_id
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {"type": gtype, "coordinates": coords},
    }


def square(x, y, s):
    return [[[x, y], [x + s, y], [x + s, y + s], [x, y + s], [x, y]]]


def write_collection(path, features):
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
    return path


class TestLoadFootprints:
    def test_three_valid_polygons(self, tmp_path):
        path = write_collection(
            tmp_path / "f.geojson",
            [feature(f"p{i}", square(i * 10, 0, 4)) for i in range(3)],
        )
        report = load_footprints(path)
        assert len(report.footprints) == 3
        assert report.dropped_degenerate == 0
        assert report.feature_errors == []

    def test_zero_area_dropped_with_warning(self, tmp_path):
        degenerate = [[[0, 0], [5, 0], [0, 0]]]
        path = write_collection(
            tmp_path / "f.geojson",
            [feature("ok", square(0, 0, 4)), feature("flat", degenerate)],
        )
        report = load_footprints(path)
        assert len(report.footprints) == 1
        assert report.dropped_degenerate == 1

    def test_multipolygon_part_suffixes(self, tmp_path):
        # two-part fixture: parsing yields one footprint per part
        coords = [square(0, 0, 3), square(10, 10, 3)]
        path = write_collection(tmp_path / "f.geojson", [feature("mp", coords, "MultiPolygon")])
        report = load_footprints(path)
        ids = sorted(f.instance_id for f in report.footprints)
        assert ids == ["mp#0", "mp#1"]

    def test_malformed_feature_continues(self, tmp_path):
        bowtie = [[[0, 0], [4, 4], [4, 0], [0, 4], [0, 0]]]
        path = write_collection(
            tmp_path / "f.geojson",
            [feature("bad", bowtie), feature("good", square(0, 0, 2))],
        )
        report = load_footprints(path)
        assert [f.instance_id for f in report.footprints] == ["good"]
        assert len(report.feature_errors) == 1

    def test_unreadable_file_fatal(self, tmp_path):
        bad = tmp_path / "broken.geojson"
        bad.write_text("{not json")
        with pytest.raises(json.JSONDecodeError):
            load_footprints(bad)

    def test_class_hint_parsed(self, tmp_path):
        path = write_collection(tmp_path / "f.geojson", [feature("a", square(0, 0, 2), class_id=7)])
        assert load_footprints(path).footprints[0].source_class_hint == 7

    def test_min_area_filter(self, tmp_path):
        path = write_collection(
            tmp_path / "f.geojson",
            [feature("small", square(0, 0, 1)), feature("big", square(5, 5, 10))],
        )
        report = load_footprints(path, min_area=2.0)
        assert [f.instance_id for f in report.footprints] == ["big"]
        assert report.dropped_degenerate == 1


def brute_force_query(footprints, extent):
    from shapely.geometry import box

    rect = box(*extent)
    hits = [f for f in footprints if f.shape().intersects(rect)]
    return sorted(hits, key=lambda f: f.instance_id)


class TestFootprintStore:
    def test_inside_returned(self):
        fp = InstanceFootprint("a", (tuple(map(tuple, square(1, 1, 2)[0])),), (1, 1, 3, 3))
        store = FootprintStore([fp])
        assert [f.instance_id for f in store.query((0, 0, 10, 10))] == ["a"]

    def test_edge_touch_returned(self):
        # closed-intersection rule: touching the boundary counts
        fp = InstanceFootprint("edge", (tuple(map(tuple, square(10, 0, 2)[0])),), (10, 0, 12, 2))
        store = FootprintStore([fp])
        assert [f.instance_id for f in store.query((0, 0, 10, 10))] == ["edge"]

    def test_outside_not_returned(self):
        fp = InstanceFootprint("far", (tuple(map(tuple, square(100, 100, 2)[0])),), (100, 100, 102, 102))
        store = FootprintStore([fp])
        assert store.query((0, 0, 10, 10)) == []

    def test_random_boxes_match_brute_force(self):
        rng = np.random.default_rng(42)
        fps = []
        for i in range(100):
            x, y = rng.uniform(0, 100, 2)
            s = rng.uniform(0.5, 8)
            fps.append(
                InstanceFootprint(
                    f"b{i:03d}",
                    (tuple(map(tuple, square(x, y, s)[0])),),
                    (x, y, x + s, y + s),
                )
            )
        store = FootprintStore(fps)
        for _ in range(25):
            cx, cy = rng.uniform(-10, 110, 2)
            w, h = rng.uniform(1, 40, 2)
            extent = (cx, cy, cx + w, cy + h)
            got = [f.instance_id for f in store.query(extent)]
            expected = [f.instance_id for f in brute_force_query(fps, extent)]
            assert got == expected


class TestClassStats:
    def test_uniform_map(self):
        stats = ClassStats(k=5)
        stats.accumulate(np.full((8, 8), 3, dtype=np.uint8))
        assert stats.counts[3] == 64
        assert stats.frequencies()[3] == 1.0

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 4, (8, 8))
        b = rng.integers(0, 4, (8, 8))
        s1 = ClassStats(k=4).accumulate(a).accumulate(b)
        s2 = ClassStats(k=4).accumulate(b).accumulate(a)
        np.testing.assert_array_equal(s1.counts, s2.counts)

    def test_histogram_matches_pixel_loop(self):
        rng = np.random.default_rng(7)
        labels = rng.integers(0, 6, (8, 8))
        stats = ClassStats(k=6).accumulate(labels)
        expected = np.zeros(6, dtype=np.int64)
        for v in labels.ravel():
            expected[v] += 1
        np.testing.assert_array_equal(stats.counts, expected)

    def test_frequencies_sum_to_one(self):
        stats = ClassStats(k=3).accumulate(np.array([[0, 1], [2, 2]]))
        assert stats.frequencies().sum() == pytest.approx(1.0, abs=1e-9)

    def test_merge_associative_total_preserving(self):
        rng = np.random.default_rng(1)
        maps = [rng.integers(0, 3, (4, 4)) for _ in range(3)]
        merged = ClassStats(k=3)
        for m in maps:
            part = ClassStats(k=3).accumulate(m)
            merged.merge(part)
        assert merged.total == sum(m.size for m in maps)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            ClassStats(k=2).accumulate(np.array([[5]]))

    def test_json_roundtrip(self):
        stats = ClassStats(k=3, dataset_id="d").accumulate(np.array([[0, 1], [1, 2]]))
        back = ClassStats.from_json(stats.to_json())
        np.testing.assert_array_equal(back.counts, stats.counts)
        assert back.dataset_id == "d"
