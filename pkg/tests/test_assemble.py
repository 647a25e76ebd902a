import json

import numpy as np
import pytest

from hyscdg.assemble import (
    build_index,
    compute_source_stats,
    consistency_rate,
    consistency_report,
    expand_pairs,
    generate_variants,
    load_source_bundle,
    pair_change_packed,
    write_tile_outputs,
)
from hyscdg.backend import ProceduralBackend
from hyscdg.footprints import FootprintStore, load_footprints
from hyscdg.planner import PlanConfig
from hyscdg.raster import default_class_table
from hyscdg.tileio import list_tile_dirs, load_image_tif, load_semantic_png

TABLE = default_class_table()


@pytest.fixture(scope="module")
def corpus_parts(small_corpus):
    stats = compute_source_stats(small_corpus, TABLE)
    store = FootprintStore(load_footprints(small_corpus / "footprints.geojson").footprints)
    return small_corpus, stats, store


def run_tile(corpus_parts, tile_index=0, master_seed=5, variants=3, backend=None):
    corpus, stats, store = corpus_parts
    tile_dir = list_tile_dirs(corpus)[tile_index]
    bundle = load_source_bundle(tile_dir)
    fps = store.query(bundle.tile.georef.extent(bundle.tile.height, bundle.tile.width))
    outcomes = generate_variants(
        bundle, fps, stats, TABLE, PlanConfig(variants=variants),
        backend or ProceduralBackend(TABLE), master_seed,
    )
    return bundle, outcomes


class TestGenerateVariants:
    def test_variant_count_and_distinct_plans(self, corpus_parts):
        _, outcomes = run_tile(corpus_parts, variants=3)
        assert len(outcomes) == 3
        assert len({oc.plan.seed for oc in outcomes}) == 3

    def test_rerun_bit_identical(self, corpus_parts):
        _, first = run_tile(corpus_parts, master_seed=21)
        _, second = run_tile(corpus_parts, master_seed=21)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.image, b.image)
            assert a.plan.to_json() == b.plan.to_json()

    def test_zero_change_zero_decoy_identity(self, corpus_parts):
        corpus, stats, _ = corpus_parts
        bundle = load_source_bundle(list_tile_dirs(corpus)[0])
        # no footprints; scan for a seed whose plan has no decoys either
        for seed in range(50):
            outcomes = generate_variants(
                bundle, [], stats, TABLE, PlanConfig(variants=1),
                ProceduralBackend(TABLE), seed,
            )
            plan = outcomes[0].plan
            if not plan.decoys:
                np.testing.assert_array_equal(outcomes[0].image, bundle.tile.bands)
                return
        pytest.fail("no zero-decoy seed in range")

    def test_synthesized_identity_outside_support(self, corpus_parts):
        bundle, outcomes = run_tile(corpus_parts, master_seed=9)
        for oc in outcomes:
            outside = oc.plan.merged_soft == 0
            np.testing.assert_array_equal(
                oc.image[:, outside], bundle.tile.bands[:, outside]
            )

    def test_backend_failure_isolated(self, corpus_parts):
        class Flaky:
            backend_id = "flaky/1"

            def __init__(self):
                self.calls = 0

            def inpaint(self, request):
                self.calls += 1
                if request.variant == 1:
                    raise RuntimeError("synthetic failure")
                return ProceduralBackend(TABLE).inpaint(request)

        _, outcomes = run_tile(corpus_parts, backend=Flaky())
        assert outcomes[1].error and outcomes[1].image is None
        assert outcomes[0].image is not None and outcomes[2].image is not None


class TestExpandPairs:
    def records(self, n_ok, n_fail=0):
        recs = [{"variant": i, "seed": 100 + i, "ok": True} for i in range(n_ok)]
        recs += [{"variant": n_ok + i, "seed": 200 + i, "ok": False} for i in range(n_fail)]
        return recs

    def test_three_variants_six_pairs(self):
        pairs = expand_pairs("t0", self.records(3))
        assert len(pairs) == 6
        kinds = [p["kind"] for p in pairs]
        assert kinds.count("real_synth") == 3
        assert kinds.count("synth_synth") == 3

    def test_sibling_toggle(self):
        assert len(expand_pairs("t0", self.records(3), sibling=False)) == 3

    def test_failed_variant_excluded(self):
        pairs = expand_pairs("t0", self.records(2, n_fail=1))
        assert len(pairs) == 2 + 1
        for p in pairs:
            assert "v2" not in json.dumps(p)

    def test_pair_count_formula(self):
        for v in range(1, 5):
            pairs = expand_pairs("t", self.records(v))
            assert len(pairs) == v + v * (v - 1) // 2


class TestSiblingChange:
    def test_identical_plans_zero_change(self, tmp_path, corpus_parts):
        bundle, outcomes = run_tile(corpus_parts)
        write_tile_outputs(tmp_path, bundle, outcomes)
        tile_id = bundle.tile.tile_id
        pair = {
            "first": {"semantic": f"{tile_id}/v0/semantic.png"},
            "second": {"semantic": f"{tile_id}/v0/semantic.png"},
            "change": None,
        }
        packed = pair_change_packed(tmp_path, pair, TABLE.k)
        assert not packed.any()

    def test_sibling_diff_matches_pixelwise_oracle(self, tmp_path, corpus_parts):
        bundle, outcomes = run_tile(corpus_parts)
        write_tile_outputs(tmp_path, bundle, outcomes)
        tile_id = bundle.tile.tile_id
        pair = {
            "first": {"semantic": f"{tile_id}/v0/semantic.png"},
            "second": {"semantic": f"{tile_id}/v1/semantic.png"},
            "change": None,
        }
        packed = pair_change_packed(tmp_path, pair, TABLE.k)
        a = load_semantic_png(tmp_path / tile_id / "v0" / "semantic.png").astype(int)
        b = load_semantic_png(tmp_path / tile_id / "v1" / "semantic.png").astype(int)
        np.testing.assert_array_equal(packed != 0, a != b)
        changed = packed != 0
        np.testing.assert_array_equal(
            packed[changed].astype(int), a[changed] * TABLE.k + b[changed] + 1
        )


class TestConsistencyRate:
    def test_identical_zero(self):
        m = np.random.default_rng(0).integers(0, 5, (8, 8))
        core = np.ones((8, 8), dtype=bool)
        assert consistency_rate(m, m, core) == 0.0

    def test_half_disagreement(self):
        planned = np.zeros((4, 4), dtype=int)
        external = np.zeros((4, 4), dtype=int)
        external[:2] = 1
        assert consistency_rate(planned, external, np.ones((4, 4), bool)) == 0.5

    def test_empty_core_zero(self):
        assert consistency_rate(np.zeros((4, 4)), np.ones((4, 4)), np.zeros((4, 4), bool)) == 0.0

    def test_report_threshold(self):
        planned = np.zeros((10, 10), dtype=int)
        external = planned.copy()
        external[0, :1] = 1  # 1% disagreement
        rep = consistency_report(planned, external, np.ones((10, 10), bool))
        assert rep["pass"] and rep["threshold"] == 0.20
        external[:5] = 1  # 50%
        rep = consistency_report(planned, external, np.ones((10, 10), bool))
        assert not rep["pass"]


@pytest.fixture(scope="module")
def generated_root(tmp_path_factory, corpus_parts):
    corpus, stats, store = corpus_parts
    root = tmp_path_factory.mktemp("generated")
    backend = ProceduralBackend(TABLE)
    for tile_dir in list_tile_dirs(corpus):
        bundle = load_source_bundle(tile_dir)
        fps = store.query(bundle.tile.georef.extent(bundle.tile.height, bundle.tile.width))
        outcomes = generate_variants(
            bundle, fps, stats, TABLE, PlanConfig(variants=3), backend, 31
        )
        write_tile_outputs(root, bundle, outcomes)
    return root


class TestBuildIndex:
    def test_pair_arithmetic(self, generated_root, corpus_parts):
        index = build_index(generated_root, TABLE)
        n_tiles = len(list_tile_dirs(corpus_parts[0]))
        assert len(index["pairs"]) == 6 * n_tiles
        assert index["failed"] == []

    def test_prevalence_matches_brute_force(self, generated_root):
        index = build_index(generated_root, TABLE)
        changed = 0
        total = 0
        for pair in index["pairs"]:
            packed = pair_change_packed(generated_root, pair, TABLE.k)
            changed += int((packed != 0).sum())
            total += packed.size
        assert index["stats"]["changed_pixels"] == changed
        assert index["stats"]["pair_pixels"] == total
        assert index["stats"]["change_prevalence_pct"] == 100.0 * changed / total

    def test_band_stats(self, generated_root):
        index = build_index(generated_root, TABLE)
        assert len(index["stats"]["band_mean"]) == 5
        assert all(v >= 0 for v in index["stats"]["band_variance"])

    def test_missing_image_lands_in_failed(self, generated_root, tmp_path):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(generated_root, broken)
        victim = sorted(broken.iterdir())[0] / "v1" / "image.tif"
        victim.unlink()
        index = build_index(broken, TABLE)
        assert any(f["variant"] == 1 for f in index["failed"])
        # v1 no longer appears in any pair of that tile
        tile_id = sorted(p.name for p in broken.iterdir() if (p / "meta.json").exists())[0]
        for pair in index["pairs"]:
            if pair["tile_id"] == tile_id:
                assert 1 not in pair["variants"]

    def test_constant_band_variance_zero(self, tmp_path, corpus_parts):
        corpus, stats, _ = corpus_parts
        bundle = load_source_bundle(list_tile_dirs(corpus)[0])
        bundle.tile.bands[:] = 77
        # force a no-op variant so every image stays constant
        for seed in range(60):
            outcomes = generate_variants(
                bundle, [], stats, TABLE, PlanConfig(variants=1), ProceduralBackend(TABLE), seed
            )
            if not outcomes[0].plan.decoys:
                break
        write_tile_outputs(tmp_path, bundle, outcomes)
        index = build_index(tmp_path, TABLE)
        assert index["stats"]["band_mean"] == [77.0] * 5
        assert index["stats"]["band_variance"] == [0.0] * 5
