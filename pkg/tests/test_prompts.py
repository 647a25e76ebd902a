import numpy as np
import pytest

from hyscdg.footprints import ClassStats
from hyscdg.prompts import (
    PromptSpec,
    build_prompt,
    render_prompt,
    salient_classes,
    season_of,
    time_of_day_of,
)
from hyscdg.raster import default_class_table
from datetime import datetime


class TestRenderPrompt:
    def test_full_example(self):
        spec = PromptSpec(
            locality="Savigny-en-Revermont",
            region="Bourgogne-Franche-Comté",
            time_of_day="morning",
            season="Summer",
            semantic=["Grass", "agricultural vegetation next to a highway"],
        )
        assert render_prompt(spec) == (
            "Grass and agricultural vegetation next to a highway, "
            "locality of Savigny-en-Revermont, Bourgogne-Franche-Comté, "
            "in the morning, during Summer."
        )

    def test_empty_semantic_omitted(self):
        spec = PromptSpec(locality="X", region="Y", time_of_day="night", season="Winter")
        out = render_prompt(spec)
        assert out == "locality of X, Y, in the night, during Winter."
        assert ", ," not in out and not out.startswith(",")

    def test_deterministic(self):
        spec = PromptSpec(locality="A", semantic=["Water"])
        assert render_prompt(spec) == render_prompt(spec)

    def test_no_parts_empty_string(self):
        assert render_prompt(PromptSpec()) == ""

    def test_no_dangling_separators_any_combination(self):
        fields = dict(locality="L", region="R", time_of_day="noonish", season="Spring")
        for i in range(16):
            kwargs = {k: v for j, (k, v) in enumerate(fields.items()) if i >> j & 1}
            out = render_prompt(PromptSpec(semantic=["A"] if i % 2 else [], **kwargs))
            assert ",," not in out.replace(" ", "")
            if out:
                assert out.endswith(".") and not out.endswith(",.")


class TestSalientClasses:
    def make_stats(self, freqs):
        stats = ClassStats(k=len(freqs))
        stats.counts = (np.array(freqs) * 10_000).astype(np.int64)
        return stats

    def test_dominant_class_listed_first(self):
        stats = self.make_stats([0.1, 0.9])
        labels = np.zeros((10, 10), dtype=np.int64)
        core = np.zeros((10, 10), dtype=bool)
        core[:3, :3] = True
        assert salient_classes(labels, core, stats, tau=1.5) == [0]

    def test_no_class_above_threshold(self):
        # local composition == global composition; tau > 1 excludes everything
        stats = self.make_stats([0.5, 0.5])
        labels = np.zeros((2, 2), dtype=np.int64)
        labels[0, :] = 0
        labels[1, :] = 1
        core = np.ones((2, 2), dtype=bool)
        assert salient_classes(labels, core, stats, tau=1.5) == []

    def test_hand_computed_ratios(self):
        # global: (0.5, 0.25, 0.125, 0.125); core 8 px: 4 of c2, 3 of c1, 1 of c0
        stats = self.make_stats([0.5, 0.25, 0.125, 0.125])
        labels = np.array([[2, 2, 2, 2, 1, 1, 1, 0]])
        core = np.ones((1, 8), dtype=bool)
        # ratios: c0 0.125/0.5=0.25, c1 0.375/0.25=1.5, c2 0.5/0.125=4.0
        assert salient_classes(labels, core, stats, tau=1.2) == [2, 1]

    def test_cap_of_three(self):
        stats = self.make_stats([0.2, 0.2, 0.2, 0.2, 0.2])
        labels = np.array([[0, 1, 2, 3]])
        core = np.ones((1, 4), dtype=bool)
        out = salient_classes(labels, core, stats, tau=1.0)
        assert len(out) <= 3

    def test_empty_core(self):
        stats = self.make_stats([0.5, 0.5])
        assert salient_classes(np.zeros((4, 4)), np.zeros((4, 4), bool), stats) == []

    def test_invalid_tau(self):
        stats = self.make_stats([0.5, 0.5])
        with pytest.raises(ValueError):
            salient_classes(np.zeros((2, 2)), np.ones((2, 2), bool), stats, tau=0)


class TestTemporalBuckets:
    @pytest.mark.parametrize(
        "month,season",
        [(1, "Winter"), (12, "Winter"), (4, "Spring"), (7, "Summer"), (10, "Autumn")],
    )
    def test_seasons(self, month, season):
        assert season_of(datetime(2020, month, 15)) == season

    @pytest.mark.parametrize(
        "hour,tod", [(6, "morning"), (13, "afternoon"), (19, "evening"), (23, "night"), (2, "night")]
    )
    def test_time_of_day(self, hour, tod):
        assert time_of_day_of(datetime(2020, 6, 1, hour)) == tod


class TestBuildPrompt:
    def test_from_meta_and_map(self):
        table = default_class_table()
        stats = ClassStats(k=table.k)
        stats.counts = np.ones(table.k, dtype=np.int64) * 1000
        labels = np.full((8, 8), table.index_of("Water"), dtype=np.int64)
        core = np.zeros((8, 8), dtype=bool)
        core[2:5, 2:5] = True
        meta = {
            "place": {"locality": "Testville", "region": "Fixture County"},
            "acquired": "2021-07-10T08:12:00",
        }
        spec = build_prompt(labels, core, stats, table, meta=meta)
        assert spec.rendered == (
            "Water, locality of Testville, Fixture County, in the morning, during Summer."
        )

    def test_missing_timestamp_omits_temporal(self):
        table = default_class_table()
        stats = ClassStats(k=table.k)
        stats.counts = np.ones(table.k, dtype=np.int64)
        spec = build_prompt(
            np.zeros((4, 4), dtype=np.int64),
            np.zeros((4, 4), dtype=bool),
            stats,
            table,
            meta={"place": {"locality": "A", "region": "B"}},
        )
        assert spec.rendered == "locality of A, B."
