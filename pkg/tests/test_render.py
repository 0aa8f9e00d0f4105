import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import boundary, square
from prevmap.bym import PosteriorRow
from prevmap.direct import ALL_ZERO, NONE, DirectEstimate
from prevmap.errors import PrevmapError
from prevmap.render import (
    ChoroplethSpec,
    assign_bins,
    compute_breaks,
    default_ramp,
    render_choropleth,
    render_comparison,
    render_country_panels,
    render_map_row,
    sig3,
)


def region_paths(svg):
    return re.findall(r'<path d="M [^"]*" fill="([^"]*)" fill-rule="evenodd"', svg)


def posterior_row(rid, prev, sd=0.01, lo=None, hi=None, direct_p=None, degen=NONE, n=50):
    lo = prev - 0.02 if lo is None else lo
    hi = prev + 0.02 if hi is None else hi
    dp = prev if direct_p is None else direct_p
    se = float("nan") if degen != NONE else sd * 1.2
    return PosteriorRow(
        region_id=rid, prev_mean=prev, prev_median=prev, prev_sd=sd,
        prev_q025=lo, prev_q975=hi, theta_mean=0.0, theta_sd=0.1,
        direct_p=dp, direct_se=se, n=n, degenerate=degen,
        rhat_theta=1.0, ess_theta=1000.0,
    )


class TestSig3:
    @pytest.mark.parametrize(
        "value,expected",
        [
            (0.25, "0.25"),
            (0.250, "0.25"),
            (14.23, "14.2"),
            (1936.0, "1940"),
            (0.0, "0"),
            (0.05013, "0.0501"),
            (5.0, "5"),
            (-3.456, "-3.46"),
        ],
    )
    def test_cases(self, value, expected):
        assert sig3(value) == expected

    def test_nan(self):
        assert sig3(float("nan")) == "nan"


class TestBreaks:
    def test_quantile_split_at_quarter(self):
        edges = compute_breaks([0.1, 0.2, 0.3, 0.4], "quantile", 2)
        assert edges == [pytest.approx(0.25)]
        bins = assign_bins([0.1, 0.2, 0.3, 0.4], edges)
        assert bins == [0, 0, 1, 1]

    def test_edge_value_falls_in_lower_bin(self):
        assert assign_bins([0.25], [0.25]) == [0]
        assert assign_bins([0.2500001], [0.25]) == [1]

    def test_equal_interval(self):
        edges = compute_breaks([0.0, 1.0, 2.0, 10.0], "equal_interval", 2)
        assert edges == [pytest.approx(5.0)]

    def test_quantile_five_bins(self):
        vals = list(np.linspace(0, 1, 101))
        edges = compute_breaks(vals, "quantile", 5)
        assert edges == [pytest.approx(q) for q in (0.2, 0.4, 0.6, 0.8)]

    @settings(max_examples=30, deadline=None)
    @given(
        vals=st.lists(
            st.floats(min_value=-100, max_value=100, allow_nan=False),
            min_size=2,
            max_size=40,
        ),
        bins=st.integers(min_value=2, max_value=6),
    )
    def test_bins_monotone_in_value(self, vals, bins):
        edges = compute_breaks(vals, "quantile", bins)
        assigned = assign_bins(sorted(vals), edges)
        assert assigned == sorted(assigned)
        assert all(0 <= b < bins for b in assigned)


class TestChoroplethSpecValidation:
    def test_bad_bins(self):
        with pytest.raises(PrevmapError, match="bin count"):
            ChoroplethSpec(column="v", bins=1).validate()

    def test_ramp_length_mismatch(self):
        with pytest.raises(PrevmapError, match="ramp length"):
            ChoroplethSpec(column="v", bins=3, ramp=("#000", "#fff")).validate()

    def test_bad_strategy(self):
        with pytest.raises(PrevmapError, match="strategy"):
            ChoroplethSpec(column="v", strategy="jenks").validate()

    def test_default_ramp_matches_bins(self):
        for bins in range(2, 8):
            assert len(default_ramp(bins)) == bins


class TestRenderChoropleth:
    @staticmethod
    def two_regions():
        return [boundary("R1", square(0, 0), "A"), boundary("R2", square(1, 0), "B")]

    def test_two_paths_and_two_legend_entries(self):
        spec = ChoroplethSpec(column="v", strategy="equal_interval", bins=2)
        svg = render_choropleth(self.two_regions(), {"R1": 0.1, "R2": 0.2}, spec)
        assert len(region_paths(svg)) == 2
        assert svg.count("<rect") >= 2  # legend swatches
        assert "0.1 - 0.15" in svg or "0.1 - 0.2" in svg

    def test_unknown_region_named(self):
        spec = ChoroplethSpec(column="v", bins=2)
        with pytest.raises(PrevmapError, match="R9"):
            render_choropleth(self.two_regions(), {"R1": 0.1, "R9": 0.5}, spec)

    def test_missing_region_hatched(self):
        spec = ChoroplethSpec(column="v", bins=2)
        svg = render_choropleth(self.two_regions(), {"R1": 0.1}, spec)
        assert "url(#hatch)" in svg

    def test_nan_value_hatched(self):
        spec = ChoroplethSpec(column="v", bins=2)
        svg = render_choropleth(
            self.two_regions(), {"R1": 0.1, "R2": float("nan")}, spec
        )
        assert "url(#hatch)" in svg

    def test_byte_deterministic(self):
        spec = ChoroplethSpec(column="v", bins=3)
        values = {"R1": 0.37, "R2": 0.11}
        a = render_choropleth(self.two_regions(), values, spec, metadata={"seed": "1"})
        b = render_choropleth(self.two_regions(), values, spec, metadata={"seed": "1"})
        assert a == b

    def test_legend_matches_break_computation(self):
        rng = np.random.default_rng(3)
        cells = [
            boundary(f"R{k}", square(k % 4, k // 4)) for k in range(12)
        ]
        values = {b.region_id: float(rng.uniform(0, 0.5)) for b in cells}
        spec = ChoroplethSpec(column="v", strategy="quantile", bins=4)
        svg = render_choropleth(cells, values, spec)
        edges = compute_breaks(list(values.values()), "quantile", 4)
        full = [min(values.values())] + edges + [max(values.values())]
        for lo, hi in zip(full, full[1:]):
            assert f"{sig3(lo)} - {sig3(hi)}" in svg

    def test_per_group_scope_uses_group_values_only(self):
        cells = self.two_regions()
        spec = ChoroplethSpec(
            column="v", strategy="equal_interval", bins=2, scope="per_group"
        )
        svg = render_choropleth(cells, {"R1": 0.1, "R2": 100.0}, spec)
        # each single-region group ranges over its own value only
        assert "0.1 - 0.1" in svg
        assert "100 - 100" in svg

    def test_metadata_comment_embedded(self):
        spec = ChoroplethSpec(column="v", bins=2)
        svg = render_choropleth(
            self.two_regions(), {"R1": 0.1, "R2": 0.2}, spec,
            metadata={"prevmap-version": "0.1.0", "seed": "7"},
        )
        assert "<!-- prevmap-version: 0.1.0; seed: 7 -->" in svg


class TestRenderRows:
    def test_map_row_has_one_group_per_panel(self):
        cells = TestRenderChoropleth.two_regions()
        spec = ChoroplethSpec(column="v", bins=2)
        svg = render_map_row(
            cells,
            [("mean", {"R1": 0.1, "R2": 0.2}), ("upper", {"R1": 0.3, "R2": 0.4})],
            spec,
        )
        assert svg.count('<g transform="translate(') == 2
        assert len(region_paths(svg)) == 4

    def test_country_panels_independent_scales(self):
        cells = [
            boundary("R1", square(0, 0), "A"),
            boundary("R2", square(1, 0), "A"),
            boundary("R3", square(5, 0), "B"),
            boundary("R4", square(6, 0), "B"),
        ]
        spec = ChoroplethSpec(column="v", strategy="equal_interval", bins=2)
        svg = render_country_panels(
            cells, {"R1": 0.0, "R2": 1.0, "R3": 100.0, "R4": 200.0}, spec
        )
        assert svg.count('<g transform="translate(') == 2
        assert "0 - 0.5" in svg      # country A's own scale
        assert "100 - 150" in svg    # country B's own scale


class TestRenderComparison:
    @staticmethod
    def inputs(identical=True):
        rng = np.random.default_rng(1)
        direct, rows = [], []
        for k in range(8):
            rid = f"R{k}"
            p = float(rng.uniform(0.05, 0.3))
            var_p = float(rng.uniform(1e-4, 4e-4))
            d = DirectEstimate(
                rid, p, var_p, math.log(p / (1 - p)),
                var_p / (p * (1 - p)) ** 2, 60, 6, NONE,
            )
            direct.append(d)
            post_p = p if identical else p * 0.7 + 0.05
            rows.append(posterior_row(rid, post_p, sd=math.sqrt(var_p)))
        return direct, rows

    def test_identity_input_points_on_identity_line(self):
        direct, rows = self.inputs(identical=True)
        svg = render_comparison(direct, rows)
        panel_a = svg.split('<g id="panelA">')[1].split('<g id="panelB"')[0]
        circles = re.findall(r'<circle cx="([0-9.]+)" cy="([0-9.]+)"', panel_a)
        assert len(circles) == 8
        # identity in pixel space: cx - x0 == (y0 + h) - cy for square axes
        for cx, cy in circles:
            assert abs((float(cx) - 60.0) - (280.0 - float(cy))) < 0.02

    def test_degenerate_region_marked_open_without_direct_bar(self):
        direct, rows = self.inputs()
        degen = DirectEstimate(
            "R_zero", 0.0, 0.0, float("nan"), float("nan"), 40, 5, ALL_ZERO
        )
        direct.append(degen)
        rows.append(posterior_row("R_zero", 0.04, lo=0.01, hi=0.09, direct_p=0.0,
                                  degen=ALL_ZERO))
        svg = render_comparison(direct, rows)
        panel_c = svg.split('<g id="panelC"')[1]
        assert 'stroke="#c0392b"' in panel_c  # the open diamond marker
        # gray (direct) interval count equals non-degenerate region count
        assert panel_c.count('stroke="#777"') == 8

    def test_region_set_mismatch_rejected(self):
        direct, rows = self.inputs()
        with pytest.raises(PrevmapError, match="differ"):
            render_comparison(direct[:-1], rows)

    def test_deterministic(self):
        direct, rows = self.inputs(identical=False)
        assert render_comparison(direct, rows) == render_comparison(direct, rows)
