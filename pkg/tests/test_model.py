import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tunnel_pathloss.model import (
    DegenerateModelError,
    FresnelParams,
    TemplateModel,
    TunnelGeometry,
    fresnel_break_point,
    invert_distance,
    normalize_pair,
    path_loss,
)

REF = TemplateModel(gamma=2.0, c=20.1, d0=50.0, alpha=0.2)

models = st.builds(
    TemplateModel,
    gamma=st.floats(1.0, 4.0),
    c=st.floats(0.0, 40.0),
    d0=st.floats(5.0, 200.0),
    alpha=st.floats(0.05, 1.0),
)


class TestPathLoss:
    def test_reference_values(self):
        # 2*(10*log10(50) + 20.1) and that plus 0.2*250
        assert path_loss(REF, 50.0) == pytest.approx(74.1794, abs=1e-4)
        assert path_loss(REF, 300.0) == pytest.approx(124.1794, abs=1e-4)

    def test_unit_distance(self):
        assert path_loss(TemplateModel(1.0, 0.0, 10.0, 0.1), 1.0) == 0.0

    def test_array_matches_scalar(self):
        d = np.array([1.0, 10.0, 50.0, 50.5, 300.0])
        got = path_loss(REF, d)
        assert got == pytest.approx([path_loss(REF, x) for x in d], rel=1e-14)

    @pytest.mark.parametrize("d", [0.0, -1.0, float("nan")])
    def test_rejects_non_positive_distance(self, d):
        with pytest.raises(ValueError):
            path_loss(REF, d)
        with pytest.raises(ValueError):
            path_loss(REF, np.array([1.0, d]))

    def test_l0_identity(self):
        assert REF.l0() == REF.gamma * (10 * math.log10(REF.d0) + REF.c)

    @given(models)
    def test_continuous_at_break_point(self, m):
        lo = path_loss(m, m.d0 * (1 - 1e-9))
        hi = path_loss(m, m.d0 * (1 + 1e-9))
        assert abs(lo - hi) < 1e-6

    @given(models, st.floats(0.01, 1e4), st.floats(0.01, 1e4))
    def test_monotone_when_alpha_positive(self, m, a, b):
        if a == b:
            return
        lo, hi = sorted((a, b))
        assert path_loss(m, lo) < path_loss(m, hi)

    def test_invalid_models(self):
        with pytest.raises(ValueError):
            TemplateModel(0.0, 1.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            TemplateModel(1.0, 1.0, 0.0, 0.1)
        with pytest.raises(ValueError):
            TemplateModel(1.0, 1.0, 1.0, math.inf)
        # zero and negative slopes are legal for forward evaluation
        assert path_loss(TemplateModel(2.0, 20.1, 50.0, 0.0), 100.0) == pytest.approx(REF.l0())


class TestFresnel:
    @pytest.mark.parametrize(
        "h_r, h_t, lam, expected",
        [(1.5, 1.5, 0.125, 72.0), (0.0, 1.5, 0.125, 0.0), (1.0, 1.0, 4.0, 1.0)],
    )
    def test_values(self, h_r, h_t, lam, expected):
        assert fresnel_break_point(FresnelParams(h_r, h_t, lam)) == pytest.approx(expected)

    @pytest.mark.parametrize("lam", [0.0, -0.1])
    def test_bad_wavelength(self, lam):
        with pytest.raises(ValueError):
            fresnel_break_point(FresnelParams(1.0, 1.0, lam))

    @given(st.floats(0, 50), st.floats(0, 50), st.floats(0.01, 10))
    def test_symmetric_in_heights(self, a, b, lam):
        assert fresnel_break_point(FresnelParams(a, b, lam)) == fresnel_break_point(FresnelParams(b, a, lam))


class TestInvert:
    @pytest.mark.parametrize(
        "loss, expected",
        [(60.2, 10.0), (path_loss(REF, 300.0), 300.0), (REF.l0(), 50.0)],
    )
    def test_reference(self, loss, expected):
        assert invert_distance(REF, loss) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=300)
    @given(models, st.floats(0.1, 1e4))
    def test_round_trip(self, m, d):
        assert abs(invert_distance(m, path_loss(m, d)) - d) / d < 1e-9

    def test_flat_far_region_not_invertible(self):
        m = TemplateModel(2.0, 20.1, 50.0, 0.0)
        assert invert_distance(m, 60.2) == pytest.approx(10.0)
        with pytest.raises(DegenerateModelError):
            invert_distance(m, m.l0() + 1.0)

    def test_negative_slope_far_region_not_invertible(self):
        m = TemplateModel(2.0, 20.1, 50.0, -0.1)
        with pytest.raises(DegenerateModelError):
            invert_distance(m, m.l0() + 1.0)

    def test_non_finite_loss(self):
        with pytest.raises(ValueError):
            invert_distance(REF, float("inf"))


class TestNormalize:
    @pytest.mark.parametrize(
        "d1, d2, span, expected",
        [(30.0, 90.0, 80.0, (20.0, 60.0)), (40.0, 40.0, 80.0, (40.0, 40.0)), (10.0, 30.0, 80.0, (20.0, 60.0))],
    )
    def test_values(self, d1, d2, span, expected):
        assert normalize_pair(d1, d2, span) == pytest.approx(expected, rel=1e-15)

    def test_consistent_pair_unchanged(self):
        assert normalize_pair(12.3, 67.7, 80.0) == (12.3, 67.7)

    def test_zero_sum(self):
        with pytest.raises(ValueError):
            normalize_pair(0.0, 0.0, 80.0)

    @settings(max_examples=500)
    @given(st.floats(1e-3, 1e4), st.floats(1e-3, 1e4), st.floats(1.0, 1e4))
    def test_sum_and_ratio(self, d1, d2, span):
        n1, n2 = normalize_pair(d1, d2, span)
        assert abs((n1 + n2) - span) <= math.ulp(span)
        assert n1 / n2 == pytest.approx(d1 / d2, rel=1e-15)


class TestGeometry:
    def test_span_and_distances(self):
        g = TunnelGeometry(0.0, 300.0, (15.0, 30.0, 270.0, 285.0))
        assert g.span == 300.0
        assert g.anchor_distances(0) == (15.0, 285.0)
        assert g.anchor_distances(3) == (285.0, 15.0)

    @pytest.mark.parametrize(
        "bs1, bs2, anchors",
        [(0, 0, ()), (10, 0, ()), (0, 100, (0.0,)), (0, 100, (100.0,)), (0, 100, (50.0, 50.0)), (0, 100, (60.0, 40.0))],
    )
    def test_invalid(self, bs1, bs2, anchors):
        with pytest.raises(ValueError):
            TunnelGeometry(bs1, bs2, anchors)
