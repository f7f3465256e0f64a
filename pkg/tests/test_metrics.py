import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gdsr.errors import InvalidInputError, ShapeError
from gdsr.metrics import (
    NMAD_SCALE,
    MetricsReport,
    evaluate_pair,
    line_profile,
    mean_report,
    medae,
    nmad,
    profile_csv,
    rmse,
)
from gdsr.raster import HeightRaster

field = arrays(np.float64, (4, 5), elements=st.floats(-1e3, 1e3))


def brute(pred, gt):
    d = [p - g for p, g in zip(np.ravel(pred), np.ravel(gt))]
    n = len(d)

    def median(v):
        v = sorted(v)
        m = len(v) // 2
        return v[m] if len(v) % 2 else (v[m - 1] + v[m]) / 2

    r = math.sqrt(math.fsum(x * x for x in d) / n)
    med = median(d)
    return r, 1.4826 * median([abs(x - med) for x in d]), median([abs(x) for x in d])


def test_match_brute_force(rng):
    for _ in range(50):
        pred, gt = rng.normal(400, 20, (16, 16)), rng.normal(400, 20, (16, 16))
        r, n, m = brute(pred, gt)
        rep = evaluate_pair(pred, gt)
        assert abs(rep.rmse - r) <= 1e-12 * max(1, r)
        assert abs(rep.nmad - n) <= 1e-12 * max(1, n)
        assert abs(rep.medae - m) <= 1e-12 * max(1, m)
        assert rep.n_pixels == 256


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    assert rmse([8.0, 9.0], [5.0, 5.0]) == rmse([3.0, 4.0], [0.0, 0.0])


def test_nmad_examples():
    z = np.zeros(5)
    assert nmad([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]) == 0.0
    assert nmad([0.0, 0.0, 0.0, 10.0], np.zeros(4)) == 0.0
    assert nmad([1.0, 2.0, 3.0, 4.0, 5.0], z) == NMAD_SCALE == 1.4826


def test_medae_examples():
    assert medae([2.0, 2.0], [2.0, 2.0]) == 0.0
    assert medae([1.0, -2.0, 3.0], [0.0, 0.0, 0.0]) == 2.0
    assert medae([1.0, 2.0, -3.0, 4.0], np.zeros(4)) == 2.5


@given(field, field)
def test_non_negative_and_zero_cases(pred, gt):
    rep = evaluate_pair(pred, gt)
    assert rep.rmse >= 0 and rep.nmad >= 0 and rep.medae >= 0
    same = evaluate_pair(pred, pred)
    assert same.rmse == 0 and same.medae == 0 and same.nmad == 0
    if rep.rmse == 0:
        assert np.array_equal(pred, gt)


@given(field, st.floats(-1e3, 1e3))
def test_nmad_zero_for_constant_offset(gt, c):
    assert nmad(gt + c, gt) <= 1e-9 * max(1.0, abs(c), np.abs(gt).max())


@given(field, field, st.floats(-100, 100))
def test_scale_equivariance(pred, gt, k):
    assume(abs(k) > 1e-3)
    a, b = evaluate_pair(k * pred, k * gt), evaluate_pair(pred, gt)
    for x, y in ((a.rmse, b.rmse), (a.nmad, b.nmad), (a.medae, b.medae)):
        assert x == pytest.approx(abs(k) * y, rel=1e-9, abs=1e-9)


@given(field, field, st.floats(-1e3, 1e3))
def test_translation(pred, gt, c):
    base = evaluate_pair(pred, gt)
    both = evaluate_pair(pred + c, gt + c)
    tol = 1e-9 * max(1.0, abs(c), np.abs(pred).max(), np.abs(gt).max())
    for x, y in ((both.rmse, base.rmse), (both.nmad, base.nmad), (both.medae, base.medae)):
        assert abs(x - y) <= tol
    assert abs(nmad(pred + c, gt) - base.nmad) <= 2 * tol


def test_masked_pixels_are_excluded():
    gt = HeightRaster(np.array([[0.0, 0.0], [0.0, 0.0]]))
    pred = HeightRaster(np.array([[1.0, 100.0], [1.0, 1.0]]), nodata_mask=np.array([[False, True], [False, False]]))
    rep = evaluate_pair(pred, gt)
    assert rep.n_pixels == 3 and rep.rmse == 1.0
    with pytest.raises(InvalidInputError):
        evaluate_pair(HeightRaster(np.zeros((1, 1)), nodata_mask=np.ones((1, 1), bool)), np.zeros((1, 1)))
    with pytest.raises(ShapeError):
        rmse(np.zeros(3), np.zeros(4))


def test_report_csv_roundtrip():
    rep = MetricsReport(0.1, 0.2, 1 / 3, 42)
    assert MetricsReport.from_csv_line(rep.to_csv_line()) == rep
    assert MetricsReport.CSV_HEADER == "rmse,nmad,medae,n_pixels"


def test_mean_report_averages(rng):
    reps = [evaluate_pair(rng.standard_normal(9), rng.standard_normal(9)) for _ in range(5)]
    m = mean_report(reps)
    assert abs(m.rmse - np.mean([r.rmse for r in reps])) < 1e-12
    assert m.n_pixels == 45


# -- profiles ----------------------------------------------------------------


def test_profile_on_constant_raster():
    prof = line_profile(HeightRaster(np.full((5, 5), 7.0), 0.5), (0, 2), (4, 2), 9)
    assert all(h == 7.0 for _, h in prof)
    assert prof[-1][0] == 2.0


def test_profile_on_grid_samples():
    r = HeightRaster(np.tile(np.arange(4.0), (3, 1)))
    prof = line_profile(r, (0, 1), (3, 1), 4)
    assert [h for _, h in prof] == [0.0, 1.0, 2.0, 3.0]
    assert [d for d, _ in prof] == [0.0, 1.0, 2.0, 3.0]


def test_profile_across_unit_step():
    r = HeightRaster(np.array([[0.0, 1.0], [0.0, 1.0]]))
    prof = line_profile(r, (0, 0), (1, 0), 3)
    assert [h for _, h in prof] == [0.0, 0.5, 1.0]


def test_profile_validation_and_csv():
    r = HeightRaster(np.zeros((3, 3)))
    with pytest.raises(InvalidInputError):
        line_profile(r, (0, 0), (5, 0), 3)
    with pytest.raises(InvalidInputError):
        line_profile(r, (0, 0), (1, 0), 1)
    text = profile_csv([(0.0, 1.5), (0.5, 2.5)])
    assert text.splitlines() == ["distance_m,height_m", "0.0,1.5", "0.5,2.5"]
