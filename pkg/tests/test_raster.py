import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gdsr.errors import DegenerateDataError, RasterFormatError, ShapeError
from gdsr.raster import (
    GuideRaster,
    HeightRaster,
    NormalizedPatch,
    NormStats,
    bicubic_array,
    bicubic_resample,
    compute_norm_stats,
    cubic_kernel,
    decode_raster,
    denormalize_dsm_patch,
    normalize_dsm_patch,
    normalize_guide,
    read_png_guide,
    read_raster,
    resample_matrix,
    write_raster,
)

finite = st.floats(-1e4, 1e4, allow_nan=False, width=32)


def _stats(std=2.0):
    return NormStats(std, (0.0,), (1.0,))


# -- bicubic -----------------------------------------------------------------


def test_kernel_is_interpolating():
    assert cubic_kernel(0.0) == 1.0
    assert np.all(cubic_kernel(np.array([1.0, 2.0, -1.0, 3.5])) == 0.0)
    # Catmull-Rom weights at t = 0.5: (-1, 9, 9, -1) / 16
    w = cubic_kernel(np.array([1.5, 0.5, 0.5, 1.5]))
    assert np.allclose(w, [-1 / 16, 9 / 16, 9 / 16, -1 / 16], atol=0, rtol=1e-15)


def test_resample_rows_sum_to_one():
    for n_in, n_out in [(4, 8), (7, 3), (10, 40), (5, 5)]:
        m = resample_matrix(n_in, n_out)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12)


@given(st.floats(-1e3, 1e3), st.integers(1, 12), st.integers(1, 12), st.integers(1, 40), st.integers(1, 40))
def test_constant_raster_stays_constant(v, h, w, oh, ow):
    out = bicubic_resample(HeightRaster(np.full((h, w), v)), oh, ow)
    assert np.allclose(out.values, v, atol=1e-6)


def test_constant_five_any_upscale():
    for f in (2, 3, 4, 10):
        assert np.allclose(bicubic_resample(HeightRaster(np.full((3, 5), 5.0)), 3 * f, 5 * f).values, 5.0, atol=1e-12)


@pytest.mark.parametrize("factor", [3, 5])
def test_aligned_samples_reproduced_exactly(factor, rng):
    src = rng.standard_normal((6, 7))
    out = bicubic_array(src, 6 * factor, 7 * factor)
    # with centre alignment an odd factor puts output (factor//2 + k*factor) on source k
    c = factor // 2
    assert np.array_equal(out[c::factor, c::factor], src)


def test_aligned_corners_integer_factor_hits_source_exactly(rng):
    src = rng.standard_normal((5, 5))
    out = bicubic_array(src, 9, 9, align_corners=True)
    assert np.array_equal(out[::2, ::2], src)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-100, 100), st.sampled_from([2, 3, 4]))
def test_linear_ramp_reproduced_in_interior(a, b, c, factor):
    n = 12
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    src = a * yy + b * xx + c
    out = bicubic_array(src, n * factor, n * factor)
    u = ((2 * np.arange(n * factor) + 1) * n - n * factor) / (2 * n * factor)
    expect = a * u[:, None] + b * u[None, :] + c
    # clamp-to-edge breaks linearity within two source samples of the border
    inner = (u >= 1.0) & (u <= n - 2.0)
    assert np.allclose(out[np.ix_(inner, inner)], expect[np.ix_(inner, inner)], atol=1e-5)


def test_ramp_aligned_corners_clamped_border_values():
    # [0,1,2,3] at x2 with aligned corners. Midpoints use weights (-1,9,9,-1)/16;
    # the outer ones read a replicated border sample: (-0 + 9*0 + 9*1 - 2)/16.
    out = bicubic_array(np.array([[0.0, 1.0, 2.0, 3.0]]), 1, 7, align_corners=True)[0]
    assert np.allclose(out[::2], [0, 1, 2, 3], atol=0)
    assert np.allclose(out[1::2], [7 / 16, 1.5, 2.5625], rtol=0, atol=1e-15)


def test_resample_scales_cell_size():
    out = bicubic_resample(HeightRaster(np.zeros((4, 4)), cell_size=2.0), 16, 16)
    assert out.cell_size == 0.5


# -- normalization -----------------------------------------------------------


def test_global_std_hand_value():
    s = compute_norm_stats([HeightRaster(np.array([[0.0, 0.0], [2.0, 2.0]]))],
                           [GuideRaster(np.array([[[0.0, 1.0], [2.0, 3.0]]]))])
    assert s.dsm_global_std == 1.0


def test_std_is_duplication_invariant():
    g = [GuideRaster(np.array([[[0.0, 1.0]]]))]
    one = compute_norm_stats([HeightRaster(np.array([[0.0, 2.0]]))], g)
    two = compute_norm_stats([HeightRaster(np.array([[0.0, 2.0]]))] * 2, g * 2)
    assert one.dsm_global_std == two.dsm_global_std


def test_constant_guide_is_degenerate():
    with pytest.raises(DegenerateDataError):
        compute_norm_stats([HeightRaster(np.array([[0.0, 2.0]]))], [GuideRaster(np.full((3, 4, 4), 0.3))])


def test_normalize_patch_examples():
    p = normalize_dsm_patch(HeightRaster(np.full((2, 2), 10.0)), _stats())
    assert np.all(p.values == 0) and p.local_mean == 10.0
    p = normalize_dsm_patch(HeightRaster(np.array([[8.0, 12.0]])), _stats())
    assert np.array_equal(p.values, [[-1.0, 1.0]]) and p.local_mean == 10.0


def test_denormalize_examples():
    out = denormalize_dsm_patch(NormalizedPatch(np.zeros((1, 2)), 10.0, _stats()))
    assert np.array_equal(out.values, [[10.0, 10.0]])
    out = denormalize_dsm_patch(NormalizedPatch(np.array([[-1.0, 1.0]]), 10.0, _stats()))
    assert np.array_equal(out.values, [[8.0, 12.0]])


@given(arrays(np.float64, (3, 4), elements=st.floats(-500, 5000)), st.floats(0.01, 100))
def test_normalize_roundtrip(values, std):
    p = HeightRaster(values)
    back = denormalize_dsm_patch(normalize_dsm_patch(p, _stats(std))).values
    assert np.allclose(back, values, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(values).max()))


@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)), st.floats(-100, 100), st.floats(0.01, 100))
def test_normalize_after_denormalize_is_identity(values, mean, std):
    # patches produced by normalization are zero-mean by construction
    values = values - values.mean()
    n = NormalizedPatch(values, mean, _stats(std))
    back = normalize_dsm_patch(denormalize_dsm_patch(n), n.stats)
    assert np.allclose(back.values, values, atol=1e-9 * max(1.0, abs(mean) / std))
    assert abs(back.local_mean - mean) <= 1e-9 * max(1.0, abs(mean)) + 1e-9 * std * np.abs(values).max()


def test_normalize_guide_examples():
    stats = NormStats(1.0, (0.5, 0.2), (0.25, 1.0))
    g = GuideRaster(np.stack([np.full((2, 2), 1.0), np.full((2, 2), 0.2)]))
    out = normalize_guide(g, stats).values
    assert np.all(out[0] == 2.0) and np.all(out[1] == 0.0)
    twice = normalize_guide(normalize_guide(g, stats), stats).values
    assert not np.array_equal(twice, out)
    ident = NormStats(1.0, (0.0, 0.0), (1.0, 1.0))
    assert np.array_equal(normalize_guide(normalize_guide(g, ident), ident).values, g.values)


def test_normalize_guide_channel_mismatch():
    with pytest.raises(ShapeError):
        normalize_guide(GuideRaster(np.zeros((2, 3, 3))), NormStats(1.0, (0.0,), (1.0,)))


# -- file format -------------------------------------------------------------


@settings(max_examples=40)
@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=finite),
       st.floats(0.01, 100))
def test_height_roundtrip_bit_exact(values, cell):
    r = HeightRaster(values.astype(np.float64), cell)
    buf = _encode(r)
    back = decode_raster(buf)
    assert back.cell_size == r.cell_size
    assert np.array_equal(back.values.astype(np.float32).view(np.uint32), values.view(np.uint32))


@settings(max_examples=20)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_guide_roundtrip_bit_exact(values):
    back = decode_raster(_encode(GuideRaster(values.astype(np.float64), 0.5)))
    assert isinstance(back, GuideRaster)
    assert np.array_equal(back.values.astype(np.float32), values)


def _encode(r):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "r.gdsr"
        write_raster(r, p)
        return p.read_bytes()


def test_file_roundtrip(tmp_path, rng):
    r = HeightRaster(rng.standard_normal((5, 7)).astype(np.float32), 0.5)
    write_raster(r, tmp_path / "x.gdsr")
    back = read_raster(tmp_path / "x.gdsr")
    assert np.array_equal(back.values, r.values) and back.cell_size == 0.5


def test_header_layout():
    buf = _encode(HeightRaster(np.zeros((2, 3)), 0.25))
    assert buf[:4] == b"GDSR"
    assert struct.unpack_from("<IBHIId", buf, 4) == (1, 0, 1, 2, 3, 0.25)
    assert len(buf) == 4 + 4 + 1 + 2 + 4 + 4 + 8 + 6 * 4


def test_bad_magic():
    buf = bytearray(_encode(HeightRaster(np.zeros((2, 2)))))
    buf[:4] = b"XXXX"
    with pytest.raises(RasterFormatError) as e:
        decode_raster(bytes(buf))
    assert e.value.offset == 0


def test_truncated_payload():
    buf = _encode(HeightRaster(np.zeros((2, 2))))
    with pytest.raises(RasterFormatError, match="truncated") as e:
        decode_raster(buf[:-4])
    assert e.value.offset == len(buf) - 4


def test_truncated_header():
    with pytest.raises(RasterFormatError):
        decode_raster(b"GDSR\x01")


def test_png_guide_import(tmp_path):
    from PIL import Image

    arr = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3) * 10
    Image.fromarray(arr).save(tmp_path / "g.png")
    g = read_png_guide(tmp_path / "g.png", 0.5)
    assert g.shape == (2, 3) and g.channels == 3
    assert np.allclose(g.values, np.moveaxis(arr, -1, 0) / 255.0)
