import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from hmjnd.imageio import (BundleError, ImagePlane, JndMap, ModalityBundle, ParseError, decode_pnm,
                           encode_pnm, load_bundle, save_bundle, segmentation_plane)
from hmjnd.synth import synth_bundle


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]))))
def test_pnm_round_trip_is_exact_on_8bit_values(pix):
    plane = ImagePlane(pix / 255.0)
    back = decode_pnm(encode_pnm(plane))
    np.testing.assert_array_equal(np.rint(back.data * 255), pix)
    assert encode_pnm(back) == encode_pnm(plane)


def test_encode_rounds_half_up():
    raw = encode_pnm(ImagePlane(np.array([[0.5 / 255, 1.49 / 255]])))
    assert raw.endswith(bytes([1, 1]))


def test_header_comments_and_whitespace():
    raw = b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([0, 255])
    np.testing.assert_array_equal(decode_pnm(raw).data[0, :, 0], [0.0, 1.0])


@pytest.mark.parametrize("raw,match", [
    (b"P3\n1 1\n255\n\0", "byte 0"),
    (b"P5\nx 1\n255\n\0", "bad width"),
    (b"P5\n1 1\n65535\n\0\0", "maxval"),
    (b"P5\n2 2\n255\n\0\0", "truncated payload at byte 13"),
    (b"P6\n1 1", "end of header"),
])
def test_decode_errors(raw, match):
    with pytest.raises(ParseError, match=match):
        decode_pnm(raw)


def test_plane_validation():
    with pytest.raises(ValueError):
        ImagePlane(np.full((2, 2), 1.5))
    with pytest.raises(ValueError):
        ImagePlane(np.zeros((2, 2, 2)))
    assert ImagePlane(np.zeros((3, 4))).size == (4, 3)


def test_luma_weights():
    p = ImagePlane(np.ones((1, 1, 3)) * np.array([1.0, 0.0, 0.0]))
    assert p.luma()[0, 0] == pytest.approx(0.299)


def test_bundle_round_trip(tmp_path):
    b = synth_bundle(3, (24, 16))
    save_bundle(b, tmp_path / "b")
    assert sorted(p.name for p in (tmp_path / "b").iterdir()) == [
        "depth.pgm", "gt.ppm", "rgb.ppm", "saliency.pgm", "segmentation.pgm"]
    back = load_bundle(tmp_path / "b")
    assert (back.width, back.height) == (24, 16)
    np.testing.assert_array_equal(back.labels, b.labels)
    assert np.abs(back.rgb.data - b.rgb.data).max() <= 0.5 / 255 + 1e-12


def test_missing_modality_is_named(tmp_path):
    save_bundle(synth_bundle(1), tmp_path)
    (tmp_path / "depth.pgm").unlink()
    with pytest.raises(BundleError, match="missing modality: depth"):
        load_bundle(tmp_path)


def test_dimension_mismatch_is_named():
    b = synth_bundle(1, (16, 16))
    with pytest.raises(BundleError, match="dimension mismatch: depth is 8x16, rgb is 16x16"):
        ModalityBundle(b.rgb, b.saliency, ImagePlane(np.zeros((16, 8))), b.segmentation)


def test_segmentation_labels_round_trip():
    labels = np.arange(8).reshape(2, 4)
    b = synth_bundle(0, (16, 16))
    seg = segmentation_plane(np.resize(labels, (16, 16)))
    bundle = ModalityBundle(b.rgb, b.saliency, b.depth, seg)
    np.testing.assert_array_equal(bundle.labels, np.resize(labels, (16, 16)))


def test_jnd_map_validation_and_visualisation():
    with pytest.raises(ValueError):
        JndMap(np.array([[-0.1]]))
    m = JndMap(np.array([[0.0, 0.02], [0.04, 0.01]]))
    v = m.visualize().data[:, :, 0]
    assert v.max() == 1.0 and v[0, 0] == 0.0
    assert JndMap(np.zeros((2, 2))).visualize().data.max() == 0.0
