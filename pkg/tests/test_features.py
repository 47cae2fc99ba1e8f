import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aogparts import (
    FeatureVolume,
    FormatError,
    GenerationError,
    LayerGeometry,
    load_annotations,
    load_volume,
    save_annotations,
    save_volume,
    synth_generate,
    unit_center,
    validate_volume,
)
from aogparts.features import PartAnnotation, volumes_equal

from conftest import base_synth_spec, make_volume


class TestUnitCenter:
    def test_origin_unit(self):
        g = LayerGeometry(1, 1, 4, 4, 16.0, 100.0, 8.0)
        assert unit_center(g, 0, 0) == (8.0, 8.0)

    def test_affine_map(self):
        g = LayerGeometry(1, 1, 4, 4, 16.0, 100.0, 8.0)
        assert unit_center(g, 3, 1) == (56.0, 24.0)

    def test_fine_stride(self):
        g = LayerGeometry(1, 1, 12, 12, 4.0, 20.0, 2.0)
        assert unit_center(g, 10, 10) == (42.0, 42.0)

    def test_out_of_range(self):
        g = LayerGeometry(1, 1, 4, 4, 16.0, 100.0, 8.0)
        with pytest.raises(IndexError):
            unit_center(g, 4, 0)
        with pytest.raises(IndexError):
            unit_center(g, 0, -1)

    @given(
        ix1=st.integers(0, 9), iy1=st.integers(0, 9),
        ix2=st.integers(0, 9), iy2=st.integers(0, 9),
    )
    def test_injective(self, ix1, iy1, ix2, iy2):
        g = LayerGeometry(1, 1, 10, 10, 8.0, 60.0, 4.0)
        if (ix1, iy1) != (ix2, iy2):
            assert unit_center(g, ix1, iy1) != unit_center(g, ix2, iy2)


class TestFvolRoundTrip:
    def test_identity(self, tmp_path):
        vol = make_volume(seed=7)
        path = tmp_path / "x.fvol"
        save_volume(vol, path)
        assert volumes_equal(load_volume(path), vol)

    def test_bit_exact_payload(self, tmp_path):
        vol = make_volume(seed=3)
        path = tmp_path / "x.fvol"
        save_volume(vol, path)
        back = load_volume(path)
        for (_, a), (_, b) in zip(vol.layers, back.layers):
            assert a.tobytes() == b.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fvol"
        path.write_bytes(b"XXXX" + b"\0" * 64)
        with pytest.raises(FormatError, match="magic"):
            load_volume(path)

    def test_truncated_layer_payload(self, tmp_path):
        vol = make_volume(seed=1)
        path = tmp_path / "x.fvol"
        save_volume(vol, path)
        data = path.read_bytes()
        # claim one extra layer without providing it
        import struct

        patched = data[:6] + struct.pack("<I", len(vol.layers) + 1) + data[10:]
        path.write_bytes(patched)
        with pytest.raises(FormatError, match="truncated"):
            load_volume(path)

    def test_trailing_garbage(self, tmp_path):
        vol = make_volume(seed=1)
        path = tmp_path / "x.fvol"
        save_volume(vol, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_volume(path)


class TestValidateVolume:
    def test_clean(self):
        assert validate_volume(make_volume()) == []

    def test_nan_located(self):
        vol = make_volume()
        vol.layers[0][1][2, 1, 3] = np.nan
        problems = validate_volume(vol)
        assert len(problems) == 1
        assert "slice 2" in problems[0] and "layer 1" in problems[0]

    def test_decreasing_strides(self):
        geoms = [
            LayerGeometry(1, 1, 4, 4, 16.0, 100.0, 8.0),
            LayerGeometry(2, 1, 8, 8, 8.0, 60.0, 4.0),
        ]
        vol = make_volume(geoms=geoms)
        assert any("stride decreases" in p for p in validate_volume(vol))

    def test_layer_id_order(self):
        geoms = [
            LayerGeometry(2, 1, 4, 4, 16.0, 100.0, 8.0),
            LayerGeometry(1, 1, 4, 4, 16.0, 100.0, 8.0),
        ]
        vol = make_volume(geoms=geoms)
        assert any("strictly increasing" in p for p in validate_volume(vol))

    def test_shape_mismatch(self):
        g = LayerGeometry(1, 2, 4, 4, 16.0, 100.0, 8.0)
        vol = FeatureVolume("x", 80, 80, [(g, np.zeros((2, 4, 3), np.float32))])
        assert any("shape" in p for p in validate_volume(vol))


class TestAnnotationsIo:
    def test_round_trip(self, tmp_path):
        anns = [
            PartAnnotation("img-0", "head", 0, (1.0, 2.0, 30.0, 40.0)),
            PartAnnotation("img-1", "head", 2, (5.0, 5.0, 25.0, 25.0)),
        ]
        path = tmp_path / "ann.json"
        save_annotations(anns, path)
        assert load_annotations(path) == anns

    def test_bad_document(self, tmp_path):
        path = tmp_path / "ann.json"
        path.write_text('[{"image": "a"}]')
        with pytest.raises(FormatError):
            load_annotations(path)


class TestSynthGenerate:
    def test_noiseless_argmax_is_planted(self):
        spec = base_synth_spec(seed=5, n_images=9, noise=0.0)
        volumes, annotations, planted = synth_generate(spec)
        geoms = {g.layer_id: g for g in spec.layers}
        for vol, ann in zip(volumes, annotations):
            for entry in spec.signatures[ann.template_id]:
                g, acts = vol.layer(entry.layer_id)
                iy, ix = np.unravel_index(
                    np.argmax(acts[entry.conv_slice]), acts[entry.conv_slice].shape
                )
                target = (
                    ann.center[0] + entry.offset_px[0],
                    ann.center[1] + entry.offset_px[1],
                )
                want_ix = round((target[0] - g.offset_px) / g.stride_px)
                want_iy = round((target[1] - g.offset_px) / g.stride_px)
                assert (ix, iy) == (want_ix, want_iy)

    def test_same_seed_identical(self):
        a, _, _ = synth_generate(base_synth_spec(seed=11, noise=0.5))
        b, _, _ = synth_generate(base_synth_spec(seed=11, noise=0.5))
        for va, vb in zip(a, b):
            assert volumes_equal(va, vb)

    def test_template_ids_cycle(self):
        spec = base_synth_spec(seed=2, n_images=30)
        _, annotations, _ = synth_generate(spec)
        assert len(annotations) == 30
        assert [a.template_id for a in annotations] == [i % 3 for i in range(30)]

    def test_ground_truth_covers_signatures(self):
        spec = base_synth_spec(seed=2, n_images=30)
        _, _, planted = synth_generate(spec)
        keys = {(p.template_id, p.layer_id, p.conv_slice) for p in planted}
        assert len(keys) == 9

    def test_impossible_offset_raises(self):
        spec = base_synth_spec(seed=0)
        bad = spec.signatures[0][0]
        sig = ((type(bad)(bad.layer_id, bad.conv_slice, (500.0, 0.0),
                          bad.amplitude, bad.radius_units),),)
        import dataclasses

        spec = dataclasses.replace(spec, signatures=sig)
        with pytest.raises(GenerationError):
            synth_generate(spec)

    def test_amplitude_must_beat_noise(self):
        import dataclasses

        spec = dataclasses.replace(base_synth_spec(), noise=100.0)
        with pytest.raises(GenerationError, match="amplitude"):
            synth_generate(spec)
