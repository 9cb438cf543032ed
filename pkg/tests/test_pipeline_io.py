import json
import struct
import zipfile

import numpy as np
import pytest

from ldpvlm.classifier import NoiseAwareClassifier
from ldpvlm.exceptions import IdxParseError, ModelFormatError
from ldpvlm.pipeline.io import load_idx, load_model, save_model, write_idx
from ldpvlm.rng import RandomnessSource
from ldpvlm.vlm import LaplaceVLM, train_stage_one


def test_idx_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a.idx", arr)
    out = load_idx(tmp_path / "a.idx")
    assert out.dtype == np.float64
    np.testing.assert_array_equal(out, arr)


def test_idx_float_type(tmp_path):
    arr = np.array([1.5, -2.25])
    write_idx(tmp_path / "f.idx", arr, type_code=0x0E)
    np.testing.assert_array_equal(load_idx(tmp_path / "f.idx"), arr)


def test_idx_empty_file(tmp_path):
    (tmp_path / "e").write_bytes(b"")
    with pytest.raises(IdxParseError) as info:
        load_idx(tmp_path / "e")
    assert info.value.offset == 0


def test_idx_bad_magic_is_reported_in_hex(tmp_path):
    (tmp_path / "m").write_bytes(b"\x00\x00\x08\x03")
    write_idx(tmp_path / "ok", np.zeros((1, 1, 1), np.uint8))
    load_idx(tmp_path / "ok")
    (tmp_path / "m").write_bytes(b"\x01\x02\x08\x03" + struct.pack(">3I", 1, 1, 1) + b"\x00")
    with pytest.raises(IdxParseError, match="0x01020803"):
        load_idx(tmp_path / "m")


def test_idx_truncated_header(tmp_path):
    (tmp_path / "h").write_bytes(b"\x00\x00\x08\x03" + struct.pack(">I", 5))
    with pytest.raises(IdxParseError, match="truncated header") as info:
        load_idx(tmp_path / "h")
    assert info.value.offset == 8


def test_idx_truncated_body_offset(tmp_path):
    data = b"\x00\x00\x08\x02" + struct.pack(">2I", 2, 3) + b"\x01\x02"
    (tmp_path / "b").write_bytes(data)
    with pytest.raises(IdxParseError, match="expected 6 bytes") as info:
        load_idx(tmp_path / "b")
    assert info.value.offset == len(data)


def test_idx_trailing_bytes(tmp_path):
    (tmp_path / "t").write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", 2) + b"\x01\x02\x03")
    with pytest.raises(IdxParseError, match="trailing") as info:
        load_idx(tmp_path / "t")
    assert info.value.offset == 10


def _vlm():
    X = RandomnessSource(0).normal(1.0, (30, 5))
    model = LaplaceVLM(latent_dim=2, clip_radius=1.0, encoder_hidden=(4,), decoder_hidden=(4,),
                       n_epochs=2, categorical_groups=((3, 2),))
    return train_stage_one(model, X, rng=0), X


def test_vlm_round_trip_is_bitwise(tmp_path):
    model, X = _vlm()
    save_model(model, tmp_path / "v.npz")
    back = load_model(tmp_path / "v.npz")
    assert back.get_params() == model.get_params()
    np.testing.assert_array_equal(back.encode_mean(X), model.encode_mean(X))
    np.testing.assert_array_equal(back.decode_mean(X[:, :2]), model.decode_mean(X[:, :2]))
    assert back.b_ == model.b_


def test_classifier_round_trip(tmp_path):
    X = RandomnessSource(1).normal(3.0, (40, 3)) + 10
    y = (X[:, 0] > 10).astype(int)
    clf = NoiseAwareClassifier(n_classes=2, n_epochs=2, flip_prob=0.1).fit(X, y)
    save_model(clf, tmp_path / "c.npz")
    back = load_model(tmp_path / "c.npz")
    np.testing.assert_array_equal(back.predict_proba(X), clf.predict_proba(X))


def _rewrite(path, mutate):
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    mutate(arrays)
    np.savez(path, **arrays)


def test_tampered_file_is_rejected(tmp_path):
    model, _ = _vlm()
    p = tmp_path / "v.npz"
    save_model(model, p)

    def bump(arrays):
        arrays["log_b"] = arrays["log_b"] + 1.0

    _rewrite(p, bump)
    with pytest.raises(ModelFormatError, match="checksum"):
        load_model(p)


def test_other_version_is_rejected(tmp_path):
    model, _ = _vlm()
    p = tmp_path / "v.npz"
    save_model(model, p)

    def bump(arrays):
        meta = json.loads(arrays["__meta__"].tobytes())
        meta["format_version"] = 99
        arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)

    _rewrite(p, bump)
    with pytest.raises(ModelFormatError, match="version 99"):
        load_model(p)


def test_non_model_file(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(2))
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "x.npz")
    with pytest.raises(TypeError):
        save_model(object(), tmp_path / "y.npz")
    assert zipfile.is_zipfile(tmp_path / "x.npz")
