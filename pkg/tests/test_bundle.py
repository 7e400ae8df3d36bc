import json
import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from para.adapter import ConvShape, LoraAdapter, ParaAdapter
from para.bundle import MAGIC, AdapterBundle, decode_bundle, encode_bundle, load_bundle, read_manifest, save_bundle
from para.errors import BadMagic, ManifestMismatch, UnsupportedVersion
from para.model import Layer, random_model


def para_bundle(rng):
    return AdapterBundle(
        "para",
        (
            ParaAdapter("enc", rng.standard_normal((6, 2)), 2, gamma=Fraction(1, 40), in_features=5, base_rank=5),
            ParaAdapter("conv", rng.standard_normal((4, 1)), 1, conv_shape=ConvShape(4, 3, 3, 3), identity=True),
        ),
    )


def assert_same_para(a, b):
    assert a.names() == b.names()
    for x, y in zip(a.entries, b.entries):
        assert x.b.tobytes() == y.b.tobytes()
        assert (x.requested_rank, x.gamma, x.conv_shape, x.in_features, x.base_rank, x.identity) == (
            y.requested_rank,
            y.gamma,
            y.conv_shape,
            y.in_features,
            y.base_rank,
            y.identity,
        )


def test_para_roundtrip_bit_exact(rng, tmp_path):
    bundle = para_bundle(rng)
    save_bundle(bundle, tmp_path / "a.para")
    back = load_bundle(tmp_path / "a.para")
    assert_same_para(bundle, back)
    assert back.get("enc").gamma == Fraction(1, 40)
    assert encode_bundle(back) == encode_bundle(bundle)


def test_model_roundtrip(tmp_path):
    model = random_model((3, 5, 2), seed=4, activation="tanh")
    save_bundle(AdapterBundle.from_model(model), tmp_path / "m.bin")
    back = load_bundle(tmp_path / "m.bin").to_model()
    assert back.activation == "tanh"
    for a, b in zip(model.layers, back.layers):
        assert a.name == b.name and a.w0.tobytes() == b.w0.tobytes()


def test_lora_alpha_preserved(rng):
    lora = LoraAdapter("l", rng.standard_normal((4, 2)), rng.standard_normal((2, 3)), alpha=2.2)
    back = decode_bundle(encode_bundle(AdapterBundle("lora", (lora,))))
    assert back.get("l").alpha == 2.2
    assert back.get("l").b_up.shape == (4, 2) and back.get("l").a_down.shape == (2, 3)


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 12), r=st.integers(1, 4))
def test_roundtrip_property(seed, d, r):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((d, r)) * 10.0 ** rng.integers(-300, 300, size=(d, r))
    bundle = AdapterBundle("para", (ParaAdapter("x", vals, r),))
    assert decode_bundle(encode_bundle(bundle)).get("x").b.tobytes() == vals.tobytes()


def test_byte_layout(rng):
    bundle = AdapterBundle("base_model", (Layer("l", np.array([[1.0, 2.0]])),))
    data = encode_bundle(bundle)
    assert data[:8] == MAGIC
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + n])
    assert manifest["kind"] == "base_model" and manifest["format_version"] == 1
    assert data[16 + n :] == struct.pack("<2d", 1.0, 2.0)


def test_truncated_payload(rng):
    data = encode_bundle(para_bundle(rng))
    with pytest.raises(ManifestMismatch):
        decode_bundle(data[:-8])
    with pytest.raises(ManifestMismatch):
        decode_bundle(data[:20])


def test_bad_magic(rng):
    data = encode_bundle(para_bundle(rng))
    with pytest.raises(BadMagic):
        decode_bundle(b"NOTPARA!" + data[8:])
    with pytest.raises(BadMagic):
        decode_bundle(b"")


def test_unsupported_version(rng):
    data = encode_bundle(para_bundle(rng))
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + n])
    manifest["format_version"] = 2
    head = json.dumps(manifest).encode()
    with pytest.raises(UnsupportedVersion):
        read_manifest(MAGIC + struct.pack("<Q", len(head)) + head + data[16 + n :])


def test_bundle_invariants(rng):
    with pytest.raises(ValueError):
        AdapterBundle("para", (ParaAdapter("a", np.ones((2, 1)), 1), ParaAdapter("a", np.ones((2, 1)), 1)))
    with pytest.raises(ValueError):
        AdapterBundle("weights", ())
    with pytest.raises(TypeError):
        AdapterBundle("lora", (ParaAdapter("a", np.ones((2, 1)), 1),))
