"""Single-file container for base models, PaRa bundles, and LoRA bundles.

Layout::

    b"PARAFMT1"                  8-byte magic
    uint64 little-endian         manifest length in bytes
    manifest                     UTF-8 JSON
    payload                      float64 little-endian, row-major, manifest order

Tensor ``offset`` values in the manifest are relative to the payload start.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from para.adapter import ConvShape, LoraAdapter, ParaAdapter
from para.errors import BadMagic, ManifestMismatch, ShapeError, UnsupportedVersion
from para.model import Layer, ToyModel

MAGIC = b"PARAFMT1"
FORMAT_VERSION = 1
KINDS = ("para", "lora", "base_model")
_ENTRY_TYPES = {"para": ParaAdapter, "lora": LoraAdapter, "base_model": Layer}
_LE_F64 = np.dtype("<f8")


@dataclass(frozen=True)
class AdapterBundle:
    kind: str
    entries: tuple
    activation: str | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.format_version != FORMAT_VERSION:
            raise UnsupportedVersion(f"format_version {self.format_version}")
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        expected = _ENTRY_TYPES[self.kind]
        for e in entries:
            if not isinstance(e, expected):
                raise TypeError(f"{self.kind} bundle cannot hold {type(e).__name__}")
        names = self.names()
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")

    def names(self) -> list[str]:
        return [_entry_name(e) for e in self.entries]

    def get(self, name: str):
        for e in self.entries:
            if _entry_name(e) == name:
                return e
        raise KeyError(name)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @classmethod
    def from_model(cls, model: ToyModel) -> "AdapterBundle":
        return cls("base_model", model.layers, activation=model.activation)

    def to_model(self) -> ToyModel:
        if self.kind != "base_model":
            raise ValueError(f"bundle of kind {self.kind!r} is not a model")
        return ToyModel(self.entries, self.activation or "linear")


def _entry_name(e) -> str:
    return e.name if isinstance(e, Layer) else e.layer_name


def _gamma_to_json(gamma):
    if isinstance(gamma, float):
        return gamma
    return str(Fraction(gamma))


def _gamma_from_json(value):
    return Fraction(value) if isinstance(value, str) else value


def _conv_to_json(cs):
    return None if cs is None else list(cs.as_tuple())


def _conv_from_json(value):
    return None if value is None else ConvShape(*value)


def _entry_tensors(kind, e):
    if kind == "para":
        return [("b", e.b)]
    if kind == "lora":
        return [("b_up", e.b_up), ("a_down", e.a_down)]
    return [("w0", e.w0)]


def _entry_meta(kind, e) -> dict:
    if kind == "para":
        return {
            "name": e.layer_name,
            "rank": e.requested_rank,
            "gamma": _gamma_to_json(e.gamma),
            "alpha": None,
            "identity": bool(e.identity),
            "conv_shape": _conv_to_json(e.conv_shape),
            "in_features": e.in_features,
            "base_rank": e.base_rank,
        }
    if kind == "lora":
        return {
            "name": e.layer_name,
            "rank": e.rank,
            "gamma": None,
            "alpha": float(e.alpha),
            "identity": False,
            "conv_shape": None,
        }
    return {
        "name": e.name,
        "rank": None,
        "gamma": None,
        "alpha": None,
        "identity": False,
        "conv_shape": _conv_to_json(e.conv_shape),
    }


def encode_bundle(bundle: AdapterBundle) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for e in bundle.entries:
        meta = _entry_meta(bundle.kind, e)
        tensors = []
        for role, arr in _entry_tensors(bundle.kind, e):
            raw = np.ascontiguousarray(arr, dtype=_LE_F64).tobytes(order="C")
            tensors.append({"role": role, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        meta["tensors"] = tensors
        entries.append(meta)
    manifest = {
        "format_version": bundle.format_version,
        "kind": bundle.kind,
        "activation": bundle.activation,
        "payload_nbytes": offset,
        "entries": entries,
    }
    head = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def read_manifest(data: bytes) -> tuple[dict, int]:
    """Parse and validate the header; returns the manifest and payload start."""
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise BadMagic("not a PARAFMT1 container")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    if start + n > len(data):
        raise ManifestMismatch("manifest length exceeds file size")
    try:
        manifest = json.loads(data[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestMismatch(f"manifest is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format_version {version!r} is not supported")
    if manifest.get("kind") not in KINDS:
        raise ManifestMismatch(f"unknown kind {manifest.get('kind')!r}")
    return manifest, start + n


def decode_bundle(data: bytes) -> AdapterBundle:
    manifest, payload_start = read_manifest(data)
    payload = memoryview(data)[payload_start:]
    declared = manifest.get("payload_nbytes")
    if declared != len(payload):
        raise ManifestMismatch(f"manifest declares {declared} payload bytes, found {len(payload)}")
    kind = manifest["kind"]
    entries = []
    for meta in manifest["entries"]:
        tensors = {}
        for t in meta["tensors"]:
            shape = tuple(int(s) for s in t["shape"])
            want = 8 * int(np.prod(shape, dtype=np.int64))
            lo, hi = int(t["offset"]), int(t["offset"]) + int(t["nbytes"])
            if t["nbytes"] != want or lo < 0 or hi > len(payload):
                raise ManifestMismatch(f"{meta['name']}.{t['role']}: payload does not match shape {shape}")
            arr = np.frombuffer(payload[lo:hi], dtype=_LE_F64).reshape(shape)
            tensors[t["role"]] = arr.astype(np.float64)
        try:
            entries.append(_build_entry(kind, meta, tensors))
        except (KeyError, ShapeError) as exc:
            raise ManifestMismatch(f"{meta.get('name')}: {exc}") from exc
    return AdapterBundle(kind, tuple(entries), activation=manifest.get("activation"))


def _build_entry(kind, meta, tensors):
    if kind == "para":
        return ParaAdapter(
            layer_name=meta["name"],
            b=tensors["b"],
            requested_rank=int(meta["rank"]),
            gamma=_gamma_from_json(meta["gamma"]),
            conv_shape=_conv_from_json(meta.get("conv_shape")),
            in_features=meta.get("in_features"),
            base_rank=meta.get("base_rank"),
            identity=bool(meta.get("identity", False)),
        )
    if kind == "lora":
        return LoraAdapter(meta["name"], tensors["b_up"], tensors["a_down"], float(meta["alpha"]))
    return Layer(meta["name"], tensors["w0"], _conv_from_json(meta.get("conv_shape")))


def save_bundle(bundle: AdapterBundle, path) -> None:
    Path(path).write_bytes(encode_bundle(bundle))


def load_bundle(path) -> AdapterBundle:
    return decode_bundle(Path(path).read_bytes())
