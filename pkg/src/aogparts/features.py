"""Feature volumes: per-layer conv activations plus receptive-field geometry.

A volume stores the activation tensors a producer exported for one image,
together with the affine map from unit indices to image-plane pixels.  The
on-disk form is the FVOL1 binary format; annotations travel as JSON.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

MAGIC = b"FVOL1\0"


@dataclass(frozen=True)
class LayerGeometry:
    """Affine unit-to-pixel map for one conv layer.

    ``stride_px`` is the pixel step between adjacent units, ``offset_px``
    the image-plane coordinate of unit (0, 0)'s center, and ``rf_size_px``
    the side length of a unit's receptive field.
    """

    layer_id: int
    channels: int
    height: int
    width: int
    stride_px: float
    rf_size_px: float
    offset_px: float

    def unit_center(self, ix: int, iy: int) -> tuple[float, float]:
        """Image-plane center of unit (ix, iy); column ix, row iy."""
        if not (0 <= ix < self.width and 0 <= iy < self.height):
            raise IndexError(
                f"unit ({ix}, {iy}) outside layer {self.layer_id} "
                f"extent {self.width}x{self.height}"
            )
        return (
            self.offset_px + self.stride_px * ix,
            self.offset_px + self.stride_px * iy,
        )


def unit_center(geom: LayerGeometry, ix: int, iy: int) -> tuple[float, float]:
    return geom.unit_center(ix, iy)


@dataclass(eq=False)
class FeatureVolume:
    """All exported conv activations for one image.

    ``layers`` pairs each :class:`LayerGeometry` with a float32 tensor of
    shape (channels, height, width).  Immutable by convention after load;
    safe to share read-only across workers.
    """

    image_id: str
    image_width_px: int
    image_height_px: int
    layers: list[tuple[LayerGeometry, np.ndarray]]

    def layer(self, layer_id: int) -> tuple[LayerGeometry, np.ndarray]:
        for geom, acts in self.layers:
            if geom.layer_id == layer_id:
                return geom, acts
        raise KeyError(f"volume {self.image_id!r} has no layer {layer_id}")

    def layer_ids(self) -> list[int]:
        return [geom.layer_id for geom, _ in self.layers]

    def geometries(self) -> dict[int, LayerGeometry]:
        return {geom.layer_id: geom for geom, _ in self.layers}


@dataclass(frozen=True)
class PartAnnotation:
    """Ground-truth part box and template id for one image."""

    image_id: str
    part_name: str
    template_id: int
    bbox: tuple[float, float, float, float]

    @property
    def center(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)

    @property
    def scale(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return (x2 - x1, y2 - y1)


def validate_volume(vol: FeatureVolume) -> list[str]:
    """Check every volume invariant; returns violations, empty when clean."""
    out: list[str] = []
    if vol.image_width_px <= 0 or vol.image_height_px <= 0:
        out.append(f"non-positive image dims {vol.image_width_px}x{vol.image_height_px}")
    prev: LayerGeometry | None = None
    for geom, acts in vol.layers:
        tag = f"layer {geom.layer_id}"
        if geom.channels < 1 or geom.height < 1 or geom.width < 1:
            out.append(f"{tag}: non-positive tensor dims")
        if geom.stride_px <= 0:
            out.append(f"{tag}: stride_px must be > 0")
        if geom.rf_size_px <= 0:
            out.append(f"{tag}: rf_size_px must be > 0")
        if acts.shape != (geom.channels, geom.height, geom.width):
            out.append(
                f"{tag}: tensor shape {acts.shape} != "
                f"({geom.channels}, {geom.height}, {geom.width})"
            )
        else:
            bad = np.argwhere(~np.isfinite(acts))
            if bad.size:
                c, y, x = (int(v) for v in bad[0])
                out.append(f"{tag}: non-finite activation at (slice {c}, row {y}, col {x})")
        if prev is not None:
            if geom.layer_id <= prev.layer_id:
                out.append(f"{tag}: layer ids not strictly increasing after {prev.layer_id}")
            if geom.stride_px < prev.stride_px:
                out.append(f"{tag}: stride decreases from layer {prev.layer_id}")
        prev = geom
    return out


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def save_volume(vol: FeatureVolume, path) -> None:
    """Write ``vol`` in the FVOL1 binary format (little-endian, f32 payload)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        ident = vol.image_id.encode("utf-8")
        fh.write(struct.pack("<III", len(vol.layers), vol.image_width_px, vol.image_height_px))
        fh.write(struct.pack("<I", len(ident)))
        fh.write(ident)
        for geom, acts in vol.layers:
            fh.write(
                struct.pack(
                    "<IIIIfff",
                    geom.layer_id,
                    geom.channels,
                    geom.height,
                    geom.width,
                    geom.stride_px,
                    geom.rf_size_px,
                    geom.offset_px,
                )
            )
            fh.write(np.ascontiguousarray(acts, dtype="<f4").tobytes())


def load_volume(path) -> FeatureVolume:
    """Read an FVOL1 file; raises :class:`FormatError` on any corruption."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, not an FVOL1 file")
        n_layers, width, height = struct.unpack("<III", _read_exact(fh, 12, "header"))
        (id_len,) = struct.unpack("<I", _read_exact(fh, 4, "image id length"))
        image_id = _read_exact(fh, id_len, "image id").decode("utf-8")
        layers: list[tuple[LayerGeometry, np.ndarray]] = []
        for i in range(n_layers):
            raw = _read_exact(fh, 28, f"geometry of layer #{i}")
            lid, c, h, w, stride, rf, offset = struct.unpack("<IIIIfff", raw)
            geom = LayerGeometry(lid, c, h, w, float(stride), float(rf), float(offset))
            count = c * h * w
            payload = _read_exact(fh, 4 * count, f"activations of layer {lid}")
            acts = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()
            layers.append((geom, acts))
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after layer {layers[-1][0].layer_id}")
    return FeatureVolume(image_id, width, height, layers)


def volumes_equal(a: FeatureVolume, b: FeatureVolume) -> bool:
    if (a.image_id, a.image_width_px, a.image_height_px) != (
        b.image_id,
        b.image_width_px,
        b.image_height_px,
    ):
        return False
    if len(a.layers) != len(b.layers):
        return False
    for (ga, ta), (gb, tb) in zip(a.layers, b.layers):
        if ga != gb or not np.array_equal(ta, tb):
            return False
    return True


def save_annotations(annotations: Iterable[PartAnnotation], path) -> None:
    doc = [
        {
            "image": ann.image_id,
            "part": ann.part_name,
            "template": ann.template_id,
            "bbox": list(ann.bbox),
        }
        for ann in annotations
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_annotations(path) -> list[PartAnnotation]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise FormatError(f"{path}: annotation document must be a JSON array")
    out = []
    for i, entry in enumerate(doc):
        try:
            out.append(
                PartAnnotation(
                    image_id=entry["image"],
                    part_name=entry["part"],
                    template_id=int(entry["template"]),
                    bbox=tuple(float(v) for v in entry["bbox"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad annotation entry #{i}: {exc}") from exc
    return out


def validate_annotation(ann: PartAnnotation, image_w: float, image_h: float, n_templates: int) -> list[str]:
    out = []
    x1, y1, x2, y2 = ann.bbox
    if not (x1 < x2 and y1 < y2):
        out.append(f"{ann.image_id}: degenerate bbox {ann.bbox}")
    if x1 < 0 or y1 < 0 or x2 > image_w or y2 > image_h:
        out.append(f"{ann.image_id}: bbox {ann.bbox} outside image {image_w}x{image_h}")
    if not (0 <= ann.template_id < n_templates):
        out.append(f"{ann.image_id}: template id {ann.template_id} outside [0, {n_templates})")
    return out
