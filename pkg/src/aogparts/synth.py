"""Synthetic feature volumes with planted activation bumps.

The generator plants one truncated-Gaussian bump per signature entry into a
known conv-slice near the sampled part center, on top of zero-mean noise.
Because the plant location is known exactly, these datasets serve as ground
truth for the miner and the parser.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError
from .features import FeatureVolume, LayerGeometry, PartAnnotation

_MAX_CENTER_ATTEMPTS = 100


@dataclass(frozen=True)
class SignatureEntry:
    """One planted bump: slice + offset from the part center."""

    layer_id: int
    conv_slice: int
    offset_px: tuple[float, float]
    amplitude: float
    radius_units: float


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic dataset.

    ``signatures[t]`` lists the bumps planted for template ``t``; images
    cycle through templates round-robin.  ``amplitude`` must exceed
    ``noise`` so planted bumps dominate background responses.
    """

    n_images: int
    image_size_px: tuple[int, int]
    center_region_px: tuple[float, float, float, float]
    layers: tuple[LayerGeometry, ...]
    signatures: tuple[tuple[SignatureEntry, ...], ...]
    noise: float = 0.0
    seed: int = 0
    box_size_px: tuple[float, float] = (40.0, 40.0)
    part_name: str = "part"

    def validate(self) -> list[str]:
        out = []
        if self.n_images < 1:
            out.append("n_images must be >= 1")
        if not self.signatures:
            out.append("at least one template signature required")
        geoms = {g.layer_id: g for g in self.layers}
        for t, sig in enumerate(self.signatures):
            for entry in sig:
                geom = geoms.get(entry.layer_id)
                if geom is None:
                    out.append(f"template {t}: unknown layer {entry.layer_id}")
                elif not (0 <= entry.conv_slice < geom.channels):
                    out.append(
                        f"template {t}: slice {entry.conv_slice} outside "
                        f"layer {entry.layer_id} channels {geom.channels}"
                    )
                if entry.amplitude <= self.noise:
                    out.append(f"template {t}: amplitude {entry.amplitude} <= noise {self.noise}")
        return out


@dataclass(frozen=True)
class PlantedPattern:
    """Ground truth for one planted signature entry of one template."""

    template_id: int
    layer_id: int
    conv_slice: int
    center_px: tuple[float, float]


def _nearest_unit(geom: LayerGeometry, point: tuple[float, float]) -> tuple[int, int] | None:
    ix = int(round((point[0] - geom.offset_px) / geom.stride_px))
    iy = int(round((point[1] - geom.offset_px) / geom.stride_px))
    if 0 <= ix < geom.width and 0 <= iy < geom.height:
        return ix, iy
    return None


def _stamp_bump(acts: np.ndarray, entry: SignatureEntry, ix: int, iy: int) -> None:
    r = max(entry.radius_units, 0.0)
    sigma = r / 2.0 if r > 0 else 1.0
    span = int(np.floor(r))
    for dy in range(-span, span + 1):
        for dx in range(-span, span + 1):
            jx, jy = ix + dx, iy + dy
            if not (0 <= jx < acts.shape[2] and 0 <= jy < acts.shape[1]):
                continue
            d2 = dx * dx + dy * dy
            if d2 > r * r:
                continue
            acts[entry.conv_slice, jy, jx] += entry.amplitude * np.exp(-d2 / (2.0 * sigma * sigma))


def synth_generate(
    spec: SynthSpec,
) -> tuple[list[FeatureVolume], list[PartAnnotation], list[PlantedPattern]]:
    """Generate volumes, one annotation per image, and planted ground truth.

    Image ``i`` carries the signature of template ``i % m``.  Deterministic
    for a fixed seed.  Raises :class:`GenerationError` when no sampled part
    center keeps every bump of the template inside its layer.
    """
    problems = spec.validate()
    if problems:
        raise GenerationError("; ".join(problems))
    rng = np.random.default_rng(spec.seed)
    geoms = {g.layer_id: g for g in spec.layers}
    w_img, h_img = spec.image_size_px
    x1, y1, x2, y2 = spec.center_region_px
    m = len(spec.signatures)

    volumes: list[FeatureVolume] = []
    annotations: list[PartAnnotation] = []
    planted_units: dict[tuple[int, int, int], list[tuple[float, float]]] = {}

    for i in range(spec.n_images):
        template_id = i % m
        signature = spec.signatures[template_id]

        center = None
        placements: list[tuple[SignatureEntry, int, int]] = []
        for _ in range(_MAX_CENTER_ATTEMPTS):
            cand = (rng.uniform(x1, x2), rng.uniform(y1, y2))
            placements = []
            for entry in signature:
                geom = geoms[entry.layer_id]
                target = (cand[0] + entry.offset_px[0], cand[1] + entry.offset_px[1])
                unit = _nearest_unit(geom, target)
                if unit is None:
                    break
                placements.append((entry, unit[0], unit[1]))
            else:
                center = cand
                break
        if center is None:
            raise GenerationError(
                f"image {i}: no sampled center keeps template {template_id} "
                f"signature inside the feature extent"
            )

        layers = []
        for geom in spec.layers:
            shape = (geom.channels, geom.height, geom.width)
            if spec.noise > 0:
                acts = rng.normal(0.0, spec.noise, size=shape).astype(np.float32)
            else:
                acts = np.zeros(shape, dtype=np.float32)
            layers.append((geom, acts))
        by_id = {geom.layer_id: acts for geom, acts in layers}
        for entry, ix, iy in placements:
            _stamp_bump(by_id[entry.layer_id], entry, ix, iy)
            key = (template_id, entry.layer_id, entry.conv_slice)
            planted_units.setdefault(key, []).append(geoms[entry.layer_id].unit_center(ix, iy))

        image_id = f"synth-{i:04d}"
        volumes.append(FeatureVolume(image_id, w_img, h_img, layers))
        bw, bh = spec.box_size_px
        bbox = (
            max(0.0, center[0] - bw / 2),
            max(0.0, center[1] - bh / 2),
            min(float(w_img), center[0] + bw / 2),
            min(float(h_img), center[1] + bh / 2),
        )
        annotations.append(PartAnnotation(image_id, spec.part_name, template_id, bbox))

    ground_truth = []
    for t, signature in enumerate(spec.signatures):
        for entry in signature:
            key = (t, entry.layer_id, entry.conv_slice)
            centers = planted_units.get(key, [])
            if not centers:
                continue
            mean = (
                sum(c[0] for c in centers) / len(centers),
                sum(c[1] for c in centers) / len(centers),
            )
            ground_truth.append(PlantedPattern(t, entry.layer_id, entry.conv_slice, mean))
    return volumes, annotations, ground_truth


def spec_from_json(doc: dict) -> SynthSpec:
    layers = tuple(
        LayerGeometry(
            layer_id=int(l["id"]),
            channels=int(l["channels"]),
            height=int(l["height"]),
            width=int(l["width"]),
            stride_px=float(l["stride"]),
            rf_size_px=float(l["rf"]),
            offset_px=float(l["offset"]),
        )
        for l in doc["layers"]
    )
    signatures = tuple(
        tuple(
            SignatureEntry(
                layer_id=int(e["layer"]),
                conv_slice=int(e["slice"]),
                offset_px=(float(e["offset"][0]), float(e["offset"][1])),
                amplitude=float(e["amplitude"]),
                radius_units=float(e["radius"]),
            )
            for e in sig
        )
        for sig in doc["templates"]
    )
    return SynthSpec(
        n_images=int(doc["images"]),
        image_size_px=(int(doc["image_size"][0]), int(doc["image_size"][1])),
        center_region_px=tuple(float(v) for v in doc["center_region"]),
        layers=layers,
        signatures=signatures,
        noise=float(doc.get("noise", 0.0)),
        seed=int(doc.get("seed", 0)),
        box_size_px=tuple(float(v) for v in doc.get("box_size", (40.0, 40.0))),
        part_name=str(doc.get("part", "part")),
    )
