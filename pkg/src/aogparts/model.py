"""The four-layer And-Or graph: semantic part, templates, latent patterns, units.

Layer 1 is a single OR node over part templates.  Each template (AND node)
owns mined latent patterns (OR nodes over conv units).  Only templates and
patterns are stored; units are addressed implicitly through layer geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

from .errors import FormatError
from .features import LayerGeometry, PartAnnotation

AOG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Region:
    """An image region given by its center and a fixed scale."""

    center: tuple[float, float]
    scale: tuple[float, float]

    def __post_init__(self):
        if self.scale[0] <= 0 or self.scale[1] <= 0:
            raise ValueError(f"region scale must be positive, got {self.scale}")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        w, h = self.scale
        return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @property
    def area(self) -> float:
        return self.scale[0] * self.scale[1]


@dataclass(frozen=True)
class ScoreWeights:
    """All scoring constants; every field can be overridden via config.

    ``lambda_loc`` multiplies squared pixel distances, ``lambda_pair``
    unsquared ones.  ``s_none`` replaces the normalized response of
    non-activated units.  ``d_px`` truncates the template-center vote
    penalty, ``deform_range_px`` is the side of each pattern's square unit
    window, and ``neighbor_count`` caps upper-layer pairing.

    ``loc_in_units`` is an experiment flag: when set, the deformation
    penalty measures distance in units of the pattern's layer stride
    instead of pixels, which keeps it commensurate with response scores on
    coarse feature maps.
    """

    lambda_rsp: float = 1.5
    lambda_loc: float = 1.0 / 3.0
    lambda_pair: float = 10.0
    lambda_unsup: float = 5.0
    lambda_close: float = 0.4
    lambda_inf: float = 5.0
    s_none: float = -3.0
    d_px: float = 37.0
    deform_range_px: float = 75.0
    neighbor_count: int = 15
    loc_in_units: bool = False
    valid_layers: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("lambda_rsp", "lambda_loc", "lambda_pair", "lambda_unsup",
                     "lambda_close", "lambda_inf"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_px <= 0:
            raise ValueError("d_px must be > 0")
        if self.deform_range_px <= 0:
            raise ValueError("deform_range_px must be > 0")
        if self.neighbor_count < 0:
            raise ValueError("neighbor_count must be >= 0")

    def scaled(self, factor: float) -> "ScoreWeights":
        """All lambdas and s_none multiplied by a positive constant."""
        if factor <= 0:
            raise ValueError("factor must be positive")
        return replace(
            self,
            lambda_rsp=self.lambda_rsp * factor,
            lambda_loc=self.lambda_loc * factor,
            lambda_pair=self.lambda_pair * factor,
            lambda_unsup=self.lambda_unsup * factor,
            lambda_close=self.lambda_close * factor,
            lambda_inf=self.lambda_inf * factor,
        )

    def to_dict(self) -> dict:
        doc = {
            "lambda_rsp": self.lambda_rsp,
            "lambda_loc": self.lambda_loc,
            "lambda_pair": self.lambda_pair,
            "lambda_unsup": self.lambda_unsup,
            "lambda_close": self.lambda_close,
            "lambda_inf": self.lambda_inf,
            "s_none": self.s_none,
            "d_px": self.d_px,
            "deform_range_px": self.deform_range_px,
            "neighbor_count": self.neighbor_count,
            "loc_in_units": self.loc_in_units,
        }
        if self.valid_layers is not None:
            doc["valid_layers"] = list(self.valid_layers)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScoreWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise FormatError(f"unknown weight fields: {sorted(unknown)}")
        kwargs = dict(doc)
        if "valid_layers" in kwargs and kwargs["valid_layers"] is not None:
            kwargs["valid_layers"] = tuple(int(v) for v in kwargs["valid_layers"])
        if "neighbor_count" in kwargs:
            kwargs["neighbor_count"] = int(kwargs["neighbor_count"])
        return cls(**kwargs)


@dataclass(frozen=True)
class LatentPattern:
    """A mined OR node: one conv-slice window at an ideal image position.

    ``center_px`` is the ideal (zero-deformation) unit position and
    ``dp_px`` the stored displacement from it to the parent template's mean
    annotated center, so a serialized graph is self-contained.
    """

    layer_id: int
    conv_slice: int
    center_px: tuple[float, float]
    dp_px: tuple[float, float]
    mined_score: float = 0.0

    @property
    def vote_target(self) -> tuple[float, float]:
        return (self.center_px[0] + self.dp_px[0], self.center_px[1] + self.dp_px[1])


@dataclass
class PartTemplate:
    """AND node for one pose/appearance mode, with a fixed region scale."""

    template_id: int
    scale_px: tuple[float, float]
    patterns: list[LatentPattern] = field(default_factory=list)

    def layers_present(self) -> list[int]:
        return sorted({p.layer_id for p in self.patterns})

    def patterns_in_layer(self, layer_id: int) -> list[tuple[int, LatentPattern]]:
        return [(i, p) for i, p in enumerate(self.patterns) if p.layer_id == layer_id]

    def upper_layer_of(self, layer_id: int) -> int | None:
        """Next higher layer id that holds at least one pattern."""
        above = [l for l in self.layers_present() if l > layer_id]
        return min(above) if above else None


@dataclass
class Aog:
    """The full learned graph for one semantic part."""

    part_name: str
    weights: ScoreWeights
    templates: list[PartTemplate]
    provenance: dict = field(default_factory=dict)

    def template(self, template_id: int) -> PartTemplate:
        for t in self.templates:
            if t.template_id == template_id:
                return t
        raise KeyError(f"no template {template_id}")

    def required_layers(self) -> list[int]:
        return sorted({p.layer_id for t in self.templates for p in t.patterns})

    def neighbor_map(self, template: PartTemplate) -> dict[int, list[int]]:
        """Pattern index -> indices of its upper-layer neighbors.

        Neighbors are the ``neighbor_count`` patterns of the next higher
        populated layer closest by ideal-center distance; the topmost layer
        gets an empty list.  Computed once per (graph, template).
        """
        cache = getattr(self, "_neighbor_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_neighbor_cache", cache)
        key = template.template_id
        if key not in cache:
            cache[key] = compute_neighbor_map(template, self.weights.neighbor_count)
        return cache[key]


def compute_neighbor_map(template: PartTemplate, neighbor_count: int) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for idx, pat in enumerate(template.patterns):
        upper = template.upper_layer_of(pat.layer_id)
        if upper is None:
            out[idx] = []
            continue
        ranked = sorted(
            template.patterns_in_layer(upper),
            key=lambda item: (
                (item[1].center_px[0] - pat.center_px[0]) ** 2
                + (item[1].center_px[1] - pat.center_px[1]) ** 2,
                item[0],
            ),
        )
        out[idx] = [i for i, _ in ranked[:neighbor_count]]
    return out


def validate_aog(aog: Aog, epsilon_units: float | None = None,
                 geoms: Mapping[int, LayerGeometry] | None = None) -> list[str]:
    """Structural checks; pattern spacing is checked when geometry is given."""
    out = []
    if not aog.templates:
        out.append("graph has no templates")
    seen_ids = set()
    for t in aog.templates:
        if t.template_id in seen_ids:
            out.append(f"duplicate template id {t.template_id}")
        seen_ids.add(t.template_id)
        if t.scale_px[0] <= 0 or t.scale_px[1] <= 0:
            out.append(f"template {t.template_id}: non-positive scale {t.scale_px}")
        if epsilon_units is not None and geoms is not None:
            by_slice: dict[tuple[int, int], list[tuple[float, float]]] = {}
            for p in t.patterns:
                by_slice.setdefault((p.layer_id, p.conv_slice), []).append(p.center_px)
            for (layer_id, _slice), centers in by_slice.items():
                geom = geoms.get(layer_id)
                if geom is None:
                    continue
                for i in range(len(centers)):
                    for j in range(i + 1, len(centers)):
                        dx = abs(centers[i][0] - centers[j][0]) / geom.stride_px
                        dy = abs(centers[i][1] - centers[j][1]) / geom.stride_px
                        if dx < epsilon_units and dy < epsilon_units:
                            out.append(
                                f"template {t.template_id}: patterns in layer {layer_id} "
                                f"slice {_slice} closer than epsilon"
                            )
    return out


def build_skeleton(annotations: Sequence[PartAnnotation], weights: ScoreWeights) -> Aog:
    """Templates-only graph: one AND node per distinct template id.

    Template scale is the mean annotated box scale; ordering of the input
    list does not matter.  Template ids must form a contiguous 0..m-1 range.
    """
    if not annotations:
        raise ValueError("at least one annotation is required")
    part_names = {a.part_name for a in annotations}
    if len(part_names) != 1:
        raise ValueError(f"annotations mix part names: {sorted(part_names)}")
    ids = sorted({a.template_id for a in annotations})
    if ids != list(range(len(ids))):
        raise ValueError(f"template ids must form a contiguous range from 0, got {ids}")
    templates = []
    for tid in ids:
        boxes = sorted(
            (a for a in annotations if a.template_id == tid),
            key=lambda a: (a.image_id, a.bbox),
        )
        w = sum(b.scale[0] for b in boxes) / len(boxes)
        h = sum(b.scale[1] for b in boxes) / len(boxes)
        templates.append(PartTemplate(template_id=tid, scale_px=(w, h)))
    return Aog(
        part_name=part_names.pop(),
        weights=weights,
        templates=templates,
        provenance={"annotation_count": len(annotations)},
    )


@dataclass(frozen=True)
class AogStats:
    template_count: int
    mean_patterns_per_template: float
    mean_units_per_pattern: float


def _units_in_range_count(geom: LayerGeometry, center: tuple[float, float], range_px: float) -> int:
    half = range_px / 2.0
    count = 0
    for axis, extent in ((0, geom.width), (1, geom.height)):
        lo = center[axis] - half
        hi = center[axis] + half
        n = 0
        for i in range(extent):
            c = geom.offset_px + geom.stride_px * i
            if lo <= c <= hi:
                n += 1
        if axis == 0:
            count = n
        else:
            count *= n
    return count


def aog_stats(aog: Aog, geoms: Mapping[int, LayerGeometry] | None = None) -> AogStats:
    """Children counts per graph layer; unit counts need layer geometry."""
    n_templates = len(aog.templates)
    pattern_counts = [len(t.patterns) for t in aog.templates]
    mean_patterns = sum(pattern_counts) / n_templates if n_templates else 0.0
    mean_units = float("nan")
    if geoms is not None:
        counts = [
            _units_in_range_count(geoms[p.layer_id], p.center_px, aog.weights.deform_range_px)
            for t in aog.templates
            for p in t.patterns
            if p.layer_id in geoms
        ]
        if counts:
            mean_units = sum(counts) / len(counts)
    return AogStats(n_templates, mean_patterns, mean_units)


def serialize(aog: Aog) -> str:
    doc = {
        "version": AOG_FORMAT_VERSION,
        "part": aog.part_name,
        "weights": aog.weights.to_dict(),
        "templates": [
            {
                "id": t.template_id,
                "scale": list(t.scale_px),
                "patterns": [
                    {
                        "layer": p.layer_id,
                        "slice": p.conv_slice,
                        "center": list(p.center_px),
                        "dp": list(p.dp_px),
                        "score": p.mined_score,
                    }
                    for p in t.patterns
                ],
            }
            for t in aog.templates
        ],
        "provenance": aog.provenance,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def deserialize(text: str) -> Aog:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("graph document must be a JSON object")
    version = doc.get("version")
    if version != AOG_FORMAT_VERSION:
        raise FormatError(f"unsupported graph version {version!r}")
    for key in ("part", "weights", "templates"):
        if key not in doc:
            raise FormatError(f"graph document missing {key!r}")
    weights = ScoreWeights.from_dict(doc["weights"])
    templates = []
    for tdoc in doc["templates"]:
        try:
            patterns = [
                LatentPattern(
                    layer_id=int(p["layer"]),
                    conv_slice=int(p["slice"]),
                    center_px=(float(p["center"][0]), float(p["center"][1])),
                    dp_px=(float(p["dp"][0]), float(p["dp"][1])),
                    mined_score=float(p.get("score", 0.0)),
                )
                for p in tdoc.get("patterns", [])
            ]
            templates.append(
                PartTemplate(
                    template_id=int(tdoc["id"]),
                    scale_px=(float(tdoc["scale"][0]), float(tdoc["scale"][1])),
                    patterns=patterns,
                )
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise FormatError(f"bad template entry: {exc}") from exc
    return Aog(
        part_name=str(doc["part"]),
        weights=weights,
        templates=templates,
        provenance=dict(doc.get("provenance", {})),
    )


def save_aog(aog: Aog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(aog))


def load_aog(path) -> Aog:
    with open(path, "r", encoding="utf-8") as fh:
        return deserialize(fh.read())
