"""Bottom-up part parsing over a learned graph.

Layers are processed from the deepest conv layer downward: each pattern
picks its best unit inside the deformation window (response + deformation +
pairwise compatibility with already-chosen upper-layer units), then each
template searches the image for the center that best agrees with its
patterns' votes, and finally the best-scoring template wins.

All ties break toward the smallest index, so parsing is fully
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .features import FeatureVolume, LayerGeometry
from .model import Aog, LatentPattern, PartTemplate, Region, ScoreWeights

GRID_STRIDE_PX = 4


@dataclass
class LayerView:
    """One layer's geometry plus its normalized response tensor."""

    geom: LayerGeometry
    x: np.ndarray


def normalize_responses(vol: FeatureVolume, layer_id: int) -> np.ndarray:
    """Z-score the layer's activations over all its units in this image.

    A constant layer (zero std) normalizes to all zeros, so every unit of
    such a layer counts as non-activated.
    """
    _, acts = vol.layer(layer_id)
    a = acts.astype(np.float64)
    mu = float(a.mean())
    sigma = float(a.std())
    if sigma == 0.0:
        return np.zeros_like(a)
    return (a - mu) / sigma


def build_layer_views(vol: FeatureVolume) -> dict[int, LayerView]:
    return {
        geom.layer_id: LayerView(geom, normalize_responses(vol, geom.layer_id))
        for geom, _ in vol.layers
    }


def _axis_bounds(offset: float, stride: float, extent: int, c: float, half: float) -> tuple[int, int]:
    lo = max(0, int(math.floor((c - half - offset) / stride)) - 1)
    hi = min(extent - 1, int(math.ceil((c + half - offset) / stride)) + 1)
    while lo <= hi and abs(offset + stride * lo - c) > half:
        lo += 1
    while hi >= lo and abs(offset + stride * hi - c) > half:
        hi -= 1
    return lo, hi


def window_index_bounds(
    geom: LayerGeometry, center: tuple[float, float], range_px: float
) -> tuple[int, int, int, int]:
    """Inclusive (x_lo, x_hi, y_lo, y_hi) of units inside the closed window.

    Unit centers are monotone in the index, so membership per axis is a
    contiguous interval; an empty axis comes back with lo > hi.
    """
    half = range_px / 2.0
    x_lo, x_hi = _axis_bounds(geom.offset_px, geom.stride_px, geom.width, center[0], half)
    y_lo, y_hi = _axis_bounds(geom.offset_px, geom.stride_px, geom.height, center[1], half)
    return x_lo, x_hi, y_lo, y_hi


def units_in_range(geom: LayerGeometry, center: tuple[float, float], range_px: float):
    """Units whose centers lie in the closed square window around ``center``.

    Yields (ix, iy) in row-major order (row first), which fixes the
    deterministic tie-break order of every argmax taken over the window.
    """
    x_lo, x_hi, y_lo, y_hi = window_index_bounds(geom, center, range_px)
    for iy in range(y_lo, y_hi + 1):
        for ix in range(x_lo, x_hi + 1):
            yield ix, iy


def score_terminal(
    unit: tuple[int, int],
    pattern: LatentPattern,
    view: LayerView,
    upper_chosen: list[tuple[tuple[float, float], tuple[float, float]]],
    weights: ScoreWeights,
) -> float:
    """Score of one unit under a pattern: response + deformation + pairing.

    ``upper_chosen`` lists (chosen center, ideal center) of the pattern's
    upper-layer neighbors; empty for the topmost layer.  The pairing term
    uses the unsquared Euclidean norm while the deformation term squares
    it; the asymmetry is intentional and load-bearing, do not "fix" it.
    """
    ix, iy = unit
    geom = view.geom
    ux = geom.offset_px + geom.stride_px * ix
    uy = geom.offset_px + geom.stride_px * iy
    half = weights.deform_range_px / 2.0
    if abs(ux - pattern.center_px[0]) > half or abs(uy - pattern.center_px[1]) > half:
        raise ValueError(
            f"unit ({ix}, {iy}) outside the deformation window of the "
            f"pattern at {pattern.center_px}"
        )
    x_val = float(view.x[pattern.conv_slice, iy, ix])
    if x_val > 0.0:
        rsp = weights.lambda_rsp * x_val
    else:
        rsp = weights.lambda_rsp * weights.s_none
    dx = ux - pattern.center_px[0]
    dy = uy - pattern.center_px[1]
    if weights.loc_in_units:
        dx /= geom.stride_px
        dy /= geom.stride_px
    loc = -weights.lambda_loc * (dx * dx + dy * dy)
    pair = 0.0
    if upper_chosen:
        total = 0.0
        for chosen_up, ideal_up in upper_chosen:
            ex = (ux - chosen_up[0]) - (ideal_up[0] - pattern.center_px[0])
            ey = (uy - chosen_up[1]) - (ideal_up[1] - pattern.center_px[1])
            total += math.sqrt(ex * ex + ey * ey)
        pair = -weights.lambda_pair * (total / len(upper_chosen))
    return rsp + loc + pair


@dataclass(frozen=True)
class PatternParse:
    """Chosen unit for one pattern: Eq.-level record of the OR decision."""

    pattern_index: int
    layer_id: int
    conv_slice: int
    unit: tuple[int, int]
    unit_center: tuple[float, float]
    score: float


def parse_latent(
    pattern: LatentPattern,
    view: LayerView,
    upper_chosen: list[tuple[tuple[float, float], tuple[float, float]]],
    weights: ScoreWeights,
) -> tuple[tuple[int, int], float]:
    """Best unit in the pattern's deformation window, smallest index on ties."""
    best: tuple[int, int] | None = None
    best_score = -math.inf
    for ix, iy in units_in_range(view.geom, pattern.center_px, weights.deform_range_px):
        s = score_terminal((ix, iy), pattern, view, upper_chosen, weights)
        if s > best_score:
            best_score = s
            best = (ix, iy)
    if best is None:
        raise ParseError(
            f"pattern (layer {pattern.layer_id}, slice {pattern.conv_slice}) at "
            f"{pattern.center_px}: deformation window holds no units"
        )
    return best, best_score


def s_inf(
    template_center: tuple[float, float],
    chosen_center: tuple[float, float],
    dp: tuple[float, float],
    weights: ScoreWeights,
) -> float:
    """Truncated-quadratic vote penalty, bounded below by -lambda_inf * d^2."""
    vx = chosen_center[0] + dp[0] - template_center[0]
    vy = chosen_center[1] + dp[1] - template_center[1]
    return -weights.lambda_inf * min(vx * vx + vy * vy, weights.d_px * weights.d_px)


@dataclass
class TemplateParse:
    template_id: int
    grid_center: tuple[float, float]
    grid_score: float
    center: tuple[float, float]
    region: Region
    score: float
    patterns: list[PatternParse]


def _parse_template_patterns(
    template: PartTemplate,
    views: dict[int, LayerView],
    neighbor_map: dict[int, list[int]],
    weights: ScoreWeights,
) -> dict[int, PatternParse]:
    """Run the per-pattern unit choice, deepest layer first."""
    parses: dict[int, PatternParse] = {}
    for layer_id in sorted(template.layers_present(), reverse=True):
        view = views.get(layer_id)
        if view is None:
            raise KeyError(f"volume lacks layer {layer_id} required by template "
                           f"{template.template_id}")
        for idx, pattern in template.patterns_in_layer(layer_id):
            upper = [
                (parses[j].unit_center, template.patterns[j].center_px)
                for j in neighbor_map[idx]
            ]
            unit, score = parse_latent(pattern, view, upper, weights)
            geom = view.geom
            center = (geom.offset_px + geom.stride_px * unit[0],
                      geom.offset_px + geom.stride_px * unit[1])
            parses[idx] = PatternParse(
                pattern_index=idx,
                layer_id=layer_id,
                conv_slice=pattern.conv_slice,
                unit=unit,
                unit_center=center,
                score=score,
            )
    return parses


def parse_template(
    template: PartTemplate,
    views: dict[int, LayerView],
    neighbor_map: dict[int, list[int]],
    weights: ScoreWeights,
    image_size: tuple[int, int],
) -> TemplateParse:
    """Center search for one template given its patterns' parsed votes.

    Scans a fixed pixel grid over the image, then refines the winning cell
    to the mean of the votes it captures and keeps whichever center scores
    higher.  Grid cells are visited row-major, strict improvement only, so
    the first best cell wins.
    """
    if not template.patterns:
        raise ParseError(f"template {template.template_id} has no patterns")
    parses = _parse_template_patterns(template, views, neighbor_map, weights)
    votes = []
    lat_total = 0.0
    for idx in range(len(template.patterns)):
        rec = parses[idx]
        pat = template.patterns[idx]
        votes.append((rec.unit_center[0] + pat.dp_px[0], rec.unit_center[1] + pat.dp_px[1]))
        lat_total += rec.score

    def center_score(cx: float, cy: float) -> float:
        total = lat_total
        for vx, vy in votes:
            ex, ey = vx - cx, vy - cy
            total += -weights.lambda_inf * min(ex * ex + ey * ey, weights.d_px * weights.d_px)
        return total

    w_img, h_img = image_size
    best_center = None
    best_score = -math.inf
    for gy in range(0, h_img, GRID_STRIDE_PX):
        for gx in range(0, w_img, GRID_STRIDE_PX):
            s = center_score(float(gx), float(gy))
            if s > best_score:
                best_score = s
                best_center = (float(gx), float(gy))
    assert best_center is not None

    center, score = best_center, best_score
    d = weights.d_px
    inliers = [
        v for v in votes
        if math.hypot(v[0] - best_center[0], v[1] - best_center[1]) <= d
    ]
    if inliers:
        refined = (
            sum(v[0] for v in inliers) / len(inliers),
            sum(v[1] for v in inliers) / len(inliers),
        )
        refined_score = center_score(*refined)
        if refined_score > score:
            center, score = refined, refined_score

    return TemplateParse(
        template_id=template.template_id,
        grid_center=best_center,
        grid_score=best_score,
        center=center,
        region=Region(center=center, scale=template.scale_px),
        score=score,
        patterns=[parses[i] for i in range(len(template.patterns))],
    )


@dataclass
class ParseGraph:
    """Inference result: the chosen template subtree with all scores."""

    image_id: str
    chosen_template_id: int
    part_region: Region
    part_score: float
    template_parses: list[TemplateParse]

    @property
    def chosen(self) -> TemplateParse:
        for tp in self.template_parses:
            if tp.template_id == self.chosen_template_id:
                return tp
        raise KeyError(f"no parse for chosen template {self.chosen_template_id}")

    def to_json_dict(self) -> dict:
        tp = self.chosen
        return {
            "image": self.image_id,
            "template": self.chosen_template_id,
            "center": list(tp.center),
            "bbox": list(self.part_region.bbox),
            "score": self.part_score,
            "patterns": [
                {
                    "layer": p.layer_id,
                    "slice": p.conv_slice,
                    "unit": list(p.unit),
                    "score": p.score,
                }
                for p in tp.patterns
            ],
        }


def check_requirements(aog: Aog, vol: FeatureVolume) -> None:
    geoms = vol.geometries()
    missing = [l for l in aog.required_layers() if l not in geoms]
    bad_slices = []
    for t in aog.templates:
        for p in t.patterns:
            geom = geoms.get(p.layer_id)
            if geom is not None and p.conv_slice >= geom.channels:
                bad_slices.append((p.layer_id, p.conv_slice))
    if missing or bad_slices:
        raise KeyError(
            f"volume {vol.image_id!r} cannot be parsed: missing layers "
            f"{missing}, out-of-range slices {sorted(set(bad_slices))}"
        )


def parse_views(
    aog: Aog,
    views: dict[int, LayerView],
    image_id: str,
    image_size: tuple[int, int],
) -> ParseGraph:
    """Parse pre-normalized layer views; smaller template id wins ties."""
    template_parses = []
    best: TemplateParse | None = None
    for template in sorted(aog.templates, key=lambda t: t.template_id):
        tp = parse_template(
            template, views, aog.neighbor_map(template), aog.weights, image_size
        )
        template_parses.append(tp)
        if best is None or tp.score > best.score:
            best = tp
    assert best is not None
    return ParseGraph(
        image_id=image_id,
        chosen_template_id=best.template_id,
        part_region=best.region,
        part_score=best.score,
        template_parses=template_parses,
    )


def parse_semantic(aog: Aog, vol: FeatureVolume) -> ParseGraph:
    """Full pipeline for one image: normalize, parse patterns, pick template."""
    check_requirements(aog, vol)
    views = build_layer_views(vol)
    return parse_views(aog, views, vol.image_id, (vol.image_width_px, vol.image_height_px))


def recompute_part_score(aog: Aog, vol: FeatureVolume, parse: ParseGraph) -> float:
    """Re-derive the part score from the recorded leaf choices.

    Recomputes every chosen unit's terminal score from fresh normalized
    responses plus its vote penalty against the recorded center; the result
    must match ``parse.part_score`` to within numerical noise.
    """
    views = build_layer_views(vol)
    template = aog.template(parse.chosen_template_id)
    neighbor_map = aog.neighbor_map(template)
    tp = parse.chosen
    by_index = {p.pattern_index: p for p in tp.patterns}
    total = 0.0
    for idx, pattern in enumerate(template.patterns):
        rec = by_index[idx]
        upper = [
            (by_index[j].unit_center, template.patterns[j].center_px)
            for j in neighbor_map[idx]
        ]
        unit_score = score_terminal(rec.unit, pattern, views[pattern.layer_id], upper, aog.weights)
        total += unit_score
        total += s_inf(tp.center, rec.unit_center, pattern.dp_px, aog.weights)
    return total
