"""Exhaustive reference parser for small instances.

Everything here is recomputed from first principles with plain Python
loops: normalization, window membership, neighbor ranking, unit scoring,
and the center scan.  It deliberately shares no helper with the fast
parser so the two can cross-check each other.  Refuses instances whose
enumeration work exceeds a fixed budget.
"""

from __future__ import annotations

import math

from .errors import InstanceTooLarge, ParseError
from .features import FeatureVolume
from .model import Aog, PartTemplate
from .parsing import GRID_STRIDE_PX, ParseGraph, PatternParse, Region, TemplateParse

MAX_WORK = 10_000_000


def _normalize(vol: FeatureVolume, layer_id: int) -> list[list[list[float]]]:
    geom, acts = vol.layer(layer_id)
    values = []
    for c in range(geom.channels):
        for y in range(geom.height):
            for x in range(geom.width):
                values.append(float(acts[c, y, x]))
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    std = math.sqrt(var)
    out = []
    k = 0
    for c in range(geom.channels):
        plane = []
        for y in range(geom.height):
            row = []
            for x in range(geom.width):
                row.append(0.0 if std == 0.0 else (values[k] - mean) / std)
                k += 1
            plane.append(row)
        out.append(plane)
    return out


def _window_units(geom, center, range_px):
    half = range_px / 2.0
    units = []
    for iy in range(geom.height):
        uy = geom.offset_px + geom.stride_px * iy
        if abs(uy - center[1]) > half:
            continue
        for ix in range(geom.width):
            ux = geom.offset_px + geom.stride_px * ix
            if abs(ux - center[0]) > half:
                continue
            units.append((ix, iy, ux, uy))
    return units


def _neighbor_indices(template: PartTemplate, idx: int, count: int) -> list[int]:
    pat = template.patterns[idx]
    uppers = sorted({p.layer_id for p in template.patterns if p.layer_id > pat.layer_id})
    if not uppers:
        return []
    upper_layer = uppers[0]
    ranked = []
    for j, other in enumerate(template.patterns):
        if other.layer_id != upper_layer:
            continue
        d2 = (other.center_px[0] - pat.center_px[0]) ** 2 + (
            other.center_px[1] - pat.center_px[1]
        ) ** 2
        ranked.append((d2, j))
    ranked.sort()
    return [j for _, j in ranked[:count]]


def _estimate_work(aog: Aog, vol: FeatureVolume) -> int:
    geoms = vol.geometries()
    n_cells = len(range(0, vol.image_width_px, GRID_STRIDE_PX)) * len(
        range(0, vol.image_height_px, GRID_STRIDE_PX)
    )
    work = 0
    for template in aog.templates:
        for idx, pat in enumerate(template.patterns):
            geom = geoms[pat.layer_id]
            window = len(_window_units(geom, pat.center_px, aog.weights.deform_range_px))
            nbrs = len(_neighbor_indices(template, idx, aog.weights.neighbor_count))
            work += window * (1 + nbrs)
        work += n_cells * len(template.patterns)
    return work


def brute_force_parse(aog: Aog, vol: FeatureVolume) -> ParseGraph:
    """Reference parse by full enumeration; raises on oversized instances."""
    work = _estimate_work(aog, vol)
    if work > MAX_WORK:
        raise InstanceTooLarge(f"instance requires {work} evaluations, budget {MAX_WORK}")

    w = aog.weights
    geoms = vol.geometries()
    normalized = {lid: _normalize(vol, lid) for lid in aog.required_layers()}

    template_parses = []
    for template in sorted(aog.templates, key=lambda t: t.template_id):
        if not template.patterns:
            raise ParseError(f"template {template.template_id} has no patterns")
        chosen: dict[int, tuple[int, int, float, float, float]] = {}
        layer_order = sorted({p.layer_id for p in template.patterns}, reverse=True)
        for layer_id in layer_order:
            geom = geoms[layer_id]
            for idx, pat in enumerate(template.patterns):
                if pat.layer_id != layer_id:
                    continue
                nbrs = _neighbor_indices(template, idx, w.neighbor_count)
                best = None
                for ix, iy, ux, uy in _window_units(geom, pat.center_px, w.deform_range_px):
                    x_val = normalized[layer_id][pat.conv_slice][iy][ix]
                    if x_val > 0.0:
                        s = w.lambda_rsp * x_val
                    else:
                        s = w.lambda_rsp * w.s_none
                    dx = ux - pat.center_px[0]
                    dy = uy - pat.center_px[1]
                    if w.loc_in_units:
                        dx /= geom.stride_px
                        dy /= geom.stride_px
                    s += -w.lambda_loc * (dx * dx + dy * dy)
                    if nbrs:
                        acc = 0.0
                        for j in nbrs:
                            up = chosen[j]
                            other = template.patterns[j]
                            ex = (ux - up[3]) - (other.center_px[0] - pat.center_px[0])
                            ey = (uy - up[4]) - (other.center_px[1] - pat.center_px[1])
                            acc += math.sqrt(ex * ex + ey * ey)
                        s += -w.lambda_pair * (acc / len(nbrs))
                    if best is None or s > best[2]:
                        best = (ix, iy, s, ux, uy)
                if best is None:
                    raise ParseError(
                        f"pattern (layer {layer_id}, slice {pat.conv_slice}) at "
                        f"{pat.center_px}: deformation window holds no units"
                    )
                chosen[idx] = best

        votes = []
        lat_total = 0.0
        for idx, pat in enumerate(template.patterns):
            ix, iy, s, ux, uy = chosen[idx]
            votes.append((ux + pat.dp_px[0], uy + pat.dp_px[1]))
            lat_total += s

        def total_at(cx, cy):
            t = lat_total
            for vx, vy in votes:
                ex, ey = vx - cx, vy - cy
                t += -w.lambda_inf * min(ex * ex + ey * ey, w.d_px * w.d_px)
            return t

        grid_best = None
        for gy in range(0, vol.image_height_px, GRID_STRIDE_PX):
            for gx in range(0, vol.image_width_px, GRID_STRIDE_PX):
                s = total_at(float(gx), float(gy))
                if grid_best is None or s > grid_best[2]:
                    grid_best = (float(gx), float(gy), s)
        assert grid_best is not None

        center = (grid_best[0], grid_best[1])
        score = grid_best[2]
        inliers = [
            v
            for v in votes
            if math.hypot(v[0] - grid_best[0], v[1] - grid_best[1]) <= w.d_px
        ]
        if inliers:
            rx = sum(v[0] for v in inliers) / len(inliers)
            ry = sum(v[1] for v in inliers) / len(inliers)
            rs = total_at(rx, ry)
            if rs > score:
                center, score = (rx, ry), rs

        template_parses.append(
            TemplateParse(
                template_id=template.template_id,
                grid_center=(grid_best[0], grid_best[1]),
                grid_score=grid_best[2],
                center=center,
                region=Region(center=center, scale=template.scale_px),
                score=score,
                patterns=[
                    PatternParse(
                        pattern_index=idx,
                        layer_id=template.patterns[idx].layer_id,
                        conv_slice=template.patterns[idx].conv_slice,
                        unit=(chosen[idx][0], chosen[idx][1]),
                        unit_center=(chosen[idx][3], chosen[idx][4]),
                        score=chosen[idx][2],
                    )
                    for idx in range(len(template.patterns))
                ],
            )
        )

    best_tp = template_parses[0]
    for tp in template_parses[1:]:
        if tp.score > best_tp.score:
            best_tp = tp
    return ParseGraph(
        image_id=vol.image_id,
        chosen_template_id=best_tp.template_id,
        part_region=best_tp.region,
        part_score=best_tp.score,
        template_parses=template_parses,
    )
