"""Growing the sub-graph of each part template from a handful of annotations.

For every template and every valid conv layer, deepest first: enumerate a
candidate pattern at each (slice, unit) position, score it on the annotated
images (unit parse plus center-vote agreement against the ground-truth box)
and on the unannotated pool (response and deformation of its best unit,
discounted by how far the pattern sits from the part), suppress near-duplicate
positions per slice, then greedily keep the top scorers.  The per-layer
budget is either fixed or estimated from the shape of the score-rank curve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FitError
from .features import FeatureVolume, LayerGeometry, PartAnnotation
from .model import Aog, LatentPattern, PartTemplate, ScoreWeights
from .parsing import LayerView, build_layer_views, window_index_bounds

log = logging.getLogger(__name__)

BETA_GRID_LO = 1e-4
BETA_GRID_HI = 10.0
BETA_GRID_POINTS = 200


@dataclass
class CandidatePattern:
    """One enumerated pattern location, scored during mining."""

    layer_id: int
    conv_slice: int
    ix: int
    iy: int
    center_px: tuple[float, float]
    dp_px: tuple[float, float]
    order_index: int
    score: float | None = None
    annotated_term: float | None = None
    unannotated_term: float | None = None
    image_parses: dict[str, tuple[tuple[float, float], float]] = field(default_factory=dict)


@dataclass(frozen=True)
class MinerConfig:
    """Mining hyper-parameters.

    ``nk`` is ``"auto"`` (rank-curve estimate per layer), a single int
    applied to every layer, or a list aligned with the valid layers in
    mining order (deepest first).  ``nk_fallback`` kicks in when the auto
    fit has too few survivors to work with.
    """

    nk: str | int | Sequence[int] = "auto"
    epsilon_units: int = 2
    nk_fallback: int = 4
    unannotated_cap: int | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.nk, str):
            if self.nk != "auto":
                raise ValueError(f"nk must be 'auto', an int, or a list, got {self.nk!r}")
        elif isinstance(self.nk, int):
            if self.nk < 1:
                raise ValueError("fixed nk must be >= 1")
        else:
            if not self.nk or any(int(n) < 1 for n in self.nk):
                raise ValueError("fixed nk list must be non-empty with entries >= 1")
        if self.epsilon_units < 1:
            raise ValueError("epsilon_units must be >= 1")
        if self.nk_fallback < 1:
            raise ValueError("nk_fallback must be >= 1")


def config_from_json(doc: Mapping) -> tuple[MinerConfig, ScoreWeights]:
    """Split a config document into miner settings and weight overrides."""
    known = {"nk", "epsilon", "nk_fallback", "unannotated_cap", "seed", "weights"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    nk = doc.get("nk", "auto")
    if isinstance(nk, list):
        nk = [int(v) for v in nk]
    cfg = MinerConfig(
        nk=nk,
        epsilon_units=int(doc.get("epsilon", 2)),
        nk_fallback=int(doc.get("nk_fallback", 4)),
        unannotated_cap=(None if doc.get("unannotated_cap") is None
                         else int(doc["unannotated_cap"])),
        seed=int(doc.get("seed", 0)),
    )
    weights = ScoreWeights.from_dict(doc.get("weights", {}))
    return cfg, weights


@dataclass
class ImageContext:
    image_id: str
    views: dict[int, LayerView]
    rsp: dict[int, np.ndarray]
    part_center: tuple[float, float] | None = None


def _response_map(view: LayerView, weights: ScoreWeights) -> np.ndarray:
    x = view.x
    return np.where(x > 0.0, weights.lambda_rsp * x, weights.lambda_rsp * weights.s_none)


def build_image_context(
    vol: FeatureVolume,
    layer_ids: Sequence[int],
    weights: ScoreWeights,
    part_center: tuple[float, float] | None = None,
) -> ImageContext:
    views = build_layer_views(vol)
    views = {lid: views[lid] for lid in layer_ids}
    rsp = {lid: _response_map(v, weights) for lid, v in views.items()}
    return ImageContext(vol.image_id, views, rsp, part_center)


def _window_best(
    ctx: ImageContext,
    layer_id: int,
    center: tuple[float, float],
    conv_slice: int,
    upper_pairs: list[tuple[tuple[float, float], tuple[float, float]]] | None,
    weights: ScoreWeights,
) -> tuple[tuple[float, float], float] | None:
    """Highest-scoring unit in the window; ties go to the smallest (row, col).

    Operation order mirrors the scalar terminal score exactly, so mining
    and parsing pick identical units even on exact ties.
    """
    geom = ctx.views[layer_id].geom
    x_lo, x_hi, y_lo, y_hi = window_index_bounds(geom, center, weights.deform_range_px)
    if x_lo > x_hi or y_lo > y_hi:
        return None
    ux = geom.offset_px + geom.stride_px * np.arange(x_lo, x_hi + 1, dtype=np.float64)
    uy = geom.offset_px + geom.stride_px * np.arange(y_lo, y_hi + 1, dtype=np.float64)
    dx = ux - center[0]
    dy = uy - center[1]
    if weights.loc_in_units:
        dx = dx / geom.stride_px
        dy = dy / geom.stride_px
    loc = -weights.lambda_loc * ((dx * dx)[None, :] + (dy * dy)[:, None])
    total = ctx.rsp[layer_id][conv_slice, y_lo:y_hi + 1, x_lo:x_hi + 1] + loc
    if upper_pairs:
        acc = np.zeros_like(total)
        for chosen_up, ideal_up in upper_pairs:
            ex = (ux - chosen_up[0]) - (ideal_up[0] - center[0])
            ey = (uy - chosen_up[1]) - (ideal_up[1] - center[1])
            acc = acc + np.sqrt((ex * ex)[None, :] + (ey * ey)[:, None])
        total = total + (-weights.lambda_pair * (acc / len(upper_pairs)))
    flat = int(np.argmax(total))
    ry, rx = divmod(flat, total.shape[1])
    return (float(ux[rx]), float(uy[ry])), float(total[ry, rx])


@dataclass
class _UpperPattern:
    center_px: tuple[float, float]
    chosen: dict[str, tuple[float, float]]


def _nearest_uppers(center: tuple[float, float], uppers: list[_UpperPattern],
                    count: int) -> list[_UpperPattern]:
    ranked = sorted(
        enumerate(uppers),
        key=lambda item: (
            (item[1].center_px[0] - center[0]) ** 2
            + (item[1].center_px[1] - center[1]) ** 2,
            item[0],
        ),
    )
    return [u for _, u in ranked[:count]]


def enumerate_candidates(
    geom: LayerGeometry, mean_center_px: tuple[float, float]
) -> list[CandidatePattern]:
    """One candidate per (slice, unit position); displacement points at the
    template's mean annotated center."""
    out = []
    order = 0
    for conv_slice in range(geom.channels):
        for iy in range(geom.height):
            for ix in range(geom.width):
                cx = geom.offset_px + geom.stride_px * ix
                cy = geom.offset_px + geom.stride_px * iy
                out.append(
                    CandidatePattern(
                        layer_id=geom.layer_id,
                        conv_slice=conv_slice,
                        ix=ix,
                        iy=iy,
                        center_px=(cx, cy),
                        dp_px=(mean_center_px[0] - cx, mean_center_px[1] - cy),
                        order_index=order,
                    )
                )
                order += 1
    return out


def score_candidate(
    cand: CandidatePattern,
    annotated: Sequence[ImageContext],
    unannotated: Sequence[ImageContext],
    upper_selected: list[_UpperPattern],
    weights: ScoreWeights,
) -> float:
    """Mean annotated fit plus mean unannotated support for one candidate.

    On annotated images the candidate parses its best unit (pairing against
    already-mined upper patterns) and is charged the truncated-quadratic
    disagreement between its center vote and the ground-truth part center.
    On unannotated images the unit choice ignores pairing, and the bracket
    subtracts a closeness penalty on the stored displacement.
    """
    if not annotated:
        raise ValueError("score_candidate needs at least one annotated image")
    nbrs = _nearest_uppers(cand.center_px, upper_selected, weights.neighbor_count)

    ann_total = 0.0
    for ctx in annotated:
        pairs = [(u.chosen[ctx.image_id], u.center_px) for u in nbrs]
        best = _window_best(ctx, cand.layer_id, cand.center_px, cand.conv_slice, pairs, weights)
        if best is None:
            cand.score = -math.inf
            return cand.score
        chosen_center, unit_score = best
        cand.image_parses[ctx.image_id] = (chosen_center, unit_score)
        assert ctx.part_center is not None
        vx = chosen_center[0] + cand.dp_px[0] - ctx.part_center[0]
        vy = chosen_center[1] + cand.dp_px[1] - ctx.part_center[1]
        inf = -weights.lambda_inf * min(vx * vx + vy * vy, weights.d_px * weights.d_px)
        ann_total += unit_score + inf
    ann_mean = ann_total / len(annotated)

    unsup_mean = 0.0
    if unannotated:
        close = weights.lambda_close * (cand.dp_px[0] ** 2 + cand.dp_px[1] ** 2)
        total = 0.0
        for ctx in unannotated:
            best = _window_best(ctx, cand.layer_id, cand.center_px, cand.conv_slice, None, weights)
            if best is None:
                cand.score = -math.inf
                return cand.score
            total += weights.lambda_unsup * (best[1] - close)
        unsup_mean = total / len(unannotated)

    cand.annotated_term = ann_mean
    cand.unannotated_term = unsup_mean
    cand.score = ann_mean + unsup_mean
    return cand.score


def _conflicts(a: CandidatePattern, b: CandidatePattern, epsilon_units: int) -> bool:
    return (
        a.conv_slice == b.conv_slice
        and abs(a.ix - b.ix) < epsilon_units
        and abs(a.iy - b.iy) < epsilon_units
    )


def spatial_nms(candidates: Sequence[CandidatePattern], epsilon_units: int) -> list[CandidatePattern]:
    """Keep only the best-scoring candidate within any epsilon window of a
    conv-slice; survivors come back sorted by descending score."""
    ranked = sorted(candidates, key=lambda c: (-_score_of(c), c.order_index))
    kept: list[CandidatePattern] = []
    for cand in ranked:
        if not any(_conflicts(cand, k, epsilon_units) for k in kept):
            kept.append(cand)
    return kept


def _score_of(cand: CandidatePattern) -> float:
    if cand.score is None:
        raise ValueError("candidate not scored yet")
    return cand.score


def greedy_select(
    candidates: Sequence[CandidatePattern], n_k: int, epsilon_units: int
) -> list[CandidatePattern]:
    """Repeatedly take the best remaining candidate not suppressed by a
    previous pick, until ``n_k`` picks or the pool runs dry."""
    remaining = sorted(candidates, key=lambda c: (-_score_of(c), c.order_index))
    picked: list[CandidatePattern] = []
    for cand in remaining:
        if len(picked) >= n_k:
            break
        if not any(_conflicts(cand, p, epsilon_units) for p in picked):
            picked.append(cand)
    return picked


def _rank_basis(beta: float, ranks: np.ndarray) -> np.ndarray:
    return np.exp(-np.sqrt(beta * ranks))


def _fit_alpha_gamma(beta: float, ranks: np.ndarray, scores: np.ndarray) -> tuple[float, float, float]:
    basis = _rank_basis(beta, ranks)
    design = np.stack([basis, np.ones_like(basis)], axis=1)
    coef, *_ = np.linalg.lstsq(design, scores, rcond=None)
    resid = scores - design @ coef
    return float(coef[0]), float(coef[1]), float(resid @ resid)


def fit_rank_curve(scores_desc: Sequence[float]) -> tuple[float, float, float]:
    """Fit score ~ alpha * exp(-sqrt(beta * rank)) + gamma to a sorted curve.

    One-dimensional search over beta with closed-form alpha and gamma at
    each step: a coarse log-spaced grid scan, then golden-section
    refinement around the best cell.  Needs at least 8 scores.
    """
    n = len(scores_desc)
    if n < 8:
        raise FitError(f"rank-curve fit needs >= 8 scores, got {n}")
    scores = np.asarray(scores_desc, dtype=np.float64)
    ranks = np.arange(1, n + 1, dtype=np.float64)
    if scores.max() == scores.min():
        log.warning("rank curve is flat; beta is unidentified, returning grid edge")
        return 0.0, BETA_GRID_HI, float(scores[0])

    grid = np.logspace(math.log10(BETA_GRID_LO), math.log10(BETA_GRID_HI), BETA_GRID_POINTS)
    best_i = 0
    best = None
    for i, beta in enumerate(grid):
        alpha, gamma, sse = _fit_alpha_gamma(float(beta), ranks, scores)
        if best is None or sse <= best[3]:
            best = (alpha, float(beta), gamma, sse)
            best_i = i
    assert best is not None
    alpha, beta, gamma, sse = best
    if sse == 0.0:
        return alpha, beta, gamma

    log_lo = math.log10(grid[max(0, best_i - 1)])
    log_hi = math.log10(grid[min(len(grid) - 1, best_i + 1)])
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = log_lo, log_hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc = _fit_alpha_gamma(10.0 ** c, ranks, scores)[2]
    fd = _fit_alpha_gamma(10.0 ** d, ranks, scores)[2]
    for _ in range(80):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = _fit_alpha_gamma(10.0 ** c, ranks, scores)[2]
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = _fit_alpha_gamma(10.0 ** d, ranks, scores)[2]
    beta_ref = 10.0 ** ((a + b) / 2.0)
    alpha_r, gamma_r, sse_r = _fit_alpha_gamma(beta_ref, ranks, scores)
    if sse_r < sse:
        return alpha_r, beta_ref, gamma_r
    return alpha, beta, gamma


def estimate_nk(beta: float, candidate_count: int | None = None) -> int:
    """Per-layer pattern budget from the fitted decay rate."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    n = max(1, math.ceil(0.5 / beta))
    if candidate_count is not None:
        n = min(n, candidate_count)
    return n


def _resolve_nk(config: MinerConfig, layer_pos: int, n_layers: int,
                survivors: list[CandidatePattern]) -> int:
    if config.nk == "auto":
        try:
            _, beta, _ = fit_rank_curve([_score_of(c) for c in survivors])
            return estimate_nk(beta, len(survivors))
        except FitError:
            log.warning("auto nk fit failed (pool of %d); using fallback %d",
                        len(survivors), config.nk_fallback)
            return min(config.nk_fallback, len(survivors))
    if isinstance(config.nk, int):
        return config.nk
    nks = list(config.nk)
    if len(nks) == 1:
        return nks[0]
    if len(nks) != n_layers:
        raise ValueError(
            f"nk list has {len(nks)} entries for {n_layers} valid layers "
            f"(order: deepest first)"
        )
    return nks[layer_pos]


def _check_shared_geometry(volumes: Sequence[FeatureVolume], layer_ids: Sequence[int]) -> None:
    ref = volumes[0].geometries()
    for vol in volumes[1:]:
        geoms = vol.geometries()
        for lid in layer_ids:
            if lid not in geoms:
                raise KeyError(f"volume {vol.image_id!r} lacks layer {lid}")
            if geoms[lid] != ref[lid]:
                raise ValueError(
                    f"volume {vol.image_id!r} layer {lid} geometry differs from "
                    f"{volumes[0].image_id!r}"
                )


def grow_aog(
    skeleton: Aog,
    annotated: Sequence[tuple[FeatureVolume, PartAnnotation]],
    unannotated: Sequence[FeatureVolume],
    config: MinerConfig,
) -> Aog:
    """Mine latent patterns for every template of a skeleton graph.

    ``unannotated`` is the support pool for the frequency term; passing the
    annotated images again as part of it is expected.  Deterministic for a
    fixed config.
    """
    if not annotated:
        raise ValueError("mining needs at least one annotated image")
    weights = skeleton.weights
    all_vols = [v for v, _ in annotated] + list(unannotated)
    if weights.valid_layers is not None:
        valid_layers = sorted(weights.valid_layers, reverse=True)
    else:
        valid_layers = sorted(annotated[0][0].layer_ids(), reverse=True)
    _check_shared_geometry(all_vols, valid_layers)
    geoms = {lid: annotated[0][0].geometries()[lid] for lid in valid_layers}

    pool = sorted(unannotated, key=lambda v: v.image_id)
    if config.unannotated_cap is not None and len(pool) > config.unannotated_cap:
        rng = np.random.default_rng(config.seed)
        idx = sorted(rng.choice(len(pool), size=config.unannotated_cap, replace=False))
        pool = [pool[i] for i in idx]

    ann_ctx_cache = {
        vol.image_id: build_image_context(vol, valid_layers, weights, ann.center)
        for vol, ann in sorted(annotated, key=lambda item: item[0].image_id)
    }
    pool_ctx = [build_image_context(vol, valid_layers, weights) for vol in pool]

    templates_out = []
    provenance_nk: dict[str, dict[str, int]] = {}
    for template in sorted(skeleton.templates, key=lambda t: t.template_id):
        t_anns = sorted(
            (item for item in annotated if item[1].template_id == template.template_id),
            key=lambda item: item[0].image_id,
        )
        if not t_anns:
            log.warning("template %d has no annotations; skipping", template.template_id)
            templates_out.append(PartTemplate(template.template_id, template.scale_px, []))
            continue
        mean_center = (
            sum(a.center[0] for _, a in t_anns) / len(t_anns),
            sum(a.center[1] for _, a in t_anns) / len(t_anns),
        )
        ann_ctx = [ann_ctx_cache[v.image_id] for v, _ in t_anns]

        patterns: list[LatentPattern] = []
        upper_selected: list[_UpperPattern] = []
        nk_by_layer: dict[str, int] = {}
        for pos, layer_id in enumerate(valid_layers):
            cands = enumerate_candidates(geoms[layer_id], mean_center)
            for cand in cands:
                score_candidate(cand, ann_ctx, pool_ctx, upper_selected, weights)
            survivors = spatial_nms(cands, config.epsilon_units)
            n_k = _resolve_nk(config, pos, len(valid_layers), survivors)
            selected = greedy_select(survivors, n_k, config.epsilon_units)
            nk_by_layer[str(layer_id)] = len(selected)
            if selected:
                upper_selected = [
                    _UpperPattern(
                        center_px=c.center_px,
                        chosen={img: parse[0] for img, parse in c.image_parses.items()},
                    )
                    for c in selected
                ]
            for c in selected:
                patterns.append(
                    LatentPattern(
                        layer_id=c.layer_id,
                        conv_slice=c.conv_slice,
                        center_px=c.center_px,
                        dp_px=c.dp_px,
                        mined_score=float(_score_of(c)),
                    )
                )
        templates_out.append(PartTemplate(template.template_id, template.scale_px, patterns))
        provenance_nk[str(template.template_id)] = nk_by_layer

    provenance = dict(skeleton.provenance)
    provenance.update(
        {
            "layers": list(valid_layers),
            "nk": provenance_nk,
            "epsilon_units": config.epsilon_units,
            "seed": config.seed,
            "unannotated_pool": len(pool),
            "template_vote_weight": {
                str(t.template_id): weights.lambda_inf * len(t.patterns) for t in templates_out
            },
        }
    )
    return Aog(
        part_name=skeleton.part_name,
        weights=weights,
        templates=templates_out,
        provenance=provenance,
    )
