"""Estimator-style front door: fit on annotated volumes, predict part parses.

Follows the scikit-learn conventions (constructor stores hyper-parameters
untouched, ``get_params``/``set_params``, learned state in trailing
underscore attributes) without depending on scikit-learn itself, so the
localizer drops into pipelines and grid searches that duck-type the API.
"""

from __future__ import annotations

import inspect
from typing import Sequence

from .errors import NotFittedError
from .evaluation import evaluate
from .features import FeatureVolume, PartAnnotation, validate_volume
from .mining import MinerConfig, grow_aog
from .model import Aog, ScoreWeights, build_skeleton
from .parsing import ParseGraph, parse_semantic


def check_volumes(volumes: Sequence[FeatureVolume]) -> list[FeatureVolume]:
    if not volumes:
        raise ValueError("expected at least one feature volume")
    for vol in volumes:
        if not isinstance(vol, FeatureVolume):
            raise TypeError(f"expected FeatureVolume, got {type(vol).__name__}")
        problems = validate_volume(vol)
        if problems:
            raise ValueError(f"invalid volume {vol.image_id!r}: {problems[0]}")
    return list(volumes)


def check_annotations(
    annotations: Sequence[PartAnnotation], volumes: Sequence[FeatureVolume]
) -> list[PartAnnotation]:
    if not annotations:
        raise ValueError("expected at least one annotation")
    by_id = {v.image_id: v for v in volumes}
    for ann in annotations:
        if ann.image_id not in by_id:
            raise ValueError(f"annotation {ann.image_id!r} has no matching volume")
    return list(annotations)


class AogPartLocalizer:
    """Few-shot part localizer backed by a grown And-Or graph.

    Parameters mirror the miner configuration and the scoring constants;
    ``weights`` may be a :class:`ScoreWeights` or a dict of overrides.
    """

    def __init__(
        self,
        weights=None,
        nk="auto",
        epsilon_units=2,
        nk_fallback=4,
        unannotated_cap=None,
        seed=0,
    ):
        self.weights = weights
        self.nk = nk
        self.epsilon_units = epsilon_units
        self.nk_fallback = nk_fallback
        self.unannotated_cap = unannotated_cap
        self.seed = seed

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "AogPartLocalizer":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def _resolved_weights(self) -> ScoreWeights:
        if self.weights is None:
            return ScoreWeights()
        if isinstance(self.weights, ScoreWeights):
            return self.weights
        return ScoreWeights.from_dict(self.weights)

    def fit(
        self,
        volumes: Sequence[FeatureVolume],
        annotations: Sequence[PartAnnotation],
        unannotated: Sequence[FeatureVolume] | None = None,
    ) -> "AogPartLocalizer":
        """Grow the graph from annotated volumes.

        ``volumes`` must cover every annotation; ``unannotated`` defaults
        to the full volume list, which matches the intended use of the
        support pool.
        """
        volumes = check_volumes(volumes)
        annotations = check_annotations(annotations, volumes)
        by_id = {v.image_id: v for v in volumes}
        annotated = [(by_id[a.image_id], a) for a in annotations]
        pool = list(unannotated) if unannotated is not None else volumes
        config = MinerConfig(
            nk=self.nk,
            epsilon_units=self.epsilon_units,
            nk_fallback=self.nk_fallback,
            unannotated_cap=self.unannotated_cap,
            seed=self.seed,
        )
        skeleton = build_skeleton(annotations, self._resolved_weights())
        self.aog_ = grow_aog(skeleton, annotated, pool, config)
        return self

    def _check_fitted(self) -> Aog:
        aog = getattr(self, "aog_", None)
        if aog is None:
            raise NotFittedError("call fit before predict/score")
        return aog

    def predict(self, volumes: Sequence[FeatureVolume]) -> list[ParseGraph]:
        aog = self._check_fitted()
        return [parse_semantic(aog, vol) for vol in check_volumes(volumes)]

    def score(
        self, volumes: Sequence[FeatureVolume], annotations: Sequence[PartAnnotation]
    ) -> float:
        """Center-prediction rate on the given volumes."""
        volumes = check_volumes(volumes)
        annotations = check_annotations(annotations, volumes)
        parses = self.predict(volumes)
        dims = (volumes[0].image_width_px, volumes[0].image_height_px)
        return evaluate(parses, annotations, dims).center_prediction_rate
