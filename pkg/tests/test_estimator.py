import numpy as np
import pytest

from aogparts import AogPartLocalizer, NotFittedError, ScoreWeights, synth_generate
from aogparts.estimator import check_annotations, check_volumes

from conftest import base_synth_spec, make_volume

PARAMS = dict(
    weights={"loc_in_units": True, "lambda_pair": 0.0, "lambda_close": 0.005},
    nk=[1, 2],
    unannotated_cap=10,
)


def dataset(seed=0, noise=1.0, n_images=24):
    spec = base_synth_spec(seed=seed, n_images=n_images, noise=noise)
    volumes, annotations, _ = synth_generate(spec)
    three = [next(a for a in annotations if a.template_id == t) for t in range(3)]
    return volumes, annotations, three


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = AogPartLocalizer(**PARAMS)
        params = est.get_params()
        clone = AogPartLocalizer(**params)
        assert clone.get_params() == params

    def test_set_params_chains(self):
        est = AogPartLocalizer().set_params(seed=5, nk=3)
        assert est.seed == 5
        assert est.nk == 3

    def test_set_unknown_param_rejected(self):
        with pytest.raises(ValueError, match="invalid parameter"):
            AogPartLocalizer().set_params(bogus=1)

    def test_params_not_mutated_by_fit(self):
        volumes, _, three = dataset()
        est = AogPartLocalizer(**PARAMS)
        before = est.get_params()
        est.fit(volumes, three)
        assert est.get_params() == before


class TestFitPredict:
    def test_fit_predict_score(self):
        volumes, annotations, three = dataset()
        est = AogPartLocalizer(**PARAMS).fit(volumes, three)
        held = volumes[3:9]
        parses = est.predict(held)
        assert len(parses) == 6
        assert est.score(held, annotations[3:9]) >= 0.5

    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            AogPartLocalizer().predict([make_volume()])

    def test_weights_object_accepted(self):
        volumes, _, three = dataset()
        est = AogPartLocalizer(
            weights=ScoreWeights(loc_in_units=True, lambda_pair=0.0),
            nk=1, unannotated_cap=6,
        )
        est.fit(volumes[:6], three)
        assert est.aog_.weights.loc_in_units is True


class TestValidationHelpers:
    def test_rejects_non_volume(self):
        with pytest.raises(TypeError):
            check_volumes([object()])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            check_volumes([])

    def test_rejects_invalid_volume(self):
        vol = make_volume()
        vol.layers[0][1][0, 0, 0] = np.inf
        with pytest.raises(ValueError, match="invalid volume"):
            check_volumes([vol])

    def test_rejects_unmatched_annotation(self):
        volumes, _, three = dataset()
        orphan = three[0]
        with pytest.raises(ValueError, match="no matching volume"):
            check_annotations([orphan], volumes[5:8])
