import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aogparts import (
    Aog,
    FeatureVolume,
    LatentPattern,
    LayerGeometry,
    PartTemplate,
    ScoreWeights,
    SignatureEntry,
    SynthSpec,
)

settings.register_profile(
    "repeatable",
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repeatable")


@pytest.fixture
def geom16():
    return LayerGeometry(layer_id=2, channels=3, height=5, width=5,
                         stride_px=16.0, rf_size_px=100.0, offset_px=8.0)


@pytest.fixture
def geom8():
    return LayerGeometry(layer_id=1, channels=4, height=10, width=10,
                         stride_px=8.0, rf_size_px=60.0, offset_px=4.0)


def make_volume(image_id="img-0", seed=0, geoms=None, size=(80, 80)):
    rng = np.random.default_rng(seed)
    if geoms is None:
        geoms = [
            LayerGeometry(1, 4, 10, 10, 8.0, 60.0, 4.0),
            LayerGeometry(2, 3, 5, 5, 16.0, 100.0, 8.0),
        ]
    layers = [
        (g, rng.normal(0, 1, size=(g.channels, g.height, g.width)).astype(np.float32))
        for g in geoms
    ]
    return FeatureVolume(image_id, size[0], size[1], layers)


@pytest.fixture
def volume():
    return make_volume()


def single_pattern_aog(center=(40.0, 40.0), dp=(0.0, 0.0), layer_id=2, conv_slice=0,
                       weights=None, scale=(40.0, 40.0)):
    return Aog(
        part_name="part",
        weights=weights or ScoreWeights(),
        templates=[
            PartTemplate(
                template_id=0,
                scale_px=scale,
                patterns=[LatentPattern(layer_id, conv_slice, center, dp)],
            )
        ],
    )


def random_small_instance(seed):
    """One desk-sized random (graph, volume) pair for oracle cross-checks.

    At most two layers of at most 6x6x3 activations, two templates with up
    to three patterns each, over an 80x80 image (a 20x20 center grid).
    """
    rng = np.random.default_rng(seed)
    geoms = [
        LayerGeometry(1, int(rng.integers(1, 4)), int(rng.integers(3, 7)),
                      int(rng.integers(3, 7)), 8.0, 60.0, 4.0),
        LayerGeometry(2, int(rng.integers(1, 4)), int(rng.integers(2, 5)),
                      int(rng.integers(2, 5)), 16.0, 100.0, 8.0),
    ]
    if rng.random() < 0.25:
        geoms = [geoms[rng.integers(0, 2)]]
    layers = [
        (g, rng.normal(0, 1, size=(g.channels, g.height, g.width)).astype(np.float32))
        for g in geoms
    ]
    vol = FeatureVolume(f"rand-{seed}", 80, 80, layers)

    templates = []
    for tid in range(int(rng.integers(1, 3))):
        patterns = []
        for _ in range(int(rng.integers(1, 4))):
            g = geoms[rng.integers(0, len(geoms))]
            ix = int(rng.integers(0, g.width))
            iy = int(rng.integers(0, g.height))
            cx, cy = g.unit_center(ix, iy)
            center = (cx + float(rng.uniform(-6, 6)), cy + float(rng.uniform(-6, 6)))
            dp = (float(rng.uniform(-30, 30)), float(rng.uniform(-30, 30)))
            patterns.append(
                LatentPattern(g.layer_id, int(rng.integers(0, g.channels)), center, dp)
            )
        templates.append(
            PartTemplate(template_id=tid,
                         scale_px=(float(rng.uniform(20, 60)), float(rng.uniform(20, 60))),
                         patterns=patterns)
        )
    aog = Aog(part_name="part", weights=ScoreWeights(), templates=templates)
    return aog, vol


def base_synth_spec(seed=0, n_images=30, noise=0.0, center_span=6.0):
    """Three templates, three planted bumps each, over two layers."""
    layers = (
        LayerGeometry(1, 6, 10, 10, 8.0, 60.0, 4.0),
        LayerGeometry(2, 3, 5, 5, 16.0, 100.0, 8.0),
    )
    amp = 10.0
    signatures = tuple(
        (
            SignatureEntry(2, t, (0.0, 0.0), amp, 1.0),
            SignatureEntry(1, 2 * t, (-16.0, -8.0), amp, 1.0),
            SignatureEntry(1, 2 * t + 1, (12.0, 8.0), amp, 1.0),
        )
        for t in range(3)
    )
    c = 40.0
    return SynthSpec(
        n_images=n_images,
        image_size_px=(80, 80),
        center_region_px=(c - center_span, c - center_span, c + center_span, c + center_span),
        layers=layers,
        signatures=signatures,
        noise=noise,
        seed=seed,
        box_size_px=(40.0, 40.0),
    )
