import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srnseg import autodiff as ad
from srnseg.autodiff import DiffValue, Tape, grad_check
from srnseg.scene import Hypernetwork, SceneDims, generate_scene, init_latent, interpolate_codes, scene_features

DIMS = SceneDims(latent=8, hidden=8, features=6)


@pytest.fixture
def hn():
    return Hypernetwork(DIMS, np.random.default_rng(0))


def test_layer_shapes_and_count():
    dims = SceneDims(latent=32, hidden=32, features=32)
    assert dims.layer_shapes() == [(3, 32), (32, 32), (32, 32), (32, 32)]
    assert dims.weight_count == 3 * 32 + 32 + 3 * (32 * 32 + 32)


def test_constant_head_ignores_code(hn):
    for head in hn.heads:
        head["w2"].data[...] = 0.0
    rng = np.random.default_rng(1)
    w1 = generate_scene(hn, rng.normal(size=(1, 8))).weight_vector
    w2 = generate_scene(hn, rng.normal(size=(1, 8))).weight_vector
    expected = np.concatenate([h["b2"].data for h in hn.heads])
    assert np.array_equal(w1, expected) and np.array_equal(w2, expected)


def test_distinct_codes_give_distinct_weights(hn):
    rng = np.random.default_rng(2)
    seen = set()
    for _ in range(100):
        w = generate_scene(hn, rng.normal(size=(1, 8))).weight_vector
        seen.add(w.tobytes())
    assert len(seen) == 100


def test_code_size_mismatch(hn):
    with pytest.raises(ValueError, match="8"):
        generate_scene(hn, np.zeros((1, 5)))


def test_feature_shape_and_duplicates(hn):
    scene = generate_scene(hn, np.full((1, 8), 0.1))
    pts = np.random.default_rng(3).normal(size=(5, 3))
    pts[3] = pts[1]
    v = scene_features(scene, pts).data
    assert v.shape == (5, 6)
    assert np.array_equal(v[3], v[1])


@settings(max_examples=25, deadline=None)
@given(st.permutations(range(7)))
def test_batch_permutation_equivariance(perm):
    hn = Hypernetwork(DIMS, np.random.default_rng(0))
    scene = generate_scene(hn, np.full((1, 8), 0.05))
    pts = np.random.default_rng(4).normal(size=(7, 3))
    perm = np.array(perm)
    a = scene_features(scene, pts).data
    b = scene_features(scene, pts[perm]).data
    assert np.allclose(a[perm], b, atol=1e-13)


def test_latent_gradient_matches_finite_difference(hn):
    z = DiffValue(np.random.default_rng(5).normal(scale=0.3, size=(1, 8)), requires_grad=True)
    pts = np.random.default_rng(6).uniform(-1, 1, size=(9, 3))

    def loss():
        return ad.sum_squares(scene_features(generate_scene(hn, z), pts))

    assert grad_check(loss, [z], eps=1e-6) <= 1e-4


def test_point_gradient_matches_finite_difference(hn):
    scene = generate_scene(hn, np.full((1, 8), 0.2))
    x = DiffValue(np.random.default_rng(7).uniform(-1, 1, size=(4, 3)), requires_grad=True)
    assert grad_check(lambda: ad.sum_all(scene_features(scene, x)), [x], eps=1e-6) <= 1e-4


def test_hypernetwork_parameters_grad_check(hn):
    z = DiffValue(np.random.default_rng(8).normal(scale=0.3, size=(1, 8)))
    pts = np.random.default_rng(9).uniform(-1, 1, size=(6, 3))
    params = [hn.heads[1]["w1"], hn.heads[2]["b2"], hn.heads[3]["w2"]]

    def loss():
        return ad.sum_squares(scene_features(generate_scene(hn, z), pts))

    assert grad_check(loss, params, eps=1e-6, max_coords=40) <= 1e-4


def test_determinism(hn):
    z = np.random.default_rng(10).normal(size=(1, 8))
    pts = np.random.default_rng(11).normal(size=(12, 3))
    a = scene_features(generate_scene(hn, z), pts).data
    b = scene_features(generate_scene(hn, z.copy()), pts.copy()).data
    assert np.array_equal(a, b)


def test_generated_weights_are_initialization_scale():
    hn = Hypernetwork(SceneDims(32, 32, 32), np.random.default_rng(0))
    scene = generate_scene(hn, init_latent(32, np.random.default_rng(1)))
    w_in = scene.layers[1][0].data
    assert 0.5 * np.sqrt(2 / 32) < w_in.std() < 2.0 * np.sqrt(2 / 32)


def test_latent_init_statistics():
    z = init_latent(4000, np.random.default_rng(0)).data
    assert z.shape == (1, 4000)
    assert abs(z.std() - 0.01) < 0.001


def test_interpolation_endpoints_exact():
    rng = np.random.default_rng(12)
    a, b = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    assert np.array_equal(interpolate_codes(a, b, 0.0), a)
    assert np.array_equal(interpolate_codes(a, b, 1.0), b)
    assert np.array_equal(interpolate_codes(a, -a, 0.5), np.zeros_like(a))


def test_interpolation_rejects_mismatched_dims():
    with pytest.raises(ValueError):
        interpolate_codes(np.zeros(3), np.zeros(4), 0.5)


def test_gradients_reach_every_hypernetwork_tensor(hn):
    z = DiffValue(np.full((1, 8), 0.3))
    pts = np.random.default_rng(13).normal(size=(10, 3))
    with Tape() as tape:
        loss = ad.sum_squares(scene_features(generate_scene(hn, z), pts))
    tape.backward(loss)
    for name, p in hn.named_parameters().items():
        assert np.any(p.grad != 0), name
