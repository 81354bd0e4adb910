import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srnseg import autodiff as ad
from srnseg.autodiff import DiffValue, Tape, grad_check
from srnseg.camera import CameraView, Intrinsics, look_at, orbit_poses
from srnseg.renderer import (
    Marcher,
    NonFiniteFeatureError,
    RGBHead,
    SegHead,
    march,
    point_cloud,
    render,
)
from srnseg.scene import Hypernetwork, SceneDims, generate_scene

N = 8


def _parts(seed=0, steps=10):
    rng = np.random.default_rng(seed)
    hn = Hypernetwork(SceneDims(latent=8, hidden=8, features=N), rng)
    marcher = Marcher(N, 8, rng, steps=steps)
    rgb = RGBHead(N, 8, rng)
    seg = SegHead(N, 4, rng, std=0.5)
    scene = generate_scene(hn, rng.normal(scale=0.5, size=(1, 8)))
    return hn, scene, marcher, rgb, seg


def _rays(n, seed=0):
    rng = np.random.default_rng(seed)
    origins = rng.normal(size=(n, 3))
    origins = 2.5 * origins / np.linalg.norm(origins, axis=1, keepdims=True)
    dirs = -origins / 2.5 + rng.normal(scale=0.1, size=(n, 3))
    return origins, dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _view(res=12, pose=None):
    return CameraView(Intrinsics.for_resolution(res), pose or look_at([0.3, 0.8, 2.35]), res, res)


def test_frozen_marcher_stays_at_initial_depth():
    _, scene, marcher, _, _ = _parts()
    marcher.params["w_step"].data[...] = 0.0
    marcher.params["b_step"].data[...] = -60.0  # softplus(-60) ~ 1e-26
    o, d = _rays(20)
    res = march(scene, o, d, marcher)
    assert np.allclose(res.depth.data[:, 0], marcher.near, atol=1e-12)
    assert np.allclose(res.points.data, o + marcher.near * d, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_depth_is_monotone_along_the_march(seed):
    _, scene, marcher, _, _ = _parts(seed)
    res = march(scene, *_rays(16, seed), marcher)
    assert np.all(np.diff(res.depth_history, axis=0) >= 0)
    assert res.depth_history.shape == (marcher.steps + 1, 16)
    assert np.all(res.depth.data[:, 0] <= marcher.far)


def test_lstm_step_matches_reference_equations():
    rng = np.random.default_rng(3)
    m = Marcher(5, 4, rng)
    v = rng.normal(size=(3, 5))
    h = rng.normal(size=(3, 4))
    c = rng.normal(size=(3, 4))
    h_new, c_new = m.lstm_step(DiffValue(v), DiffValue(h), DiffValue(c))

    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    wx, wh, b = m.params["w_x"].data, m.params["w_h"].data, m.params["b"].data
    ref_h, ref_c = np.zeros((3, 4)), np.zeros((3, 4))
    for r in range(3):
        z = v[r] @ wx + h[r] @ wh + b
        i, f, g, o = sig(z[0:4]), sig(z[4:8]), np.tanh(z[8:12]), sig(z[12:16])
        ref_c[r] = f * c[r] + i * g
        ref_h[r] = o * np.tanh(ref_c[r])
    assert np.max(np.abs(h_new.data - ref_h)) < 1e-12
    assert np.max(np.abs(c_new.data - ref_c)) < 1e-12


def test_zero_state_equals_explicit_zeros():
    rng = np.random.default_rng(4)
    m = Marcher(5, 4, rng)
    v = DiffValue(rng.normal(size=(2, 5)))
    a = m.lstm_step(v, None, None)
    b = m.lstm_step(v, DiffValue(np.zeros((2, 4))), DiffValue(np.zeros((2, 4))))
    assert np.allclose(a[0].data, b[0].data, atol=1e-15) and np.allclose(a[1].data, b[1].data, atol=1e-15)


def test_initial_step_length():
    m = Marcher(4, 4, np.random.default_rng(0), initial_step=0.12)
    h = DiffValue(np.zeros((1, 4)))
    assert m.step_length(h).item() == pytest.approx(0.12, abs=1e-12)


def test_invalid_marcher_config():
    with pytest.raises(ValueError):
        Marcher(4, 4, np.random.default_rng(0), steps=0)
    with pytest.raises(ValueError):
        Marcher(4, 4, np.random.default_rng(0), camera_radius=1.0)


def test_composite_grad_check():
    hn, _, marcher, rgb, seg = _parts(5, steps=10)
    z = DiffValue(np.random.default_rng(6).normal(scale=0.3, size=(1, 8)), requires_grad=True)
    o, d = _rays(6, 7)
    target_rgb = np.random.default_rng(8).random((6, 3))
    target_cls = np.array([0, 1, 2, 3, 1, 0])

    def loss():
        res = march(generate_scene(hn, z), o, d, marcher)
        l_rgb = ad.mse(rgb(res.features), target_rgb)
        l_ce = ad.softmax_cross_entropy(seg(res.features), target_cls)
        return ad.add(ad.add(l_rgb, ad.scale(l_ce, 0.04)), ad.scale(ad.sum_squares(z), 1e-3))

    params = [z, hn.heads[0]["w2"], marcher.params["w_x"], marcher.params["w_step"], marcher.params["b_step"],
              rgb.params["w0"], seg.params["w"]]
    assert grad_check(loss, params, eps=1e-6, max_coords=30) <= 1e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_feature_reports_ray():
    hn, scene, marcher, _, _ = _parts()
    o, d = _rays(5)
    w, b = scene.layers[-1]
    w.data[0, 0] = np.inf  # only rays whose last hidden unit 0 is active go non-finite
    with pytest.raises(NonFiniteFeatureError) as err:
        march(scene, o, d, marcher)
    assert 0 <= err.value.ray_index < 5


def test_render_fields_are_consistent():
    _, scene, marcher, rgb, seg = _parts()
    view = _view()
    out = render(scene, view, marcher, rgb, seg)
    from srnseg.camera import rays_for_view

    o, d = rays_for_view(view)
    assert np.max(np.abs(out.points - (o + out.depth[..., None] * d))) < 1e-9
    assert np.all(out.depth >= marcher.near - 1e-12)
    assert np.all((out.rgb > 0) & (out.rgb < 1))
    assert out.logits.shape == (12, 12, 4)


def test_render_is_deterministic():
    _, scene, marcher, rgb, seg = _parts()
    a = render(scene, _view(), marcher, rgb, seg)
    b = render(scene, _view(), marcher, rgb, seg)
    for k in ("rgb", "logits", "depth", "points", "features"):
        assert np.array_equal(getattr(a, k), getattr(b, k))


def test_zero_seg_head_gives_uniform_cross_entropy():
    _, scene, marcher, rgb, _ = _parts()
    seg = SegHead(N, 5)
    out = render(scene, _view(), marcher, rgb, seg)
    labels = np.random.default_rng(0).integers(0, 5, size=out.logits.shape[:2]).reshape(-1)
    ce = ad.softmax_cross_entropy(DiffValue(out.logits.reshape(-1, 5)), labels).item()
    assert ce == pytest.approx(np.log(5), abs=1e-12)


def test_seg_head_is_linear():
    seg = SegHead(N, 4, np.random.default_rng(1), std=1.0)
    seg.params["b"].data[...] = np.random.default_rng(2).normal(size=4)
    rng = np.random.default_rng(3)
    v1, v2 = rng.normal(size=(5, N)), rng.normal(size=(5, N))
    lhs = seg(DiffValue(v1 + v2)).data
    rhs = seg(DiffValue(v1)).data + seg(DiffValue(v2)).data - seg.params["b"].data
    assert np.allclose(lhs, rhs, atol=1e-12)
    assert sum(p.data.size for p in seg.params.values()) == N * 4 + 4


def test_chunked_render_matches_single_batch():
    from srnseg.renderer import render_rays

    _, scene, marcher, rgb, seg = _parts()
    o, d = _rays(50)
    a = render_rays(scene, o, d, marcher, rgb, seg, chunk=7)
    b = render_rays(scene, o, d, marcher, rgb, seg, chunk=4096)
    for k in a:
        assert np.allclose(a[k], b[k], atol=1e-12)


def test_point_cloud_labels_match_rendered_pixels():
    _, scene, marcher, rgb, seg = _parts()
    views = [_view(10, p) for p in orbit_poses(3)]
    pc = point_cloud(scene, views, marcher, rgb, seg)
    renders = [render(scene, v, marcher, rgb, seg) for v in views]
    fg_total = sum(int((r.labels != 0).sum()) for r in renders)
    assert len(pc) == fg_total
    for (vi, r, c), lab, pt in zip(pc.source, pc.labels, pc.points):
        assert renders[vi].labels[r, c] == lab
        assert np.array_equal(renders[vi].points[r, c], pt)


def test_point_cloud_of_no_views_is_empty():
    _, scene, marcher, rgb, seg = _parts()
    assert len(point_cloud(scene, [], marcher, rgb, seg)) == 0


def test_gradient_flows_through_all_march_steps():
    hn, _, marcher, rgb, _ = _parts(9)
    z = DiffValue(np.full((1, 8), 0.2), requires_grad=True)
    o, d = _rays(8)
    with Tape() as tape:
        res = march(generate_scene(hn, z), o, d, marcher)
        loss = ad.sum_all(rgb(res.features))
    tape.backward(loss)
    assert np.any(marcher.params["w_h"].grad != 0)
    assert np.any(z.grad != 0)
