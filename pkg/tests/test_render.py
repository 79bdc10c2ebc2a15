import math
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from drsynth import primitives
from drsynth.geometry import Pose, transform_mesh
from drsynth.material import MaterialSpec, linear_to_srgb
from drsynth.render import (RenderSettings, box_meshes, camera_frame, compile_scene, primary_visibility_ids,
                            render_id_pass, render_pathtraced, render_rasterized, tone_map, visibility_buffer)
from drsynth.sampler import AreaLight, CameraSpec, SceneBox

WHITE_LAMBERT = MaterialSpec.solid((1.0, 1.0, 1.0), specular=0.0)


def camera(position, look_at, w=64, h=64, focal=35.0):
    p, c = np.asarray(position, float), np.asarray(look_at, float)
    return CameraSpec(float(np.linalg.norm(p - c)), 0.0, 0.0, tuple(c), tuple(p), tuple(c), focal, 36.0, w, h)


def furnace_scene(L=0.7):
    meshes = box_meshes(SceneBox((0.0, 0.0), 4.0, 2.0))
    return compile_scene(meshes, [WHITE_LAMBERT], [0] * 5, [0] * 5, (), environment=(L, L, L))


FURNACE_CAM = camera((0.3, 0.2, 1.5), (0.5, 0.4, 0.0), 32, 32, focal=20.0)


def cube_scene(extra=(), lights=None):
    """A 0.5 m cube (id 1) on a ground quad, lit from above."""
    cube = transform_mesh(primitives.cube(0.5), Pose((0.0, 0.0, 0.25)))
    ground = primitives.quad([(-3, -3, 0), (3, -3, 0), (3, 3, 0), (-3, 3, 0)])
    meshes = [cube, ground] + [m for m, _ in extra]
    ids = [1, 0] + [i for _, i in extra]
    mats = [MaterialSpec.solid((0.8, 0.2, 0.2)), MaterialSpec.solid((0.5, 0.5, 0.5))]
    if lights is None:
        lights = [AreaLight((0.5, 0.3, 3.0), (0.3, 0.3), (0.0, 0.0, -1.0), 200.0, (1.0, 1.0, 1.0))]
    return compile_scene(meshes, mats, [0, 1] + [1] * len(extra), ids, lights)


CUBE_CAM = camera((1.6, -1.2, 1.4), (0.0, 0.0, 0.25))


# --------------------------------------------------------------------------- settings and cameras


def test_settings_validation():
    with pytest.raises(ValueError):
        RenderSettings(spp=0)
    with pytest.raises(ValueError):
        RenderSettings(max_depth=0)
    with pytest.raises(ValueError):
        RenderSettings(backend="eevee")


def test_camera_frame_center_ray_is_forward():
    cam = camera_frame(CUBE_CAM)
    fwd = np.asarray(CUBE_CAM.look_at) - np.asarray(CUBE_CAM.position)
    assert np.allclose(cam[3:6], fwd / np.linalg.norm(fwd))
    assert abs(cam[12] - math.tan(CUBE_CAM.fov / 2)) < 1e-15


# --------------------------------------------------------------------------- path tracer


def test_furnace_converges():
    # deep paths, no roulette: every path escapes carrying exactly L
    L = 0.7
    img, bad = render_pathtraced(furnace_scene(L), FURNACE_CAM, RenderSettings(spp=256, max_depth=64, rr_depth=64))
    assert bad == 0
    assert np.abs(img / L - 1).max() < 0.02


def test_furnace_unbiased_with_roulette():
    L = 0.7
    img, _ = render_pathtraced(furnace_scene(L), FURNACE_CAM, RenderSettings(spp=256, max_depth=64, rr_depth=3))
    assert abs(img.mean() / L - 1) < 0.01


def test_zero_power_lights_give_black():
    lights = [AreaLight((0.0, 0.0, 3.0), (0.3, 0.3), (0.0, 0.0, -1.0), 0.0, (1.0, 1.0, 1.0))]
    img, bad = render_pathtraced(cube_scene(lights=lights), CUBE_CAM, RenderSettings(spp=8))
    assert bad == 0 and np.all(img == 0.0)


def test_pathtraced_buffer_is_valid_and_lit():
    img, bad = render_pathtraced(cube_scene(), CUBE_CAM, RenderSettings(spp=8))
    assert img.shape == (64, 64, 3)
    assert np.all(np.isfinite(img)) and np.all(img >= 0)
    assert img.mean() > 0


def test_pathtraced_same_seed_identical_and_seed_matters():
    s = RenderSettings(spp=4, seed=3, image_index=2)
    a, _ = render_pathtraced(cube_scene(), CUBE_CAM, s)
    b, _ = render_pathtraced(cube_scene(), CUBE_CAM, s)
    c, _ = render_pathtraced(cube_scene(), CUBE_CAM, RenderSettings(spp=4, seed=3, image_index=3))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_direct_light_matches_analytic_irradiance():
    # small light straight above a Lambert floor: center radiance ~ albedo/pi * E, E = I cos/d^2
    h, power, albedo = 2.0, 100.0, 0.5
    light = AreaLight((0.0, 0.0, h), (0.01, 0.01), (0.0, 0.0, -1.0), power, (1.0, 1.0, 1.0))
    floor = primitives.quad([(-50, -50, 0), (50, -50, 0), (50, 50, 0), (-50, 50, 0)])
    scene = compile_scene([floor], [MaterialSpec.solid((albedo,) * 3, specular=0.0)], [0], [0], [light])
    cam = camera((0.3, 0.0, 1.0), (0.0, 0.0, 0.0), 9, 9, focal=400.0)
    img, _ = render_pathtraced(scene, cam, RenderSettings(spp=256, max_depth=1))
    expect = albedo / math.pi * (power / math.pi) / h ** 2
    assert abs(img[4, 4].mean() / expect - 1) < 0.02


# --------------------------------------------------------------------------- tone mapping


def test_tone_map_examples():
    assert tone_map(np.zeros((1, 1, 3)))[0, 0, 0] == 0
    assert tone_map(np.ones((1, 1, 3)))[0, 0, 0] == 188
    assert round(float(linear_to_srgb(0.5)) * 255) == 188
    assert tone_map(np.full((1, 1, 3), 1e9))[0, 0, 0] == 255
    assert tone_map(np.full((1, 1, 3), 0.5), exposure=2.0)[0, 0, 0] == 188


def test_tone_map_monotone_and_sanitizing():
    x = np.sort(np.random.default_rng(0).exponential(2.0, 5000))
    y = tone_map(x.reshape(1, -1, 1).repeat(3, axis=2))[0, :, 0]
    assert np.all(np.diff(y.astype(int)) >= 0)
    bad = tone_map(np.array([[[np.nan, -1.0, np.inf]]]))
    assert bad.dtype == np.uint8 and bad.tolist() == [[[0, 0, 0]]]


# --------------------------------------------------------------------------- rasterizer and id pass


def test_raster_flat_triangle_fill():
    # big triangle facing the camera, light effectively at infinity: constant shading
    tri = primitives.quad([(-20, -20, 0), (20, -20, 0), (20, 20, 0), (-20, 20, 0)])
    light = AreaLight((0.0, 0.0, 1e4), (1.0, 1.0), (0.0, 0.0, -1.0), 1e9, (1.0, 1.0, 1.0))
    scene = compile_scene([tri], [MaterialSpec.solid((0.6, 0.6, 0.6), specular=0.0)], [0], [0], [light])
    cam = camera((0.0, 1e-3, 5.0), (0.0, 0.0, 0.0), 32, 32)
    img = render_rasterized(scene, cam, RenderSettings(backend="rasterized", supersample=2))
    assert img.min() > 0
    assert np.abs(img / img.mean() - 1).max() < 1e-3


def test_raster_nearer_triangle_wins():
    far = primitives.quad([(-1, -1, 0), (1, -1, 0), (1, 1, 0), (-1, 1, 0)])
    near = primitives.quad([(0, -1, 0.5), (1.5, -1, 0.5), (1.5, 1, 0.5), (0, 1, 0.5)])
    light = AreaLight((0.0, 0.0, 5.0), (0.1, 0.1), (0.0, 0.0, -1.0), 500.0, (1.0, 1.0, 1.0))
    mats = [MaterialSpec.solid((1.0, 0.0, 0.0), specular=0.0), MaterialSpec.solid((0.0, 0.0, 1.0), specular=0.0)]
    for order in ((far, near), (near, far)):
        ids = (1, 2) if order[0] is far else (2, 1)
        matmap = [0, 1] if order[0] is far else [1, 0]
        scene = compile_scene(list(order), mats, matmap, list(ids), [light])
        cam = camera((0.0, -0.01, 4.0), (0.0, 0.0, 0.0), 48, 48)
        idbuf = render_id_pass(scene, cam)
        rgb = render_rasterized(scene, cam, RenderSettings(backend="rasterized", supersample=1))
        assert (idbuf == 2).any() and (idbuf == 1).any()
        # the near quad covers the right half of the far one: no far-quad pixel right of the split
        cols_far = np.where((idbuf == 1).any(axis=0))[0]
        cols_near = np.where((idbuf == 2).any(axis=0))[0]
        assert cols_far.max() < cols_near.min()
        assert np.all(rgb[idbuf == 2][:, 0] == 0) and np.all(rgb[idbuf == 1][:, 2] == 0)


def test_empty_scene_backgrounds():
    env_only = compile_scene([], [], [], [], (), environment=(0.2, 0.3, 0.4))
    img = render_rasterized(env_only, CUBE_CAM, RenderSettings(backend="rasterized"))
    assert np.allclose(img, (0.2, 0.3, 0.4))
    assert np.all(render_id_pass(env_only, CUBE_CAM) == 0)
    pt, _ = render_pathtraced(env_only, CUBE_CAM, RenderSettings(spp=2))
    assert np.allclose(pt, (0.2, 0.3, 0.4))

    box = SceneBox((0.0, 0.0), 6.0, 3.0)
    light = AreaLight((0.0, 0.0, 2.5), (0.3, 0.3), (0.0, 0.0, -1.0), 300.0, (1.0, 1.0, 1.0))
    walls = compile_scene(box_meshes(box), [MaterialSpec.solid((0.5, 0.6, 0.7))], [0] * 5, [0] * 5, [light])
    img = render_rasterized(walls, CUBE_CAM, RenderSettings(backend="rasterized"))
    assert (img.sum(axis=2) > 0).mean() > 0.5
    assert np.all(render_id_pass(walls, CUBE_CAM) == 0)


def _connected_components(mask):
    seen = np.zeros_like(mask, dtype=bool)
    comps = 0
    for y, x in zip(*np.nonzero(mask)):
        if seen[y, x]:
            continue
        comps += 1
        stack = [(y, x)]
        seen[y, x] = True
        while stack:
            cy, cx = stack.pop()
            for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                if 0 <= ny < mask.shape[0] and 0 <= nx < mask.shape[1] and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((ny, nx))
    return comps


def test_id_pass_single_cube_region():
    ids = render_id_pass(cube_scene(), CUBE_CAM)
    assert set(np.unique(ids)) == {0, 1}
    assert _connected_components(ids == 1) == 1
    ys, xs = np.nonzero(ids == 1)
    assert abs(xs.mean() - 32) < 6 and abs(ys.mean() - 32) < 6


def test_hidden_target_has_no_pixels():
    wall = primitives.quad([(0.9, -2, 0), (0.9, 2, 0), (0.9, 2, 2.5), (0.9, -2, 2.5)])
    scene = cube_scene(extra=[(wall, 0)])
    cam = camera((3.0, 0.0, 1.0), (0.0, 0.0, 0.25))
    assert not (render_id_pass(scene, cam) == 1).any()
    assert not (primary_visibility_ids(scene, cam) == 1).any()


def test_silhouettes_agree_between_passes():
    scene = cube_scene()
    ids = render_id_pass(scene, CUBE_CAM)
    tri, _ = visibility_buffer(scene, CUBE_CAM)
    raster_sil = np.where(tri >= 0, scene.tri_instance[np.maximum(tri, 0)], 0)
    assert np.array_equal(ids, raster_sil)
    pt = primary_visibility_ids(scene, CUBE_CAM)
    inter = ((ids == 1) & (pt == 1)).sum()
    union = ((ids == 1) | (pt == 1)).sum()
    assert inter / union >= 0.99


def test_near_plane_clipping_keeps_visible_part():
    # a ground quad extending behind the camera still covers the lower image half
    ground = primitives.quad([(-50, -50, 0), (50, -50, 0), (50, 50, 0), (-50, 50, 0)])
    scene = compile_scene([ground], [MaterialSpec.solid((0.5, 0.5, 0.5))], [0], [7])
    cam = camera((0.0, 0.0, 1.0), (0.0, 5.0, 0.8), 32, 32)
    ids = render_id_pass(scene, cam)
    assert np.all(ids[20:] == 7) and np.all(ids[:10] == 0)


# --------------------------------------------------------------------------- thread determinism

_THREAD_SCRIPT = textwrap.dedent("""
    import hashlib, sys
    sys.path.insert(0, {tests!r})
    import numba
    from test_render import cube_scene, CUBE_CAM
    from drsynth.render import RenderSettings, render_pathtraced, render_rasterized, render_id_pass
    assert numba.config.NUMBA_NUM_THREADS == {threads}
    numba.set_num_threads({threads})
    s = cube_scene()
    pt, _ = render_pathtraced(s, CUBE_CAM, RenderSettings(spp=4, seed=5, image_index=9))
    rs = render_rasterized(s, CUBE_CAM, RenderSettings(backend="rasterized"))
    ids = render_id_pass(s, CUBE_CAM)
    print(hashlib.sha256(pt.tobytes() + rs.tobytes() + ids.tobytes()).hexdigest())
""")


def _render_hash(threads: int) -> str:
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    script = _THREAD_SCRIPT.format(tests=os.path.dirname(__file__), threads=threads)
    out = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip().splitlines()[-1]


def test_bit_identical_across_thread_counts():
    assert _render_hash(1) == _render_hash(8)
