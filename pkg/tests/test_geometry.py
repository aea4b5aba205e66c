import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tricam.geometry import (
    CameraModel,
    DegenerateError,
    EyePose,
    NoIntersectionError,
    NoObservationError,
    Ray,
    Rig,
    ScreenModel,
    UnderdeterminedError,
    ViewCoord,
    back_ray,
    cm_to_px,
    default_rig,
    facing_user,
    gaze_from_target,
    gaze_intersect,
    predict_view,
    project_eye,
    project_points,
    px_distance_cm,
    px_to_cm,
    rotation_x,
    rotation_y,
    rotation_z,
    triangulate,
)

SCREEN = ScreenModel()
RIG = default_rig()

eye_points = st.tuples(
    st.floats(10.0, 50.0), st.floats(8.0, 26.0), st.floats(40.0, 65.0)
).map(np.array)


def axis_camera(focal=1000.0):
    # world-aligned camera looking +z
    return CameraModel(np.zeros(3), np.eye(3), focal)


def dist_to_ray(p, ray):
    w = p - ray.origin
    return np.linalg.norm(w - (w @ ray.dir) * ray.dir)


# -- projection ---------------------------------------------------------------

def test_on_axis_projects_to_principal_point():
    vc = project_eye(axis_camera(), [0.0, 0.0, 50.0])
    assert vc == ViewCoord(True, 960.0, 540.0)


def test_behind_camera_is_sentinel():
    vc = project_eye(axis_camera(), [0.0, 0.0, -5.0])
    assert vc == ViewCoord(False, -1.0, -1.0)


def test_hand_pinhole_value():
    vc = project_eye(axis_camera(1000.0), [5.0, 0.0, 50.0])
    assert vc.detected
    assert vc.u == pytest.approx(1060.0, abs=1e-12)
    assert vc.v == pytest.approx(540.0, abs=1e-12)


def test_out_of_frame_is_sentinel():
    # 45 cm off-axis at 50 cm with f=1000 lands at u=1860+... outside 1920
    vc = project_eye(axis_camera(1000.0), [50.0, 0.0, 50.0])
    assert not vc.detected and vc.u == -1 and vc.v == -1


@given(st.lists(eye_points, min_size=1, max_size=8))
def test_vectorised_projection_matches_scalar(pts):
    cam = RIG.cameras[1]
    uv, ok = project_points(cam, np.array(pts))
    for p, row, flag in zip(pts, uv, ok):
        vc = project_eye(cam, p)
        assert vc.detected == bool(flag)
        np.testing.assert_allclose(row, [vc.u, vc.v], atol=1e-9)


def test_default_rig_layout():
    xs = [c.position[0] for c in RIG.cameras]
    assert xs == pytest.approx([SCREEN.width_cm / 4, SCREEN.width_cm / 2, 3 * SCREEN.width_cm / 4])
    for cam in RIG.cameras:
        # optical axis points toward the user and tilts downward
        axis = cam.orientation[:, 2]
        assert axis[2] > 0 and axis[1] > 0


def test_camera_rejects_non_rotation():
    with pytest.raises(ValueError):
        CameraModel(np.zeros(3), np.diag([1.0, 1.0, -1.0]), 1000.0)


# -- back_ray / triangulate ---------------------------------------------------

def test_principal_point_ray_is_optical_axis():
    cam = RIG.cameras[0]
    ray = back_ray(cam, ViewCoord(True, 960.0, 540.0))
    np.testing.assert_allclose(ray.dir, cam.orientation[:, 2], atol=1e-15)
    np.testing.assert_allclose(ray.origin, cam.position)


def test_back_ray_needs_observation():
    with pytest.raises(NoObservationError, match="no-observation"):
        back_ray(RIG.cameras[0], ViewCoord.missing())


@given(eye_points)
def test_project_back_ray_round_trip(p):
    for cam in RIG.cameras:
        vc = project_eye(cam, p)
        if vc.detected:
            assert dist_to_ray(p, back_ray(cam, vc)) < 1e-9


def test_symmetric_two_ray_intersection():
    target = np.array([0.0, 0.0, 50.0])
    rays = [Ray(np.array([s, 0.0, 0.0]), (target - [s, 0, 0]) / np.linalg.norm(target - [s, 0, 0]))
            for s in (-10.0, 10.0)]
    point, res = triangulate(rays)
    np.testing.assert_allclose(point, target, atol=1e-12)
    assert res < 1e-12


@given(st.integers(0, 1))
def test_single_ray_underdetermined(n):
    rays = [Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))][:n]
    with pytest.raises(UnderdeterminedError, match="underdetermined"):
        triangulate(rays)


def test_parallel_rays_degenerate():
    d = np.array([0.0, 0.0, 1.0])
    with pytest.raises(DegenerateError, match="degenerate"):
        triangulate([Ray(np.zeros(3), d), Ray(np.array([5.0, 0, 0]), d)])


@given(eye_points)
def test_triangulation_recovers_eye(p):
    rays = [back_ray(c, vc) for c in RIG.cameras if (vc := project_eye(c, p)).detected]
    if len(rays) >= 2:
        point, res = triangulate(rays)
        assert np.linalg.norm(point - p) < 1e-9
        assert res < 1e-9


def test_triangulation_residual_is_rms_distance():
    rng = np.random.default_rng(0)
    rays = [Ray(rng.normal(size=3), (d := rng.normal(size=3)) / np.linalg.norm(d)) for _ in range(4)]
    point, res = triangulate(rays)
    expect = math.sqrt(np.mean([dist_to_ray(point, r) ** 2 for r in rays]))
    assert res == pytest.approx(expect, rel=1e-12)
    # the least-squares point is a stationary point of the summed squared distance
    h = 1e-5
    f = lambda x: sum(dist_to_ray(x, r) ** 2 for r in rays)
    grad = [(f(point + h * e) - f(point - h * e)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(grad, 0.0, atol=1e-7)


# -- predict_view ----------------------------------------------------------------

@given(eye_points)
def test_predict_view_matches_direct_projection(p):
    vcs = [project_eye(c, p) for c in RIG.cameras]
    for c, (a, b) in enumerate(((1, 2), (0, 2), (0, 1))):
        if not (vcs[a].detected and vcs[b].detected):
            continue
        pred = predict_view(vcs[a], RIG.cameras[a], vcs[b], RIG.cameras[b], RIG.cameras[c])
        assert pred.detected == vcs[c].detected
        if pred.detected:
            assert abs(pred.u - vcs[c].u) < 1e-9 and abs(pred.v - vcs[c].v) < 1e-9


def test_predict_view_missing_input():
    vc = project_eye(RIG.cameras[0], [30.0, 15.0, 50.0])
    with pytest.raises(NoObservationError):
        predict_view(ViewCoord.missing(), RIG.cameras[1], vc, RIG.cameras[0], RIG.cameras[2])


def test_predict_view_out_of_view_target():
    p = np.array([30.0, 15.0, 50.0])
    a, b = RIG.cameras[0], RIG.cameras[1]
    away = CameraModel(np.array([30.0, 15.0, 100.0]), np.eye(3), 1200.0)  # looks away from p
    pred = predict_view(project_eye(a, p), a, project_eye(b, p), b, away)
    assert pred == ViewCoord.missing()


# -- gaze / screen ------------------------------------------------------------

def test_perpendicular_gaze_hits_center():
    px = gaze_intersect(EyePose(np.array([29.8945, 16.8155, 50.0]), np.array([0.0, 0.0, -1.0])), SCREEN)
    assert px == pytest.approx((960.0, 540.0), abs=1e-9)


def test_parallel_gaze_has_no_intersection():
    with pytest.raises(NoIntersectionError, match="no-intersection"):
        gaze_intersect(EyePose(np.array([10.0, 10.0, 50.0]), np.array([1.0, 0.0, 0.0])), SCREEN)


def test_gaze_away_from_screen_has_no_intersection():
    with pytest.raises(NoIntersectionError):
        gaze_intersect(EyePose(np.array([10.0, 10.0, 50.0]), np.array([0.0, 0.0, 1.0])), SCREEN)


def test_gaze_ten_cm_right_of_center():
    c = SCREEN.center_cm
    eye = np.array([c[0], c[1], 50.0])
    target = np.array([c[0] + 10.0, c[1], 0.0])
    px, py = gaze_intersect(EyePose(eye, (target - eye) / np.linalg.norm(target - eye)), SCREEN)
    assert px == pytest.approx(960 + 10 * 1920 / 59.789, abs=1e-9)
    assert px == pytest.approx(1281.1, abs=0.05)
    assert py == pytest.approx(540.0, abs=1e-9)


def test_gaze_from_target_center():
    c = SCREEN.center_cm
    d = gaze_from_target([c[0], c[1], 50.0], (960.0, 540.0), SCREEN)
    np.testing.assert_allclose(d, [0.0, 0.0, -1.0], atol=1e-15)


def test_gaze_from_target_on_screen_plane():
    with pytest.raises(DegenerateError, match="degenerate"):
        gaze_from_target([10.0, 10.0, 0.0], (100.0, 100.0), SCREEN)


@given(eye_points, st.floats(0, 1919.999), st.floats(0, 1079.999))
def test_gaze_round_trip(center, px, py):
    d = gaze_from_target(center, (px, py), SCREEN)
    assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)
    qx, qy = gaze_intersect(EyePose(center, d), SCREEN)
    assert abs(qx - px) < 1e-9 and abs(qy - py) < 1e-9


# -- unit conversion ----------------------------------------------------------

def test_full_width_and_height_exact():
    assert px_to_cm(SCREEN, 1920, "x") == 59.789
    assert px_to_cm(SCREEN, 1080, "y") == 33.631
    assert cm_to_px(SCREEN, 59.789, "x") == 1920
    assert cm_to_px(SCREEN, 33.631, "y") == 1080
    assert px_to_cm(SCREEN, 0, "x") == 0


def test_ten_cm_horizontal():
    assert px_to_cm(SCREEN, 321.146, "x") == pytest.approx(10.0, abs=1e-3)
    assert px_distance_cm(SCREEN, [321.146, 0.0], [0.0, 0.0]) == pytest.approx(10.0, abs=1e-3)


def test_bad_axis():
    with pytest.raises(ValueError):
        px_to_cm(SCREEN, 1.0, "z")


@given(st.floats(-3000, 3000), st.sampled_from("xy"))
def test_conversion_inverse(d, axis):
    assert cm_to_px(SCREEN, px_to_cm(SCREEN, d, axis), axis) == pytest.approx(d, abs=1e-9)


# -- rotations / rig io -------------------------------------------------------

angles = st.floats(-math.pi, math.pi)


@given(st.lists(st.tuples(st.sampled_from([rotation_x, rotation_y, rotation_z]), angles),
                min_size=1, max_size=50))
def test_rotation_composition_stays_orthonormal(steps):
    r = np.eye(3)
    for fn, a in steps:
        r = r @ fn(a)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_facing_user_looks_toward_user():
    np.testing.assert_allclose(facing_user()[:, 2], [0, 0, 1], atol=1e-15)


def test_rig_json_round_trip(tmp_path):
    RIG.save(tmp_path / "rig.json")
    back = Rig.load(tmp_path / "rig.json")
    assert back.screen == RIG.screen
    for a, b in zip(back.cameras, RIG.cameras):
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.orientation, b.orientation)
        assert a.focal_px == b.focal_px


@settings(max_examples=25)
@given(st.floats(1, 5000), st.floats(1, 5000))
def test_screen_px_per_cm(w, h):
    s = ScreenModel(1920, 1080, w, h)
    assert s.px_per_cm[0] == pytest.approx(1920 / w)
    assert s.px_per_cm[1] == pytest.approx(1080 / h)
