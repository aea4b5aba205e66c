"""
Three cameras, one eye
======================

Walk through the rig geometry: project an eye into the three top-edge
cameras, recover its 3D position from two views, predict the third view,
and see what happens when the user sits far off to the side.
"""
import math

import numpy as np

from tricam.geometry import (
    EyePose,
    back_ray,
    default_rig,
    gaze_from_target,
    gaze_intersect,
    predict_view,
    project_eye,
    triangulate,
)

rig = default_rig()
screen = rig.screen
print(f"screen {screen.width_px}x{screen.height_px} px = {screen.width_cm} x {screen.height_cm} cm")
for k, cam in enumerate(rig.cameras, 1):
    print(f"camera {k} at x = {cam.position[0]:.2f} cm, focal {cam.focal_px:.0f} px")

# the right eye of a user centred 50 cm from the screen
eye = np.array([screen.width_cm / 2 + 3.15, screen.height_cm / 2, 50.0])
views = [project_eye(cam, eye) for cam in rig.cameras]
for k, vc in enumerate(views, 1):
    print(f"camera {k} sees the eye at (u, v) = ({vc.u:.2f}, {vc.v:.2f})")

# two rays are enough to pin the eye down in 3D
point, residual = triangulate([back_ray(rig.cameras[0], views[0]), back_ray(rig.cameras[2], views[2])])
print("triangulated from cameras 1 and 3:", np.round(point, 6), f"(residual {residual:.1e} cm)")

# and the middle camera's observation follows from the outer two
pred = predict_view(views[0], rig.cameras[0], views[2], rig.cameras[2], rig.cameras[1])
print(f"predicted camera 2 view ({pred.u:.4f}, {pred.v:.4f}) vs actual ({views[1].u:.4f}, {views[1].v:.4f})")

# looking at a target pixel and back again
target = (1400.0, 300.0)
direction = gaze_from_target(eye, target, screen)
print("gaze direction", np.round(direction, 4), "hits", np.round(gaze_intersect(EyePose(eye, direction), screen), 6))

# sit at an angle: lateral offset dx = L * tan(theta) from the screen centre
for theta in (0, 15, 30, 45):
    dx = 50.0 * math.tan(math.radians(theta))
    seat = np.array([screen.width_cm / 2 + dx, screen.height_cm / 2, 50.0])
    seen = ["yes" if project_eye(cam, seat).detected else "no" for cam in rig.cameras]
    print(f"theta {theta:2d} deg, dx {dx:5.1f} cm: visible in cameras 1/2/3 = {'/'.join(seen)}")
