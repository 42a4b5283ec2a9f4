"""Hand-rolled skeletal fixtures for unit tests.

Deliberately independent of the package's simulator: these windows are
built from first principles (a joint template, a ground trajectory, an
inverse homography) so they can serve as oracles for it and for the
descriptor/scoring code.
"""
import math

import numpy as np

from svs.model import BBox, CameraCalibration, Keypoints
from svs.tracker import Observation

# (y fraction from top of person, signed x fraction of height)
JOINT_TEMPLATE = (
    (0.06, 0.00),    # nose
    (0.05, 0.02), (0.05, -0.02),      # eyes
    (0.055, 0.04), (0.055, -0.04),    # ears
    (0.18, 0.115), (0.18, -0.115),    # shoulders
    (0.34, 0.13), (0.34, -0.13),      # elbows
    (0.50, 0.14), (0.50, -0.14),      # wrists
    (0.52, 0.065), (0.52, -0.065),    # hips
    (0.74, 0.07), (0.74, -0.07),      # knees
    (0.96, 0.075), (0.96, -0.075),    # ankles
)

BBOX_ASPECT = 0.38


def similarity_calib(camera_id="c01", scale=0.01, theta=0.0, tx=0.0, ty=0.0,
                     site_id="s1", width=1920, height=1080):
    """Image->ground similarity: rotation theta, isotropic scale (m/px)."""
    c, s = math.cos(theta), math.sin(theta)
    h = (scale * c, -scale * s, tx,
         scale * s, scale * c, ty,
         0.0, 0.0, 1.0)
    return CameraCalibration(camera_id=camera_id, site_id=site_id,
                             image_width=width, image_height=height,
                             homography=h)


def walker_window(calib, n=20, t0_ms=0, fps=15.0, height_m=1.70,
                  speed_m=1.3, heading_deg=0.0, start_xy=(5.0, 5.0),
                  gait_hz=0.0, gait_amp=0.08, conf=0.9,
                  hidden_joints=(), start_step=0):
    """Observation window of one synthetic person seen by one camera.

    The trajectory lives on the ground plane; each frame renders the joint
    template upright in image space at the inverse-projected foot point.
    gait_hz > 0 swings the ankles; gait_amp is the swing amplitude as a
    fraction of body height.
    """
    hinv = calib.inverse_matrix()
    heading = math.radians(heading_deg)
    out = []
    for k in range(n):
        step = start_step + k
        # Position is derived from the rounded timestamp so that distance
        # over dt reproduces speed_m exactly; otherwise ms quantization
        # injects ~1% speed jitter.
        t_ms = round(step / fps * 1000)
        t_s = t_ms / 1000.0
        gx = start_xy[0] + speed_m * t_s * math.cos(heading)
        gy = start_xy[1] + speed_m * t_s * math.sin(heading)
        p = hinv @ np.array([gx, gy, 1.0])
        fx, fy = p[0] / p[2], p[1] / p[2]

        mpp = calib.meters_per_pixel(fx, fy)
        h_px = height_m / mpp

        swing = gait_amp * h_px * math.sin(2 * math.pi * gait_hz * t_s)
        pts = []
        for j, (yf, xf) in enumerate(JOINT_TEMPLATE):
            x = fx + xf * h_px
            y = fy - h_px + yf * h_px
            if j == 15:
                x += swing
            elif j == 16:
                x -= swing
            c = 0.0 if j in hidden_joints else conf
            pts.append([x, y, c])

        w_px = BBOX_ASPECT * h_px
        bbox = BBox(fx - w_px / 2.0, fy - h_px, w_px, h_px)
        out.append(Observation(bbox=bbox, keypoints=Keypoints(pts),
                               timestamp=t0_ms + t_ms))
    return out
