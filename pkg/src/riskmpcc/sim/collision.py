"""Oriented-rectangle overlap by the separating axis test."""
from __future__ import annotations

import math

import numpy as np


def rectangle_corners(x: float, y: float, phi: float, half_length: float, half_width: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    local = np.array([[half_length, half_width], [-half_length, half_width],
                      [-half_length, -half_width], [half_length, -half_width]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + (x, y)


def collision_check(pose_a, footprint_a, pose_b, footprint_b) -> bool:
    """True when two oriented rectangles overlap (touching counts as overlap).

    ``pose`` is (x, y, phi) of the rectangle center, ``footprint`` is
    (half_length, half_width).
    """
    xa, ya, pa = pose_a
    xb, yb, pb = pose_b
    la, wa = footprint_a
    lb, wb = footprint_b
    dx, dy = xb - xa, yb - ya
    if math.hypot(dx, dy) > math.hypot(la, wa) + math.hypot(lb, wb):
        return False
    ca, sa = math.cos(pa), math.sin(pa)
    cb, sb = math.cos(pb), math.sin(pb)
    # for rectangles the four edge normals are the two heading axes of each box
    for ux, uy in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        ra = la * abs(ca * ux + sa * uy) + wa * abs(-sa * ux + ca * uy)
        rb = lb * abs(cb * ux + sb * uy) + wb * abs(-sb * ux + cb * uy)
        if abs(dx * ux + dy * uy) > ra + rb:
            return False
    return True
