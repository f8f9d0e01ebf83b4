"""SVG snapshots: lanes, risk raster, predictions, planned horizon and vehicles."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .risk_field import rasterize
from .sim.collision import rectangle_corners


def _points(xy) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in np.asarray(xy)[:, :2])


def render_snapshot(snapshot: dict, map_doc: dict, half_extent: float = 35.0, resolution: float = 1.0,
                    center: str = "ego") -> str:
    vehicles = snapshot["vehicles"]
    c = vehicles[center]
    x0, x1 = c.x - half_extent, c.x + half_extent
    y0, y1 = c.y - half_extent, c.y + half_extent
    size = 2 * half_extent
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600" viewBox="{x0:.2f} {-y1:.2f} {size:.2f} {size:.2f}">',
        f'<title>t = {snapshot["t"]:.2f} s</title>',
        '<g transform="scale(1,-1)">',
        f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{size:.2f}" height="{size:.2f}" fill="#f4f4f0"/>',
    ]
    field = snapshot.get("field")
    if field is not None and field.n_kernels:
        grid = rasterize(field, 0, (x0, x1), (y0, y1), resolution)
        top = grid[:, 2].max()
        if top > 0:
            for gx, gy, val in grid[grid[:, 2] > 0.02 * top]:
                parts.append(f'<rect x="{gx - resolution / 2:.2f}" y="{gy - resolution / 2:.2f}" '
                             f'width="{resolution}" height="{resolution}" fill="#d62728" '
                             f'fill-opacity="{0.7 * val / top:.3f}"/>')
    for lane in map_doc.get("lanes", []):
        parts.append(f'<polyline points="{_points(lane["polyline"])}" fill="none" stroke="#888" '
                     f'stroke-width="0.3" stroke-dasharray="1,1"><title>{lane["id"]}</title></polyline>')
    for pset in snapshot.get("predictions") or []:
        for traj, p in zip(pset.trajectories, pset.probabilities):
            pts = traj.poses if traj.origin is None else np.vstack([traj.origin, traj.poses])
            parts.append(f'<polyline points="{_points(pts)}" fill="none" stroke="#1f77b4" '
                         f'stroke-width="0.4" stroke-opacity="{max(0.15, float(p)):.3f}"/>')
    plan = snapshot.get("plan")
    if plan is not None:
        parts.append(f'<polyline points="{_points(plan)}" fill="none" stroke="#2ca02c" stroke-width="0.5"/>')
    footprints = snapshot.get("footprints", {})
    for vid, st in vehicles.items():
        hl, hw = footprints.get(vid, (2.3, 0.95))
        corners = rectangle_corners(st.x, st.y, st.phi, hl, hw)
        colour = "#ff7f0e" if vid == center else "#555"
        parts.append(f'<polygon points="{_points(corners)}" fill={quoteattr(colour)}>'
                     f'<title>{vid} {st.v:.1f} m/s</title></polygon>')
    parts += ["</g>", "</svg>"]
    return "\n".join(parts)


def write_snapshots(snapshots, map_doc: dict, out_dir, prefix: str = "step") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for snap in snapshots:
        path = out_dir / f"{prefix}_{int(round(snap['t'] * 1000)):07d}ms.svg"
        path.write_text(render_snapshot(snap, map_doc))
        written.append(path)
    return written
