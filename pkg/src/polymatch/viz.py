"""Static bird's-eye SVG map of trajectories, footprints and matches."""

from __future__ import annotations

import colorsys
from collections import defaultdict
from typing import Optional, Sequence
from xml.sax.saxutils import quoteattr

from .miner import Observation, PairManifest
from .polygon import FloorPolygon
from .simulator import GroundTruth

PX_PER_M = 100.0
PAD_M = 0.5


def _colour(instance_id: int) -> str:
    hue = (instance_id * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.85)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def render_svg(
    observations: Sequence[Observation],
    footprints: Sequence[FloorPolygon],
    manifest: Optional[PairManifest] = None,
    gt: Optional[GroundTruth] = None,
) -> str:
    """Trajectories as polylines, one ``<polygon class="footprint">`` per
    footprint and one ``<line class="match">`` per matched pair."""
    xs = [o.pose.x for o in observations] + [v[0] for p in footprints for v in p.vertices]
    ys = [o.pose.y for o in observations] + [v[1] for p in footprints for v in p.vertices]
    if not xs:
        xs, ys = [0.0], [0.0]
    x0, x1 = min(xs) - PAD_M, max(xs) + PAD_M
    y0, y1 = min(ys) - PAD_M, max(ys) + PAD_M
    width = (x1 - x0) * PX_PER_M
    height = (y1 - y0) * PX_PER_M

    def pt(x, y):
        return f"{(x - x0) * PX_PER_M:.2f},{(y1 - y) * PX_PER_M:.2f}"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.2f} {height:.2f}">',
        f'<rect class="background" x="0" y="0" width="{width:.2f}" height="{height:.2f}" fill="#ffffff"/>',
    ]

    tracks = defaultdict(list)
    seen_images = set()
    for o in sorted(observations, key=lambda o: (o.agent_id, o.episode_id, o.timestamp, o.image_id)):
        if o.image_id in seen_images:
            continue
        seen_images.add(o.image_id)
        tracks[(o.agent_id, o.episode_id)].append(pt(o.pose.x, o.pose.y))
    for (agent, episode), points in sorted(tracks.items()):
        out.append(
            f'<polyline class="trajectory" data-agent={quoteattr(agent)} data-episode={quoteattr(episode)} '
            f'points="{" ".join(points)}" fill="none" stroke="#777777" stroke-width="1"/>'
        )

    centroids = {}
    for p in sorted(footprints, key=lambda p: p.source.key):
        key = p.source.key
        colour = _colour(gt[key].instance_id) if gt is not None and key in gt else "#3366cc"
        pts = " ".join(pt(*v) for v in p.vertices)
        out.append(
            f'<polygon class="footprint" data-key={quoteattr(key[0] + "/" + key[1])} points="{pts}" '
            f'fill="{colour}" fill-opacity="0.15" stroke="{colour}" stroke-width="1"/>'
        )
        centroids[key] = p.centroid

    if manifest is not None:
        for (a, b) in sorted(manifest.pairs()):
            if a not in centroids or b not in centroids:
                continue
            (ax, ay), (bx, by) = centroids[a], centroids[b]
            pa, pb = pt(ax, ay).split(","), pt(bx, by).split(",")
            out.append(
                f'<line class="match" data-a={quoteattr(a[0] + "/" + a[1])} data-b={quoteattr(b[0] + "/" + b[1])} '
                f'x1="{pa[0]}" y1="{pa[1]}" x2="{pb[0]}" y2="{pb[1]}" stroke="#cc3333" stroke-width="0.5"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
