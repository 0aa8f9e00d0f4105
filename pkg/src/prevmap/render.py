"""Deterministic SVG rendering: choropleth maps and estimate-comparison figures.

No plotting library: geometry is simple enough to emit paths directly, and
hand-built documents are byte-stable, so figure output can be diffed in
tests. All numbers are printed to 3 significant figures; coordinates to two
decimals. Maps use a plate carree projection with the longitude axis scaled
by cos(mean latitude).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .bym import PosteriorRow
from .data_model import RegionBoundary
from .direct import DirectEstimate
from .errors import PrevmapError

BREAK_STRATEGIES = ("quantile", "equal_interval")
SCOPES = ("global", "per_group")

MAP_BOX = (10.0, 34.0, 300.0, 300.0)  # x, y, w, h of the map drawing area
PANEL_W = 500.0
LEGEND_X = 324.0
SWATCH = 14.0


@dataclass(frozen=True)
class ChoroplethSpec:
    """How to bin and color a value column on the map."""

    column: str
    strategy: str = "quantile"
    bins: int = 5
    scope: str = "global"
    ramp: tuple[str, ...] | None = None

    def validate(self) -> None:
        if self.strategy not in BREAK_STRATEGIES:
            raise PrevmapError(f"unknown break strategy {self.strategy!r}")
        if self.scope not in SCOPES:
            raise PrevmapError(f"unknown scale scope {self.scope!r}")
        if self.bins < 2:
            raise PrevmapError("bin count must be >= 2")
        if self.ramp is not None and len(self.ramp) != self.bins:
            raise PrevmapError(
                f"ramp length {len(self.ramp)} must equal bin count {self.bins}"
            )

    def colors(self) -> tuple[str, ...]:
        return self.ramp if self.ramp is not None else default_ramp(self.bins)


def default_ramp(bins: int) -> tuple[str, ...]:
    """Light-to-dark blue ramp interpolated in RGB."""
    lo, hi = (0xEF, 0xF3, 0xFF), (0x08, 0x45, 0x94)
    out = []
    for k in range(bins):
        t = k / (bins - 1) if bins > 1 else 0.0
        rgb = tuple(round(a + t * (b - a)) for a, b in zip(lo, hi))
        out.append("#{:02x}{:02x}{:02x}".format(*rgb))
    return tuple(out)


def sig3(x: float) -> str:
    """Three significant figures, plain notation for everyday magnitudes."""
    if not math.isfinite(x):
        return "nan"
    if x == 0:
        return "0"
    exponent = math.floor(math.log10(abs(x)))
    decimals = 2 - exponent
    y = round(x, decimals)
    if -4 <= exponent < 7:
        text = f"{y:.{max(decimals, 0)}f}"
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        return text
    return f"{x:.2e}"


def compute_breaks(values: Sequence[float], strategy: str, bins: int) -> list[float]:
    """Inner bin edges (bins - 1 of them) for the chosen strategy."""
    vals = np.asarray(sorted(values), dtype=float)
    if vals.size == 0:
        raise PrevmapError("no values to bin")
    if strategy == "quantile":
        qs = [k / bins for k in range(1, bins)]
        return [float(np.quantile(vals, q)) for q in qs]
    return [float(e) for e in np.linspace(vals[0], vals[-1], bins + 1)[1:-1]]


def assign_bins(values: Sequence[float], inner_edges: Sequence[float]) -> list[int]:
    """Bin index per value; values equal to an edge fall in the lower bin."""
    return [int(i) for i in np.digitize(values, inner_edges, right=True)]


# ---------------------------------------------------------------------------
# Geometry -> SVG paths
# ---------------------------------------------------------------------------


def _xml_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _projector(boundaries: Sequence[RegionBoundary], box=MAP_BOX):
    xs, ys = [], []
    for b in boundaries:
        for poly in b.geometry:
            for ring in poly:
                for lon, lat in ring:
                    xs.append(lon)
                    ys.append(lat)
    if not xs:
        raise PrevmapError("no coordinates to project")
    lat_mid = (min(ys) + max(ys)) / 2.0
    kx = math.cos(math.radians(lat_mid))
    u = [x * kx for x in xs]
    umin, umax = min(u), max(u)
    vmin, vmax = min(ys), max(ys)
    du = max(umax - umin, 1e-12)
    dv = max(vmax - vmin, 1e-12)
    bx, by, bw, bh = box
    scale = min(bw / du, bh / dv)
    ox = bx + (bw - du * scale) / 2.0
    oy = by + (bh - dv * scale) / 2.0

    def proj(lon: float, lat: float) -> tuple[float, float]:
        return (
            ox + (lon * kx - umin) * scale,
            oy + (vmax - lat) * scale,
        )

    return proj


def _region_path(boundary: RegionBoundary, proj) -> str:
    parts = []
    for poly in boundary.geometry:
        for ring in poly:
            pts = [proj(lon, lat) for lon, lat in ring[:-1]]
            coords = " L ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            parts.append(f"M {coords} Z")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Choropleth panels
# ---------------------------------------------------------------------------


def _legend_block(x, y, title, edges, colors):
    lines = [f'<text x="{x:.2f}" y="{y:.2f}" font-size="11" font-weight="bold">{_xml_escape(title)}</text>']
    for k, color in enumerate(colors):
        yy = y + 8 + k * (SWATCH + 4)
        label = f"{sig3(edges[k])} - {sig3(edges[k + 1])}"
        lines.append(
            f'<rect x="{x:.2f}" y="{yy:.2f}" width="{SWATCH}" height="{SWATCH}" '
            f'fill="{color}" stroke="#444" stroke-width="0.5"/>'
        )
        lines.append(
            f'<text x="{x + SWATCH + 5:.2f}" y="{yy + SWATCH - 3:.2f}" font-size="11">{label}</text>'
        )
    return lines, y + 8 + len(colors) * (SWATCH + 4)


def _choropleth_panel(
    boundaries: Sequence[RegionBoundary],
    values: Mapping[str, float],
    spec: ChoroplethSpec,
    title: str,
) -> tuple[str, float]:
    """Inner SVG fragment (no outer tag) and the height it needs."""
    spec.validate()
    known = {b.region_id for b in boundaries}
    for rid in values:
        if rid not in known:
            raise PrevmapError(f"value for unknown region_id {rid!r}")
    boundaries = sorted(boundaries, key=lambda b: b.region_id)
    proj = _projector(boundaries)
    colors = spec.colors()

    # group -> (inner_edges, legend_edges); global scope uses one group
    if spec.scope == "per_group":
        groups = sorted({b.country for b in boundaries})
        group_of = {b.region_id: b.country for b in boundaries}
    else:
        groups = [""]
        group_of = {b.region_id: "" for b in boundaries}
    edges_by_group: dict[str, tuple[list[float], list[float]]] = {}
    for g in groups:
        vals = [
            v
            for rid, v in values.items()
            if group_of[rid] == g and math.isfinite(v)
        ]
        if not vals:
            continue
        inner = compute_breaks(vals, spec.strategy, spec.bins)
        edges_by_group[g] = (inner, [min(vals)] + inner + [max(vals)])

    body = [f'<text x="10" y="20" font-size="13" font-weight="bold">{_xml_escape(title)}</text>']
    for b in boundaries:
        d = _region_path(b, proj)
        v = values.get(b.region_id)
        if v is None or not math.isfinite(v) or group_of[b.region_id] not in edges_by_group:
            fill = "url(#hatch)"
            label = "missing"
        else:
            inner, _ = edges_by_group[group_of[b.region_id]]
            fill = colors[assign_bins([v], inner)[0]]
            label = sig3(v)
        body.append(
            f'<path d="{d}" fill="{fill}" fill-rule="evenodd" stroke="#333" '
            f'stroke-width="0.6"><title>{_xml_escape(b.region_id)}: {label}</title></path>'
        )

    y_cursor = 40.0
    for g in groups:
        if g not in edges_by_group:
            continue
        _, legend_edges = edges_by_group[g]
        legend_title = g if g else spec.column
        lines, y_cursor = _legend_block(LEGEND_X, y_cursor, legend_title, legend_edges, colors)
        body.extend(lines)
        y_cursor += 14
    height = max(MAP_BOX[1] + MAP_BOX[3] + 10, y_cursor + 10)
    return "\n".join(body), height


def _document(
    panels: Sequence[tuple[str, float]],
    metadata: Mapping[str, str] | None = None,
) -> str:
    width = PANEL_W * len(panels)
    height = max(h for _, h in panels)
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" font-family="sans-serif">',
    ]
    if metadata:
        pairs = "; ".join(f"{k}: {v}" for k, v in metadata.items())
        head.append(f"<!-- {pairs.replace('--', '[dash]')} -->")
    head.append(
        '<defs><pattern id="hatch" width="5" height="5" patternUnits="userSpaceOnUse">'
        '<rect width="5" height="5" fill="#f4f4f4"/>'
        '<path d="M0,5 l5,-5" stroke="#999" stroke-width="0.8"/></pattern></defs>'
    )
    for k, (content, _) in enumerate(panels):
        head.append(f'<g transform="translate({k * PANEL_W:.0f},0)">')
        head.append(content)
        head.append("</g>")
    head.append("</svg>")
    return "\n".join(head) + "\n"


def render_choropleth(
    boundaries: Sequence[RegionBoundary],
    values: Mapping[str, float],
    spec: ChoroplethSpec,
    title: str = "",
    metadata: Mapping[str, str] | None = None,
) -> str:
    """One filled path per region plus a legend; missing values hatched."""
    return _document(
        [_choropleth_panel(boundaries, values, spec, title or spec.column)],
        metadata,
    )


def render_map_row(
    boundaries: Sequence[RegionBoundary],
    panels: Sequence[tuple[str, Mapping[str, float]]],
    spec: ChoroplethSpec,
    metadata: Mapping[str, str] | None = None,
) -> str:
    """Several value maps of the same boundary set, side by side."""
    rendered = [
        _choropleth_panel(boundaries, values, spec, title) for title, values in panels
    ]
    return _document(rendered, metadata)


def render_country_panels(
    boundaries: Sequence[RegionBoundary],
    values: Mapping[str, float],
    spec: ChoroplethSpec,
    metadata: Mapping[str, str] | None = None,
) -> str:
    """One zoomed panel per country, each with its own extent and color scale."""
    countries = sorted({b.country for b in boundaries})
    rendered = []
    for country in countries:
        subset = [b for b in boundaries if b.country == country]
        sub_values = {
            rid: v for rid, v in values.items() if rid in {b.region_id for b in subset}
        }
        rendered.append(
            _choropleth_panel(subset, sub_values, spec, country or spec.column)
        )
    return _document(rendered, metadata)


# ---------------------------------------------------------------------------
# Comparison figure: direct vs smoothed
# ---------------------------------------------------------------------------

SCATTER_BOX = (60.0, 40.0, 240.0, 240.0)


def _axis(box, x_label, y_label, lo, hi):
    bx, by, bw, bh = box
    lines = [
        f'<rect x="{bx:.2f}" y="{by:.2f}" width="{bw:.2f}" height="{bh:.2f}" '
        'fill="none" stroke="#888" stroke-width="0.8"/>'
    ]
    for t in np.linspace(lo, hi, 5):
        fx = bx + (t - lo) / (hi - lo) * bw
        fy = by + bh - (t - lo) / (hi - lo) * bh
        lines.append(
            f'<line x1="{fx:.2f}" y1="{by + bh:.2f}" x2="{fx:.2f}" y2="{by + bh + 4:.2f}" stroke="#888"/>'
        )
        lines.append(
            f'<text x="{fx:.2f}" y="{by + bh + 15:.2f}" font-size="9" text-anchor="middle">{sig3(float(t))}</text>'
        )
        lines.append(
            f'<line x1="{bx - 4:.2f}" y1="{fy:.2f}" x2="{bx:.2f}" y2="{fy:.2f}" stroke="#888"/>'
        )
        lines.append(
            f'<text x="{bx - 7:.2f}" y="{fy + 3:.2f}" font-size="9" text-anchor="end">{sig3(float(t))}</text>'
        )
    lines.append(
        f'<text x="{bx + bw / 2:.2f}" y="{by + bh + 30:.2f}" font-size="11" '
        f'text-anchor="middle">{_xml_escape(x_label)}</text>'
    )
    lines.append(
        f'<text x="{bx - 40:.2f}" y="{by + bh / 2:.2f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 {bx - 40:.2f} {by + bh / 2:.2f})">{_xml_escape(y_label)}</text>'
    )
    return lines


def _scatter_panel(title, pairs, degenerate_mask, x_label, y_label):
    """Square scatter with identity line; both axes share the same limits."""
    finite = [
        (x, y) for (x, y) in pairs if math.isfinite(x) and math.isfinite(y)
    ]
    hi = max((max(x, y) for x, y in finite), default=1.0) * 1.08
    hi = hi if hi > 0 else 1.0
    lo = 0.0
    bx, by, bw, bh = SCATTER_BOX

    def fx(v):
        return bx + (v - lo) / (hi - lo) * bw

    def fy(v):
        return by + bh - (v - lo) / (hi - lo) * bh

    lines = [f'<text x="{bx:.2f}" y="20" font-size="13" font-weight="bold">{_xml_escape(title)}</text>']
    lines += _axis(SCATTER_BOX, x_label, y_label, lo, hi)
    lines.append(
        f'<line x1="{fx(lo):.2f}" y1="{fy(lo):.2f}" x2="{fx(hi):.2f}" y2="{fy(hi):.2f}" '
        'stroke="#bbb" stroke-dasharray="4,3"/>'
    )
    for (x, y), degen in zip(pairs, degenerate_mask):
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        if degen:
            cx, cy = fx(x), fy(y)
            d = (
                f"M {cx:.2f},{cy - 4:.2f} L {cx + 4:.2f},{cy:.2f} "
                f"L {cx:.2f},{cy + 4:.2f} L {cx - 4:.2f},{cy:.2f} Z"
            )
            lines.append(f'<path d="{d}" fill="none" stroke="#c0392b" stroke-width="1.2"/>')
        else:
            lines.append(
                f'<circle cx="{fx(x):.2f}" cy="{fy(y):.2f}" r="3" fill="#2b6cb0" fill-opacity="0.75"/>'
            )
    return "\n".join(lines)


def render_comparison(
    direct: Sequence[DirectEstimate],
    posterior: Sequence[PosteriorRow],
    metadata: Mapping[str, str] | None = None,
) -> str:
    """Direct vs smoothed: scatter of estimates, scatter of SEs, paired intervals.

    Regions are matched by id; the interval panel sorts regions by their
    direct estimate and draws the direct 95% CI next to the posterior 95%
    credible interval. Degenerate regions carry a distinct open marker and
    show the posterior interval only.
    """
    post_by_id = {r.region_id: r for r in posterior}
    if set(post_by_id) != {e.region_id for e in direct}:
        raise PrevmapError("direct and posterior region sets differ")
    direct = sorted(direct, key=lambda e: e.region_id)
    rows = [post_by_id[e.region_id] for e in direct]
    degen = [e.degenerate != "none" for e in direct]

    panel_a = _scatter_panel(
        "Prevalence: direct vs smoothed",
        [(e.p_hat, r.prev_mean) for e, r in zip(direct, rows)],
        degen,
        "direct estimate",
        "smoothed posterior mean",
    )
    panel_b = _scatter_panel(
        "Standard errors",
        [(e.se_p, r.prev_sd) for e, r in zip(direct, rows)],
        degen,
        "direct SE",
        "posterior SD",
    )

    # interval panel: direct 95% CI vs posterior 95% CrI, sorted by direct p
    order = sorted(range(len(direct)), key=lambda i: (direct[i].p_hat, direct[i].region_id))
    n = len(order)
    slot = max(12.0, 560.0 / max(n, 1))
    c_w = slot * n + 80
    c_box = (60.0, 40.0, slot * n, 240.0)
    tops = []
    for i in order:
        e, r = direct[i], rows[i]
        tops.append(r.prev_q975)
        if not degen[i] and math.isfinite(e.se_p):
            tops.append(min(1.0, e.p_hat + 1.96 * e.se_p))
    hi = max(tops, default=1.0) * 1.08
    bx, by, bw, bh = c_box

    def fy(v):
        return by + bh - v / hi * bh

    panel_c = [
        f'<text x="{bx:.2f}" y="20" font-size="13" font-weight="bold">'
        "Per-region 95% intervals (direct vs smoothed)</text>",
        f'<rect x="{bx:.2f}" y="{by:.2f}" width="{bw:.2f}" height="{bh:.2f}" '
        'fill="none" stroke="#888" stroke-width="0.8"/>',
    ]
    for t in np.linspace(0, hi, 5):
        panel_c.append(
            f'<text x="{bx - 7:.2f}" y="{fy(float(t)) + 3:.2f}" font-size="9" '
            f'text-anchor="end">{sig3(float(t))}</text>'
        )
    for slot_idx, i in enumerate(order):
        e, r = direct[i], rows[i]
        xc = bx + (slot_idx + 0.5) * slot
        if not degen[i] and math.isfinite(e.se_p):
            lo_d = max(0.0, e.p_hat - 1.96 * e.se_p)
            hi_d = min(1.0, e.p_hat + 1.96 * e.se_p)
            panel_c.append(
                f'<line x1="{xc - 2.5:.2f}" y1="{fy(lo_d):.2f}" x2="{xc - 2.5:.2f}" '
                f'y2="{fy(hi_d):.2f}" stroke="#777" stroke-width="1.4"/>'
            )
            panel_c.append(
                f'<circle cx="{xc - 2.5:.2f}" cy="{fy(e.p_hat):.2f}" r="2" fill="#777"/>'
            )
        panel_c.append(
            f'<line x1="{xc + 2.5:.2f}" y1="{fy(r.prev_q025):.2f}" x2="{xc + 2.5:.2f}" '
            f'y2="{fy(r.prev_q975):.2f}" stroke="#2b6cb0" stroke-width="1.4"/>'
        )
        if degen[i]:
            cy = fy(r.prev_mean)
            d = (
                f"M {xc + 2.5:.2f},{cy - 3.5:.2f} L {xc + 6:.2f},{cy:.2f} "
                f"L {xc + 2.5:.2f},{cy + 3.5:.2f} L {xc - 1:.2f},{cy:.2f} Z"
            )
            panel_c.append(
                f'<path d="{d}" fill="none" stroke="#c0392b" stroke-width="1.2"/>'
            )
        else:
            panel_c.append(
                f'<circle cx="{xc + 2.5:.2f}" cy="{fy(r.prev_mean):.2f}" r="2" fill="#2b6cb0"/>'
            )
    panel_c.append(
        f'<text x="{bx + bw / 2:.2f}" y="{by + bh + 18:.2f}" font-size="10" '
        'text-anchor="middle">regions sorted by direct estimate; '
        "gray = direct, blue = smoothed, open = degenerate</text>"
    )

    width = max(2 * 340.0, c_w)
    height = 320.0 + 320.0
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" font-family="sans-serif">',
    ]
    if metadata:
        pairs = "; ".join(f"{k}: {v}" for k, v in metadata.items())
        head.append(f"<!-- {pairs.replace('--', '[dash]')} -->")
    head.append('<g id="panelA">')
    head.append(panel_a)
    head.append("</g>")
    head.append('<g id="panelB" transform="translate(340,0)">')
    head.append(panel_b)
    head.append("</g>")
    head.append('<g id="panelC" transform="translate(0,320)">')
    head.append("\n".join(panel_c))
    head.append("</g>")
    head.append("</svg>")
    return "\n".join(head) + "\n"
