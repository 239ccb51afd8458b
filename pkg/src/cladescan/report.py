"""Region report: JSON summary and a four-panel SVG (BF track + map trace,
haplotype matrix, tree with highlighted branches, allele-count tables).

The SVG renders only numbers present in the JSON; layout is deterministic so
identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bayes import BayesResult
from .data import DataError, HaplotypePanel, RecombinationMap
from .tree import MarginalTree


@dataclass
class RegionReport:
    focal_position_bp: int
    track: list[dict]  # per position: {position, log10_bf1, log10_bf2, posterior_2v1}
    tree: MarginalTree
    best_branch: int
    best_pair: tuple[int, int]
    table_1mut: np.ndarray
    table_2mut: np.ndarray
    haplotype_slice: np.ndarray  # (N, n_slice_sites) panel alleles around focal
    slice_positions: np.ndarray
    map_trace: list[dict]  # {position, rate_cM_per_Mb, cumulative_cM}


def build_region_report(
    results: list[BayesResult],
    trees: dict[int, MarginalTree],
    panel: HaplotypePanel,
    gmap: RecombinationMap,
    slice_sites: int = 100,
) -> RegionReport:
    """Assemble the report; the focal position is the argmax of log10 BF2
    (leftmost on ties)."""
    ok = [r for r in results if r.error is None and np.isfinite(r.log10_bf2)]
    if not ok:
        raise DataError("region has no computed positions")
    best = max(ok, key=lambda r: (r.log10_bf2, -r.position_bp))
    tree = trees[best.position_bp]

    pos = panel.positions_bp
    insert = int(np.searchsorted(pos, best.position_bp))
    lo = max(0, insert - slice_sites // 2)
    hi = min(panel.n_sites, lo + slice_sites)
    track = [
        {
            "position": r.position_bp,
            "log10_bf1": r.log10_bf1,
            "log10_bf2": r.log10_bf2,
            "posterior_2v1": r.posterior_2v1,
        }
        for r in sorted(ok, key=lambda r: r.position_bp)
    ]
    trace_pos = [r["position"] for r in track]
    cum = gmap.cumulative_at(np.asarray(trace_pos, dtype=np.float64))
    rates = np.interp(
        np.asarray(trace_pos, dtype=np.float64),
        gmap.positions_bp.astype(np.float64),
        gmap.rates_cm_per_mb,
    )
    map_trace = [
        {"position": int(p), "rate_cM_per_Mb": float(r), "cumulative_cM": float(c)}
        for p, r, c in zip(trace_pos, rates, cum)
    ]
    return RegionReport(
        focal_position_bp=best.position_bp,
        track=track,
        tree=tree,
        best_branch=best.best_branch,
        best_pair=best.best_pair,
        table_1mut=best.table_1mut,
        table_2mut=best.table_2mut,
        haplotype_slice=panel.alleles[:, lo:hi],
        slice_positions=pos[lo:hi],
        map_trace=map_trace,
    )


def report_to_json(report: RegionReport) -> str:
    tree = report.tree
    doc = {
        "focal_position": report.focal_position_bp,
        "track": report.track,
        "map_trace": report.map_trace,
        "best_branch": report.best_branch,
        "best_pair": list(report.best_pair),
        "table_1mut": [[round(v, 4) for v in row] for row in report.table_1mut.tolist()],
        "table_2mut": [[round(v, 4) for v in row] for row in report.table_2mut.tolist()],
        "tree": {
            "n_tips": tree.n_tips,
            "branches": [
                {
                    "id": b.id,
                    "parent": b.parent,
                    "n_birth": b.n_birth,
                    "n_death": b.n_death,
                    "tips_hex": f"{b.tips:x}",
                }
                for b in tree.branches
            ],
            "newick": tree.newick(),
        },
        "haplotypes": {
            "positions": [int(p) for p in report.slice_positions],
            "rows": ["".join(str(int(v)) for v in row) for row in report.haplotype_slice],
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# SVG rendering


def _tip_order(tree: MarginalTree) -> list[int]:
    """Tips ordered so that every clade is contiguous (post-order of the tree)."""
    children: dict[int, list[int]] = {}
    for b in tree.branches:
        children.setdefault(b.parent, []).append(b.id)
    order: list[int] = []

    def walk(node: int) -> None:
        kids = sorted(children.get(node, []))
        if not kids:
            order.append(node)
        for k in kids:
            walk(k)

    walk(2 * tree.n_tips - 2)
    return order


def report_to_svg(report: RegionReport) -> str:
    """Four-panel SVG sharing every number with the JSON output."""
    w, h = 1000, 760
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" font-family="monospace" font-size="10">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]

    # panel 1: BF track + cumulative map trace (top left)
    x0, y0, pw, ph = 40, 30, 520, 220
    track = report.track
    pos = [t["position"] for t in track]
    pmin, pmax = min(pos), max(pos)
    span = max(pmax - pmin, 1)
    vals = [t["log10_bf1"] for t in track] + [t["log10_bf2"] for t in track]
    vmax = max(max(vals), 1.0)
    vmin = min(min(vals), 0.0)

    def sx(p):
        return x0 + (p - pmin) / span * pw

    def sy(v):
        return y0 + ph - (v - vmin) / (vmax - vmin + 1e-12) * ph

    parts.append(f'<text x="{x0}" y="{y0 - 10}">log10 Bayes factors (1-mut red, 2-mut green)</text>')
    for key, color in (("log10_bf1", "red"), ("log10_bf2", "green")):
        pts = " ".join(f"{sx(t['position']):.1f},{sy(t[key]):.1f}" for t in track)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}"/>')
    fx = sx(report.focal_position_bp)
    parts.append(
        f'<line x1="{fx:.1f}" y1="{y0}" x2="{fx:.1f}" y2="{y0 + ph}" '
        f'stroke="blue" stroke-dasharray="4 3"/>'
    )
    parts.append(
        f'<text x="{x0}" y="{y0 + ph + 14}">focal {report.focal_position_bp}</text>'
    )
    cums = [m["cumulative_cM"] for m in report.map_trace]
    cmax = max(max(cums), 1e-9)
    pts = " ".join(
        f"{sx(m['position']):.1f},{(y0 + ph - m['cumulative_cM'] / cmax * 40):.1f}"
        for m in report.map_trace
    )
    parts.append(f'<polyline points="{pts}" fill="none" stroke="purple"/>')

    # panel 2: haplotype matrix (bottom left)
    hx, hy, hw, hh = 40, 300, 520, 420
    mat = report.haplotype_slice
    n, l = mat.shape
    order = _tip_order(report.tree)
    b1 = report.tree.branch_by_id(report.best_pair[0]).tips
    b2 = report.tree.branch_by_id(report.best_pair[1]).tips
    cw = hw / max(l, 1)
    ch = hh / max(n, 1)
    parts.append(f'<text x="{hx}" y="{hy - 8}">panel haplotypes (rows grouped by clade)</text>')
    for r, tip in enumerate(order):
        if b1 >> tip & 1:
            rowcol = "#d33"
        elif b2 >> tip & 1:
            rowcol = "#393"
        else:
            rowcol = "#777"
        for cidx in range(l):
            fill = rowcol if mat[tip, cidx] else "#eee"
            parts.append(
                f'<rect x="{hx + cidx * cw:.2f}" y="{hy + r * ch:.2f}" '
                f'width="{cw:.2f}" height="{ch:.2f}" fill="{fill}"/>'
            )

    # panel 3: tree (bottom right)
    tx, ty, tw, th = 600, 300, 360, 420
    parts.append(f'<text x="{tx}" y="{ty - 8}">tree at focal position</text>')
    tree = report.tree
    children: dict[int, list[int]] = {}
    for b in tree.branches:
        children.setdefault(b.parent, []).append(b.id)
    tip_y = {tip: ty + (r + 0.5) * th / tree.n_tips for r, tip in enumerate(order)}
    depth: dict[int, int] = {}

    def calc_depth(node):
        kids = children.get(node, [])
        if not kids:
            depth[node] = 0
            return 0
        d = 1 + max(calc_depth(k) for k in kids)
        depth[node] = d
        return d

    root = 2 * tree.n_tips - 2
    maxd = max(calc_depth(root), 1)
    node_y: dict[int, float] = {}

    def calc_y(node):
        kids = children.get(node, [])
        if not kids:
            node_y[node] = tip_y[node]
            return node_y[node]
        ys = [calc_y(k) for k in sorted(kids)]
        node_y[node] = sum(ys) / len(ys)
        return node_y[node]

    calc_y(root)

    def node_x(node):
        return tx + tw - depth[node] / maxd * tw

    for b in tree.branches:
        x1, y1 = node_x(b.id), node_y[b.id]
        x2, y2 = node_x(b.parent), node_y[b.parent]
        parts.append(
            f'<path d="M {x1:.1f} {y1:.1f} H {x2:.1f} V {y2:.1f}" '
            f'fill="none" stroke="black"/>'
        )
        mark = None
        if b.id == report.best_branch:
            mark = "blue"
        if b.id == report.best_pair[0]:
            mark = "#d33"
        elif b.id == report.best_pair[1]:
            mark = "#393"
        if mark:
            mx = (x1 + x2) / 2
            parts.append(f'<circle cx="{mx:.1f}" cy="{y1:.1f}" r="4" fill="{mark}"/>')

    # panel 4: count tables (top right)
    cx, cy = 600, 40
    parts.append(f'<text x="{cx}" y="{cy}">expected allele counts</text>')
    row_names = ["controls", "cases"]
    parts.append(f'<text x="{cx}" y="{cy + 18}">1-mutation (branch {report.best_branch})</text>')
    for i, name in enumerate(row_names):
        # render the same 4-decimal rounding the JSON uses
        vals = " ".join(f"{round(v, 4):g}" for v in report.table_1mut[i])
        parts.append(f'<text x="{cx}" y="{cy + 32 + i * 14}">{name}: {vals}</text>')
    parts.append(
        f'<text x="{cx}" y="{cy + 76}">2-mutation (branches '
        f"{report.best_pair[0]}, {report.best_pair[1]})</text>"
    )
    for i, name in enumerate(row_names):
        vals = " ".join(f"{round(v, 4):g}" for v in report.table_2mut[i])
        parts.append(f'<text x="{cx}" y="{cy + 90 + i * 14}">{name}: {vals}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
