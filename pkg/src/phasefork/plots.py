"""Static SVG emission for curves and verification grids.

Output is plain hand-assembled SVG with fixed-precision coordinates, so the
same inputs always produce the same bytes.  No styling is configurable; the
point of these figures is a quick visual audit of a run directory, not
publication polish.
"""

from __future__ import annotations

from .errors import ValidationError

W, H = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 56, 16, 28, 44

PALETTE = ("#1f6fb2", "#d95f02", "#1b9e77", "#7570b3", "#e7298a",
           "#66a61e", "#a6761d", "#666666")

INFORMATIVE_FILL = "#2c974b"
UNINFORMATIVE_FILL = "#c9ccd1"


def _f(x: float) -> str:
    return "%.2f" % x


def _esc(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _header(title: str) -> list:
    return [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (W, H, W, H),
        '<rect width="%d" height="%d" fill="#ffffff"/>' % (W, H),
        '<text x="%d" y="18" font-family="sans-serif" font-size="13" '
        'fill="#222222">%s</text>' % (MARGIN_L, _esc(title)),
    ]


def svg_learning_curves(curves, title: str = "success over training") -> str:
    """curves: [(label, [(step, value), ...])], values in [0, 1]."""
    if not curves:
        raise ValidationError("no curves to plot")
    for label, pts in curves:
        if not pts:
            raise ValidationError("curve %r is empty" % label)
    xs = [s for _l, pts in curves for s, _v in pts]
    x_lo, x_hi = min(xs), max(xs)
    span = x_hi - x_lo if x_hi > x_lo else 1
    plot_w = W - MARGIN_L - MARGIN_R
    plot_h = H - MARGIN_T - MARGIN_B

    def px(s):
        return MARGIN_L + plot_w * (s - x_lo) / span

    def py(v):
        return MARGIN_T + plot_h * (1.0 - v)

    out = _header(title)
    # frame + y gridlines at 0, .25, .5, .75, 1
    out.append('<rect x="%d" y="%d" width="%d" height="%d" fill="none" '
               'stroke="#888888"/>' % (MARGIN_L, MARGIN_T, plot_w, plot_h))
    for i in range(5):
        v = i / 4.0
        y = py(v)
        out.append('<line x1="%d" y1="%s" x2="%d" y2="%s" stroke="#dddddd"/>'
                   % (MARGIN_L, _f(y), MARGIN_L + plot_w, _f(y)))
        out.append('<text x="%d" y="%s" font-family="sans-serif" '
                   'font-size="10" fill="#555555" text-anchor="end">%s</text>'
                   % (MARGIN_L - 6, _f(y + 3), _f(v)))
    for frac in (0.0, 0.5, 1.0):
        s = x_lo + span * frac
        out.append('<text x="%s" y="%d" font-family="sans-serif" '
                   'font-size="10" fill="#555555" text-anchor="middle">%d</text>'
                   % (_f(px(s)), H - MARGIN_B + 16, round(s)))
    out.append('<text x="%d" y="%d" font-family="sans-serif" font-size="11" '
               'fill="#333333">update</text>'
               % (MARGIN_L + plot_w // 2 - 20, H - 8))
    for i, (label, pts) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        draw = list(pts)
        if len(draw) == 1:
            # a single point still renders as a short horizontal line
            s, v = draw[0]
            draw = [(s, v), (s + 1, v)]
        coords = " ".join("%s,%s" % (_f(px(s)), _f(py(v))) for s, v in draw)
        out.append('<polyline points="%s" fill="none" stroke="%s" '
                   'stroke-width="1.5"/>' % (coords, color))
        ly = MARGIN_T + 14 + 14 * i
        out.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="%s" '
                   'stroke-width="2"/>' % (MARGIN_L + plot_w - 130, ly - 4,
                                           MARGIN_L + plot_w - 110, ly - 4, color))
        out.append('<text x="%d" y="%d" font-family="sans-serif" '
                   'font-size="10" fill="#333333">%s</text>'
                   % (MARGIN_L + plot_w - 104, ly, _esc(str(label))))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_verdict_heatmap(cells, title: str = "verification grid") -> str:
    """cells: [(checkpoint_step, fork_horizon, modal_winner, rel, informative)].

    One rectangle per (step, horizon); green when informative, gray when not,
    labeled with the winner and the repeat reliability.
    """
    if not cells:
        raise ValidationError("no verdict cells to plot")
    steps = sorted({c[0] for c in cells})
    hors = sorted({c[1] for c in cells})
    plot_w = W - MARGIN_L - MARGIN_R
    plot_h = H - MARGIN_T - MARGIN_B
    cw = plot_w / len(steps)
    ch = plot_h / len(hors)
    out = _header(title)
    by_pos = {(c[0], c[1]): c for c in cells}
    for yi, hor in enumerate(hors):
        for xi, t in enumerate(steps):
            x = MARGIN_L + cw * xi
            y = MARGIN_T + ch * yi
            c = by_pos.get((t, hor))
            if c is None:
                continue
            _t, _h, winner, rel, informative = c
            fill = INFORMATIVE_FILL if informative else UNINFORMATIVE_FILL
            out.append('<rect x="%s" y="%s" width="%s" height="%s" '
                       'fill="%s" stroke="#ffffff"/>'
                       % (_f(x), _f(y), _f(cw), _f(ch), fill))
            out.append('<text x="%s" y="%s" font-family="sans-serif" '
                       'font-size="10" fill="#111111" text-anchor="middle">'
                       '%s</text>'
                       % (_f(x + cw / 2), _f(y + ch / 2 - 2),
                          _esc(str(winner)[:14])))
            out.append('<text x="%s" y="%s" font-family="sans-serif" '
                       'font-size="9" fill="#333333" text-anchor="middle">'
                       'rel %s</text>'
                       % (_f(x + cw / 2), _f(y + ch / 2 + 11), _f(rel)))
    for xi, t in enumerate(steps):
        out.append('<text x="%s" y="%d" font-family="sans-serif" '
                   'font-size="10" fill="#555555" text-anchor="middle">'
                   't=%d</text>'
                   % (_f(MARGIN_L + cw * (xi + 0.5)), H - MARGIN_B + 16, t))
    for yi, hor in enumerate(hors):
        out.append('<text x="%d" y="%s" font-family="sans-serif" '
                   'font-size="10" fill="#555555" text-anchor="end">'
                   'L=%d</text>'
                   % (MARGIN_L - 6, _f(MARGIN_T + ch * (yi + 0.5) + 3), hor))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str, content: str) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)
    return path
