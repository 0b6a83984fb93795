"""Hand-written SVG figures. Output is byte-stable for identical inputs."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _f(v):
    return f"{v:.2f}"


class Canvas:
    def __init__(self, width=900, height=420, margin=(40, 20, 50, 70)):
        self.w, self.h = width, height
        self.top, self.right, self.bottom, self.left = margin
        self.items: list[str] = []

    @property
    def plot_w(self):
        return self.w - self.left - self.right

    @property
    def plot_h(self):
        return self.h - self.top - self.bottom

    def set_ranges(self, xlim, ylim):
        self.xlim, self.ylim = xlim, ylim

    def X(self, x):
        lo, hi = self.xlim
        return self.left + (x - lo) / ((hi - lo) or 1.0) * self.plot_w

    def Y(self, y):
        lo, hi = self.ylim
        return self.top + self.plot_h - (y - lo) / ((hi - lo) or 1.0) * self.plot_h

    def add(self, s):
        self.items.append(s)

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None, cls=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        k = f' class="{cls}"' if cls else ""
        self.add(f'<line{k} x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{stroke}" stroke-width="{width}"{d}/>')

    def rect(self, x, y, w, h, fill, opacity=1.0):
        if h < 0:
            y, h = y + h, -h
        self.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(max(w, 0))}" height="{_f(h)}" '
                 f'fill="{fill}" fill-opacity="{opacity}"/>')

    def circle(self, x, y, r, fill, opacity=1.0, cls=None):
        k = f' class="{cls}"' if cls else ""
        self.add(f'<circle{k} cx="{_f(x)}" cy="{_f(y)}" r="{r}" fill="{fill}" fill-opacity="{opacity}"/>')

    def text(self, x, y, s, size=11, anchor="middle", rotate=None):
        rot = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" font-family="sans-serif" '
                 f'text-anchor="{anchor}"{rot}>{escape(str(s))}</text>')

    def axes(self, title, xlabel, ylabel, n_yticks=5):
        x0, y0 = self.left, self.top + self.plot_h
        self.line(x0, self.top, x0, y0)
        self.line(x0, y0, x0 + self.plot_w, y0)
        lo, hi = self.ylim
        for t in np.linspace(lo, hi, n_yticks):
            y = self.Y(t)
            self.line(x0 - 4, y, x0, y)
            self.text(x0 - 6, y + 4, f"{t:.3g}", size=10, anchor="end")
        self.text(self.left + self.plot_w / 2, 22, title, size=14)
        self.text(self.left + self.plot_w / 2, self.h - 12, xlabel)
        self.text(16, self.top + self.plot_h / 2, ylabel, rotate=-90)

    def legend(self, entries, x=None, y=None):
        x = self.left + self.plot_w - 170 if x is None else x
        y = self.top + 8 if y is None else y
        for i, (label, color) in enumerate(entries):
            self.rect(x, y + i * 16, 10, 10, color)
            self.text(x + 16, y + i * 16 + 9, label, size=10, anchor="start")

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">')
        bg = f'<rect x="0" y="0" width="{self.w}" height="{self.h}" fill="#ffffff"/>'
        return "\n".join([head, bg, *self.items, "</svg>"]) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.render(), encoding="utf-8")
        return path


def attribution_bars(scores, path, coefficients=None, categories=None, title="Feature attribution"):
    """Bars per feature; optional ground-truth bars drawn beside them.

    ``categories`` maps each feature to a label used for bar colour.
    """
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    c = Canvas(width=max(900, 10 * n + 120))
    vals = [scores] + ([np.asarray(coefficients, float)] if coefficients is not None else [])
    lo = min(0.0, min(v.min() for v in vals))
    hi = max(0.0, max(v.max() for v in vals))
    c.set_ranges((0, n), (lo, hi if hi > lo else lo + 1))
    slot = c.plot_w / n
    bw = slot * (0.45 if coefficients is not None else 0.8)
    labels = sorted(set(categories)) if categories is not None else []
    color_of = {lab: PALETTE[i % len(PALETTE)] for i, lab in enumerate(labels)}
    for i in range(n):
        x = c.X(i) + slot * 0.1
        fill = color_of[categories[i]] if categories is not None else PALETTE[0]
        c.rect(x, c.Y(0), bw, c.Y(scores[i]) - c.Y(0), fill)
        if coefficients is not None:
            c.rect(x + bw, c.Y(0), bw, c.Y(coefficients[i]) - c.Y(0), PALETTE[1], 0.8)
    c.line(c.left, c.Y(0), c.left + c.plot_w, c.Y(0), "#444", 0.5)
    c.axes(title, "feature index", "value")
    entries = [(f"attribution ({lab})", color_of[lab]) for lab in labels] or [("attribution", PALETTE[0])]
    if coefficients is not None:
        entries.append(("ground-truth coefficient", PALETTE[1]))
    c.legend(entries)
    return c.save(path)


def cluster_scatter(scores, assignments, threshold, path, k=None):
    """Feature index vs score, coloured by cluster, with the elimination threshold."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    c = Canvas()
    pad = 0.05 * (np.ptp(scores) or 1.0)
    c.set_ranges((-1, n), (scores.min() - pad, scores.max() + pad))
    for i, (s, a) in enumerate(zip(scores, assignments)):
        c.circle(c.X(i), c.Y(s), 3.5, PALETTE[int(a) % len(PALETTE)])
    c.line(c.left, c.Y(threshold), c.left + c.plot_w, c.Y(threshold), "#d62728", 1.2, "5,4")
    title = "k-means clustering of attribution scores" + (f" (k = {k})" if k else "")
    c.axes(title, "feature index", "attribution score")
    return c.save(path)


def mse_whiskers(labels, fold_mses, means, sds, path, title="Cross-validation MSE by feature subset"):
    """One grey dot per fold, a black mean dot, and a +/- 1 SD whisker per subset."""
    m = len(labels)
    c = Canvas(width=max(600, 90 * m + 120))
    allv = [v for f in fold_mses for v in f if np.isfinite(v)]
    allv += [mu + s for mu, s in zip(means, sds) if np.isfinite(mu) and np.isfinite(s)]
    allv += [mu - s for mu, s in zip(means, sds) if np.isfinite(mu) and np.isfinite(s)]
    lo, hi = (min(allv), max(allv)) if allv else (0.0, 1.0)
    pad = 0.05 * ((hi - lo) or 1.0)
    c.set_ranges((-0.5, m - 0.5), (lo - pad, hi + pad))
    for i in range(m):
        x = c.X(i)
        for v in fold_mses[i]:
            if np.isfinite(v):
                c.circle(x, c.Y(v), 3, "#bbbbbb", cls="fold")
        if np.isfinite(means[i]):
            if np.isfinite(sds[i]):
                c.line(x, c.Y(means[i] - sds[i]), x, c.Y(means[i] + sds[i]), "#000", 1.5, cls="sd")
                c.line(x - 6, c.Y(means[i] - sds[i]), x + 6, c.Y(means[i] - sds[i]), "#000", 1.5)
                c.line(x - 6, c.Y(means[i] + sds[i]), x + 6, c.Y(means[i] + sds[i]), "#000", 1.5)
            c.circle(x, c.Y(means[i]), 4.5, "#000000", cls="mean")
        c.text(x, c.top + c.plot_h + 16, labels[i], size=10)
    c.axes(title, "number of features", "MSE")
    return c.save(path)
