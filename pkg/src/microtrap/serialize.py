"""Byte-exact writers and readers: results CSV, binary PGM, SVG plots."""
from __future__ import annotations

import io
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EmptySelectionError
from .experiments import ImageGray, ResultTable
from .optics import SlmMask, SlmSpec

CSV_HEADER = "site_i,site_j,scan_ms,p0_ideal,p0_measured,sem"
_PGM_MAX_DIM = 2 ** 31


def fmt(x: float) -> str:
    """Nine significant digits; positional unless the magnitude is extreme."""
    x = float(x)
    if x == 0:
        return "0"
    if not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if 1e-6 <= abs(x) < 1e15:
        return np.format_float_positional(x, precision=9, unique=False,
                                          fractional=False, trim="-")
    return f"{x:.8e}"


def _write(data: bytes, destination) -> bytes:
    if destination is not None:
        path = Path(destination)
        try:
            path.write_bytes(data)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return data


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else
                              str(v) if isinstance(v, (int, np.integer)) else fmt(v)
                              for v in row))
    return ("\n".join(lines) + "\n").encode("ascii")


def emit_results(table: ResultTable, destination=None) -> bytes:
    """Results CSV, rows sorted by site then scan time, LF endings."""
    rows = sorted(table.rows, key=lambda r: (r.site_i, r.site_j, r.scan_ms))
    for r in rows:
        if not (0.0 <= r.p0_ideal <= 1.0 and 0.0 <= r.p0_measured <= 1.0):
            raise DomainError(f"population outside [0, 1] at site ({r.site_i}, {r.site_j})")
    data = csv_bytes(CSV_HEADER.split(","),
                     ((r.site_i, r.site_j, r.scan_ms, r.p0_ideal, r.p0_measured, r.sem)
                      for r in rows))
    return _write(data, destination)


def read_results(raw: bytes) -> ResultTable:
    from .experiments import ResultRow
    lines = raw.decode("ascii").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise DomainError("not a results CSV")
    rows = []
    for line in lines[1:]:
        a = line.split(",")
        rows.append(ResultRow(int(a[0]), int(a[1]), *map(float, a[2:])))
    return ResultTable(rows)


# -- PGM ----------------------------------------------------------------------

def export_pgm(grid: SlmMask | ImageGray | np.ndarray, destination=None) -> bytes:
    """Binary P5 graymap, maxval 255, row-major from the top-left pixel."""
    if isinstance(grid, SlmMask):
        if grid.spec.max_level > 255:
            raise DomainError("masks with more than 256 levels do not fit an 8-bit PGM")
        data = grid.levels
    elif isinstance(grid, ImageGray):
        data = grid.to_uint8()
    else:
        data = np.asarray(grid)
        if data.size and (data.min() < 0 or data.max() > 255):
            raise DomainError("PGM samples must lie in [0, 255]")
    if data.ndim != 2 or data.size == 0:
        raise DomainError("PGM export needs a non-empty 2-D grid")
    h, w = data.shape
    if h >= _PGM_MAX_DIM or w >= _PGM_MAX_DIM:
        raise DomainError(f"grid {w}x{h} is too large for PGM export")
    payload = b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(data, dtype=np.uint8).tobytes()
    return _write(payload, destination)


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(source) -> np.ndarray:
    """Decode a binary PGM (bytes or path) into a ``uint8`` array."""
    raw = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise DomainError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P5":
        raise DomainError(f"unsupported PGM magic {magic!r}")
    if maxval != 255:
        raise DomainError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise DomainError("truncated PGM raster")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def import_mask(source, spec: SlmSpec | None = None) -> SlmMask:
    levels = read_pgm(source)
    if spec is None:
        spec = SlmSpec(n_cols=levels.shape[1], n_rows=levels.shape[0])
    return SlmMask(levels, spec)


# -- SVG ----------------------------------------------------------------------

_PANEL_W, _PANEL_H, _PAD = 220, 160, 36


def render_plot(table: ResultTable, sites: Iterable | None = None, destination=None) -> bytes:
    """Small multiples of P(|0>) against scan time, one panel per site.

    Panels are laid out like the site grid (``j`` down, ``i`` across).
    """
    if len(table) == 0:
        raise DomainError("cannot plot an empty table")
    available = table.sites()
    chosen = available if sites is None else [s for s in available
                                              if s in {tuple(x) for x in sites}]
    if not chosen:
        raise EmptySelectionError("site filter matched no site in the table")
    i_vals = sorted({s[0] for s in chosen})
    j_vals = sorted({s[1] for s in chosen})
    cols, rows_n = len(i_vals), len(j_vals)
    width, height = cols * _PANEL_W, rows_n * _PANEL_H
    t_all = [r.scan_ms for r in table.rows]
    t0, t1 = min(t_all), max(t_all)
    span = (t1 - t0) or 1.0

    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
              f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">\n')
    for lens in chosen:
        ox = i_vals.index(lens[0]) * _PANEL_W
        oy = j_vals.index(lens[1]) * _PANEL_H
        pw, ph = _PANEL_W - _PAD - 8, _PANEL_H - _PAD - 16
        x0, y0 = ox + _PAD, oy + 12

        def px(t):
            return x0 + (t - t0) / span * pw

        def py(p):
            return y0 + (1.0 - p) * ph

        out.write(f'<g id="site-{lens[0]}-{lens[1]}">\n')
        out.write(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" '
                  f'fill="none" stroke="#444"/>\n')
        out.write(f'<text x="{x0 + 4}" y="{y0 + 11}">site ({lens[0]},{lens[1]})</text>\n')
        out.write(f'<text x="{x0 + pw / 2:.1f}" y="{oy + _PANEL_H - 6}" '
                  f'text-anchor="middle">t (ms)</text>\n')
        out.write(f'<text x="{ox + 10}" y="{y0 + ph / 2:.1f}" text-anchor="middle" '
                  f'transform="rotate(-90 {ox + 10} {y0 + ph / 2:.1f})">P(|0&gt;)</text>\n')
        for p in (0.0, 0.5, 1.0):
            out.write(f'<text x="{x0 - 3}" y="{py(p) + 3:.1f}" text-anchor="end">{p:g}</text>\n')
        for t in (t0, t1):
            out.write(f'<text x="{px(t):.1f}" y="{y0 + ph + 11}" '
                      f'text-anchor="middle">{t:g}</text>\n')
        rows = table.for_site(lens)
        ideal = " ".join(f"{px(r.scan_ms):.2f},{py(r.p0_ideal):.2f}" for r in rows)
        out.write(f'<polyline points="{ideal}" fill="none" stroke="#1f77b4"/>\n')
        for r in rows:
            out.write(f'<circle cx="{px(r.scan_ms):.2f}" cy="{py(r.p0_measured):.2f}" '
                      f'r="1.6" fill="#d62728"/>\n')
        out.write("</g>\n")
    out.write("</svg>\n")
    return _write(out.getvalue().encode("utf-8"), destination)
