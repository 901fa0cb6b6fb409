"""Renderização da máscara de visibilidade em texto e SVG"""

from django.conf import settings

from bang_toolkit.exceptions import LayoutError

from .layout import build_mask

VISIBLE, MASKED, INVALID = '#', '.', 'x'

CELL_PX = 12
LABEL_PX = 48


def _grid(layout):
    mask = build_mask(layout)
    visible = mask.visible.tolist()
    valid = mask.valid.tolist()
    grid = []
    for q in range(layout.n_rows):
        row = []
        for k in range(layout.n_rows):
            if not (valid[q] and valid[k]):
                row.append(INVALID)
            elif visible[q][k]:
                row.append(VISIBLE)
            else:
                row.append(MASKED)
        grid.append(row)
    return grid


def render_text(layout):
    """Grade de texto: '#' visível, '.' mascarado, 'x' inválido"""
    return '\n'.join(''.join(row) for row in _grid(layout))


def render_svg(layout):
    """Documento SVG 1.1 determinístico da grade de visibilidade"""
    grid = _grid(layout)
    side = LABEL_PX + CELL_PX * layout.n_rows
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{side}" height="{side}" '
        f'viewBox="0 0 {side} {side}">',
        '<defs>',
        '<pattern id="hatch" width="4" height="4" patternUnits="userSpaceOnUse">',
        '<path d="M0,4 L4,0" stroke="#999999" stroke-width="1"/>',
        '</pattern>',
        '</defs>',
        '<g font-family="monospace" font-size="8">',
    ]

    for row in range(layout.n_rows):
        s, t = layout.cell(row)
        offset = LABEL_PX + row * CELL_PX + CELL_PX - 3
        label = 'M' if s == 0 else f'P{s}'
        parts.append(f'<text x="2" y="{offset}">{label}:{t}</text>')
        parts.append(
            f'<text x="{offset - CELL_PX + 5}" y="{LABEL_PX - 4}" '
            f'transform="rotate(-90 {offset - CELL_PX + 5} {LABEL_PX - 4})">{label}:{t}</text>'
        )
    parts.append('</g>')

    fills = {VISIBLE: '#1f4e79', MASKED: '#ffffff', INVALID: 'url(#hatch)'}
    for q, row in enumerate(grid):
        for k, mark in enumerate(row):
            x = LABEL_PX + k * CELL_PX
            y = LABEL_PX + q * CELL_PX
            parts.append(
                f'<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" '
                f'fill="{fills[mark]}" stroke="#cccccc" stroke-width="0.5"/>'
            )

    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def render_mask(layout):
    """Retorna (grade de texto, documento SVG) para o layout"""
    cap = settings.BANG_TOOLKIT['MASK_RENDER_MAX_CELLS']
    if layout.n_rows > cap:
        raise LayoutError('size cap exceeded')
    return render_text(layout), render_svg(layout)
