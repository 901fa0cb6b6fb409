import torch
from django.test import SimpleTestCase, override_settings

from bang_toolkit.exceptions import LayoutError

from .layout import (
    MASK_SENTINEL,
    StreamLayout,
    build_mask,
    mask_from_visible_sets,
    validity_mask,
    visible_set,
)
from .render import render_mask, render_svg, render_text


class StreamLayoutTests(SimpleTestCase):
    """Testes da geometria de streams"""

    def test_row_index_is_bijection(self):
        layout = StreamLayout(5, 3)
        rows = [layout.row_index(s, t) for s, t in layout.cells()]
        self.assertEqual(sorted(rows), list(range(layout.n_rows)))
        for row in rows:
            self.assertEqual(layout.row_index(*layout.cell(row)), row)

    def test_valid_predicting_count_closed_forms(self):
        for T in range(1, 13):
            for n in range(1, T + 1):
                layout = StreamLayout(T, n)
                self.assertEqual(len(layout.valid_predicting_cells()), sum(min(t, n) for t in range(1, T + 1)))
            self.assertEqual(StreamLayout(T, T).valid_predicting_count, T * (T + 1) // 2)

    def test_rejects_more_streams_than_positions(self):
        with self.assertRaises(LayoutError):
            StreamLayout(2, 3)

    def test_for_target_caps_streams(self):
        self.assertEqual(StreamLayout.for_target(3, 8), StreamLayout(3, 3))


class VisibleSetTests(SimpleTestCase):
    """Exemplos de visibilidade do stream principal e dos streams de predição"""

    def setUp(self):
        self.layout = StreamLayout(4, 4)

    def test_first_stream_sees_golden_prefix(self):
        self.assertEqual(visible_set(self.layout, 1, 4), {(0, 1), (0, 2), (0, 3), (1, 4)})

    def test_second_stream_mixes_golden_and_mask(self):
        self.assertEqual(visible_set(self.layout, 2, 4), {(0, 1), (0, 2), (1, 3), (2, 4)})

    def test_diagonal_sees_only_masks(self):
        self.assertEqual(visible_set(self.layout, 4, 4), {(1, 1), (2, 2), (3, 3), (4, 4)})

    def test_first_cell_sees_itself(self):
        self.assertEqual(visible_set(self.layout, 1, 1), {(1, 1)})

    def test_main_stream_is_causal(self):
        self.assertEqual(visible_set(self.layout, 0, 3), {(0, 1), (0, 2), (0, 3)})

    def test_invalid_cell(self):
        with self.assertRaisesMessage(LayoutError, 'invalid stream cell'):
            visible_set(StreamLayout(3, 3), 3, 2)
        with self.assertRaisesMessage(LayoutError, 'invalid stream cell'):
            visible_set(StreamLayout(3, 3), 4, 3)

    def test_golden_prefix_count(self):
        for T in range(1, 10):
            for n in range(1, T + 1):
                layout = StreamLayout(T, n)
                for s, t in layout.valid_predicting_cells():
                    golden = [c for c in visible_set(layout, s, t) if c[0] == 0]
                    self.assertEqual(len(golden), t - s)

    def test_cross_stream_ordering(self):
        layout = StreamLayout(8, 6)
        for s, t in layout.valid_predicting_cells():
            visible = visible_set(layout, s, t)
            self.assertFalse(any(ks > s for ks, _ in visible))
            for j in range(1, s):
                self.assertLessEqual(sum(1 for ks, _ in visible if ks == j), 1)


class BuildMaskTests(SimpleTestCase):
    """Construtor rápido contra o oráculo célula a célula"""

    def test_matches_oracle_exhaustively(self):
        for T in range(1, 13):
            for n in range(1, T + 1):
                layout = StreamLayout(T, n)
                fast = build_mask(layout)
                slow = mask_from_visible_sets(layout)
                self.assertTrue(torch.equal(fast.bias, slow.bias), f'T={T} n={n}')
                self.assertTrue(torch.equal(fast.valid, slow.valid))

    def test_zero_entry_counts(self):
        self.assertEqual(int(build_mask(StreamLayout(2, 2)).visible.sum()), 8)
        self.assertEqual(int(build_mask(StreamLayout(1, 1)).visible.sum()), 2)

    def test_sentinel_is_finite(self):
        bias = build_mask(StreamLayout(4, 4)).bias
        self.assertTrue(torch.isfinite(bias).all())
        self.assertEqual(float(bias.min()), MASK_SENTINEL)

    def test_every_valid_row_sees_itself(self):
        mask = build_mask(StreamLayout(6, 4))
        for row in range(mask.layout.n_rows):
            if mask.valid[row]:
                self.assertTrue(mask.visible[row, row])

    def test_first_stream_is_strictly_causal_over_main(self):
        for T in range(1, 9):
            layout = StreamLayout(T, 1)
            mask = build_mask(layout)
            block = mask.visible[layout.stream_rows(1), layout.stream_rows(0)]
            expected = torch.tril(torch.ones(T, T, dtype=torch.bool), diagonal=-1)
            self.assertTrue(torch.equal(block, expected))

    def test_diagonal_sees_no_main_stream(self):
        layout = StreamLayout(7, 7)
        mask = build_mask(layout)
        for s in range(1, 8):
            row = layout.row_index(s, s)
            self.assertFalse(mask.visible[row, layout.stream_rows(0)].any())

    def test_invalid_rows_fully_masked(self):
        layout = StreamLayout(3, 3)
        mask = build_mask(layout)
        for s, t in [(2, 1), (3, 1), (3, 2)]:
            row = layout.row_index(s, t)
            self.assertFalse(mask.visible[row].any())
            self.assertFalse(mask.visible[:, row].any())

    def test_block_covers_previous_streams_only(self):
        layout = StreamLayout(5, 3)
        mask = build_mask(layout)
        block = mask.block(2, 2)
        self.assertEqual(tuple(block.shape), (5, 15))
        # Nada visível além do cache concatenado até o stream 2
        self.assertFalse(mask.visible[layout.stream_rows(2), 15:].any())


class ValidityMaskTests(SimpleTestCase):

    def test_counts(self):
        self.assertEqual(int(validity_mask(StreamLayout(4, 4))[4:].sum()), 10)
        self.assertEqual(int(validity_mask(StreamLayout(4, 2))[4:].sum()), 7)

    def test_single_invalid_cell(self):
        layout = StreamLayout(3, 3)
        self.assertFalse(validity_mask(layout)[layout.row_index(3, 2)])


class RenderMaskTests(SimpleTestCase):

    def test_text_grid_counts(self):
        layout = StreamLayout(2, 1)
        text = render_text(layout)
        rows = text.split('\n')
        self.assertEqual(len(rows), 4)
        self.assertTrue(all(len(r) == 4 for r in rows))
        expected = sum(len(visible_set(layout, s, t)) for s, t in layout.cells() if layout.is_valid(s, t))
        self.assertEqual(expected, 6)
        self.assertEqual(text.count('#'), expected)

    def test_invalid_rows_hatched(self):
        layout = StreamLayout(3, 3)
        rows = render_text(layout).split('\n')
        self.assertEqual(rows[layout.row_index(3, 1)], 'x' * 12)
        self.assertEqual(rows[layout.row_index(3, 2)], 'x' * 12)

    def test_svg_is_byte_stable(self):
        layout = StreamLayout(4, 3)
        self.assertEqual(render_svg(layout).encode(), render_svg(layout).encode())

    def test_svg_cell_count(self):
        svg = render_mask(StreamLayout(4, 4))[1]
        self.assertEqual(svg.count('<rect '), 20 * 20)
        self.assertTrue(svg.startswith('<?xml'))

    @override_settings(BANG_TOOLKIT={'MASK_RENDER_MAX_CELLS': 10})
    def test_size_cap(self):
        with self.assertRaisesMessage(LayoutError, 'size cap exceeded'):
            render_mask(StreamLayout(4, 4))
