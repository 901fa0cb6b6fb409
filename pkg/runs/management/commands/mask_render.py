from pathlib import Path

from masking.layout import StreamLayout
from masking.render import render_mask
from runs.cli import ToolkitCommand


class Command(ToolkitCommand):
    help = 'Desenha a máscara de visibilidade n-stream em texto e SVG'

    def add_command_arguments(self, parser):
        parser.add_argument('--T', dest='target_len', type=int, required=True, help='Tamanho do alvo')
        parser.add_argument('--streams', type=int, required=True, help='Número de streams de predição')
        parser.add_argument('--out', help='Caminho do SVG')

    def run(self, **options):
        layout = StreamLayout(options['target_len'], options['streams'])
        text, svg = render_mask(layout)
        if options['out']:
            path = Path(options['out'])
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(svg, encoding='utf-8')
        self.emit({
            'target_len': layout.target_len,
            'n_streams': layout.n_streams,
            'rows': layout.n_rows,
            'svg': options['out'],
            'grid': text.split('\n'),
        })
