"""
Perda do decodificador n-stream decomposta em partes AR, ponte e NAR.

Cada célula válida (s, t) contribui uma entropia cruzada suavizada de
logits(s, t) contra y_t. A célula (1, 1) conta uma única vez, na parte AR.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from bang_toolkit.exceptions import ConfigError, ShapeError
from masking.layout import StreamLayout


@dataclass
class LossBreakdown:
    """NLL total separado em AR, ponte e NAR, com contagem de termos"""

    total: torch.Tensor
    ar_part: torch.Tensor
    bridging_part: torch.Tensor
    nar_part: torch.Tensor
    ar_terms: int
    bridging_terms: int
    nar_terms: int
    valid: torch.Tensor
    cell_losses: torch.Tensor

    @property
    def n_terms(self):
        return self.ar_terms + self.bridging_terms + self.nar_terms

    @property
    def mean(self):
        """Perda média por célula válida (normalização do treino)"""
        return self.total / max(self.n_terms, 1)

    def as_log_dict(self):
        # Partes normalizadas pelo total de termos: somam loss_total
        terms = max(self.n_terms, 1)
        return {
            'loss_total': self.total.detach().item() / terms,
            'loss_ar': self.ar_part.detach().item() / terms,
            'loss_bridge': self.bridging_part.detach().item() / terms,
            'loss_nar': self.nar_part.detach().item() / terms,
        }


def _check_smoothing(smoothing):
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f'label smoothing must be in [0, 1), got {smoothing}')


def _as_batch(tensor, dims):
    return tensor.unsqueeze(0) if tensor.dim() == dims - 1 else tensor


def _length_mask(golden, lengths):
    width = golden.size(1)
    if lengths is None:
        return torch.ones_like(golden, dtype=torch.bool)
    lengths = torch.as_tensor(lengths, dtype=torch.long)
    return torch.arange(1, width + 1)[None, :] <= lengths[:, None]


def smoothed_cross_entropy(logits, targets, smoothing):
    """(1 - eps) * NLL + eps * média de -log p sobre o vocabulário, por posição"""
    log_probs = F.log_softmax(logits, dim=-1)
    nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if smoothing == 0.0:
        return nll
    return (1.0 - smoothing) * nll + smoothing * (-log_probs.mean(dim=-1))


def bang_loss(logits, golden_tokens, layout, smoothing=0.0, lengths=None):
    """Perda sobre todas as células preditoras válidas do layout"""
    _check_smoothing(smoothing)
    logits = _as_batch(logits, 3)
    golden = _as_batch(torch.as_tensor(golden_tokens, dtype=torch.long), 2)
    batch, width = golden.shape
    if width != layout.target_len or logits.size(1) != layout.n_rows or logits.size(0) != batch:
        raise ShapeError(
            f'logits {tuple(logits.shape)} / targets {tuple(golden.shape)} do not match layout {layout}'
        )

    n = layout.n_streams
    predicting = logits[:, width:].reshape(batch, n, width, logits.size(-1))
    targets = golden[:, None, :].expand(batch, n, width)
    cells = smoothed_cross_entropy(predicting, targets, smoothing)

    s = torch.arange(1, n + 1)[:, None]
    t = torch.arange(1, width + 1)[None, :]
    valid = (t >= s)[None] & _length_mask(golden, lengths)[:, None, :]
    ar = valid & (s == 1)[None]
    nar = valid & ((s == t) & (t >= 2))[None]
    bridging = valid & ~ar & ~nar

    cells = cells.masked_fill(~valid, 0.0)
    ar_part = cells.masked_fill(~ar, 0.0).sum()
    bridging_part = cells.masked_fill(~bridging, 0.0).sum()
    nar_part = cells.masked_fill(~nar, 0.0).sum()
    return LossBreakdown(
        total=ar_part + bridging_part + nar_part,
        ar_part=ar_part,
        bridging_part=bridging_part,
        nar_part=nar_part,
        ar_terms=int(ar.sum()),
        bridging_terms=int(bridging.sum()),
        nar_terms=int(nar.sum()),
        valid=valid,
        cell_losses=cells,
    )


def ar_loss(logits, golden_tokens, smoothing=0.0, lengths=None):
    """NLL com teacher forcing: bang_loss com um único stream de predição"""
    golden = torch.as_tensor(golden_tokens, dtype=torch.long)
    layout = StreamLayout(golden.size(-1), 1)
    return bang_loss(logits, golden, layout, smoothing, lengths).total


def nar_breakdown(all_mask_logits, golden_tokens, smoothing=0.0, lengths=None):
    """Perda de uma passada só com [MASK]: todos os termos contam como NAR"""
    _check_smoothing(smoothing)
    logits = _as_batch(all_mask_logits, 3)
    golden = _as_batch(torch.as_tensor(golden_tokens, dtype=torch.long), 2)
    if logits.shape[:2] != golden.shape:
        raise ShapeError(f'logits {tuple(logits.shape)} do not match targets {tuple(golden.shape)}')

    valid = _length_mask(golden, lengths)
    cells = smoothed_cross_entropy(logits, golden, smoothing).masked_fill(~valid, 0.0)
    nar_part = cells.sum()
    zero = nar_part.new_zeros(())
    return LossBreakdown(
        total=zero + zero + nar_part,
        ar_part=zero,
        bridging_part=zero,
        nar_part=nar_part,
        ar_terms=0,
        bridging_terms=0,
        nar_terms=int(valid.sum()),
        valid=valid[:, None, :],
        cell_losses=cells[:, None, :],
    )


def nar_loss(all_mask_logits, golden_tokens, smoothing=0.0, lengths=None):
    """Soma das entropias cruzadas por posição, incluindo o [EOS] quando presente"""
    return nar_breakdown(all_mask_logits, golden_tokens, smoothing, lengths).total
