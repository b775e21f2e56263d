"""Training objectives for both stages, plus the ablation loss variants."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .tensor import DimensionError, Tensor
from .transforms import DctPlan, dct2d, dwt2d


@dataclass
class LossReport:
    total: Tensor
    components: dict[str, float] = field(default_factory=dict)
    iteration: int | None = None

    def value(self) -> float:
        return self.total.item()


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes differ: {a.shape} vs {b.shape}")


def loss_ka(i_mt: Tensor, i_gt: Tensor) -> Tensor:
    """Stage-1 objective: mean L1 between the aggregated image and ground truth."""
    _check_same(i_mt, i_gt, "loss_ka")
    return T.l1_loss(i_mt, i_gt)


def loss_stu(i_stu: Tensor, i_gt: Tensor) -> Tensor:
    _check_same(i_stu, i_gt, "loss_stu")
    return T.l1_loss(i_stu, i_gt)


def wavelet_terms(x: Tensor, y: Tensor, level: int = 1, detail_only: bool = False) -> dict[str, Tensor]:
    """Per-subband mean L1 distances, keyed ``"<band>_<level>"``."""
    _check_same(x, y, "wavelet loss")
    px, py = dwt2d(x, level), dwt2d(y, level)
    keys = px.detail_keys() if detail_only else list(px.keys())
    return {f"{band}_{k}": T.l1_loss(px[(k, band)], py[(k, band)]) for k, band in keys}


def loss_dis(i_stu: Tensor, i_mt: Tensor, level: int = 1) -> tuple[Tensor, dict[str, float]]:
    """Wavelet distillation loss: average of the ``3K+1`` subband L1 terms."""
    terms = wavelet_terms(i_stu, i_mt, level)
    assert len(terms) == 3 * level + 1
    total = _average(list(terms.values()))
    return total, {name: t.item() for name, t in terms.items()}


def loss_dis_highfreq(i_stu: Tensor, i_mt: Tensor, level: int = 1) -> tuple[Tensor, dict[str, float]]:
    """Detail-subband-only variant (the LL term is dropped)."""
    terms = wavelet_terms(i_stu, i_mt, level, detail_only=True)
    return _average(list(terms.values())), {name: t.item() for name, t in terms.items()}


def loss_dct(i_stu: Tensor, i_mt: Tensor, window: int = 8) -> tuple[Tensor, dict[str, float]]:
    """Mean L1 between blockwise orthonormal DCT coefficients."""
    _check_same(i_stu, i_mt, "loss_dct")
    n, h, w, c = i_stu.shape
    if h % window or w % window:
        raise DimensionError(f"loss_dct: H={h}, W={w} must be divisible by block {window}")
    plan = DctPlan(window)

    def blocks(x):
        y = T.reshape(x, (n, h // window, window, w // window, window, c))
        y = T.permute(y, (0, 1, 3, 2, 4, 5))
        return dct2d(T.reshape(y, (-1, window, window, c)), plan)

    total = T.l1_loss(blocks(i_stu), blocks(i_mt))
    return total, {"dct": total.item()}


def loss_l1_distill(i_stu: Tensor, i_mt: Tensor) -> tuple[Tensor, dict[str, float]]:
    _check_same(i_stu, i_mt, "loss_l1_distill")
    total = T.l1_loss(i_stu, i_mt)
    return total, {"l1": total.item()}


def _average(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))


DISTILL_LOSSES = {
    "wavelet": lambda s, m, level: loss_dis(s, m, level),
    "wavelet-hf": lambda s, m, level: loss_dis_highfreq(s, m, level),
    "dct": lambda s, m, level: loss_dct(s, m),
    "l1": lambda s, m, level: loss_l1_distill(s, m),
}


def loss_total(i_stu: Tensor, i_gt: Tensor, i_mt: Tensor, alpha: float = 0.1, level: int = 1,
               distill: str = "wavelet") -> LossReport:
    """``alpha * L_stu + L_dis`` with every component recorded."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if distill not in DISTILL_LOSSES:
        raise ValueError(f"unknown distillation loss {distill!r}; expected one of {sorted(DISTILL_LOSSES)}")
    l_stu = loss_stu(i_stu, i_gt)
    l_dis, parts = DISTILL_LOSSES[distill](i_stu, i_mt, level)
    total = l_dis if alpha == 0 else l_stu * alpha + l_dis
    comps = {"L_stu": l_stu.item(), "L_dis": l_dis.item()}
    comps.update({f"dis.{k}": v for k, v in parts.items()})
    return LossReport(total, comps)
