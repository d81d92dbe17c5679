"""Low-rank adapters on the attention projections of a frozen backbone."""

import logging
from dataclasses import dataclass
from typing import Iterable, Tuple

import torch
import torch.nn as nn

from .constants import ADAPTER_RANK, ADAPTER_ALPHA, ADAPTER_TARGETS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = ADAPTER_RANK
    alpha: float = ADAPTER_ALPHA
    targets: Tuple[str, ...] = ADAPTER_TARGETS

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"Adapter rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ValueError(f"Adapter alpha must be positive, got {self.alpha}")
        if not self.targets:
            raise ValueError("Adapter needs at least one target projection")

    @classmethod
    def from_config(cls, section) -> "AdapterConfig":
        return cls(rank=section.rank, alpha=section.alpha, targets=tuple(section.targets))

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


class LoRALinear(nn.Module):
    """
    Frozen linear layer plus a scaled low-rank delta.

    y = base(x) + (alpha / rank) * x @ down @ up, with up zero-initialized so
    the wrapped layer starts out identical to the base layer.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scale = alpha / rank
        self.down = nn.Parameter(torch.empty(base.in_features, rank))
        self.up = nn.Parameter(torch.zeros(rank, base.out_features))
        nn.init.normal_(self.down, std=1.0 / rank)
        for param in self.base.parameters():
            param.requires_grad = False

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.down @ self.up) * self.scale


def get_parent_module(model: nn.Module, full_name: str) -> nn.Module:
    parent = model
    for name in full_name.split(".")[:-1]:
        parent = getattr(parent, name)
    return parent


def _attention_modules(backbone: nn.Module):
    return [(name, module) for name, module in backbone.named_modules()
            if hasattr(module, "query") and hasattr(module, "output")]


def wrap_with_adapters(backbone: nn.Module, cfg: AdapterConfig) -> nn.Module:
    """
    Freeze the backbone and patch every targeted attention projection.

    The condition projection, when present, stays trainable.

    Raises:
        ValueError: If a target is not a linear projection of the attention layers
    """
    attention = _attention_modules(backbone)
    if not attention:
        raise ValueError("Backbone has no attention layers to adapt")
    for target in cfg.targets:
        for name, module in attention:
            if not isinstance(getattr(module, target, None), nn.Linear):
                raise ValueError(f"Unknown adapter target '{target}' in {name or 'backbone'}")

    for param in backbone.parameters():
        param.requires_grad = False

    patched = 0
    for name, module in attention:
        for target in cfg.targets:
            setattr(module, target, LoRALinear(getattr(module, target), cfg.rank, cfg.alpha))
            patched += 1

    condition = getattr(backbone, "condition", None)
    if condition is not None:
        for param in condition.parameters():
            param.requires_grad = True

    backbone.adapter_config = cfg
    logger.info("Attached %d rank-%d adapters (%.2f%% trainable)",
                patched, cfg.rank, 100.0 * trainable_fraction(backbone))
    return backbone


def adapters(model: nn.Module) -> Iterable[LoRALinear]:
    return [m for m in model.modules() if isinstance(m, LoRALinear)]


def adapter_parameter_count(model: nn.Module) -> int:
    return sum(m.down.numel() + m.up.numel() for m in adapters(model))


def trainable_parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def trainable_fraction(model: nn.Module) -> float:
    total = sum(p.numel() for p in model.parameters())
    if total == 0:
        raise ValueError("Model has no parameters")
    return trainable_parameter_count(model) / total
