"""Per-parameter trainable flags."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from volclf.errors import ConfigurationError
from volclf.model_zoo.network import parameter_shapes
from volclf.model_zoo.spec import ModelSpec

# last residual stage (its four 3x3 convs plus the conv18 shortcut) and both FCs
RESNET_FINETUNE_LAYERS = (
    "conv16", "bn16", "conv17", "bn17", "conv18", "bn18", "conv19", "bn19", "conv20", "bn20", "fc1", "fc2",
)
PRESETS = ("all_trainable", "none_trainable", "resnet_finetune")


@dataclass(frozen=True)
class FreezeMask:
    trainable: dict[str, bool]

    @property
    def frozen(self) -> list[str]:
        return [k for k, v in self.trainable.items() if not v]

    @property
    def trainable_names(self) -> list[str]:
        return [k for k, v in self.trainable.items() if v]


def apply_freeze(spec: ModelSpec, policy: str | Iterable[str]) -> FreezeMask:
    """Build a mask from a preset name or an explicit list of trainable names.

    List entries may be parameter names (``conv3.weight``) or layer names
    (``conv3``), the latter covering every parameter of that layer.
    """
    names = list(parameter_shapes(spec))
    if isinstance(policy, str):
        if policy == "all_trainable":
            return FreezeMask({n: True for n in names})
        if policy == "none_trainable":
            return FreezeMask({n: False for n in names})
        if policy == "resnet_finetune":
            if spec.arch != "resnet18_slice":
                raise ConfigurationError(f"preset resnet_finetune does not apply to {spec.arch}")
            policy = RESNET_FINETUNE_LAYERS
        else:
            raise ConfigurationError(f"unknown freeze preset {policy!r}; expected one of {PRESETS}")
    wanted = set()
    for entry in policy:
        matched = [n for n in names if n == entry or n.rsplit(".", 1)[0] == entry]
        if not matched:
            raise ConfigurationError(f"freeze policy names unknown parameter {entry!r}")
        wanted.update(matched)
    return FreezeMask({n: n in wanted for n in names})
