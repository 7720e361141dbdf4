"""
Label schemas: the 13-class joint vocabulary, the multilabel head layout, and the
joint -> multilabel mapping table.

The mapping table is a reconstruction following the published merge rules
(arterial subphases unified, late and transitional phases combined).
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Literal, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, field_validator, model_validator

from app.errors import LabelError

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100

JOINT_CLASSES: List[str] = [
    "T1_PRE", "T1_ART", "T1_PORTVEN", "T1_LATE", "T1_PORTVEN_COR",
    "T2_AX", "T2_COR", "DWI", "ADC", "DIXON_IN", "DIXON_OPP", "MRCP", "LOCALIZER",
]

SEQUENCE_TYPES = ["T1", "T2", "DWI", "ADC", "DIXON_IN", "DIXON_OPP"]
PLANES = ["AX", "COR", "SAG"]
CONTRAST_PHASES = ["PRE", "ART", "PORTVEN", "TRANS", "HEPA", "NONE"]
BINARY_CLASSES = ["NO", "YES"]

HeadKind = Literal["softmax", "binary", "flags"]


class HeadSpec(BaseModel):
    """One output head. softmax: one-of-C, binary: one logit, flags: one logit per class (one-vs-rest)."""
    name: str
    kind: HeadKind
    classes: List[str]

    @field_validator("classes")
    @classmethod
    def _unique(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("head class list is empty")
        if len(set(value)) != len(value):
            raise ValueError(f"duplicate class names in {value}")
        return value

    @property
    def size(self) -> int:
        return 1 if self.kind == "binary" else len(self.classes)


class LabelSchema(BaseModel):
    mode: Literal["joint", "multilabel"]
    joint_classes: List[str]
    heads: List[HeadSpec]

    @model_validator(mode="after")
    def _check(self) -> "LabelSchema":
        if len(set(self.joint_classes)) != len(self.joint_classes):
            raise ValueError("duplicate joint class names")
        if self.mode == "multilabel" and self.joint_classes != JOINT_CLASSES:
            raise ValueError("multilabel mode needs the 13-class joint vocabulary to map targets")
        return self

    @classmethod
    def joint(cls, classes: Optional[Sequence[str]] = None) -> "LabelSchema":
        classes = list(classes) if classes is not None else list(JOINT_CLASSES)
        return cls(mode="joint", joint_classes=classes,
                   heads=[HeadSpec(name="joint", kind="softmax", classes=classes)])

    @classmethod
    def multilabel(cls) -> "LabelSchema":
        return cls(
            mode="multilabel",
            joint_classes=list(JOINT_CLASSES),
            heads=[
                HeadSpec(name="sequence_type", kind="flags", classes=SEQUENCE_TYPES),
                HeadSpec(name="mrcp", kind="binary", classes=BINARY_CLASSES),
                HeadSpec(name="plane", kind="softmax", classes=PLANES),
                HeadSpec(name="contrast_phase", kind="softmax", classes=CONTRAST_PHASES),
                HeadSpec(name="localizer", kind="binary", classes=BINARY_CLASSES),
            ],
        )

    @classmethod
    def build(cls, mode: str, classes: Sequence[str]) -> "LabelSchema":
        if mode == "multilabel":
            if list(classes) != JOINT_CLASSES:
                raise LabelError(f"multilabel mode needs the joint vocabulary {JOINT_CLASSES}, got {list(classes)}")
            return cls.multilabel()
        return cls.joint(classes)

    @property
    def num_classes(self) -> int:
        return len(self.joint_classes)

    def head(self, name: str) -> HeadSpec:
        for spec in self.heads:
            if spec.name == name:
                return spec
        raise KeyError(name)


@dataclass(frozen=True)
class MultilabelTarget:
    sequence_type: FrozenSet[str]
    mrcp: bool
    plane: Optional[str]           # None = not applicable (localizer)
    contrast_phase: str
    localizer: bool


def _t(seq, plane, phase, mrcp=False, localizer=False) -> MultilabelTarget:
    return MultilabelTarget(frozenset(seq), mrcp, plane, phase, localizer)


DUKE_TO_MULTILABEL: Dict[str, MultilabelTarget] = {
    "T1_PRE": _t({"T1"}, "AX", "PRE"),
    "T1_ART": _t({"T1"}, "AX", "ART"),
    "T1_PORTVEN": _t({"T1"}, "AX", "PORTVEN"),
    "T1_LATE": _t({"T1"}, "AX", "TRANS"),
    "T1_PORTVEN_COR": _t({"T1"}, "COR", "PORTVEN"),
    "T2_AX": _t({"T2"}, "AX", "NONE"),
    "T2_COR": _t({"T2"}, "COR", "NONE"),
    "DWI": _t({"DWI"}, "AX", "NONE"),
    "ADC": _t({"ADC"}, "AX", "NONE"),
    "DIXON_IN": _t({"T1", "DIXON_IN"}, "AX", "PRE"),
    "DIXON_OPP": _t({"T1", "DIXON_OPP"}, "AX", "PRE"),
    "MRCP": _t({"T2"}, "COR", "NONE", mrcp=True),
    "LOCALIZER": _t(set(), None, "NONE", localizer=True),
}


def map_duke_to_multilabel(joint_label: str) -> MultilabelTarget:
    if joint_label not in DUKE_TO_MULTILABEL:
        raise LabelError(f"Unknown joint label '{joint_label}'")
    return DUKE_TO_MULTILABEL[joint_label]


def encode_targets(labels: Sequence[int], schema: LabelSchema) -> Dict[str, torch.Tensor]:
    """
    Per-head target tensors for a batch of joint class indices.
    Softmax heads get int64 indices (IGNORE_INDEX when not applicable), binary and flag heads float.
    """
    n = schema.num_classes
    for label in labels:
        if not 0 <= int(label) < n:
            raise LabelError(f"label index {label} outside [0, {n})")

    if schema.mode == "joint":
        return {"joint": torch.tensor([int(l) for l in labels], dtype=torch.long)}

    mapped = [map_duke_to_multilabel(schema.joint_classes[int(l)]) for l in labels]
    return {
        "sequence_type": torch.tensor(
            [[1.0 if s in t.sequence_type else 0.0 for s in SEQUENCE_TYPES] for t in mapped]
        ).reshape(len(mapped), len(SEQUENCE_TYPES)),
        "mrcp": torch.tensor([[float(t.mrcp)] for t in mapped]).reshape(len(mapped), 1),
        "plane": torch.tensor(
            [PLANES.index(t.plane) if t.plane is not None else IGNORE_INDEX for t in mapped], dtype=torch.long
        ),
        "contrast_phase": torch.tensor([CONTRAST_PHASES.index(t.contrast_phase) for t in mapped], dtype=torch.long),
        "localizer": torch.tensor([[float(t.localizer)] for t in mapped]).reshape(len(mapped), 1),
    }


def decode_predictions(logits: Dict[str, torch.Tensor], schema: LabelSchema) -> Dict[str, np.ndarray]:
    """softmax heads -> class index, binary heads -> 0/1, flag heads -> (N, K) 0/1"""
    out: Dict[str, np.ndarray] = {}
    for spec in schema.heads:
        block = logits[spec.name].detach().cpu()
        if spec.kind == "softmax":
            out[spec.name] = block.argmax(dim=-1).numpy()
        elif spec.kind == "binary":
            out[spec.name] = (block.reshape(-1) > 0).long().numpy()
        else:
            out[spec.name] = (block > 0).long().numpy()
    return out


def targets_as_arrays(targets: Dict[str, torch.Tensor], schema: LabelSchema) -> Dict[str, np.ndarray]:
    """Targets in the same layout decode_predictions produces"""
    out: Dict[str, np.ndarray] = {}
    for spec in schema.heads:
        t = targets[spec.name].detach().cpu()
        if spec.kind == "binary":
            out[spec.name] = t.reshape(-1).long().numpy()
        else:
            out[spec.name] = t.long().numpy()
    return out
