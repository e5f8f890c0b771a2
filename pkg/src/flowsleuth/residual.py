"""Flow residuals and branch input encoding.

The residual of consecutive flow fields is a straight difference,
``R_t = F_{t+1} - F_t``: the frame-to-frame change of motion. Smooth camera
or object motion yields residuals near zero while frame-wise temporal
inconsistency leaves a strong signature, which is what the temporal branch
feeds on.

Encoders map raw frames, flow fields, or residuals onto fixed-size float
grids that the model consumes. Values are normalized first and resized
second, so the normalization constants are independent of model input size.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, TooFewFlows
from .flow import FlowField
from .imageops import bilinear_resize


class InputKind(Enum):
    RGB_FRAME = "rgb_frame"
    FLOW_MAP = "flow_map"
    FLOW_RESIDUAL = "flow_residual"


@dataclass
class ResidualField:
    """Difference of two consecutive flow fields, float32 like its parents.

    ``src_index`` is the index t of the earlier flow, i.e. the residual
    describes the motion change between transitions t and t+1.
    """

    du: np.ndarray
    dv: np.ndarray
    src_index: int = 0

    def __post_init__(self) -> None:
        self.du = np.asarray(self.du, dtype=np.float32)
        self.dv = np.asarray(self.dv, dtype=np.float32)
        if self.du.ndim != 2 or self.du.shape != self.dv.shape:
            raise DimensionMismatch(
                f"residual components must share a 2-d shape, got {self.du.shape} and {self.dv.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.du.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.du.astype(np.float64), self.dv.astype(np.float64))


def compute_residuals(flows: list[FlowField]) -> list[ResidualField]:
    """Pairwise differences of an ordered flow sequence; n flows -> n-1 residuals."""
    if len(flows) < 2:
        raise TooFewFlows(f"need at least 2 flow fields, got {len(flows)}")
    shape = flows[0].shape
    out = []
    for a, b in zip(flows, flows[1:]):
        if a.shape != shape or b.shape != shape:
            raise DimensionMismatch(
                f"flow fields disagree on shape: {a.shape} vs {b.shape}"
            )
        out.append(ResidualField(du=b.u - a.u, dv=b.v - a.v, src_index=a.src_index))
    return out


def as_flow_field(res: ResidualField) -> FlowField:
    """View a residual as a FlowField, e.g. for .flo debug dumps."""
    return FlowField(u=res.du, v=res.dv, src_index=res.src_index)


@dataclass(frozen=True)
class NormalizationSpec:
    """Value scaling applied before resize.

    Frames map [0, 255] -> [0, 1]. Flow and residual components are clipped
    to [-clip, clip] pixels and scaled to [-1, 1]; the clip keeps rare large
    displacements from dominating the dynamic range.
    """

    clip: float = 8.0

    def validate(self) -> None:
        if not np.isfinite(self.clip) or self.clip <= 0:
            raise InvalidConfig(f"clip must be a positive finite value, got {self.clip}")

    def scale_frame(self, frame: np.ndarray) -> np.ndarray:
        return np.asarray(frame, dtype=np.float64) / 255.0

    def scale_component(self, comp: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(comp, dtype=np.float64), -self.clip, self.clip) / self.clip


@dataclass
class EncodedInput:
    """Model-ready tensor (channels, size, size) plus its provenance."""

    data: np.ndarray
    kind: InputKind
    src_index: int = 0

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def _resize_stack(planes: list[np.ndarray], size: int) -> np.ndarray:
    return np.stack([bilinear_resize(p, size, size) for p in planes], axis=0)


def encode_frame(frame: np.ndarray, size: int, norm: NormalizationSpec, src_index: int = 0) -> EncodedInput:
    """RGB uint8 frame -> 3-channel [0, 1] grid."""
    norm.validate()
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatch(f"expected an H x W x 3 frame, got shape {arr.shape}")
    scaled = norm.scale_frame(arr)
    planes = [scaled[:, :, c] for c in range(3)]
    return EncodedInput(data=_resize_stack(planes, size), kind=InputKind.RGB_FRAME, src_index=src_index)


def encode_flow(fld: FlowField, size: int, norm: NormalizationSpec) -> EncodedInput:
    """Flow field -> 2-channel grid in [-1, 1]."""
    norm.validate()
    planes = [norm.scale_component(fld.u), norm.scale_component(fld.v)]
    return EncodedInput(data=_resize_stack(planes, size), kind=InputKind.FLOW_MAP, src_index=fld.src_index)


def encode_residual(res: ResidualField, size: int, norm: NormalizationSpec) -> EncodedInput:
    """Residual field -> 2-channel grid in [-1, 1]."""
    norm.validate()
    planes = [norm.scale_component(res.du), norm.scale_component(res.dv)]
    return EncodedInput(data=_resize_stack(planes, size), kind=InputKind.FLOW_RESIDUAL, src_index=res.src_index)


def channels_for(kind: InputKind) -> int:
    return 3 if kind is InputKind.RGB_FRAME else 2
