"""Dense forward optical flow between consecutive frames.

The built-in estimator is a classical variational solver: brightness-constancy
data term plus a quadratic smoothness term, minimized coarse-to-fine. At each
pyramid level the second frame is warped by the current flow and the increment
is relaxed with the standard update

    u <- u_bar - Ix * (Ix*u_bar + Iy*v_bar + It) / (alpha2 + Ix^2 + Iy^2)

where u_bar/v_bar are 4-neighbour averages and alpha2 is the smoothness
weight. Sweeps run in red-black (checkerboard) order: each half-sweep then
performs exact, decoupled per-pixel minimizations of the discrete energy, so
the energy is non-increasing by construction, which plain simultaneous
(Jacobi) sweeps do not guarantee.

Externally computed flow (e.g. from a learned estimator) can be substituted
through the standard little-endian .flo container handled by
:func:`read_flo` / :func:`write_flo`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    OversizeDimensions,
    SequenceTooShort,
    TruncatedFile,
)
from .imageops import bilinear_resize, to_grayscale, warp_bilinear

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import FrameSequence

FLO_MAGIC = 202021.25
# Middlebury convention: components at or above this magnitude mark unknown flow.
FLO_UNKNOWN_THRESHOLD = 1e9
# Sanity cap for .flo headers; anything larger is treated as a corrupt file.
FLO_MAX_DIMENSION = 100_000

_MIN_FRAME_SIZE = 8
_MIN_PYRAMID_SIZE = 16  # stop coarsening before min(H, W) would drop below 8


@dataclass(frozen=True)
class FlowEstimatorConfig:
    """Settings for the variational solver.

    smoothness_weight is the regularizer alpha^2 in the update rule; the
    default of 100 assumes frames on a 0-255 intensity scale.
    """

    smoothness_weight: float = 100.0
    iterations: int = 200
    convergence_eps: float = 1e-3
    pyramid_levels: int = 3
    max_displacement: float = 1e4

    def validate(self) -> None:
        if self.smoothness_weight <= 0:
            raise ValueError("smoothness_weight must be positive")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be positive")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.max_displacement <= 0:
            raise ValueError("max_displacement must be positive")


@dataclass
class FlowDiagnostics:
    """Solver metadata for one estimated field (finest pyramid level)."""

    converged: bool
    iterations_run: int
    energy_trace: np.ndarray  # energy before iteration 1, then after each sweep


@dataclass
class FlowField:
    """Dense displacement field between two consecutive frames.

    u is horizontal displacement in pixels, v vertical; both are float32 so
    that .flo round trips are bit-exact. validity is False where a file
    marked the flow unknown.
    """

    u: np.ndarray
    v: np.ndarray
    src_index: int = 0
    validity: np.ndarray | None = None
    diagnostics: FlowDiagnostics | None = None

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise DimensionMismatch(
                f"u and v must be 2-D grids of equal shape, got {self.u.shape} vs {self.v.shape}"
            )
        if self.validity is None:
            self.validity = np.ones(self.u.shape, dtype=bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u.astype(np.float64) ** 2 + self.v.astype(np.float64) ** 2)


def _downsample_half(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return bilinear_resize(img, (h + 1) // 2, (w + 1) // 2)


def _build_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Finest-first pyramid; stops early rather than shrink below 8 px."""
    pyr = [img]
    while len(pyr) < levels and min(pyr[-1].shape) >= _MIN_PYRAMID_SIZE:
        pyr.append(_downsample_half(pyr[-1]))
    return pyr


def _neighbor_mean(x: np.ndarray) -> np.ndarray:
    xp = np.pad(x, 1, mode="edge")
    return 0.25 * (xp[:-2, 1:-1] + xp[2:, 1:-1] + xp[1:-1, :-2] + xp[1:-1, 2:])


def _gradients(a: np.ndarray, b_warped: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spatial gradients averaged over both frames; temporal difference."""

    def central(img: np.ndarray, axis: int) -> np.ndarray:
        p = np.pad(img, [(1, 1) if ax == axis else (0, 0) for ax in range(2)], mode="edge")
        if axis == 0:
            return 0.5 * (p[2:, :] - p[:-2, :])
        return 0.5 * (p[:, 2:] - p[:, :-2])

    ix = 0.5 * (central(a, 1) + central(b_warped, 1))
    iy = 0.5 * (central(a, 0) + central(b_warped, 0))
    it = b_warped - a
    return ix, iy, it


def _level_energy(du, dv, ix, iy, it, alpha2) -> float:
    """Discrete energy the sweeps minimize: data term + smoothness term.

    The smoothness term scaling (alpha2/4 per grid edge) is exactly the one
    under which the update formula is the per-pixel minimizer, so the energy
    trace is monotone for red-black sweeps.
    """
    data = float(np.sum((ix * du + iy * dv + it) ** 2))
    smooth = float(
        np.sum(np.diff(du, axis=0) ** 2)
        + np.sum(np.diff(du, axis=1) ** 2)
        + np.sum(np.diff(dv, axis=0) ** 2)
        + np.sum(np.diff(dv, axis=1) ** 2)
    )
    return data + alpha2 * 0.25 * smooth


def _solve_level(
    a: np.ndarray,
    b: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    cfg: FlowEstimatorConfig,
    track_energy: bool,
) -> tuple[np.ndarray, np.ndarray, bool, int, list[float]]:
    """Relax the flow increment at one level, starting from flow (u0, v0)."""
    b_w = warp_bilinear(b, u0, v0)
    ix, iy, it = _gradients(a, b_w)
    alpha2 = cfg.smoothness_weight
    denom = alpha2 + ix**2 + iy**2

    h, w = a.shape
    parity = (np.add.outer(np.arange(h), np.arange(w)) % 2).astype(bool)
    masks = (parity, ~parity)

    du = np.zeros_like(a)
    dv = np.zeros_like(a)
    trace: list[float] = []
    if track_energy:
        trace.append(_level_energy(du, dv, ix, iy, it, alpha2))

    converged = False
    sweeps = 0
    for _ in range(cfg.iterations):
        du_prev = du.copy()
        dv_prev = dv.copy()
        for mask in masks:
            du_bar = _neighbor_mean(du)
            dv_bar = _neighbor_mean(dv)
            frac = (ix * du_bar + iy * dv_bar + it) / denom
            du = np.where(mask, du_bar - ix * frac, du)
            dv = np.where(mask, dv_bar - iy * frac, dv)
        sweeps += 1
        if track_energy:
            trace.append(_level_energy(du, dv, ix, iy, it, alpha2))
        delta = max(float(np.abs(du - du_prev).max()), float(np.abs(dv - dv_prev).max()))
        if delta < cfg.convergence_eps:
            converged = True
            break
    return u0 + du, v0 + dv, converged, sweeps, trace


def estimate_flow(
    frame_a: np.ndarray, frame_b: np.ndarray, cfg: FlowEstimatorConfig | None = None
) -> FlowField:
    """Estimate dense forward flow such that a(x, y) ~ b(x + u, y + v).

    Both frames must be single-channel grids of identical shape with
    H, W >= 8. Never raises on non-convergence; the returned field carries a
    ``diagnostics`` record with the converged flag and the finest-level
    energy trace.
    """
    cfg = cfg or FlowEstimatorConfig()
    cfg.validate()
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
        raise DimensionMismatch(f"frames must be 2-D and equal-shaped, got {a.shape} vs {b.shape}")
    if min(a.shape) < _MIN_FRAME_SIZE:
        raise DimensionMismatch(f"frames must be at least 8x8, got {a.shape}")

    pyr_a = _build_pyramid(a, cfg.pyramid_levels)
    pyr_b = _build_pyramid(b, cfg.pyramid_levels)

    u = np.zeros_like(pyr_a[-1])
    v = np.zeros_like(pyr_a[-1])
    converged = False
    iterations_total = 0
    trace: list[float] = []
    for level in range(len(pyr_a) - 1, -1, -1):
        la, lb = pyr_a[level], pyr_b[level]
        if u.shape != la.shape:
            scale_x = la.shape[1] / u.shape[1]
            scale_y = la.shape[0] / u.shape[0]
            u = bilinear_resize(u, *la.shape) * scale_x
            v = bilinear_resize(v, *la.shape) * scale_y
        finest = level == 0
        u, v, converged, sweeps, level_trace = _solve_level(la, lb, u, v, cfg, track_energy=finest)
        iterations_total += sweeps
        if finest:
            trace = level_trace

    np.clip(u, -cfg.max_displacement, cfg.max_displacement, out=u)
    np.clip(v, -cfg.max_displacement, cfg.max_displacement, out=v)
    diag = FlowDiagnostics(
        converged=converged,
        iterations_run=iterations_total,
        energy_trace=np.asarray(trace, dtype=np.float64),
    )
    return FlowField(u=u, v=v, diagnostics=diag)


def estimate_sequence_flows(seq: "FrameSequence", cfg: FlowEstimatorConfig | None = None) -> list[FlowField]:
    """Forward flow for every consecutive pair: n frames yield n-1 fields.

    RGB frames are converted to luminance before estimation; field t is the
    flow from frame t to frame t+1 and carries src_index = t.
    """
    n = len(seq.frames)
    if n < 2:
        raise SequenceTooShort(f"need at least 2 frames for flow, got {n}")
    grays = [to_grayscale(f) for f in seq.frames]
    fields = []
    for t in range(n - 1):
        f = estimate_flow(grays[t], grays[t + 1], cfg)
        f.src_index = t
        fields.append(f)
    return fields


def write_flo(fld: FlowField, path: str | Path) -> None:
    """Write the standard binary flow container (little-endian).

    Layout: float32 sentinel 202021.25, int32 width, int32 height, then
    height*width interleaved (u, v) float32 pairs in row-major order.
    """
    h, w = fld.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = fld.u
    data[:, :, 1] = fld.v
    with open(path, "wb") as fh:
        fh.write(np.float32(FLO_MAGIC).astype("<f4").tobytes())
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(data.tobytes())


def read_flo(path: str | Path, src_index: int = 0) -> FlowField:
    """Read a .flo file; bit-exact inverse of :func:`write_flo`.

    Components at magnitude >= 1e9 or non-finite follow the unknown-flow
    convention: they are zeroed and masked invalid.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise TruncatedFile(f"{path}: only {len(raw)} bytes, header needs 12")
    magic = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if not np.isclose(magic, FLO_MAGIC):
        raise BadMagic(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC}")
    w, h = (int(x) for x in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if not (0 < w <= FLO_MAX_DIMENSION and 0 < h <= FLO_MAX_DIMENSION):
        raise OversizeDimensions(f"{path}: implausible dimensions {w}x{h}")
    expected = 12 + 8 * h * w
    if len(raw) < expected:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=2 * h * w, offset=12).reshape(h, w, 2)
    u = data[:, :, 0].copy()
    v = data[:, :, 1].copy()
    valid = np.isfinite(u) & np.isfinite(v) & (np.abs(u) < FLO_UNKNOWN_THRESHOLD) & (
        np.abs(v) < FLO_UNKNOWN_THRESHOLD
    )
    u[~valid] = 0.0
    v[~valid] = 0.0
    return FlowField(u=u, v=v, src_index=src_index, validity=valid)
