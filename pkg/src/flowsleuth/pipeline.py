"""Preprocessing chain: frames -> flows -> residuals -> encoded model inputs.

One EncodingPipeline value fixes every knob that affects what the model
sees (flow estimator settings, frame sampling cap, normalization, input
size), so training and evaluation stay consistent by construction.

Flow fields are the expensive part and are cached under
``<cache>/<video_id>/flow_####.flo`` next to derived ``resid_####.flo``
files. A sidecar JSON records the exact estimator settings; any mismatch
invalidates the entry and forces recomputation. Precomputed flow (e.g.
from an external learned estimator) can be imported from a directory of
the same shape, bypassing the built-in solver entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import FrameSequence, Label, Manifest, VideoEntry, load_frames
from .errors import InvalidConfig, MissingFile, SequenceTooShort, TooFewFlows
from .flow import FlowEstimatorConfig, FlowField, estimate_sequence_flows, read_flo, write_flo
from .residual import (
    EncodedInput,
    InputKind,
    NormalizationSpec,
    ResidualField,
    as_flow_field,
    compute_residuals,
    encode_flow,
    encode_frame,
    encode_residual,
)

SIDECAR_NAME = "flow_config.json"


@dataclass(frozen=True)
class PreprocessResult:
    video_id: str
    n_flows: int
    n_residuals: int
    recomputed: bool


@dataclass
class EncodingPipeline:
    input_size: int = 64
    norm: NormalizationSpec = field(default_factory=NormalizationSpec)
    flow_cfg: FlowEstimatorConfig = field(default_factory=FlowEstimatorConfig)
    max_frames: int = 32
    cache_dir: Path | None = None
    flow_import_dir: Path | None = None

    def __post_init__(self) -> None:
        self.norm.validate()
        self.flow_cfg.validate()
        if self.max_frames < 2:
            raise InvalidConfig(f"max_frames must be >= 2, got {self.max_frames}")
        if self.cache_dir is not None:
            self.cache_dir = Path(self.cache_dir)
        if self.flow_import_dir is not None:
            self.flow_import_dir = Path(self.flow_import_dir)

    # --- frame sampling -----------------------------------------------------

    def sample_indices(self, n: int) -> list[int]:
        """All frames when n <= max_frames, else uniform-stride subsampling."""
        if n <= self.max_frames:
            return list(range(n))
        return [(i * n) // self.max_frames for i in range(self.max_frames)]

    def sampled_frames(self, entry: VideoEntry) -> FrameSequence:
        seq = load_frames(entry)
        idx = self.sample_indices(len(seq))
        if len(idx) == len(seq.frames):
            return seq
        return FrameSequence(frames=[seq.frames[i] for i in idx], id=seq.id, label=seq.label)

    # --- flow cache ----------------------------------------------------------

    def _sidecar_payload(self) -> dict:
        # imported flow must never satisfy a solver-config lookup, and vice
        # versa, so the provenance is part of the cache key
        c = self.flow_cfg
        payload = {
            "smoothness_weight": c.smoothness_weight,
            "iterations": c.iterations,
            "convergence_eps": c.convergence_eps,
            "pyramid_levels": c.pyramid_levels,
            "max_displacement": c.max_displacement,
            "max_frames": self.max_frames,
            "source": "solver",
        }
        if self.flow_import_dir is not None:
            payload["source"] = f"import:{self.flow_import_dir}"
        return payload

    def _cache_valid(self, vdir: Path, expected_flows: int) -> bool:
        sidecar = vdir / SIDECAR_NAME
        if not sidecar.is_file():
            return False
        try:
            stored = json.loads(sidecar.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return False
        if stored != self._sidecar_payload():
            return False
        return len(sorted(vdir.glob("flow_*.flo"))) == expected_flows

    def _read_cached_flows(self, vdir: Path) -> list[FlowField]:
        return [
            read_flo(p, src_index=i)
            for i, p in enumerate(sorted(vdir.glob("flow_*.flo")))
        ]

    def _import_flows(self, entry: VideoEntry) -> list[FlowField]:
        vdir = self.flow_import_dir / entry.id
        files = sorted(vdir.glob("flow_*.flo")) if vdir.is_dir() else []
        if not files:
            raise MissingFile(f"{entry.id}: no flow files to import under {vdir}")
        return [read_flo(p, src_index=i) for i, p in enumerate(files)]

    def _write_cache(self, vdir: Path, flows: list[FlowField], residuals: list[ResidualField]) -> None:
        vdir.mkdir(parents=True, exist_ok=True)
        for stale in list(vdir.glob("flow_*.flo")) + list(vdir.glob("resid_*.flo")):
            stale.unlink()
        for i, fld in enumerate(flows):
            write_flo(fld, vdir / f"flow_{i:04d}.flo")
        for i, res in enumerate(residuals):
            write_flo(as_flow_field(res), vdir / f"resid_{i:04d}.flo")
        # sidecar last: its presence marks the entry complete
        (vdir / SIDECAR_NAME).write_text(
            json.dumps(self._sidecar_payload(), sort_keys=True, indent=1), encoding="utf-8"
        )

    def flows_for(self, entry: VideoEntry) -> list[FlowField]:
        """Flow fields for the sampled frames: imports > cache > solver."""
        if self.flow_import_dir is not None:
            return self._import_flows(entry)
        if self.cache_dir is not None:
            seq = self.sampled_frames(entry)
            vdir = self.cache_dir / entry.id
            if self._cache_valid(vdir, expected_flows=len(seq) - 1):
                return self._read_cached_flows(vdir)
            flows = estimate_sequence_flows(seq, self.flow_cfg)
            self._write_cache(vdir, flows, compute_residuals(flows) if len(flows) >= 2 else [])
            return flows
        return estimate_sequence_flows(self.sampled_frames(entry), self.flow_cfg)

    def residuals_for(self, entry: VideoEntry) -> list[ResidualField]:
        return compute_residuals(self.flows_for(entry))

    def preprocess_entry(self, entry: VideoEntry) -> PreprocessResult:
        """Populate the cache for one video; no-op for valid entries."""
        if self.cache_dir is None:
            raise InvalidConfig("preprocess requires a cache directory")
        vdir = self.cache_dir / entry.id
        if self.flow_import_dir is not None:
            flows = self._import_flows(entry)
            if self._cache_valid(vdir, expected_flows=len(flows)):
                n_resid = len(sorted(vdir.glob("resid_*.flo")))
                return PreprocessResult(entry.id, len(flows), n_resid, recomputed=False)
        else:
            seq = self.sampled_frames(entry)
            if self._cache_valid(vdir, expected_flows=len(seq) - 1):
                n_flows = len(sorted(vdir.glob("flow_*.flo")))
                n_resid = len(sorted(vdir.glob("resid_*.flo")))
                return PreprocessResult(entry.id, n_flows, n_resid, recomputed=False)
            flows = estimate_sequence_flows(seq, self.flow_cfg)
        residuals = compute_residuals(flows) if len(flows) >= 2 else []
        self._write_cache(vdir, flows, residuals)
        return PreprocessResult(entry.id, len(flows), len(residuals), recomputed=True)

    # --- encoding -------------------------------------------------------------

    def video_inputs(self, entry: VideoEntry, kind: InputKind) -> list[EncodedInput]:
        """Everything one video contributes to a branch of the given kind."""
        if kind is InputKind.RGB_FRAME:
            seq = self.sampled_frames(entry)
            return [
                encode_frame(fr, self.input_size, self.norm, src_index=i)
                for i, fr in enumerate(seq.frames)
            ]
        if kind is InputKind.FLOW_MAP:
            return [encode_flow(f, self.input_size, self.norm) for f in self.flows_for(entry)]
        return [encode_residual(r, self.input_size, self.norm) for r in self.residuals_for(entry)]

    def labeled_videos(
        self, manifest: Manifest, kind: InputKind
    ) -> list[tuple[Label, list[EncodedInput]]]:
        """Per-video encoded inputs, skipping videos too short for the kind."""
        out = []
        for entry in sorted(manifest.entries, key=lambda e: e.id):
            try:
                out.append((entry.label, self.video_inputs(entry, kind)))
            except (TooFewFlows, SequenceTooShort):
                continue
        return out

    def labeled_examples(
        self, manifest: Manifest, kind: InputKind
    ) -> tuple[list[tuple[EncodedInput, int]], int]:
        """Flat (input, label) training examples; returns (examples, skipped)."""
        examples: list[tuple[EncodedInput, int]] = []
        skipped = 0
        for entry in sorted(manifest.entries, key=lambda e: e.id):
            try:
                inputs = self.video_inputs(entry, kind)
            except (TooFewFlows, SequenceTooShort):
                skipped += 1
                continue
            examples.extend((enc, entry.label.value) for enc in inputs)
        return examples, skipped
