"""Corpus layout, manifests, frame ingestion, and synthetic corpus generation.

A corpus is a directory of per-video frame folders (8-bit RGB PNGs with
zero-padded indices) plus one UTF-8 manifest. Manifest records are
tab-separated::

    id  frame_dir  label  source_tag  frame_count  split

with ``#`` starting a comment line. ``frame_dir`` may be relative, in which
case it resolves against the manifest's own directory, so corpora can be
moved wholesale. A ``# seed=N`` comment records the generation seed.

The synthetic generator builds desk-scale corpora in which real and fake
videos share identical appearance statistics and differ only temporally:
real videos translate a periodic texture at constant velocity, fake videos
perturb that velocity with fresh zero-mean noise every frame.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from .errors import (
    DecodeError,
    DuplicateId,
    EmptySequence,
    InconsistentDimensions,
    InvalidManifest,
    IoError,
    MissingFile,
    ParseError,
    SplitLeak,
)

MANIFEST_FIELDS = ("id", "frame_dir", "label", "source_tag", "frame_count", "split")


class Label(Enum):
    REAL = 0
    FAKE = 1

    @classmethod
    def parse(cls, token: str) -> "Label":
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label {token!r}") from None


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"

    @classmethod
    def parse(cls, token: str) -> "Split":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise ValueError(f"unknown split {token!r}") from None


@dataclass(frozen=True)
class VideoEntry:
    id: str
    frame_dir: Path
    label: Label
    source_tag: str
    frame_count: int


@dataclass(frozen=True)
class Manifest:
    """All entries of one split, plus the seed the corpus was built from."""

    entries: tuple[VideoEntry, ...]
    split: Split
    seed: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> set[str]:
        return {e.id for e in self.entries}


@dataclass
class FrameSequence:
    """Ordered decoded RGB frames of one video (uint8, uniform H x W)."""

    frames: list[np.ndarray]
    id: str
    label: Label

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self) -> tuple[int, int]:
        h, w = self.frames[0].shape[:2]
        return h, w


def _parse_record(line: str, lineno: int) -> tuple[list[str], list[int]]:
    fields = line.split("\t")
    if len(fields) != len(MANIFEST_FIELDS):
        raise ParseError(
            f"expected {len(MANIFEST_FIELDS)} tab-separated fields, got {len(fields)}",
            line=lineno,
            column=1,
        )
    # 1-based character column where each field starts, for error reporting
    cols, pos = [], 1
    for f in fields:
        cols.append(pos)
        pos += len(f) + 1
    return fields, cols


def parse_manifest_rows(path: str | Path) -> tuple[list[tuple[VideoEntry, Split]], int]:
    """Parse every record in a manifest file without validating against disk.

    Returns (rows, seed). Raises MissingFile / ParseError / DuplicateId /
    SplitLeak.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    rows: list[tuple[VideoEntry, Split]] = []
    seed = 0
    seen: dict[str, Split] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\n")
        if line.startswith("#"):
            stripped = line[1:].strip()
            if stripped.startswith("seed="):
                try:
                    seed = int(stripped[5:])
                except ValueError:
                    raise ParseError("malformed seed comment", line=lineno) from None
            continue
        if not line.strip():
            continue
        fields, cols = _parse_record(line, lineno)
        vid, frame_dir, label_tok, source_tag, count_tok, split_tok = fields
        try:
            label = Label.parse(label_tok)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, column=cols[2]) from None
        try:
            count = int(count_tok)
        except ValueError:
            raise ParseError(f"frame_count must be an integer, got {count_tok!r}", line=lineno, column=cols[4]) from None
        if count < 0:
            raise ParseError("frame_count must be non-negative", line=lineno, column=cols[4])
        try:
            split = Split.parse(split_tok)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, column=cols[5]) from None
        if vid in seen:
            if seen[vid] is not split:
                raise SplitLeak(f"id {vid!r} appears in splits {seen[vid].value} and {split.value}")
            raise DuplicateId(f"id {vid!r} appears more than once in split {split.value}")
        seen[vid] = split
        dir_path = Path(frame_dir)
        if not dir_path.is_absolute():
            dir_path = path.parent / dir_path
        rows.append((VideoEntry(vid, dir_path, label, source_tag, count), split))
    return rows, seed


def _validate_entry_on_disk(entry: VideoEntry) -> None:
    if not entry.frame_dir.is_dir():
        raise InvalidManifest(f"{entry.id}: frame_dir does not exist: {entry.frame_dir}")
    n_files = len(sorted(entry.frame_dir.glob("*.png")))
    if n_files != entry.frame_count:
        raise InvalidManifest(
            f"{entry.id}: manifest says {entry.frame_count} frames, directory has {n_files}"
        )


def load_manifest(
    path: str | Path, split: Split | None = None, check_frames: bool = True
) -> Manifest:
    """Load and validate one split from a manifest file.

    The whole file is always parsed and cross-split invariants (unique ids,
    no split leakage) are enforced regardless of which split is requested.
    When the file holds a single split, ``split`` may be omitted.
    """
    rows, seed = parse_manifest_rows(path)
    present = {s for _, s in rows}
    if split is None:
        if len(present) > 1:
            raise InvalidManifest(
                f"manifest holds splits {sorted(s.value for s in present)}; specify which to load"
            )
        split = next(iter(present)) if present else Split.TRAIN
    entries = tuple(e for e, s in rows if s is split)
    if check_frames:
        for e in entries:
            _validate_entry_on_disk(e)
    return Manifest(entries=entries, split=split, seed=seed)


def load_all_splits(path: str | Path, check_frames: bool = True) -> dict[Split, Manifest]:
    rows, seed = parse_manifest_rows(path)
    out = {}
    for split in Split:
        entries = tuple(e for e, s in rows if s is split)
        if check_frames:
            for e in entries:
                _validate_entry_on_disk(e)
        out[split] = Manifest(entries=entries, split=split, seed=seed)
    return out


def write_manifest(path: str | Path, rows: list[tuple[VideoEntry, Split]], seed: int) -> None:
    path = Path(path)
    lines = [f"# seed={seed}"]
    for entry, split in rows:
        frame_dir = entry.frame_dir
        try:
            frame_dir = frame_dir.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(
            "\t".join(
                (
                    entry.id,
                    frame_dir.as_posix(),
                    entry.label.name.lower(),
                    entry.source_tag,
                    str(entry.frame_count),
                    split.value,
                )
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_frames(entry: VideoEntry) -> FrameSequence:
    """Decode the entry's PNG frames in filename order.

    Deterministic: the same directory always yields identical pixel data.
    """
    files = sorted(entry.frame_dir.glob("*.png"))
    if not files:
        raise EmptySequence(f"{entry.id}: no frames in {entry.frame_dir}")
    frames = []
    shape = None
    for f in files:
        try:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError) as exc:
            raise DecodeError(f"{entry.id}: cannot decode {f}: {exc}") from exc
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise InconsistentDimensions(
                f"{entry.id}: frame {f.name} is {arr.shape[:2]}, expected {shape[:2]}"
            )
        frames.append(arr)
    return FrameSequence(frames=frames, id=entry.id, label=entry.label)


# --- synthetic corpus -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Desk-scale corpus recipe.

    Both classes draw per-video textures and velocities from the same
    distributions; only the fake class adds per-frame velocity jitter
    (std ``jitter_std`` pixels per axis), so the discriminative signal is
    purely temporal. ``val_fraction`` / ``test_fraction`` carve each class
    into splits; the remainder trains.
    """

    out_dir: Path
    real_count: int = 4
    fake_count: int = 4
    image_size: int = 64
    frame_count: int = 8
    seed: int = 0
    jitter_std: float = 1.0
    speed_range: tuple[float, float] = (0.5, 2.0)
    texture_waves: int = 8
    noise_amp: float = 0.1
    val_fraction: float = 0.0
    test_fraction: float = 0.0

    def validate(self) -> None:
        if self.real_count < 0 or self.fake_count < 0:
            raise ValueError("counts must be non-negative")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.jitter_std < 0:
            raise ValueError("jitter_std must be >= 0")
        if not 0 <= self.val_fraction + self.test_fraction <= 1:
            raise ValueError("val_fraction + test_fraction must lie in [0, 1]")


def _periodic_texture(rng: np.random.Generator, size: int, waves: int, noise_amp: float) -> np.ndarray:
    """Random band-limited texture, exactly periodic on the size x size torus.

    Frequencies are capped at 3 cycles per image so that motion stays within
    the capture range of a 3-level flow pyramid.
    """
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    f = np.zeros((size, size))
    for _ in range(waves):
        fx = int(rng.integers(-3, 4))
        fy = int(rng.integers(-3, 4))
        if fx == 0 and fy == 0:
            fx = 1
        amp = rng.uniform(0.4, 1.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        f += amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) / size + phase)
    if noise_amp > 0:
        noise = gaussian_filter(rng.standard_normal((size, size)), sigma=2.5, mode="wrap")
        peak = np.abs(noise).max()
        if peak > 0:
            f += noise_amp * np.ptp(f) * noise / peak
    f -= f.min()
    span = np.ptp(f)
    if span > 0:
        f /= span
    return f


def _sample_periodic(tex: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate a periodic texture by (+dx, +dy) with wraparound bilinear sampling."""
    size = tex.shape[0]
    ys = (np.arange(size, dtype=np.float64) - dy) % size
    xs = (np.arange(size, dtype=np.float64) - dx) % size
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y1 = (y0 + 1) % size
    x1 = (x0 + 1) % size
    t00 = tex[np.ix_(y0, x0)]
    t01 = tex[np.ix_(y0, x1)]
    t10 = tex[np.ix_(y1, x0)]
    t11 = tex[np.ix_(y1, x1)]
    return (1 - fy) * ((1 - fx) * t00 + fx * t01) + fy * ((1 - fx) * t10 + fx * t11)


def _render_video(rng: np.random.Generator, cfg: SyntheticConfig, fake: bool) -> list[np.ndarray]:
    size = cfg.image_size
    channels = [_periodic_texture(rng, size, cfg.texture_waves, cfg.noise_amp) for _ in range(3)]
    angle = rng.uniform(0.0, 2.0 * np.pi)
    speed = rng.uniform(*cfg.speed_range)
    velocity = np.array([speed * np.cos(angle), speed * np.sin(angle)])
    frames = []
    pos = np.zeros(2)
    for t in range(cfg.frame_count):
        if t > 0:
            step = velocity.copy()
            if fake:
                step += rng.normal(0.0, cfg.jitter_std, size=2)
            pos = pos + step
        img = np.stack(
            [_sample_periodic(ch, pos[0], pos[1]) for ch in channels], axis=-1
        )
        frames.append(np.round(30 + 195 * np.clip(img, 0.0, 1.0)).astype(np.uint8))
    return frames


def _split_for_index(idx: int, count: int, cfg: SyntheticConfig) -> Split:
    n_test = int(round(count * cfg.test_fraction))
    n_val = int(round(count * cfg.val_fraction))
    n_train = count - n_val - n_test
    if idx < n_train:
        return Split.TRAIN
    if idx < n_train + n_val:
        return Split.VAL
    return Split.TEST


def make_synthetic_corpus(cfg: SyntheticConfig) -> Manifest:
    """Write frame directories plus manifest; returns the train-split Manifest.

    The manifest file (``out_dir/manifest.tsv``) holds every split; use
    load_all_splits for the val/test views. Generation is fully
    deterministic: per-video RNG streams derive from (seed, class, index),
    so rerunning with the same config reproduces every PNG byte for byte.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows: list[tuple[VideoEntry, Split]] = []
        for label, count in ((Label.REAL, cfg.real_count), (Label.FAKE, cfg.fake_count)):
            for idx in range(count):
                vid = f"{label.name.lower()}_{idx:04d}"
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, label.value, idx]))
                frames = _render_video(rng, cfg, fake=label is Label.FAKE)
                frame_dir = out / "frames" / vid
                frame_dir.mkdir(parents=True, exist_ok=True)
                for t, frame in enumerate(frames):
                    Image.fromarray(frame, mode="RGB").save(frame_dir / f"frame_{t:04d}.png")
                tag = "synthetic_jitter" if label is Label.FAKE else "synthetic_smooth"
                rows.append((VideoEntry(vid, frame_dir, label, tag, len(frames)), _split_for_index(idx, count, cfg)))
        manifest_path = out / "manifest.tsv"
        write_manifest(manifest_path, rows, cfg.seed)
    except OSError as exc:
        raise IoError(f"cannot write corpus under {out}: {exc}") from exc
    train_entries = tuple(e for e, s in rows if s is Split.TRAIN)
    return Manifest(entries=train_entries, split=Split.TRAIN, seed=cfg.seed)


def ingest_with_decoder(command_template: str, video_path: str | Path, frame_dir: str | Path) -> int:
    """Optional hook: shell out to an external decoder to populate a frame dir.

    ``command_template`` must contain ``{video}`` and ``{out}`` placeholders,
    e.g. ``ffmpeg -i {video} {out}/frame_%04d.png``. Returns the number of
    PNGs present afterwards. The library itself never decodes containers.
    """
    frame_dir = Path(frame_dir)
    frame_dir.mkdir(parents=True, exist_ok=True)
    cmd = command_template.format(video=str(video_path), out=str(frame_dir))
    proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True)
    if proc.returncode != 0:
        raise IoError(f"decoder failed ({proc.returncode}): {proc.stderr.strip()}")
    return len(sorted(frame_dir.glob("*.png")))
