"""Shared test utilities: synthetic textures, shifts, and independent oracles.

The oracles here are deliberately written in the dumbest possible style
(explicit loops, no vectorization) so they cannot share a bug with the
library code they check.
"""

import numpy as np


def band_limited_texture(rng: np.random.Generator, size: int = 64, waves: int = 8) -> np.ndarray:
    """Random periodic texture with at most 3 cycles per image side.

    Low frequencies keep every pyramid level of the flow solver informative;
    higher-frequency content aliases at coarse scales and breaks the
    shift-recovery oracle for reasons unrelated to solver correctness.
    """
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    f = np.zeros((size, size))
    for _ in range(waves):
        fx = int(rng.integers(-3, 4))
        fy = int(rng.integers(-3, 4))
        if fx == 0 and fy == 0:
            fx = 1
        f += rng.uniform(0.4, 1.0) * np.sin(
            2.0 * np.pi * (fx * xx + fy * yy) / size + rng.uniform(0, 2 * np.pi)
        )
    f -= f.min()
    span = np.ptp(f)
    if span > 0:
        f /= span
    return 30.0 + 195.0 * f


def shift_periodic(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer toroidal shift: pixel (y, x) moves to (y+dy, x+dx)."""
    return np.roll(np.roll(img, dy, axis=0), dx, axis=1)


def loop_residual(u_a, v_a, u_b, v_b):
    """Elementwise (b - a) with explicit python loops, in float32."""
    h, w = u_a.shape
    du = np.zeros((h, w), dtype=np.float32)
    dv = np.zeros((h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            du[i, j] = np.float32(u_b[i, j]) - np.float32(u_a[i, j])
            dv[i, j] = np.float32(v_b[i, j]) - np.float32(v_a[i, j])
    return du, dv


def confusion_counts(scores, threshold):
    """Brute-force confusion matrix; labels are flowsleuth Labels."""
    tp = fp = tn = fn = 0
    for s, lab in scores:
        pred_fake = s >= threshold
        actually_fake = lab.name == "FAKE"
        if pred_fake and actually_fake:
            tp += 1
        elif pred_fake and not actually_fake:
            fp += 1
        elif not pred_fake and actually_fake:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def pairwise_auc(scores):
    """O(n^2) Mann-Whitney enumeration: 1 per correct pair, 0.5 per tie."""
    fakes = [s for s, lab in scores if lab.name == "FAKE"]
    reals = [s for s, lab in scores if lab.name == "REAL"]
    total = 0.0
    for f in fakes:
        for r in reals:
            if f > r:
                total += 1.0
            elif f == r:
                total += 0.5
    return total / (len(fakes) * len(reals))


def rgb_frames_from_gray(frames):
    """Stack grayscale float frames into uint8 RGB triplets."""
    out = []
    for f in frames:
        g = np.clip(np.round(f), 0, 255).astype(np.uint8)
        out.append(np.stack([g, g, g], axis=-1))
    return out
