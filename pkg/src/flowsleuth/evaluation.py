"""Score fusion, binary metrics, and per-dataset evaluation reports.

The fused video score is the convex combination P = alpha*P_ori +
beta*P_res with alpha + beta = 1 (default 0.5/0.5) and decisions taken at
a fixed threshold, score >= T meaning Fake. AUC follows the Mann-Whitney
convention: over all Real x Fake pairs, a correctly ordered pair counts 1,
a tie 0.5. F1 treats Fake as the positive class and is defined as 0 when
precision + recall vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Label, Manifest
from .errors import (
    EmptyInput,
    InvalidConfig,
    InvalidWeights,
    ModalityMismatch,
    ParseError,
    SequenceTooShort,
    SingleClass,
    TooFewFlows,
)
from .model import BranchModel, score_video
from .residual import InputKind

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5
    beta: float = 0.5
    threshold: float = 0.5

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise InvalidWeights(f"weights must lie in [0, 1], got alpha={self.alpha} beta={self.beta}")
        if abs(self.alpha + self.beta - 1.0) > WEIGHT_TOL:
            raise InvalidWeights(f"alpha + beta must equal 1, got {self.alpha + self.beta!r}")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfig(f"threshold must lie in (0, 1), got {self.threshold}")


def fuse(p_ori: float, p_res: float, cfg: FusionConfig) -> float:
    """Convex combination of the two branch scores."""
    cfg.validate()
    return cfg.alpha * p_ori + cfg.beta * p_res


def accuracy(scores: list[tuple[float, Label]], threshold: float = 0.5) -> float:
    """Fraction of decisions (score >= threshold -> Fake) matching the label."""
    if not scores:
        raise EmptyInput("no scores")
    hits = sum(1 for s, lab in scores if (s >= threshold) == (lab is Label.FAKE))
    return hits / len(scores)


def auc(scores: list[tuple[float, Label]]) -> float:
    """Mann-Whitney AUC via midranks; ties get half credit."""
    vals = np.array([s for s, _ in scores], dtype=np.float64)
    fake = np.array([lab is Label.FAKE for _, lab in scores])
    n_fake = int(fake.sum())
    n_real = len(scores) - n_fake
    if n_fake == 0 or n_real == 0:
        raise SingleClass(f"AUC needs both classes, got {n_real} real / {n_fake} fake")
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    ranks = np.empty(len(sv))
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[i : j + 1] = 0.5 * (i + j) + 1.0  # 1-based midrank of the tie group
        i = j + 1
    rank_by_item = np.empty(len(sv))
    rank_by_item[order] = ranks
    fake_rank_sum = float(rank_by_item[fake].sum())
    return (fake_rank_sum - n_fake * (n_fake + 1) / 2.0) / (n_fake * n_real)


def f1(scores: list[tuple[float, Label]], threshold: float = 0.5) -> float:
    """F1 with Fake as the positive class; 0 when precision+recall degenerate."""
    if not scores:
        raise EmptyInput("no scores")
    tp = fp = fn = 0
    for s, lab in scores:
        pred_fake = s >= threshold
        if pred_fake and lab is Label.FAKE:
            tp += 1
        elif pred_fake:
            fp += 1
        elif lab is Label.FAKE:
            fn += 1
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    if prec + rec == 0.0:
        return 0.0
    return 2.0 * prec * rec / (prec + rec)


@dataclass(frozen=True)
class ScoreRow:
    video_id: str
    p_ori: float
    p_res: float
    fused: float
    label: Label


@dataclass(frozen=True)
class BranchEval:
    acc: float
    auc: float


@dataclass
class EvalReport:
    dataset_tag: str
    n_real: int
    n_fake: int
    n_skipped_short: int
    acc: float
    auc: float
    f1: float
    per_branch: dict[str, BranchEval]
    fused_scores: list[ScoreRow]
    aggregation: str
    alpha: float
    beta: float
    threshold: float


def branch_scores(
    model: BranchModel, manifest: Manifest, pipeline
) -> tuple[list[tuple[str, float, Label]], int]:
    """Per-video scores of one branch, ordered by id; returns (rows, skipped)."""
    rows = []
    skipped = 0
    for entry in sorted(manifest.entries, key=lambda e: e.id):
        if entry.frame_count < 3:
            skipped += 1
            continue
        try:
            inputs = pipeline.video_inputs(entry, model.modality)
        except (TooFewFlows, SequenceTooShort):
            skipped += 1
            continue
        rows.append((entry.id, score_video(model, inputs), entry.label))
    return rows, skipped


def evaluate_dataset(
    models: tuple[BranchModel, BranchModel],
    manifest: Manifest,
    fusion: FusionConfig,
    pipeline,
    dataset_tag: str | None = None,
) -> EvalReport:
    """Score every video with both branches, fuse, and assemble the report.

    Videos with fewer than 3 frames cannot produce a residual and are
    excluded from all metrics; they only increment n_skipped_short.
    """
    fusion.validate()
    ori_model, res_model = models
    if ori_model.modality is not InputKind.RGB_FRAME:
        raise ModalityMismatch(f"ori branch must take rgb_frame, got {ori_model.modality.value}")
    if res_model.modality is not InputKind.FLOW_RESIDUAL:
        raise ModalityMismatch(f"res branch must take flow_residual, got {res_model.modality.value}")

    rows: list[ScoreRow] = []
    skipped = 0
    for entry in sorted(manifest.entries, key=lambda e: e.id):
        if entry.frame_count < 3:
            skipped += 1
            continue
        try:
            ori_inputs = pipeline.video_inputs(entry, InputKind.RGB_FRAME)
            res_inputs = pipeline.video_inputs(entry, InputKind.FLOW_RESIDUAL)
        except (TooFewFlows, SequenceTooShort):
            skipped += 1
            continue
        p_ori = score_video(ori_model, ori_inputs)
        p_res = score_video(res_model, res_inputs)
        rows.append(ScoreRow(entry.id, p_ori, p_res, fuse(p_ori, p_res, fusion), entry.label))

    if not rows:
        raise EmptyInput("no scorable videos in the manifest")
    fused_pairs = [(r.fused, r.label) for r in rows]
    ori_pairs = [(r.p_ori, r.label) for r in rows]
    res_pairs = [(r.p_res, r.label) for r in rows]
    if dataset_tag is None:
        tags = sorted({e.source_tag for e in manifest.entries})
        dataset_tag = "+".join(tags) if tags else "unknown"
    t = fusion.threshold
    return EvalReport(
        dataset_tag=dataset_tag,
        n_real=sum(1 for r in rows if r.label is Label.REAL),
        n_fake=sum(1 for r in rows if r.label is Label.FAKE),
        n_skipped_short=skipped,
        acc=accuracy(fused_pairs, t),
        auc=auc(fused_pairs),
        f1=f1(fused_pairs, t),
        per_branch={
            "ori": BranchEval(acc=accuracy(ori_pairs, t), auc=auc(ori_pairs)),
            "res": BranchEval(acc=accuracy(res_pairs, t), auc=auc(res_pairs)),
        },
        fused_scores=rows,
        aggregation=ori_model.config.aggregation.value,
        alpha=fusion.alpha,
        beta=fusion.beta,
        threshold=fusion.threshold,
    )


# --- serialization ------------------------------------------------------------

REPORT_HEADER = "flowsleuth-eval-report v1"


def serialize_report(report: EvalReport) -> str:
    """Stable field order, exact float repr; safe to diff byte for byte."""
    lines = [
        REPORT_HEADER,
        f"dataset: {report.dataset_tag}",
        f"n_real: {report.n_real}",
        f"n_fake: {report.n_fake}",
        f"n_skipped_short: {report.n_skipped_short}",
        f"aggregation: {report.aggregation}",
        f"alpha: {report.alpha!r}",
        f"beta: {report.beta!r}",
        f"threshold: {report.threshold!r}",
        f"acc: {report.acc!r}",
        f"auc: {report.auc!r}",
        f"f1: {report.f1!r}",
        f"ori_acc: {report.per_branch['ori'].acc!r}",
        f"ori_auc: {report.per_branch['ori'].auc!r}",
        f"res_acc: {report.per_branch['res'].acc!r}",
        f"res_auc: {report.per_branch['res'].auc!r}",
        "scores:",
    ]
    for r in report.fused_scores:
        lines.append(
            f"{r.video_id}\t{r.p_ori!r}\t{r.p_res!r}\t{r.fused!r}\t{r.label.name.lower()}"
        )
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    lines = text.splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ParseError("not a flowsleuth eval report", line=1)
    kv: dict[str, str] = {}
    rows: list[ScoreRow] = []
    in_scores = False
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if in_scores:
            parts = line.split("\t")
            if len(parts) != 5:
                raise ParseError("score row needs 5 tab-separated fields", line=lineno)
            rows.append(
                ScoreRow(parts[0], float(parts[1]), float(parts[2]), float(parts[3]), Label.parse(parts[4]))
            )
            continue
        if line == "scores:":
            in_scores = True
            continue
        if ": " not in line:
            raise ParseError(f"malformed report line: {line!r}", line=lineno)
        key, val = line.split(": ", 1)
        kv[key] = val
    try:
        return EvalReport(
            dataset_tag=kv["dataset"],
            n_real=int(kv["n_real"]),
            n_fake=int(kv["n_fake"]),
            n_skipped_short=int(kv["n_skipped_short"]),
            acc=float(kv["acc"]),
            auc=float(kv["auc"]),
            f1=float(kv["f1"]),
            per_branch={
                "ori": BranchEval(acc=float(kv["ori_acc"]), auc=float(kv["ori_auc"])),
                "res": BranchEval(acc=float(kv["res_acc"]), auc=float(kv["res_auc"])),
            },
            fused_scores=rows,
            aggregation=kv["aggregation"],
            alpha=float(kv["alpha"]),
            beta=float(kv["beta"]),
            threshold=float(kv["threshold"]),
        )
    except KeyError as exc:
        raise ParseError(f"report is missing field {exc}") from None


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(serialize_report(report), encoding="utf-8")


def load_report(path: str | Path) -> EvalReport:
    return parse_report(Path(path).read_text(encoding="utf-8"))


def write_scores_tsv(report: EvalReport, path: str | Path) -> None:
    """Flat per-video score dump for external analysis."""
    lines = ["# id\tp_ori\tp_res\tfused\tlabel"]
    for r in report.fused_scores:
        lines.append(f"{r.video_id}\t{r.p_ori!r}\t{r.p_res!r}\t{r.fused!r}\t{r.label.name.lower()}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- human-readable tables ----------------------------------------------------


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def render_report_table(rows: list[tuple[str, float, float, float]]) -> str:
    """Headline table: one (dataset, acc, auc, f1) row per line, values x100."""
    out = [f"{'Dataset':<16}{'ACC':>8}{'AUC':>8}{'F1':>8}"]
    for tag, a, u, f in rows:
        out.append(f"{tag:<16}{_pct(a):>8}{_pct(u):>8}{_pct(f):>8}")
    return "\n".join(out)


def render_ablation_table(
    rows: list[tuple[str, BranchEval, BranchEval]], left: str = "Flow", right: str = "Resid"
) -> str:
    """Two-branch comparison table, one (dataset, left branch, right branch) row each."""
    out = [
        f"{'Dataset':<16}{left + ' ACC':>11}{left + ' AUC':>11}{right + ' ACC':>11}{right + ' AUC':>11}"
    ]
    for tag, left_ev, right_ev in rows:
        out.append(
            f"{tag:<16}{_pct(left_ev.acc):>11}{_pct(left_ev.auc):>11}"
            f"{_pct(right_ev.acc):>11}{_pct(right_ev.auc):>11}"
        )
    return "\n".join(out)
