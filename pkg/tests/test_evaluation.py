import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import confusion_counts, pairwise_auc
from flowsleuth.dataset import Label, Manifest, Split, VideoEntry
from flowsleuth.errors import (
    EmptyInput,
    InvalidConfig,
    InvalidWeights,
    ModalityMismatch,
    ParseError,
    SingleClass,
)
from flowsleuth.evaluation import (
    BranchEval,
    EvalReport,
    FusionConfig,
    ScoreRow,
    accuracy,
    auc,
    branch_scores,
    evaluate_dataset,
    f1,
    fuse,
    load_report,
    parse_report,
    render_ablation_table,
    render_report_table,
    serialize_report,
    write_report,
    write_scores_tsv,
)
from flowsleuth.model import BackboneConfig, init_model
from flowsleuth.residual import InputKind

EVAL_CFG = BackboneConfig(input_size=24, stages=((4, 1, 2),), head_hidden=8, seed=0)


def _scores(pairs):
    return [(s, Label.FAKE if lab else Label.REAL) for s, lab in pairs]


def _random_scores(rng, n, tie_prob=0.3):
    pool = [0.1, 0.25, 0.5, 0.75, 0.9]
    out = []
    for _ in range(n):
        s = float(rng.choice(pool)) if rng.random() < tie_prob else float(rng.random())
        out.append((s, Label.FAKE if rng.random() < 0.5 else Label.REAL))
    return out


# --- fusion ----------------------------------------------------------------------


def test_fuse_default_is_plain_average():
    cfg = FusionConfig()
    assert (cfg.alpha, cfg.beta, cfg.threshold) == (0.5, 0.5, 0.5)
    assert fuse(0.9, 0.7, cfg) == pytest.approx(0.8, abs=1e-12)


def test_fuse_degenerate_weights_pass_one_branch_through():
    assert fuse(0.3, 0.9, FusionConfig(alpha=1.0, beta=0.0)) == 0.3
    assert fuse(0.3, 0.9, FusionConfig(alpha=0.0, beta=1.0)) == 0.9
    assert fuse(0.42, 0.42, FusionConfig()) == pytest.approx(0.42, abs=1e-15)


def test_fuse_rejects_bad_weights():
    with pytest.raises(InvalidWeights):
        fuse(0.5, 0.5, FusionConfig(alpha=0.6, beta=0.5))
    with pytest.raises(InvalidWeights):
        FusionConfig(alpha=1.2, beta=-0.2).validate()
    with pytest.raises(InvalidWeights):
        FusionConfig(alpha=0.5, beta=0.5 + 1e-9).validate()
    with pytest.raises(InvalidConfig):
        FusionConfig(threshold=0.0).validate()
    with pytest.raises(InvalidConfig):
        FusionConfig(threshold=1.0).validate()
    # a sum off by no more than the tolerance is accepted
    FusionConfig(alpha=0.5, beta=0.5 + 1e-13).validate()


@given(
    p1=st.floats(0, 1), p2=st.floats(0, 1), q=st.floats(0, 1),
    alpha=st.floats(0.01, 0.99),
)
def test_fuse_is_monotone_in_each_argument(p1, p2, q, alpha):
    cfg = FusionConfig(alpha=alpha, beta=1.0 - alpha)
    lo, hi = min(p1, p2), max(p1, p2)
    assert fuse(lo, q, cfg) <= fuse(hi, q, cfg)
    assert fuse(q, lo, cfg) <= fuse(q, hi, cfg)


# --- accuracy ---------------------------------------------------------------------


def test_accuracy_matches_confusion_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        scores = _random_scores(rng, int(rng.integers(1, 40)))
        tp, fp, tn, fn = confusion_counts(scores, 0.5)
        assert accuracy(scores) == (tp + tn) / len(scores)


def test_accuracy_threshold_boundary_counts_as_fake():
    scores = _scores([(0.5, True), (0.5, False), (0.5, True)])
    # every score sits exactly on the threshold, so every video is called Fake
    assert accuracy(scores) == pytest.approx(2 / 3)


def test_accuracy_empty_input():
    with pytest.raises(EmptyInput):
        accuracy([])


# --- auc -----------------------------------------------------------------------


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 60:
        scores = _random_scores(rng, int(rng.integers(2, 50)))
        labs = {lab for _, lab in scores}
        if len(labs) < 2:
            continue
        assert abs(auc(scores) - pairwise_auc(scores)) <= 1e-12
        checked += 1


def test_auc_perfect_and_inverted_and_tied():
    perfect = _scores([(0.1, False), (0.2, False), (0.8, True), (0.9, True)])
    assert auc(perfect) == 1.0
    inverted = _scores([(0.9, False), (0.8, False), (0.1, True), (0.2, True)])
    assert auc(inverted) == 0.0
    tied = _scores([(0.5, False), (0.5, True), (0.5, False), (0.5, True)])
    assert auc(tied) == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(SingleClass):
        auc(_scores([(0.2, False), (0.4, False)]))
    with pytest.raises(SingleClass):
        auc(_scores([(0.2, True)]))


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=30))
@settings(max_examples=60)
def test_auc_is_invariant_under_increasing_transforms(pairs):
    if len({lab for _, lab in pairs}) < 2:
        return
    scores = _scores(pairs)
    transformed = [(s**3 + 2.0 * s, lab) for s, lab in scores]
    assert abs(auc(scores) - auc(transformed)) <= 1e-12


# --- f1 -------------------------------------------------------------------------


def test_f1_textbook_example():
    # 8 TP, 2 FP, 2 FN -> precision 0.8, recall 0.8 -> F1 0.8
    scores = (
        [(0.9, Label.FAKE)] * 8
        + [(0.9, Label.REAL)] * 2
        + [(0.1, Label.FAKE)] * 2
        + [(0.1, Label.REAL)] * 5
    )
    assert f1(scores) == pytest.approx(0.8)


def test_f1_degenerate_and_perfect():
    assert f1(_scores([(0.1, False), (0.2, True)])) == 0.0  # no predicted positives
    assert f1(_scores([(0.9, True), (0.1, False)])) == 1.0
    with pytest.raises(EmptyInput):
        f1([])


def test_f1_matches_confusion_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        scores = _random_scores(rng, int(rng.integers(1, 40)))
        tp, fp, tn, fn = confusion_counts(scores, 0.5)
        if tp == 0:
            assert f1(scores) == 0.0
        else:
            prec, rec = tp / (tp + fp), tp / (tp + fn)
            assert f1(scores) == pytest.approx(2 * prec * rec / (prec + rec))


# --- dataset evaluation ------------------------------------------------------------


@pytest.fixture(scope="module")
def eval_models():
    ori = init_model(EVAL_CFG, InputKind.RGB_FRAME)
    res = init_model(EVAL_CFG, InputKind.FLOW_RESIDUAL)
    return ori, res


@pytest.fixture(scope="module")
def toy_report(eval_models, toy_splits, toy_pipeline):
    test_manifest = toy_splits[Split.TEST]
    return evaluate_dataset(eval_models, test_manifest, FusionConfig(), toy_pipeline)


def test_evaluate_dataset_counts_and_tag(toy_report):
    assert toy_report.n_real == 2
    assert toy_report.n_fake == 2
    assert toy_report.n_skipped_short == 0
    assert toy_report.dataset_tag == "synthetic_jitter+synthetic_smooth"
    assert toy_report.aggregation == "mean_prob"
    assert len(toy_report.fused_scores) == 4


def test_evaluate_dataset_metrics_recompute_from_rows(toy_report):
    pairs = [(r.fused, r.label) for r in toy_report.fused_scores]
    assert toy_report.acc == accuracy(pairs, toy_report.threshold)
    assert toy_report.auc == auc(pairs)
    assert toy_report.f1 == f1(pairs, toy_report.threshold)
    ori_pairs = [(r.p_ori, r.label) for r in toy_report.fused_scores]
    res_pairs = [(r.p_res, r.label) for r in toy_report.fused_scores]
    assert toy_report.per_branch["ori"].auc == auc(ori_pairs)
    assert toy_report.per_branch["res"].acc == accuracy(res_pairs, toy_report.threshold)
    for r in toy_report.fused_scores:
        assert r.fused == 0.5 * r.p_ori + 0.5 * r.p_res


def test_evaluate_dataset_skips_short_videos(eval_models, toy_splits, toy_pipeline):
    test_manifest = toy_splits[Split.TEST]
    stub = VideoEntry(
        id="zz_short",
        frame_dir=test_manifest.entries[0].frame_dir,
        label=Label.REAL,
        source_tag="synthetic_smooth",
        frame_count=2,
    )
    widened = Manifest(entries=test_manifest.entries + (stub,), split=Split.TEST)
    report = evaluate_dataset(eval_models, widened, FusionConfig(), toy_pipeline)
    assert report.n_skipped_short == 1
    assert report.n_real + report.n_fake == 4
    assert all(r.video_id != "zz_short" for r in report.fused_scores)


def test_evaluate_dataset_rejects_swapped_modalities(eval_models, toy_splits, toy_pipeline):
    ori, res = eval_models
    with pytest.raises(ModalityMismatch):
        evaluate_dataset((res, ori), toy_splits[Split.TEST], FusionConfig(), toy_pipeline)


def test_branch_scores_ordering_and_skip(eval_models, toy_splits, toy_pipeline):
    _, res = eval_models
    rows, skipped = branch_scores(res, toy_splits[Split.TEST], toy_pipeline)
    assert skipped == 0
    ids = [vid for vid, _, _ in rows]
    assert ids == sorted(ids)
    assert all(0.0 < s < 1.0 for _, s, _ in rows)


def test_degenerate_alpha_reduces_to_single_branch(eval_models, toy_splits, toy_pipeline):
    report = evaluate_dataset(
        eval_models, toy_splits[Split.TEST], FusionConfig(alpha=1.0, beta=0.0), toy_pipeline
    )
    for r in report.fused_scores:
        assert r.fused == r.p_ori
    assert report.acc == report.per_branch["ori"].acc
    assert report.auc == report.per_branch["ori"].auc


# --- serialization -----------------------------------------------------------------


def test_report_round_trip_is_byte_exact(toy_report, tmp_path):
    text = serialize_report(toy_report)
    parsed = parse_report(text)
    assert serialize_report(parsed) == text
    p = tmp_path / "report.txt"
    write_report(toy_report, p)
    assert serialize_report(load_report(p)) == text


def test_report_parse_errors():
    with pytest.raises(ParseError):
        parse_report("not a report\n")
    good = serialize_report(_tiny_report())
    with pytest.raises(ParseError):
        parse_report(good.replace("acc: ", "acc ", 1))
    broken_row = good + "only\tthree\tfields\n"
    with pytest.raises(ParseError):
        parse_report(broken_row)
    with pytest.raises(ParseError):
        parse_report("\n".join(l for l in good.splitlines() if not l.startswith("auc:")) + "\n")


def _tiny_report():
    rows = [
        ScoreRow("a", 0.948, 0.995, 0.9715, Label.FAKE),
        ScoreRow("b", 0.1, 0.2, 0.15000000000000002, Label.REAL),
    ]
    return EvalReport(
        dataset_tag="sora",
        n_real=1,
        n_fake=1,
        n_skipped_short=0,
        acc=1.0,
        auc=1.0,
        f1=1.0,
        per_branch={"ori": BranchEval(0.948, 0.97), "res": BranchEval(0.995, 0.99)},
        fused_scores=rows,
        aggregation="mean_prob",
        alpha=0.5,
        beta=0.5,
        threshold=0.5,
    )


def test_scores_tsv_layout(tmp_path):
    p = tmp_path / "scores.tsv"
    write_scores_tsv(_tiny_report(), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "# id\tp_ori\tp_res\tfused\tlabel"
    assert lines[1] == "a\t0.948\t0.995\t0.9715\tfake"
    assert lines[2].endswith("\treal")


# --- tables -----------------------------------------------------------------------


def test_report_table_formats_percentages():
    table = render_report_table([("sora", 0.948, 0.995, 0.945)])
    line = table.splitlines()[1]
    assert "sora" in line
    assert line.split() == ["sora", "94.8", "99.5", "94.5"]


def test_ablation_table_layout():
    rows = [("sora", BranchEval(0.61, 0.655), BranchEval(0.948, 0.995))]
    table = render_ablation_table(rows)
    head, line = table.splitlines()
    assert "Flow ACC" in head and "Resid AUC" in head
    assert line.split() == ["sora", "61.0", "65.5", "94.8", "99.5"]
    custom = render_ablation_table(rows, left="Ori", right="Resid")
    assert "Ori ACC" in custom.splitlines()[0]
