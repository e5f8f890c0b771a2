import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import loop_residual

from flowsleuth.errors import DimensionMismatch, InvalidConfig, TooFewFlows
from flowsleuth.flow import FlowField
from flowsleuth.residual import (
    EncodedInput,
    InputKind,
    NormalizationSpec,
    ResidualField,
    as_flow_field,
    channels_for,
    compute_residuals,
    encode_flow,
    encode_frame,
    encode_residual,
)


def _random_flows(rng, n, h=5, w=7, scale=10.0):
    return [
        FlowField(
            u=rng.normal(0, scale, size=(h, w)).astype(np.float32),
            v=rng.normal(0, scale, size=(h, w)).astype(np.float32),
            src_index=t,
        )
        for t in range(n)
    ]


def test_residuals_match_loop_oracle_bit_exactly():
    rng = np.random.default_rng(0)
    flows = _random_flows(rng, 6)
    residuals = compute_residuals(flows)
    assert len(residuals) == 5
    for t, res in enumerate(residuals):
        du, dv = loop_residual(flows[t].u, flows[t].v, flows[t + 1].u, flows[t + 1].v)
        assert res.du.tobytes() == du.tobytes()
        assert res.dv.tobytes() == dv.tobytes()
        assert res.src_index == t


def test_constant_flows_give_zero_residuals():
    fld = FlowField(u=np.full((4, 4), 2.5), v=np.full((4, 4), -1.25))
    residuals = compute_residuals([fld, fld, fld])
    for res in residuals:
        assert not res.du.any() and not res.dv.any()


def test_linear_ramp_gives_constant_residual():
    # flows t*c have residual exactly c for every consecutive pair
    c_u, c_v = np.float32(0.75), np.float32(-0.5)
    flows = [
        FlowField(u=np.full((3, 3), t * c_u, dtype=np.float32), v=np.full((3, 3), t * c_v, dtype=np.float32))
        for t in range(5)
    ]
    for res in compute_residuals(flows):
        assert np.all(res.du == c_u) and np.all(res.dv == c_v)


def test_count_rule_and_too_few():
    rng = np.random.default_rng(1)
    for n in (2, 3, 7):
        assert len(compute_residuals(_random_flows(rng, n))) == n - 1
    with pytest.raises(TooFewFlows):
        compute_residuals(_random_flows(rng, 1))
    with pytest.raises(TooFewFlows):
        compute_residuals([])


def test_shape_disagreement_rejected():
    a = FlowField(u=np.zeros((4, 4)), v=np.zeros((4, 4)))
    b = FlowField(u=np.zeros((5, 4)), v=np.zeros((5, 4)))
    with pytest.raises(DimensionMismatch):
        compute_residuals([a, b])


@given(st.sampled_from([0.25, 0.5, 2.0, 4.0]), st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_residual_scaling_by_powers_of_two_is_exact(scale, seed):
    # powers of two only touch the float32 exponent, so R(s*F) == s*R(F)
    # holds bitwise, making this a sharp linearity probe
    rng = np.random.default_rng(seed)
    flows = _random_flows(rng, 3, h=4, w=4)
    scaled = [FlowField(u=f.u * np.float32(scale), v=f.v * np.float32(scale)) for f in flows]
    base = compute_residuals(flows)
    res = compute_residuals(scaled)
    for r_base, r_scaled in zip(base, res):
        assert np.array_equal(r_scaled.du, r_base.du * np.float32(scale))
        assert np.array_equal(r_scaled.dv, r_base.dv * np.float32(scale))


def test_residual_field_validation_and_magnitude():
    res = ResidualField(du=np.array([[3.0]]), dv=np.array([[4.0]]))
    assert res.du.dtype == np.float32
    assert float(res.magnitude()[0, 0]) == pytest.approx(5.0)
    with pytest.raises(DimensionMismatch):
        ResidualField(du=np.zeros((2, 2)), dv=np.zeros((3, 2)))


def test_as_flow_field_preserves_values():
    res = ResidualField(du=np.array([[1.5, -2.0]]), dv=np.array([[0.0, 8.0]]), src_index=3)
    fld = as_flow_field(res)
    assert np.array_equal(fld.u, res.du) and np.array_equal(fld.v, res.dv)
    assert fld.src_index == 3


# --- encoders -------------------------------------------------------------


def test_norm_spec_validation():
    NormalizationSpec().validate()
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(InvalidConfig):
            NormalizationSpec(clip=bad).validate()


def test_encode_frame_shape_and_range():
    rng = np.random.default_rng(2)
    frame = rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8)
    enc = encode_frame(frame, 16, NormalizationSpec(), src_index=4)
    assert enc.kind is InputKind.RGB_FRAME
    assert enc.data.shape == (3, 16, 16)
    assert enc.src_index == 4
    assert enc.channels == 3
    assert enc.data.min() >= 0.0 and enc.data.max() <= 1.0


def test_encode_frame_same_size_is_exact_division():
    frame = np.zeros((8, 8, 3), dtype=np.uint8)
    frame[:, :, 0] = 255
    frame[:, :, 1] = 51
    enc = encode_frame(frame, 8, NormalizationSpec())
    assert np.all(enc.data[0] == 1.0)
    assert np.allclose(enc.data[1], 0.2)
    assert np.all(enc.data[2] == 0.0)


def test_encode_frame_rejects_bad_shape():
    with pytest.raises(DimensionMismatch):
        encode_frame(np.zeros((8, 8)), 8, NormalizationSpec())


def test_encode_flow_clip_and_scale():
    u = np.array([[0.0, 4.0], [-16.0, 8.0]])
    v = np.array([[2.0, -2.0], [0.0, -8.0]])
    enc = encode_flow(FlowField(u=u, v=v, src_index=1), 2, NormalizationSpec(clip=8.0))
    assert enc.kind is InputKind.FLOW_MAP
    assert enc.src_index == 1
    assert enc.data.shape == (2, 2, 2)
    assert np.allclose(enc.data[0], [[0.0, 0.5], [-1.0, 1.0]])  # -16 clipped to -8
    assert np.allclose(enc.data[1], [[0.25, -0.25], [0.0, -1.0]])


def test_encode_residual_matches_flow_encoding_of_same_values():
    rng = np.random.default_rng(3)
    du = rng.normal(0, 3, size=(6, 6)).astype(np.float32)
    dv = rng.normal(0, 3, size=(6, 6)).astype(np.float32)
    norm = NormalizationSpec()
    enc_r = encode_residual(ResidualField(du=du, dv=dv, src_index=2), 4, norm)
    enc_f = encode_flow(FlowField(u=du, v=dv, src_index=2), 4, norm)
    assert enc_r.kind is InputKind.FLOW_RESIDUAL
    assert np.array_equal(enc_r.data, enc_f.data)


def test_channels_for():
    assert channels_for(InputKind.RGB_FRAME) == 3
    assert channels_for(InputKind.FLOW_MAP) == 2
    assert channels_for(InputKind.FLOW_RESIDUAL) == 2


@given(st.floats(-20, 20), st.floats(-20, 20))
@settings(max_examples=50, deadline=None)
def test_encoded_values_always_in_unit_interval(u_val, v_val):
    fld = FlowField(u=np.full((4, 4), u_val), v=np.full((4, 4), v_val))
    enc = encode_flow(fld, 4, NormalizationSpec(clip=8.0))
    assert enc.data.min() >= -1.0 and enc.data.max() <= 1.0
