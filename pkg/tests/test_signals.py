import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pbgcn.errors import EmptyReferenceSet, InvalidSpec, NonFiniteCoordinate, ShapeMismatch
from pbgcn.signals import (
    D_R,
    D_RT,
    D_T,
    J_LOC,
    FeatureTensor,
    SkeletonSequence,
    compute_relative_coords,
    compute_signal,
    compute_temporal_displacements,
    concat_signals,
    joint_locations,
    signal_channels,
)

coords_strategy = arrays(
    np.float64,
    st.tuples(st.integers(1, 2), st.integers(1, 6), st.integers(1, 5), st.just(3)),
    elements=st.floats(-10, 10, allow_nan=False),
)
shift_strategy = arrays(np.float64, 3, elements=st.floats(-100, 100, allow_nan=False))


def test_relative_coords_by_hand():
    seq = SkeletonSequence(np.array([[[0, 0, 0], [1, 0, 0], [0, 2, 0]]], dtype=float))
    out = compute_relative_coords(seq, [0])
    assert out.channel_semantics == D_R
    assert np.array_equal(out.data[:, 0, :, 0].T, [[0, 0, 0], [1, 0, 0], [0, 2, 0]])
    shifted = SkeletonSequence(seq.coords + 5.0)
    assert np.array_equal(compute_relative_coords(shifted, [0]).data, out.data)


def test_relative_coords_block_order_follows_references():
    rng = np.random.default_rng(0)
    seq = SkeletonSequence(rng.normal(size=(1, 4, 5, 3)))
    out = compute_relative_coords(seq, [3, 1]).data
    assert out.shape[0] == 6
    c = seq.coords[0]
    assert np.allclose(out[0:3, :, :, 0], (c - c[:, 3:4]).transpose(2, 0, 1))
    assert np.allclose(out[3:6, :, :, 0], (c - c[:, 1:2]).transpose(2, 0, 1))


@given(coords_strategy, st.data())
def test_reference_self_block_is_zero(coords, data):
    seq = SkeletonSequence(coords)
    r = data.draw(st.integers(0, seq.num_vertices - 1))
    out = compute_relative_coords(seq, [r]).data
    assert np.all(out[:, :, r] == 0)


def test_relative_coords_errors():
    seq = SkeletonSequence(np.zeros((1, 2, 3, 3)))
    with pytest.raises(EmptyReferenceSet):
        compute_relative_coords(seq, [])
    with pytest.raises(InvalidSpec):
        compute_relative_coords(seq, [3])


def test_temporal_displacement_by_hand():
    seq = SkeletonSequence(np.array([[[[0, 0, 0]], [[1, 2, 3]]]], dtype=float))
    out = compute_temporal_displacements(seq).data
    assert np.array_equal(out[:, 0, 0, 0], [1, 2, 3])
    assert np.array_equal(out[:, 1, 0, 0], [0, 0, 0])


def test_static_sequence_has_zero_displacement():
    frame = np.random.default_rng(1).normal(size=(7, 3))
    seq = SkeletonSequence(np.broadcast_to(frame, (2, 10, 7, 3)))
    assert not np.any(compute_temporal_displacements(seq).data)


def test_constant_velocity():
    w = np.array([0.1, -0.2, 0.3])
    T = 6
    coords = np.arange(T)[:, None, None] * w + np.zeros((1, 4, 3))
    out = compute_temporal_displacements(SkeletonSequence(coords)).data
    assert np.allclose(out[:, :-1, :, 0].transpose(1, 2, 0), w, atol=1e-15)
    assert not np.any(out[:, -1])


@given(coords_strategy)
def test_displacements_telescope(coords):
    seq = SkeletonSequence(coords)
    dt = compute_temporal_displacements(seq).data  # [3, T, V, M]
    total = dt.sum(axis=1).transpose(2, 1, 0)  # [M, V, 3]
    assert np.max(np.abs(total - (coords[:, -1] - coords[:, 0]))) < 1e-9


@given(coords_strategy, shift_strategy)
def test_translation_invariance(coords, shift):
    seq = SkeletonSequence(coords)
    moved = SkeletonSequence(coords + shift)
    V = seq.num_vertices
    refs = list(range(min(V, 2)))
    assert np.max(np.abs(compute_relative_coords(moved, refs).data - compute_relative_coords(seq, refs).data)) < 1e-9
    assert np.max(np.abs(compute_temporal_displacements(moved).data - compute_temporal_displacements(seq).data)) < 1e-9


def test_per_frame_translation_leaves_relative_coords_unchanged():
    rng = np.random.default_rng(2)
    coords = rng.normal(size=(1, 5, 4, 3))
    per_frame = rng.normal(size=(1, 5, 1, 3))
    a = compute_relative_coords(SkeletonSequence(coords), [0, 2]).data
    b = compute_relative_coords(SkeletonSequence(coords + per_frame), [0, 2]).data
    assert np.max(np.abs(a - b)) < 1e-9


def test_concat_shapes_and_tag(ntu):
    rng = np.random.default_rng(3)
    seq = SkeletonSequence(rng.normal(size=(1, 8, 25, 3)))
    dr = compute_relative_coords(seq, ntu.graph.reference_joints)
    dt = compute_temporal_displacements(seq)
    both = concat_signals(dr, dt)
    assert dr.shape[0] == 12 and both.shape == (15, 8, 25, 1)
    assert both.channel_semantics == D_RT
    assert np.array_equal(compute_signal(seq, D_RT, ntu.graph.reference_joints).data, both.data)


def test_concat_with_empty_is_identity():
    a = FeatureTensor(np.ones((3, 2, 4, 1)), J_LOC)
    empty = FeatureTensor(np.zeros((0, 2, 4, 1)), J_LOC)
    assert concat_signals(a, empty) is a
    assert concat_signals(empty, a) is a


def test_concat_shape_mismatch():
    a = FeatureTensor(np.ones((3, 2, 4, 1)), D_R)
    b = FeatureTensor(np.ones((3, 3, 4, 1)), D_T)
    with pytest.raises(ShapeMismatch):
        concat_signals(a, b)


@pytest.mark.parametrize("tag, refs, C", [(J_LOC, 4, 3), (D_T, 4, 3), (D_R, 4, 12), (D_RT, 4, 15), (D_RT, 2, 9)])
def test_channel_counts(tag, refs, C):
    assert signal_channels(tag, refs) == C
    seq = SkeletonSequence(np.random.default_rng(0).normal(size=(1, 3, 6, 3)))
    assert compute_signal(seq, tag, list(range(refs))).data.shape[0] == C


def test_unknown_signal():
    with pytest.raises(InvalidSpec):
        signal_channels("angles", 2)
    with pytest.raises(InvalidSpec):
        compute_signal(SkeletonSequence(np.zeros((1, 2, 2, 3))), "angles")


def test_bodies_padded_and_masked():
    seq = SkeletonSequence(np.ones((1, 3, 4, 3)))
    out = joint_locations(seq, max_bodies=2)
    assert out.data.shape == (3, 3, 4, 2)
    assert out.body_mask.tolist() == [True, False]
    assert not np.any(out.data[..., 1])
    with pytest.raises(ShapeMismatch):
        joint_locations(SkeletonSequence(np.ones((3, 3, 4, 3))), max_bodies=2)


def test_sequence_validation():
    with pytest.raises(NonFiniteCoordinate):
        SkeletonSequence(np.array([[[np.nan, 0, 0]]]))
    with pytest.raises(ShapeMismatch):
        SkeletonSequence(np.zeros((2, 3, 4, 2)))
    seq = SkeletonSequence(np.zeros((3, 4, 3)))
    assert (seq.num_bodies, seq.num_frames, seq.num_vertices) == (1, 3, 4)
