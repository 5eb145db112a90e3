import logging
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import part_energy_classifier
from pbgcn import errors
from pbgcn.dataio import (
    RecordingMeta,
    SplitSpec,
    SyntheticSpec,
    fit_length,
    format_recording_name,
    generate_synthetic_dataset,
    load_dataset,
    load_split_spec,
    make_split,
    parse_recording_name,
    parse_skeleton_file,
    read_record,
    save_dataset,
    serialize_skeleton_file,
    split_from_table,
    write_record,
)
from pbgcn.signals import SkeletonSequence, compute_temporal_displacements

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@pytest.fixture(scope="module")
def manifest(fixtures_dir):
    return tomllib.loads((fixtures_dir / "manifest.toml").read_text())


def parse_outcome(path):
    try:
        seq = parse_skeleton_file(path.read_bytes(), max_bodies=2)
    except errors.ParseError as exc:
        return type(exc).__name__, None
    return "ok", seq


# ----------------------------------------------------------- skeleton files


def test_fixture_corpus_outcomes(fixtures_dir, manifest):
    files = sorted(p.name for p in (fixtures_dir / "skeleton").glob("*.skeleton"))
    assert files == sorted(manifest["skeleton"])
    for name, expected in manifest["skeleton"].items():
        outcome, seq = parse_outcome(fixtures_dir / "skeleton" / name)
        assert outcome == expected["outcome"], name
        if seq is not None:
            assert list(seq.coords.shape) == expected["shape"], name


def test_hand_written_fixture_values(fixtures_dir):
    seq = parse_skeleton_file((fixtures_dir / "skeleton/valid_1body.skeleton").read_bytes())
    want = np.array([
        [[0.1, 0.2, 3.5], [-0.25, 0.75, 3.125], [1, -2, 4]],
        [[0.5, 0.0, 3.0], [0.125, 1e-3, -2.5], [-1, 2, 0]],
    ])
    assert np.array_equal(seq.coords[0], want)


def test_missing_bodies_are_zero_filled(fixtures_dir):
    seq = parse_skeleton_file((fixtures_dir / "skeleton/valid_2body.skeleton").read_bytes())
    assert np.array_equal(seq.coords[1, 0], [[5, 5, 5], [6, 6, 6]])
    assert not np.any(seq.coords[1, 1:]) and not np.any(seq.coords[:, 2])


def test_round_trip_on_valid_fixtures(fixtures_dir, manifest):
    for name, expected in manifest["skeleton"].items():
        if expected["outcome"] != "ok":
            continue
        seq = parse_skeleton_file((fixtures_dir / "skeleton" / name).read_bytes())
        again = parse_skeleton_file(serialize_skeleton_file(seq))
        assert np.array_equal(again.coords, seq.coords), name


@given(st.integers(1, 2), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_round_trip_random(M, T, V, seed):
    rng = np.random.default_rng(seed)
    coords = rng.normal(size=(M, T, V, 3)) * 10.0 ** rng.integers(-8, 8)
    seq = SkeletonSequence(coords)
    assert np.array_equal(parse_skeleton_file(serialize_skeleton_file(seq)).coords, coords)


def test_joint_count_constraint():
    text = "1\n1\ninfo\n2\n0 0 0\n1 1 1\n"
    with pytest.raises(errors.JointCountMismatch):
        parse_skeleton_file(text, num_joints=25)
    assert parse_skeleton_file(text, num_joints=2).num_vertices == 2


def test_body_limit_is_configurable(fixtures_dir):
    data = (fixtures_dir / "skeleton/too_many_bodies.skeleton").read_bytes()
    assert parse_skeleton_file(data, max_bodies=3).num_bodies == 3


# ---------------------------------------------------------- recording names


def test_recording_names(manifest):
    for name, expected in manifest["names"].items():
        if expected["outcome"] == "ok":
            assert parse_recording_name(name) == RecordingMeta(*expected["meta"]), name
        else:
            with pytest.raises(getattr(errors, expected["outcome"])):
                parse_recording_name(name)


def test_recording_name_examples():
    meta = parse_recording_name("S001C002P003R001A011")
    assert (meta.camera, meta.performer, meta.action) == (2, 3, 10)
    assert parse_recording_name("S017C003P020R002A060", num_classes=60).action == 59
    with pytest.raises(errors.PatternMismatch):
        parse_recording_name("S017C003P020R002A061", num_classes=60)


@given(st.tuples(*[st.integers(0, 999)] * 4), st.integers(0, 998))
def test_recording_name_round_trip(ids, action):
    meta = RecordingMeta(*ids, action)
    assert parse_recording_name(format_recording_name(meta)) == meta


# ------------------------------------------------------------------ records


def test_record_round_trip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(2, 3, 4, 3))
    write_record(tmp_path / "a.rec", arr)
    blob = (tmp_path / "a.rec").read_bytes()
    assert blob[:4] == b"PBRC" and len(blob) == 4 + 4 + 4 + 4 * 4 + arr.size * 8
    assert np.array_equal(read_record(tmp_path / "a.rec"), arr)


def test_record_errors(tmp_path):
    (tmp_path / "x.rec").write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(errors.MalformedHeader):
        read_record(tmp_path / "x.rec")
    write_record(tmp_path / "y.rec", np.ones((2, 2)))
    (tmp_path / "y.rec").write_bytes((tmp_path / "y.rec").read_bytes()[:-8])
    with pytest.raises(errors.MalformedHeader):
        read_record(tmp_path / "y.rec")


# ------------------------------------------------------------------ datasets


def test_dataset_round_trip(tmp_path, ntu):
    spec = SyntheticSpec(train_per_class=2, test_per_class=1, frames=4)
    seqs = generate_synthetic_dataset(spec, ntu.graph, ntu.scheme("four"))
    save_dataset(tmp_path, seqs)
    loaded = load_dataset(tmp_path)
    assert len(loaded) == len(seqs)
    for a, b in zip(seqs, loaded):
        assert np.array_equal(a.coords, b.coords)
        assert (a.label, a.meta) == (b.label, b.meta)


def test_skeleton_directory_skips_bad_samples(tmp_path, fixtures_dir, caplog):
    src = fixtures_dir / "skeleton"
    (tmp_path / "S001C001P001R001A001.skeleton").write_bytes((src / "valid_1body.skeleton").read_bytes())
    (tmp_path / "S001C002P002R001A003.skeleton").write_bytes((src / "valid_2body.skeleton").read_bytes())
    (tmp_path / "S001C001P001R001A002.skeleton").write_bytes((src / "truncated.skeleton").read_bytes())
    (tmp_path / "S001C001P001R001A004.skeleton").write_bytes((src / "nan_coordinate.skeleton").read_bytes())
    (tmp_path / "notes.skeleton").write_bytes((src / "valid_1body.skeleton").read_bytes())
    with caplog.at_level(logging.WARNING, logger="pbgcn.dataio"):
        seqs = load_dataset(tmp_path)
    assert [s.label for s in seqs] == [0, 2]
    assert seqs[1].meta.camera == 2
    assert "skipped 3" in caplog.text


def test_indexed_dataset_skips_missing_files(tmp_path, ntu, caplog):
    spec = SyntheticSpec(num_classes=2, train_per_class=2, test_per_class=0, frames=3)
    seqs = generate_synthetic_dataset(spec, ntu.graph, ntu.scheme("four"))
    save_dataset(tmp_path, seqs)
    victim = sorted(tmp_path.glob("*.rec"))[1]
    victim.unlink()
    with caplog.at_level(logging.WARNING, logger="pbgcn.dataio"):
        loaded = load_dataset(tmp_path)
    assert len(loaded) == 3 and "skipped 1" in caplog.text


def test_dataset_root_must_exist(tmp_path):
    with pytest.raises(errors.ConfigParseError):
        load_dataset(tmp_path / "nowhere")


def test_fit_length():
    coords = np.arange(2 * 3 * 1 * 3, dtype=float).reshape(2, 3, 1, 3)
    assert np.array_equal(fit_length(coords, 2), coords[:, :2])
    padded = fit_length(coords, 5)
    assert padded.shape == (2, 5, 1, 3)
    assert np.array_equal(padded[:, 3], coords[:, 2]) and np.array_equal(padded[:, 4], coords[:, 2])


# -------------------------------------------------------------------- splits


def _metas(performers=(), cameras=()):
    n = max(len(performers), len(cameras))
    performers = performers or (1,) * n
    cameras = cameras or (1,) * n
    return [RecordingMeta(1, c, p, 1, 0) for p, c in zip(performers, cameras)]


def test_cross_subject_example():
    train, held = make_split(_metas(performers=(1, 1, 2, 2)), SplitSpec("cross_subject", (1,)))
    assert train.tolist() == [0, 1] and held.tolist() == [2, 3]


def test_cross_view_example():
    metas = _metas(cameras=(1, 2, 3, 1, 2, 3))
    train, held = make_split(metas, SplitSpec("cross_view", (2, 3)))
    assert held.tolist() == [0, 3] and train.tolist() == [1, 2, 4, 5]


def test_k_fold_example():
    metas = _metas(performers=(1,) * 10)
    helds = [make_split(metas, SplitSpec("k_fold_cross_sample", folds=5, fold=f))[1] for f in range(5)]
    assert all(len(h) == 2 for h in helds)
    assert sorted(np.concatenate(helds).tolist()) == list(range(10))


@given(
    st.lists(st.tuples(st.integers(1, 4), st.integers(1, 3)), min_size=2, max_size=30),
    st.sampled_from(["cross_subject", "cross_view", "k_fold_cross_sample"]),
    st.integers(0, 100),
)
def test_split_is_partition(pairs, protocol, seed):
    metas = _metas(tuple(p for p, _ in pairs), tuple(c for _, c in pairs))
    if protocol == "k_fold_cross_sample":
        spec = SplitSpec(protocol, folds=2, fold=seed % 2, seed=seed)
    else:
        spec = SplitSpec(protocol, (1, 2))
    try:
        train, held = make_split(metas, spec)
    except errors.EmptySide:
        return
    assert not set(train) & set(held)
    assert sorted(np.concatenate([train, held]).tolist()) == list(range(len(metas)))


def test_split_errors(tmp_path):
    with pytest.raises(errors.EmptySide):
        make_split(_metas(performers=(1, 1)), SplitSpec("cross_subject", (1,)))
    with pytest.raises(errors.InvalidSpec):
        SplitSpec("cross_subject")
    with pytest.raises(errors.InvalidSpec):
        SplitSpec("k_fold_cross_sample", folds=1)
    with pytest.raises(errors.InvalidSpec):
        SplitSpec("leave_one_out", (1,))
    with pytest.raises(errors.ConfigParseError):
        split_from_table({"protocol": "cross_view", "ids": [1]})
    (tmp_path / "s.toml").write_text("[split]\nprotocol = \"cross_view\"\ntrain_ids = [2, 3]\n")
    assert load_split_spec(tmp_path / "s.toml") == SplitSpec("cross_view", (2, 3))
    (tmp_path / "t.toml").write_text("protocol = \"cross_view\"\n")
    with pytest.raises(errors.ConfigParseError):
        load_split_spec(tmp_path / "t.toml")


# ------------------------------------------------------------------ synthetic


def test_noise_free_class_zero_moves_only_part_zero(ntu):
    scheme = ntu.scheme("four")
    spec = SyntheticSpec(num_classes=1, train_per_class=3, test_per_class=0, noise=0.0, frames=12)
    part0 = set(scheme.parts[0].vertices)
    for seq in generate_synthetic_dataset(spec, ntu.graph, scheme):
        dt = compute_temporal_displacements(seq).data
        moving = {v for v in range(25) if np.any(dt[:, :, v])}
        assert moving == part0


def test_synthetic_is_deterministic(ntu):
    spec = SyntheticSpec(train_per_class=2, test_per_class=1, frames=6, seed=4)
    a = generate_synthetic_dataset(spec, ntu.graph, ntu.scheme("four"))
    b = generate_synthetic_dataset(spec, ntu.graph, ntu.scheme("four"))
    assert all(x.coords.tobytes() == y.coords.tobytes() for x, y in zip(a, b))
    c = generate_synthetic_dataset(SyntheticSpec(train_per_class=2, test_per_class=1, frames=6, seed=5),
                                   ntu.graph, ntu.scheme("four"))
    assert a[0].coords.tobytes() != c[0].coords.tobytes()


def test_synthetic_counts(ntu):
    spec = SyntheticSpec(num_classes=4, train_per_class=15, test_per_class=5, frames=4)
    seqs = generate_synthetic_dataset(spec, ntu.graph, ntu.scheme("four"))
    assert len(seqs) == 80
    assert np.bincount([s.label for s in seqs]).tolist() == [20] * 4
    train, held = make_split([s.meta for s in seqs], SplitSpec("cross_subject", (1,)))
    assert len(train) == 60 and len(held) == 20


def test_noise_free_synthetic_separable_by_part_energy(ntu):
    scheme = ntu.scheme("four")
    spec = SyntheticSpec(num_classes=4, train_per_class=10, test_per_class=10, noise=0.0, frames=16)
    parts = [p.vertices for p in scheme.parts]
    seqs = generate_synthetic_dataset(spec, ntu.graph, scheme)
    preds = [part_energy_classifier(compute_temporal_displacements(s).data, parts) for s in seqs]
    assert preds == [s.label for s in seqs]


def test_synthetic_errors(ntu):
    with pytest.raises(errors.InvalidSpec):
        SyntheticSpec(num_classes=0)
    with pytest.raises(errors.InvalidSpec):
        SyntheticSpec(frames=1)
    with pytest.raises(errors.InvalidSpec):
        SyntheticSpec(noise=-1.0)
    with pytest.raises(errors.InvalidSpec):
        generate_synthetic_dataset(SyntheticSpec(scheme="four"), ntu.graph, ntu.scheme("two"))
    with pytest.raises(errors.ConfigParseError):
        SyntheticSpec.from_table({"classes": 3})
