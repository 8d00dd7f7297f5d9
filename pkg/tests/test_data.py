import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from free_gzsl.data import (AccessLog, BadMagic, BadVersion, BundleError, InvariantViolation, SyntheticSpec,
                            Truncated, TrailingBytes, bundles_equal, check_bundle, generate_synthetic_bundle,
                            load_bundle, load_csv_bundle, make_bundle, mixing_matrix, read_features,
                            save_bundle, validate_bundle)


def test_default_spec_counts():
    b = generate_synthetic_bundle(SyntheticSpec(), 0)
    assert b.features.shape == (720, 64)
    assert np.isin(b.labels, b.seen_classes).sum() == 480
    assert np.isin(b.labels, b.unseen_classes).sum() == 240
    assert len(b.train_idx) == 8 * 42 and len(b.test_seen_idx) == 8 * 18
    assert len(b.test_unseen_idx) == 240
    assert validate_bundle(b) == []


def test_zero_noise_samples_identical_per_class():
    spec = SyntheticSpec(noise=0.0)
    b = generate_synthetic_bundle(spec, 1)
    for c in range(b.n_classes):
        rows = b.features[b.labels == c]
        assert np.all(rows == rows[0])
    expect = (b.attributes.astype(np.float64) @ mixing_matrix(spec).T).astype(np.float32)
    np.testing.assert_allclose(b.features[b.labels == 3][0], expect[3], rtol=1e-5, atol=1e-6)


def test_nearest_attribute_recovers_labels_at_zero_noise():
    spec = SyntheticSpec(noise=0.0)
    b = generate_synthetic_bundle(spec, 2)
    w = mixing_matrix(spec)
    protos = b.attributes.astype(np.float64) @ w.T
    means = np.stack([b.features[b.labels == c].mean(0) for c in range(b.n_classes)])
    d = ((means[:, None, :] - protos[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(d.argmin(1), np.arange(b.n_classes))


def test_generator_pure_in_spec_and_seed():
    a = generate_synthetic_bundle(SyntheticSpec(), 5)
    assert bundles_equal(a, generate_synthetic_bundle(SyntheticSpec(), 5))
    assert not bundles_equal(a, generate_synthetic_bundle(SyntheticSpec(), 6))


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(n_seen=0)
    with pytest.raises(ValueError):
        SyntheticSpec(feat_dim=8, attr_dim=16)
    with pytest.raises(ValueError):
        SyntheticSpec(noise=-1.0)


def _random_bundle(seed):
    r = np.random.default_rng(seed)
    spec = SyntheticSpec(n_seen=int(r.integers(1, 5)), n_unseen=int(r.integers(1, 4)),
                         feat_dim=int(r.integers(3, 9)), attr_dim=int(r.integers(1, 4)),
                         samples_per_class=int(r.integers(2, 8)), noise=float(r.uniform(0, 1)),
                         mixing_seed=int(r.integers(0, 100)))
    name = "".join(r.choice(list("abcXYZ-é_"), int(r.integers(0, 6))))
    return generate_synthetic_bundle(spec, int(r.integers(0, 2**31)), name=name)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(tmp_path_factory, seed):
    b = _random_bundle(seed)
    path = tmp_path_factory.mktemp("rt") / "b.gzb"
    save_bundle(b, path)
    assert bundles_equal(load_bundle(path), b)


def test_layout_header(tmp_path):
    b = generate_synthetic_bundle(SyntheticSpec(n_seen=2, n_unseen=1, feat_dim=4, attr_dim=2,
                                                samples_per_class=3), 0, name="")
    save_bundle(b, tmp_path / "b")
    raw = (tmp_path / "b").read_bytes()
    assert raw[:4] == b"GZB1"
    header = struct.unpack("<10I", raw[4:44])
    assert header == (1, 9, 4, 3, 2, 2, 1, len(b.train_idx), len(b.test_seen_idx), 3)
    assert raw[44:48] == struct.pack("<I", b.seen_classes[0])
    assert raw[-4:] == b"\x00\x00\x00\x00"  # empty name record


def test_load_without_name_record(tmp_path):
    b = generate_synthetic_bundle(SyntheticSpec(n_seen=2, n_unseen=1, feat_dim=4, attr_dim=2,
                                                samples_per_class=3), 0, name="")
    save_bundle(b, tmp_path / "b")
    (tmp_path / "c").write_bytes((tmp_path / "b").read_bytes()[:-4])
    assert bundles_equal(load_bundle(tmp_path / "c"), b)


def _good_bytes(tmp_path):
    b = generate_synthetic_bundle(SyntheticSpec(n_seen=3, n_unseen=2, feat_dim=5, attr_dim=2,
                                                samples_per_class=4), 0, name="x")
    save_bundle(b, tmp_path / "good")
    return b, (tmp_path / "good").read_bytes()


def corrupt_files(tmp_path):
    """(bytes, expected error class) for five hand-built broken files."""
    b, good = _good_bytes(tmp_path)
    bad_version = good[:4] + struct.pack("<I", 2) + good[8:]
    overlap = make_bundle(b.features, b.labels, b.attributes, b.seen_classes, b.unseen_classes,
                          b.train_idx, np.concatenate([b.test_seen_idx, b.train_idx[:1]]),
                          b.test_unseen_idx, "x")
    save_bundle(overlap, tmp_path / "overlap")
    return [
        (b"GZB2" + good[4:], BadMagic),
        (bad_version, BadVersion),
        (good[:len(good) // 2], Truncated),
        (good + b"\x01\x02", TrailingBytes),
        ((tmp_path / "overlap").read_bytes(), InvariantViolation),
    ]


def test_corrupt_files_raise_their_codes(tmp_path):
    cases = corrupt_files(tmp_path)
    codes = set()
    for i, (blob, err) in enumerate(cases):
        p = tmp_path / f"bad{i}"
        p.write_bytes(blob)
        with pytest.raises(err) as info:
            load_bundle(p)
        assert isinstance(info.value, BundleError)
        codes.add(info.value.code)
    assert codes == {"BAD_MAGIC", "BAD_VERSION", "TRUNCATED", "TRAILING_BYTES", "INVARIANT_VIOLATION"}


def test_empty_file_is_bad_magic(tmp_path):
    (tmp_path / "e").write_bytes(b"")
    with pytest.raises(BadMagic):
        load_bundle(tmp_path / "e")


def _tiny(**over):
    args = dict(features=np.zeros((4, 2)), labels=[0, 0, 1, 2], attributes=np.ones((3, 2)),
                seen=[0, 1], unseen=[2], train_idx=[0, 2], test_seen_idx=[1], test_unseen_idx=[3])
    args.update(over)
    return make_bundle(**args)


def test_validate_clean_tiny_bundle():
    assert validate_bundle(_tiny()) == []


def test_validate_seen_unseen_overlap_names_id():
    v = validate_bundle(_tiny(unseen=[2, 1]))
    assert len(v) == 1 and "[1]" in v[0] and "disjoint" in v[0]


def test_validate_label_without_attribute_row():
    v = validate_bundle(_tiny(labels=[0, 0, 1, 5]))
    assert any("attribute row" in s and "5" in s for s in v)


def test_validate_reports_bounds_and_split_labels():
    assert any("bounds" in s for s in validate_bundle(_tiny(train_idx=[0, 9])))
    v = validate_bundle(_tiny(test_seen_idx=[3], test_unseen_idx=[1]))
    assert any("test_seen_idx labels" in s for s in v)
    with pytest.raises(InvariantViolation) as info:
        check_bundle(_tiny(unseen=[1, 2]))
    assert info.value.violations


def test_validate_never_raises_on_malformed():
    v = validate_bundle(_tiny(features=np.zeros(4), attributes=np.zeros(3)))
    assert v


def test_cub_like_statistics_validate():
    r = np.random.default_rng(0)
    n = 200
    labels = np.arange(n)
    seen, unseen = np.arange(150), np.arange(150, 200)
    b = make_bundle(r.standard_normal((n, 8)), labels, r.uniform(size=(n, 312)), seen, unseen,
                    np.arange(0, 100), np.arange(100, 150), np.arange(150, 200), name="CUB-like")
    assert validate_bundle(b) == []
    assert b.attr_dim == 312 and len(b.seen_classes) == 150 and len(b.unseen_classes) == 50


def test_csv_import(tmp_path):
    (tmp_path / "features.csv").write_text("1,2\n3,4\n5,6\n7,8\n")
    (tmp_path / "labels.csv").write_text("0\n0\n1\n2\n")
    (tmp_path / "attributes.csv").write_text("1,0\n0,1\n1,1\n")
    (tmp_path / "splits.csv").write_text("index,split\n0,train\n2,train\n1,test_seen\n3,test_unseen\n")
    b = load_csv_bundle(tmp_path, name="hand")
    expect = _tiny(features=[[1, 2], [3, 4], [5, 6], [7, 8]], attributes=[[1, 0], [0, 1], [1, 1]])
    assert bundles_equal(b, make_bundle(expect.features, expect.labels, expect.attributes,
                                        expect.seen_classes, expect.unseen_classes, [0, 2], [1], [3],
                                        name="hand"))
    np.testing.assert_array_equal(b.seen_classes, [0, 1])
    np.testing.assert_array_equal(b.unseen_classes, [2])
    np.testing.assert_array_equal(b.features[3], [7, 8])
    (tmp_path / "splits.csv").write_text("index,split\n0,validation\n")
    with pytest.raises(InvariantViolation):
        load_csv_bundle(tmp_path)


def test_access_log_records_purposes():
    b = _tiny()
    log = AccessLog()
    read_features(b, [0, 2], "stage1:train", log)
    read_features(b, np.array([3]), "eval:unseen", log)
    np.testing.assert_array_equal(log.indices("stage1"), [0, 2])
    np.testing.assert_array_equal(log.indices("eval"), [3])
    assert log.indices("stage2").size == 0
