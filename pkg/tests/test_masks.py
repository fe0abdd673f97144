import random

import numpy as np
import pytest

from mask_oracle import oracle_mask, random_pack, worked_pack
from wga.masks import MaskMatrix, build_hybrid_mask, dump_mask, parse_mask, token_arrays, validate_mask
from wga.trainprep import PackedSequence, Segment, SegmentKind as K


def test_worked_example_gen_row():
    m = build_hybrid_mask(worked_pack())
    assert m.row(6) == {2, 3, 4, 5, 6, 7}
    assert m.row(7) == {2, 3, 4, 5, 6, 7}
    assert m.row(2) == {0, 1, 2, 3}
    assert m.row(4) == {0, 1, 2, 3, 4}


def test_pure_causal():
    m = build_hybrid_mask(PackedSequence((Segment(K.DialogText, 3, "a"),)))
    assert np.array_equal(m.bits, np.tril(np.ones((3, 3), dtype=bool)))


def test_two_samples_isolated():
    pack = PackedSequence((Segment(K.DialogText, 4, "a"), Segment(K.DialogText, 4, "b")))
    b = build_hybrid_mask(pack).bits
    assert not b[:4, 4:].any() and not b[4:, :4].any()


def test_matches_oracle_on_random_packs():
    rng = random.Random(7)
    for _ in range(200):
        pack = random_pack(rng)
        assert np.array_equal(build_hybrid_mask(pack).bits, oracle_mask(pack))


def test_compositional():
    rng = random.Random(3)
    for _ in range(50):
        a, b = random_pack(rng, 1), random_pack(rng, 1)
        b = PackedSequence(tuple(Segment(s.kind, s.token_count, "other", s.supervised) for s in b.segments))
        both = build_hybrid_mask(PackedSequence(a.segments + b.segments)).bits
        na = a.total_tokens
        assert np.array_equal(both[:na, :na], build_hybrid_mask(a).bits)
        assert np.array_equal(both[na:, na:], build_hybrid_mask(b).bits)


def test_builder_validator_agree():
    rng = random.Random(11)
    for _ in range(100):
        pack = random_pack(rng)
        m = build_hybrid_mask(pack)
        assert validate_mask(m, pack) == []
        assert validate_mask(m, pack, strict=True) == []


def test_flipped_gen_to_dialog_bit():
    pack = worked_pack()
    bits = build_hybrid_mask(pack).bits.copy()
    bits[6, 0] = True
    (v,) = validate_mask(MaskMatrix(bits), pack)
    assert (v.i, v.j, v.rule) == (6, 0, "gen-restricted")


def test_violation_kinds():
    pack = PackedSequence((Segment(K.DialogText, 2, "a"), Segment(K.DialogText, 2, "b")))
    bits = build_hybrid_mask(pack).bits.copy()
    bits[0, 1] = True
    bits[3, 0] = True
    bits[2, 2] = False
    rules = [(v.i, v.j, v.rule) for v in validate_mask(MaskMatrix(bits), pack)]
    assert rules == [(0, 1, "future"), (2, 2, "diagonal"), (3, 0, "cross-sample")]


def test_identity_strict_vs_default():
    pack = PackedSequence((Segment(K.DialogText, 3, "a"),))
    ident = MaskMatrix(np.eye(3, dtype=bool))
    assert validate_mask(ident, pack) == []
    missing = validate_mask(ident, pack, strict=True)
    assert {(v.i, v.j) for v in missing} == {(1, 0), (2, 0), (2, 1)}
    assert all(v.rule == "missing" for v in missing)


def test_max_report_and_size_check():
    pack = PackedSequence((Segment(K.DialogText, 4, "a"),))
    full = MaskMatrix(np.ones((4, 4), dtype=bool))
    assert len(validate_mask(full, pack)) == 6
    assert len(validate_mask(full, pack, max_report=2)) == 2
    with pytest.raises(ValueError):
        validate_mask(MaskMatrix(np.ones((3, 3), dtype=bool)), pack)


def test_mask_is_immutable():
    m = build_hybrid_mask(worked_pack())
    with pytest.raises(ValueError):
        m.bits[0, 0] = False


def test_dump_roundtrip():
    rng = random.Random(5)
    for _ in range(30):
        m = build_hybrid_mask(random_pack(rng))
        assert parse_mask(dump_mask(m)) == m
    text = dump_mask(build_hybrid_mask(worked_pack()))
    assert text.splitlines()[0] == "# hybrid-mask n=8"
    assert text.splitlines()[7] == "6 2:8"


def test_parse_errors():
    with pytest.raises(ValueError):
        parse_mask("0 0:1\n")
    with pytest.raises(ValueError):
        parse_mask("# hybrid-mask n=2\n0 0:1\n")
    with pytest.raises(ValueError):
        parse_mask("# hybrid-mask n=1\n0 0:5\n")


def test_token_arrays():
    sample, kind, ss, se = token_arrays(worked_pack())
    assert kind.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
    assert ss.tolist() == [0, 0, 2, 2, 4, 4, 6, 6]
    assert se.tolist() == [2, 2, 4, 4, 6, 6, 8, 8]
    assert set(sample.tolist()) == {0}
