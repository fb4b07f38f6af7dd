import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import hankel as scipy_hankel

from smmpc.plant import NoiseSpec, DataRecord, generate_data
from smmpc.signal_matrix import (
    SignalMatrix,
    TrajectoryWindow,
    append_online,
    build,
    compress,
    hankel,
    numerical_rank,
    pe_order,
    read_matrix_csv,
    read_record_csv,
    write_matrix_csv,
    write_record_csv,
)


def _record(u, y):
    u, y = np.asarray(u, float), np.asarray(y, float)
    return DataRecord(u=u, y=y, y0=y.copy(), noise=NoiseSpec())


def _rel_gram_err(a: SignalMatrix, b: SignalMatrix) -> float:
    G1, G2 = a.gram(), b.gram()
    return np.linalg.norm(G1 - G2) / np.linalg.norm(G1)


def test_hankel_small():
    np.testing.assert_array_equal(hankel([1, 2, 3, 4], 2), [[1, 2, 3], [2, 3, 4]])


def test_hankel_single_column():
    np.testing.assert_array_equal(hankel([1, 2, 3], 3), [[1], [2], [3]])


def test_hankel_too_many_rows():
    with pytest.raises(ValueError):
        hankel([1, 2], 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.data())
def test_hankel_matches_scipy(seq, data):
    rows = data.draw(st.integers(1, len(seq)))
    H = hankel(seq, rows)
    ref = scipy_hankel(seq[:rows], seq[rows - 1:])
    np.testing.assert_array_equal(H, ref)
    # Hankel property
    np.testing.assert_array_equal(H[1:, :-1], H[:-1, 1:])


def test_example1_shapes(ex1_data, ex1_sm):
    assert ex1_sm.U.shape == ex1_sm.Y.shape == (14, 37)
    assert ex1_sm.M == 50 - 14 + 1
    assert hankel(ex1_data.u, 14).shape == (14, 37)
    np.testing.assert_array_equal(np.vstack([ex1_sm.Yp, ex1_sm.Yf]), ex1_sm.Y)
    np.testing.assert_array_equal(np.vstack([ex1_sm.Up, ex1_sm.Uf]), ex1_sm.U)


def test_build_minimal_length(ex1_data):
    d = _record(ex1_data.u[:14], ex1_data.y[:14])
    assert build(d, 4, 10).M == 1
    with pytest.raises(ValueError):
        build(_record(ex1_data.u[:13], ex1_data.y[:13]), 4, 10)


def test_signal_matrix_read_only(ex1_sm):
    with pytest.raises(ValueError):
        ex1_sm.U[0, 0] = 1.0


def test_pe_order_examples(ex1_data):
    assert pe_order([1, -1, 2, 0, 1], 2)
    assert not pe_order(np.zeros(20), 1)
    assert not pe_order(np.zeros(20), 5)
    assert pe_order(ex1_data.u, 18)


def test_pe_order_constant_input():
    # constant input: rank one
    assert pe_order(np.ones(20), 1)
    assert not pe_order(np.ones(20), 2)


def test_compress_gram_preserved(ex1_sm):
    c = compress(ex1_sm)
    assert c.compressed and c.U.shape == (14, 28)
    assert _rel_gram_err(ex1_sm, c) < 1e-10


def test_compress_square_case(ex1_data):
    d = _record(ex1_data.u[:41], ex1_data.y[:41])  # M = 28 = 2L
    sm = build(d, 4, 10)
    c = compress(sm)
    assert c.M == 28
    assert _rel_gram_err(sm, c) < 1e-10


def test_compress_not_applicable(ex1_data):
    sm = build(_record(ex1_data.u[:30], ex1_data.y[:30]), 4, 10)
    with pytest.warns(UserWarning):
        out = compress(sm)
    assert out is sm and not out.compressed


def test_noise_free_rank(paper_ss, clean_sm):
    s = np.linalg.svd(clean_sm.stacked, compute_uv=False)
    rank = paper_ss.nx + clean_sm.L
    assert np.all(s[rank:] < 1e-8 * s[0])
    assert s[rank - 1] > 1e-8 * s[0]
    assert numerical_rank(clean_sm.stacked) == rank


def test_append_gamma_one_equals_build(paper_ss):
    d = generate_data(paper_ss, 51, NoiseSpec(0.1, 0.1), 4)
    base = build(_record(d.u[:50], d.y[:50]), 4, 10)
    grown = append_online(base, d.u[-14:], d.y[-14:], 1.0, recompress=False)
    ref = build(d, 4, 10)
    np.testing.assert_array_equal(grown.U, ref.U)
    np.testing.assert_array_equal(grown.Y, ref.Y)
    # the default path recompresses (M = 38 > 2L) but keeps the Gram matrix
    auto = append_online(base, d.u[-14:], d.y[-14:], 1.0)
    assert auto.compressed and auto.M == 28
    assert _rel_gram_err(ref, auto) < 1e-10


def test_append_scales_old_columns(ex1_data):
    base = build(_record(ex1_data.u[:30], ex1_data.y[:30]), 4, 10)  # M=17, stays uncompressed
    out = append_online(base, np.ones(14), np.zeros(14), 0.5)
    np.testing.assert_array_equal(out.U[:, :-1], 0.5 * base.U)
    np.testing.assert_array_equal(out.Y[:, :-1], 0.5 * base.Y)
    np.testing.assert_array_equal(out.U[:, -1], np.ones(14))


def test_append_then_compress_matches_compress_first(ex1_sm, rng):
    u, y = rng.standard_normal(14), rng.standard_normal(14)
    a = append_online(ex1_sm, u, y, 0.9)
    b = append_online(compress(ex1_sm), u, y, 0.9)
    assert a.compressed and b.compressed and a.M == b.M == 28
    assert np.linalg.norm(a.gram() - b.gram()) <= 1e-8 * np.linalg.norm(a.gram())


def test_append_dimension_mismatch(ex1_sm):
    with pytest.raises(ValueError):
        append_online(ex1_sm, np.zeros(13), np.zeros(14))


def test_window_check(ex1_sm):
    TrajectoryWindow(np.zeros(4), np.zeros(4), np.zeros(10)).check(ex1_sm)
    with pytest.raises(ValueError):
        TrajectoryWindow(np.zeros(3), np.zeros(4), np.zeros(10)).check(ex1_sm)


def test_csv_round_trips(tmp_path, ex1_sm, ex1_data):
    write_matrix_csv(tmp_path / "U.csv", ex1_sm.U)
    assert (tmp_path / "U.csv").read_text().splitlines()[0] == ",".join(str(i) for i in range(37))
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "U.csv"), ex1_sm.U)
    write_record_csv(tmp_path / "d.csv", ex1_data)
    back = read_record_csv(tmp_path / "d.csv")
    for k in ("u", "y", "y0"):
        np.testing.assert_array_equal(getattr(back, k), getattr(ex1_data, k))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 0.9, 0.5]))
def test_compression_preserves_gram_after_appends(seed, gamma):
    r = np.random.default_rng(seed)
    sm = SignalMatrix(r.standard_normal((6, 15)), r.standard_normal((6, 15)), 2, 4)
    full = sm
    comp = compress(sm)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(3):
            u, y = r.standard_normal(6), r.standard_normal(6)
            full = SignalMatrix(np.column_stack([gamma * full.U, u]), np.column_stack([gamma * full.Y, y]), 2, 4)
            comp = append_online(comp, u, y, gamma)
    assert _rel_gram_err(full, comp) < 1e-10
