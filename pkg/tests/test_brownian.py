"""Brownian driver: determinism, exact dyadic coupling, dump/load round trips."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lampsde import (
    BrownianPath,
    GridSpec,
    coarsen,
    coarsen_increments,
    dump_increments,
    load_increments,
    sample_increments_block,
    sample_path,
)
from lampsde.brownian import raw_normals


class TestGridSpec:
    def test_step_count_and_times(self):
        g = GridSpec(T=1.0, dt=0.25)
        assert g.n_steps == 4
        np.testing.assert_allclose(g.times, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_non_dividing_dt_rounds_up(self):
        assert GridSpec(T=1.0, dt=0.3).n_steps == 4

    def test_coarsened(self):
        g = GridSpec(T=1.0, dt=2.0**-8).coarsened(4)
        assert g.dt == 2.0**-6
        assert g.n_steps == 64

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(T=0.0, dt=0.1)
        with pytest.raises(ValueError):
            GridSpec(T=1.0, dt=0.0)
        with pytest.raises(ValueError):
            GridSpec(T=1.0, dt=2.0)
        with pytest.raises(ValueError):
            GridSpec(T=math.inf, dt=0.1)


def test_same_key_same_path():
    g = GridSpec(T=1.0, dt=2.0**-6)
    a = sample_path(g, (5, 17))
    b = sample_path(g, (5, 17))
    assert np.array_equal(a.increments, b.increments)
    assert a.seed_id == (5, 17)


def test_distinct_keys_differ():
    g = GridSpec(T=1.0, dt=2.0**-6)
    base = sample_path(g, (5, 17)).increments
    assert not np.array_equal(base, sample_path(g, (5, 18)).increments)
    assert not np.array_equal(base, sample_path(g, (6, 17)).increments)


def test_block_matches_stacked_paths_bitwise():
    g = GridSpec(T=1.0, dt=2.0**-7)
    idx = [3, 0, 11]
    block = sample_increments_block(g, 9, idx)
    for row, pi in enumerate(idx):
        assert np.array_equal(block[row], sample_path(g, (9, pi)).increments)


def test_block_accepts_range():
    g = GridSpec(T=1.0, dt=2.0**-5)
    assert np.array_equal(
        sample_increments_block(g, 0, range(4)),
        sample_increments_block(g, 0, [0, 1, 2, 3]),
    )


def test_path_independent_of_block_shape():
    # Path 7 is the same whether sampled alone or inside any batch.
    g = GridSpec(T=1.0, dt=2.0**-6)
    solo = sample_path(g, (2, 7)).increments
    in_block = sample_increments_block(g, 2, range(32))[7]
    assert np.array_equal(solo, in_block)


def test_increment_moments():
    g = GridSpec(T=1.0, dt=2.0**-4)
    block = sample_increments_block(g, 123, range(512))
    flat = block.ravel()  # 8192 draws of N(0, dt)
    se = math.sqrt(g.dt / flat.size)
    assert abs(flat.mean()) < 4.0 * se
    assert flat.var() == pytest.approx(g.dt, rel=0.1)


def test_raw_normals_are_standard():
    z = raw_normals(0, 0, 20_000)
    assert abs(z.mean()) < 0.03
    assert z.std() == pytest.approx(1.0, rel=0.02)
    assert np.all(np.isfinite(z))


class TestCoarsening:
    def test_pair_sum(self):
        inc = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(coarsen_increments(inc, 2), [3.0, 7.0])

    def test_identity_factor(self):
        inc = np.arange(6.0)
        assert np.array_equal(coarsen_increments(inc, 1), inc)

    def test_sum_preserved(self):
        rng = np.random.default_rng(0)
        inc = rng.standard_normal(240)
        for f in (2, 3, 4, 6, 8, 16, 48):
            out = coarsen_increments(inc, f)
            assert out.shape == (240 // f,)
            assert out.sum() == pytest.approx(inc.sum(), abs=1e-13)

    def test_dyadic_associativity_bitwise(self):
        rng = np.random.default_rng(1)
        inc = rng.standard_normal(512)
        lhs = coarsen_increments(coarsen_increments(inc, 2), 4)
        assert np.array_equal(lhs, coarsen_increments(inc, 8))
        assert np.array_equal(
            coarsen_increments(coarsen_increments(inc, 4), 2),
            coarsen_increments(inc, 8),
        )

    def test_mixed_factor_nests_through_odd_part(self):
        rng = np.random.default_rng(2)
        inc = rng.standard_normal(192)
        assert np.array_equal(
            coarsen_increments(coarsen_increments(inc, 2), 3),
            coarsen_increments(inc, 6),
        )

    def test_last_axis_on_blocks(self):
        rng = np.random.default_rng(3)
        block = rng.standard_normal((5, 64))
        out = coarsen_increments(block, 4)
        assert out.shape == (5, 16)
        assert np.array_equal(out[2], coarsen_increments(block[2], 4))

    def test_non_dividing_factor_rejected(self):
        with pytest.raises(ValueError):
            coarsen_increments(np.zeros(10), 4)
        with pytest.raises(ValueError):
            coarsen_increments(np.zeros(10), 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (2, 4), (4, 2), (2, 8), (8, 2), (4, 4)]))
    def test_power_of_two_split_is_exact(self, seed, split):
        f1, f2 = split
        inc = np.random.default_rng(seed).standard_normal(64)
        assert np.array_equal(
            coarsen_increments(coarsen_increments(inc, f1), f2),
            coarsen_increments(inc, f1 * f2),
        )

    def test_coarsen_path(self):
        g = GridSpec(T=1.0, dt=2.0**-8)
        p = sample_path(g, (0, 4))
        c = coarsen(p, 4)
        assert c.grid.dt == 2.0**-6
        assert c.seed_id == p.seed_id
        assert np.array_equal(c.increments, coarsen_increments(p.increments, 4))
        with pytest.raises(ValueError):
            coarsen(p, 1)


class TestDumpLoad:
    def make_path(self):
        return sample_path(GridSpec(T=1.0, dt=2.0**-6), (42, 3))

    def test_binary_round_trip(self, tmp_path):
        p = self.make_path()
        fn = tmp_path / "p.bin"
        dump_increments(p, fn)
        q = load_increments(fn)
        assert np.array_equal(q.increments, p.increments)
        assert q.seed_id == p.seed_id
        assert (q.grid.T, q.grid.dt) == (p.grid.T, p.grid.dt)

    def test_binary_layout(self):
        p = self.make_path()
        buf = io.BytesIO()
        dump_increments(p, buf)
        blob = buf.getvalue()
        assert blob.startswith(b"LAMPBW01")
        assert len(blob) == 8 + 40 + 8 * p.grid.n_steps

    def test_csv_round_trip(self, tmp_path):
        p = self.make_path()
        fn = tmp_path / "p.csv"
        dump_increments(p, fn, fmt="csv")
        text = fn.read_text()
        assert text.startswith("# stream=42")
        assert "increment" in text
        q = load_increments(fn)
        assert np.array_equal(q.increments, p.increments)  # 17 digits: exact
        assert q.seed_id == p.seed_id

    def test_file_object_round_trip(self):
        p = self.make_path()
        buf = io.BytesIO()
        dump_increments(p, buf)
        buf.seek(0)
        q = load_increments(buf)
        assert np.array_equal(q.increments, p.increments)

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError):
            dump_increments(self.make_path(), io.BytesIO(), fmt="json")


def test_path_shape_validation():
    g = GridSpec(T=1.0, dt=2.0**-3)
    with pytest.raises(ValueError):
        BrownianPath(grid=g, increments=np.zeros(7), seed_id=(0, 0))
