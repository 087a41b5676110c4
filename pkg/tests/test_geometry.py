import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from puttlab.audio import Waveform
from puttlab.errors import DegenerateBasis, DegenerateLine
from puttlab.geometry import (
    PlanePoint,
    decompose,
    default_grid,
    embed,
    grid_points,
    make_basis,
    project,
    sample_field,
    trace_trajectory,
    write_field_csv,
    write_trajectory_csv,
)


def W(v):
    return Waveform(np.asarray(v, dtype=float))


def oracle_split(enhanced, clean, noisy):
    """Explicit dot-product projection of enhanced - noisy onto the S-X direction."""
    e, s, x = (np.asarray(v, dtype=float) for v in (enhanced, clean, noisy))
    d = e - x
    line = s - x
    along = sum(a * b for a, b in zip(d, line)) / sum(a * a for a in line)
    perp = d - along * line
    return perp, e - perp - s


@pytest.fixture
def worked():
    # S=(1,0), N=(0,1), X=(1,1), X~=(0.5,0.2)
    return W([0.5, 0.2]), W([1.0, 0.0]), W([1.0, 1.0])


class TestDecompose:
    def test_worked_example(self, worked):
        d = decompose(*worked)
        perp, par = oracle_split(*(w.samples for w in worked))
        np.testing.assert_allclose(perp, [-0.5, 0.0], atol=1e-15)
        np.testing.assert_allclose(par, [0.0, 0.2], atol=1e-15)
        np.testing.assert_allclose(d.artifact, perp, atol=1e-15)
        np.testing.assert_allclose(d.proximity, par, atol=1e-15)
        np.testing.assert_allclose(d.artifact + d.proximity, worked[0].samples - worked[1].samples, atol=1e-15)

    def test_perfect_enhancement(self):
        rng = np.random.default_rng(0)
        s, n = rng.standard_normal(64), rng.standard_normal(64)
        d = decompose(W(s), W(s), W(s + n))
        assert d.artifact_norm < 1e-12 and d.proximity_norm < 1e-12

    def test_collinear_is_pure_proximity(self):
        rng = np.random.default_rng(1)
        s, n = rng.standard_normal(64), rng.standard_normal(64)
        d = decompose(W(s + n), W(s), W(s + n))
        assert d.artifact_norm < 1e-12
        np.testing.assert_allclose(d.proximity, n, atol=1e-12)

    def test_degenerate_line(self):
        s = np.ones(16)
        with pytest.raises(DegenerateLine):
            decompose(W(s * 2), W(s), W(s))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 512), st.floats(-5, 5))
    def test_invariants(self, seed, T, c):
        rng = np.random.default_rng(seed)
        s, n, e = rng.standard_normal(T), rng.standard_normal(T), rng.standard_normal(T)
        x = s + n
        d = decompose(W(e), W(s), W(x))
        line = s - x
        assert abs(d.artifact @ line) <= 1e-9 * max(d.artifact_norm * np.linalg.norm(line), 1e-300) + 1e-300
        np.testing.assert_allclose(d.artifact + d.proximity, e - s, atol=1e-9)
        total = np.sum((e - s) ** 2)
        assert abs(total - d.artifact_norm**2 - d.proximity_norm**2) <= 1e-9 * total
        # scale equivariance along the error
        d2 = decompose(W(s + c * (e - s)), W(s), W(x))
        np.testing.assert_allclose(d2.artifact, c * d.artifact, atol=1e-9)
        np.testing.assert_allclose(d2.proximity, c * d.proximity, atol=1e-9)


class TestBasis:
    def test_worked_example(self, worked):
        b = make_basis(*worked)
        np.testing.assert_allclose(b.e_parallel, [0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(b.e_perp, [-1.0, 0.0], atol=1e-15)
        np.testing.assert_array_equal(b.anchor, [1.0, 0.0])

    def test_unit_and_orthogonal(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            s, n, e = (rng.standard_normal(128) for _ in range(3))
            b = make_basis(W(e), W(s), W(s + n))
            assert abs(np.linalg.norm(b.e_parallel) - 1) < 1e-12
            assert abs(np.linalg.norm(b.e_perp) - 1) < 1e-12
            assert abs(b.e_parallel @ b.e_perp) < 1e-9

    def test_mirrored_enhancement_flips_perp(self):
        rng = np.random.default_rng(3)
        s, n, e = (rng.standard_normal(32) for _ in range(3))
        x = s + n
        d = decompose(W(e), W(s), W(x))
        mirrored = e - 2 * d.artifact  # reflect across the S-X line
        b1, b2 = make_basis(W(e), W(s), W(x)), make_basis(W(mirrored), W(s), W(x))
        np.testing.assert_allclose(b2.e_perp, -b1.e_perp, atol=1e-12)
        np.testing.assert_allclose(b2.e_parallel, b1.e_parallel, atol=1e-12)

    def test_degenerate(self):
        rng = np.random.default_rng(4)
        s, n = rng.standard_normal(32), rng.standard_normal(32)
        with pytest.raises(DegenerateBasis):
            make_basis(W(s + 0.5 * n), W(s), W(s + n))  # on the line: no artifact
        with pytest.raises(DegenerateBasis):
            make_basis(W(s), W(s), W(s + n))


class TestProjection:
    def test_examples(self, worked):
        b = make_basis(*worked)
        p = project(W(b.anchor), b)
        assert (p.x, p.y) == (0.0, 0.0)
        p = project(W(b.anchor + 3 * b.e_perp), b)
        assert p.x == pytest.approx(0.0, abs=1e-15) and p.y == pytest.approx(3.0)
        p = project(worked[2], b)
        assert (p.x, p.y) == pytest.approx((1.0, 0.0))

    def test_embed_origin(self, worked):
        b = make_basis(*worked)
        np.testing.assert_array_equal(embed(PlanePoint(0, 0), b).samples, b.anchor)

    def test_round_trips(self):
        rng = np.random.default_rng(5)
        s, n, e = (rng.standard_normal(256) for _ in range(3))
        x = s + n
        b = make_basis(W(e), W(s), W(x))
        for _ in range(1000):
            p = PlanePoint(*rng.uniform(-10, 10, 2))
            q = project(embed(p, b), b)
            assert abs(q.x - p.x) <= 1e-9 and abs(q.y - p.y) <= 1e-9
        px = project(W(x), b)
        again = project(embed(px, b), b)
        assert abs(again.x - px.x) <= 1e-9 and abs(again.y - px.y) <= 1e-9

    def test_trajectory(self, worked):
        b = make_basis(*worked)
        pts = trace_trajectory([worked[2]], b)
        assert pts == [project(worked[2], b)]
        s = worked[1]
        assert all((p.x, p.y) == (0.0, 0.0) for p in trace_trajectory([s, s, s], b))


class TestField:
    @pytest.fixture
    def basis(self):
        rng = np.random.default_rng(6)
        s, n, e = (rng.standard_normal(64) for _ in range(3))
        return make_basis(W(e), W(s), W(s + n)), (W(e), W(s), W(s + n))

    def test_identity_field_vanishes(self, basis):
        b, triple = basis
        field = sample_field(lambda z: z, b, default_grid(*triple))
        assert len(field) == 441
        assert all(f.vector.x == 0.0 and f.vector.y == 0.0 for f in field)

    def test_return_clean_pulls_to_origin(self, basis):
        b, triple = basis
        clean = triple[1]
        for f in sample_field(lambda z: clean, b, grid_points((-1, 2), (-1, 2))):
            assert abs(f.vector.x + f.at.x) <= 1e-9 and abs(f.vector.y + f.at.y) <= 1e-9

    def test_threaded_matches_serial(self, basis):
        b, _ = basis
        grid = grid_points((-1, 1), (-1, 1), 5, 5)
        shrink = lambda z: z.with_samples(0.5 * z.samples)  # noqa: E731
        assert sample_field(shrink, b, grid) == sample_field(shrink, b, grid, jobs=4)

    def test_errors_carry_coordinates(self, basis):
        b, _ = basis

        def boom(z):
            raise RuntimeError("enhancer exploded")

        with pytest.raises(Exception, match=r"enhancer failed at \(") as ei:
            sample_field(boom, b, [PlanePoint(0.25, -1.5)])
        assert ei.value.point == PlanePoint(0.25, -1.5)

    def test_empty_grid(self, basis):
        with pytest.raises(ValueError):
            sample_field(lambda z: z, basis[0], [])

    def test_csv_exports(self, basis, tmp_path):
        b, triple = basis
        field = sample_field(lambda z: z, b, grid_points((0, 1), (0, 1), 3, 3))
        write_field_csv(field, tmp_path / "f.csv")
        rows = list(csv.reader(open(tmp_path / "f.csv")))
        assert rows[0] == ["x", "y", "fx", "fy"] and len(rows) == 10
        write_trajectory_csv(trace_trajectory(list(triple), b), tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["stage", "x", "y"] and len(rows) == 4
        # at least 12 significant digits survive
        p = project(triple[2], b)
        assert abs(float(rows[3][1]) - p.x) <= 1e-12 * max(1, abs(p.x))
