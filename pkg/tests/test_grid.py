from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lagflow.errors import ConfigError, NumericError
from lagflow.grid import MapGrid, d1, d2, dxy, read_map, read_sidecar, write_map, write_sidecar


def trig_field(n, kx, ky, phase=0.3):
    s = np.arange(n) / n
    x, y = np.meshgrid(s, s, indexing="ij")
    arg = 2 * math.pi * (kx * x + ky * y) + phase
    return np.sin(arg), arg


class TestStencils:
    @pytest.mark.parametrize("order", [2, 4])
    def test_first_derivative_symbol(self, order):
        # centered stencils act on a Fourier mode by their exact symbol
        n, k = 32, 3
        f, arg = trig_field(n, k, 0)
        h = 1 / n
        theta = 2 * math.pi * k * h
        if order == 2:
            symbol = math.sin(theta) / h
        else:
            symbol = (8 * math.sin(theta) - math.sin(2 * theta)) / (6 * h)
        assert np.allclose(d1(f, 0, h, order), symbol * np.cos(arg), atol=1e-12)

    @pytest.mark.parametrize("order", [2, 4])
    def test_second_derivative_symbol(self, order):
        n, k = 32, 2
        f, arg = trig_field(n, 0, k)
        h = 1 / n
        theta = 2 * math.pi * k * h
        if order == 2:
            symbol = -(2 - 2 * math.cos(theta)) / h**2
        else:
            symbol = -(30 - 32 * math.cos(theta) + 2 * math.cos(2 * theta)) / (12 * h**2)
        assert np.allclose(d2(f, 1, h, order), symbol * np.sin(arg), atol=1e-9)

    @pytest.mark.parametrize("order,rate", [(2, 2), (4, 4)])
    def test_mixed_derivative_converges(self, order, rate):
        errs = []
        for n in (32, 64):
            f, arg = trig_field(n, 1, 1)
            exact = -(2 * math.pi) ** 2 * np.sin(arg)
            errs.append(np.max(np.abs(dxy(f, 1 / n, order) - exact)))
        assert math.log2(errs[0] / errs[1]) == pytest.approx(rate, abs=0.1)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            d1(np.zeros((8, 8)), 0, 0.1, 3)


class TestMapGrid:
    def test_identity(self):
        g = MapGrid.identity(16)
        f, gg = g.values()
        x, y = g.coords()
        assert np.array_equal(f, x) and np.array_equal(gg, y)
        assert g.h == 1 / 16
        assert g.is_identity_class()

    def test_rejects_small_and_bad_shapes(self):
        with pytest.raises(ConfigError):
            MapGrid.identity(4)
        with pytest.raises(ConfigError):
            MapGrid(8, np.zeros((8, 7)), np.zeros((8, 8)))

    def test_rejects_nonfinite(self):
        u = np.zeros((8, 8))
        u[3, 3] = np.nan
        with pytest.raises(NumericError):
            MapGrid(8, u, np.zeros((8, 8)))

    def test_copy_is_deep(self):
        g = MapGrid.identity(8)
        c = g.copy()
        c.u[0, 0] = 1.0
        assert g.u[0, 0] == 0.0


class TestSnapshotFiles:
    @given(st.integers(8, 12), st.integers(0, 2**31 - 1))
    def test_roundtrip_exact(self, tmp_path_factory, n, seed):
        rng = np.random.default_rng(seed)
        g = MapGrid(n, rng.normal(size=(n, n)), rng.normal(size=(n, n)))
        path = tmp_path_factory.mktemp("snap") / "m.txt"
        write_map(path, g)
        back = read_map(path)
        assert back.n == n
        assert np.array_equal(back.u, g.u) and np.array_equal(back.v, g.v)

    def test_format(self, tmp_path):
        g = MapGrid(8, np.full((8, 8), 0.1), np.zeros((8, 8)))
        path = tmp_path / "m.txt"
        write_map(path, g)
        lines = path.read_text().splitlines()
        assert lines[0] == "# lagflow-map n=8"
        assert len(lines) == 65
        assert lines[1] == "0 0 0.10000000000000001 0"
        assert lines[2].startswith("0 1 ")  # row-major: j fastest

    def test_linear_part_roundtrip(self, tmp_path):
        g = MapGrid(8, np.zeros((8, 8)), np.zeros((8, 8)), np.array([[2.0, 1.0], [1.0, 1.0]]))
        write_map(tmp_path / "a.txt", g)
        assert "linear=2,1,1,1" in (tmp_path / "a.txt").read_text().splitlines()[0]
        assert np.array_equal(read_map(tmp_path / "a.txt").linear, g.linear)

    def test_bad_files(self, tmp_path):
        (tmp_path / "x.txt").write_text("hello\n")
        with pytest.raises(ConfigError):
            read_map(tmp_path / "x.txt")
        (tmp_path / "y.txt").write_text("# lagflow-map n=8\n0 0 0 0\n")
        with pytest.raises(ConfigError):
            read_map(tmp_path / "y.txt")

    def test_sidecar(self, tmp_path):
        write_sidecar(tmp_path / "c.meta", 0.1, 42)
        assert (tmp_path / "c.meta").read_text() == "# t=0.10000000000000001 step=42\n"
        assert read_sidecar(tmp_path / "c.meta") == (0.1, 42)
