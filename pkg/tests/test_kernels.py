"""Backend parity: the compiled extension and the numpy fallback must
agree (bitwise for integer outputs, to round-off for floats)."""

import numpy as np
import pytest

from corsem import _kernels
from corsem._kernels import pyfallback

compiled = pytest.importorskip("corsem._kernels._core")


def run_ols(mod, x, y):
    m = y.shape[1]
    outs = [np.empty(m) for _ in range(5)]
    flags = np.empty(m, dtype=np.uint8)
    xbar = x.mean()
    vx = float(((x - xbar) ** 2).sum())
    mod.ols_columns(x, xbar, vx, y, *outs, flags)
    return outs, flags


class TestOlsParity:
    def test_random_blocks(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(3, 200))
            m = int(rng.integers(1, 64))
            x = rng.integers(0, 2, n).astype(np.float64)
            if x.std() == 0:
                x[0] = 1.0 - x[0]
            y = rng.normal(0, 1, (n, m)).astype(np.float32)
            if trial % 3 == 0:
                y[:, 0] = 7.0
            if trial % 4 == 0 and m > 1:
                y[:, 1] = (3 * x - 1).astype(np.float32)
            (o_py, f_py) = run_ols(pyfallback, x, y)
            (o_cy, f_cy) = run_ols(compiled, x, y)
            assert np.array_equal(f_py, f_cy)
            for a, b in zip(o_py, o_cy):
                finite = np.isfinite(a)
                assert np.array_equal(finite, np.isfinite(b))
                np.testing.assert_allclose(a[finite], b[finite],
                                           rtol=1e-12, atol=1e-12)
                assert np.array_equal(a[~finite], b[~finite])

    def test_strided_view_supported(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2, 40).astype(np.float64)
        x[0] = 1.0
        x[1] = 0.0
        full = rng.normal(0, 1, (40, 100)).astype(np.float32)
        view = full[:, 30:50]
        (o_py, _), (o_cy, _) = run_ols(pyfallback, x, view), run_ols(compiled, x, view)
        np.testing.assert_allclose(o_py[3], o_cy[3], rtol=1e-12)


class TestConvolveParity:
    def test_all_axes(self):
        rng = np.random.default_rng(2)
        f = rng.normal(0, 1, (7, 6, 5))
        for klen in (1, 3, 7, 11):
            k = rng.random(klen)
            k /= k.sum()
            for axis in range(3):
                a = np.empty_like(f)
                b = np.empty_like(f)
                pyfallback.convolve_axis(f, k, axis, a)
                compiled.convolve_axis(f, k, axis, b)
                np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-14)

    def test_zero_padding_matches_numpy_convolve(self):
        rng = np.random.default_rng(3)
        line = rng.normal(0, 1, (1, 1, 20))
        k = np.array([0.25, 0.5, 0.25])
        out = np.empty_like(line)
        compiled.convolve_axis(line, k, 2, out)
        ref = np.convolve(line[0, 0], k, mode="same")
        np.testing.assert_allclose(out[0, 0], ref, atol=1e-14)


class TestLabelParity:
    def test_random_fields(self):
        rng = np.random.default_rng(4)
        for conn in (6, 18, 26):
            for density in (0.1, 0.4, 0.7, 1.0):
                nx, ny, nz = (int(v) for v in rng.integers(2, 9, 3))
                supra = (rng.random(nx * ny * nz) < density).astype(np.uint8)
                l_py = np.empty(supra.size, dtype=np.int64)
                l_cy = np.empty(supra.size, dtype=np.int64)
                s_py = pyfallback.label_components(supra, nx, ny, nz, conn, l_py)
                s_cy = compiled.label_components(supra, nx, ny, nz, conn, l_cy)
                assert np.array_equal(l_py, l_cy)
                assert np.array_equal(s_py, s_cy)

    def test_empty_field(self):
        supra = np.zeros(24, dtype=np.uint8)
        labels = np.empty(24, dtype=np.int64)
        sizes = compiled.label_components(supra, 4, 3, 2, 6, labels)
        assert sizes.size == 0
        assert (labels == -1).all()

    def test_label_numbering_first_occurrence(self):
        # two clusters: flat order determines ids
        supra = np.zeros(8, dtype=np.uint8)
        supra[[1, 6]] = 1
        for mod in (pyfallback, compiled):
            labels = np.empty(8, dtype=np.int64)
            mod.label_components(supra, 2, 2, 2, 6, labels)
            assert labels[1] == 0 and labels[6] == 1

    def test_invalid_connectivity(self):
        supra = np.zeros(8, dtype=np.uint8)
        labels = np.empty(8, dtype=np.int64)
        with pytest.raises(ValueError):
            compiled.label_components(supra, 2, 2, 2, 10, labels)
        with pytest.raises(ValueError):
            pyfallback.label_components(supra, 2, 2, 2, 10, labels)


class TestTPvaluesParity:
    def test_matches_fallback_and_scipy(self):
        import math

        import scipy.stats

        rng = np.random.default_rng(5)
        t = np.concatenate([rng.normal(0, 3, 2000),
                            [0.0, np.inf, -np.inf, 100.0, -100.0]])
        for df in (1, 3, 48, 998):
            ln_beta = (math.lgamma(df / 2) + math.lgamma(0.5)
                       - math.lgamma(df / 2 + 0.5))
            out_cy = np.empty(t.size)
            out_py = np.empty(t.size)
            compiled.t_pvalues(t, float(df), ln_beta, out_cy)
            pyfallback.t_pvalues(t, float(df), ln_beta, out_py)
            np.testing.assert_allclose(out_cy, out_py, rtol=1e-12, atol=1e-14)
            ref = 2 * scipy.stats.t.sf(np.abs(t), df)
            np.testing.assert_allclose(out_cy, ref, rtol=1e-7, atol=1e-12)
        assert out_cy[2000] == 1.0  # t = 0
        assert out_cy[2001] == 0.0 and out_cy[2002] == 0.0  # infinities


class TestDispatch:
    def test_backend_reports(self):
        assert _kernels.BACKEND in ("compiled", "python")
        assert _kernels.compiled_available()

    def test_get_backend(self):
        assert _kernels.get_backend("python") is pyfallback
        assert _kernels.get_backend("compiled").BACKEND == "compiled"
        with pytest.raises(ValueError):
            _kernels.get_backend("fortran")
