import numpy as np
import pytest

from bpce.analysis import (
    Transform,
    fit_power_law,
    sandwich_report,
    theoretical_exponents,
)
from bpce.errors import AlignmentError, DegenerateData, DomainError, InsufficientData
from bpce.sim import TailEstimate


def _table(t, p, se=None, mode="extinction_time"):
    p = np.asarray(p, dtype=float)
    se = np.full_like(p, 0.01) * p if se is None else se
    return TailEstimate(thresholds=list(t), p_hat=p, std_err=se, replicates=1000, mode=mode)


class TestExponents:
    @pytest.mark.parametrize(
        "h, expected",
        [(0.5, (0.5, 1.0, 1.0)), (0.7, (0.3, 3 / 7, 3 / 7))],
    )
    def test_values(self, h, expected):
        e = theoretical_exponents(h)
        assert (e.extinction, e.max_pop, e.total_pop) == pytest.approx(expected, abs=1e-15)

    def test_limit_and_monotone(self):
        grid = np.linspace(0.01, 0.999, 400)
        ext = np.array([theoretical_exponents(h).extinction for h in grid])
        mx = np.array([theoretical_exponents(h).max_pop for h in grid])
        assert np.all(np.diff(ext) < 0) and np.all(np.diff(mx) < 0)
        assert np.all(ext > 0) and np.all(ext < 1)
        assert theoretical_exponents(1 - 1e-9).max_pop < 1e-8

    def test_domain(self):
        with pytest.raises(DomainError):
            theoretical_exponents(1.0)


class TestFit:
    def test_exact_power_law(self):
        t = 2.0 ** np.arange(4, 13)
        fit = fit_power_law(_table(t, t**-0.5), Transform.LOG)
        assert fit.slope == pytest.approx(-0.5, abs=1e-10)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.slope_std_err >= 0

    def test_exact_loglog(self):
        t = 2.0 ** np.arange(2, 21)
        fit = fit_power_law(_table(t, 1 / np.log(t)), "loglog")
        assert fit.slope == pytest.approx(-1.0, abs=1e-10)

    def test_default_window_drops_smallest_decile(self):
        t = np.arange(1, 21, dtype=float)
        fit = fit_power_law(_table(t, t**-1.0))
        assert fit.window == (3.0, 20.0)
        assert fit.n_points == 18

    def test_explicit_window(self):
        t = 2.0 ** np.arange(1, 11)
        p = np.where(t < 16, 0.9, t**-0.3)
        fit = fit_power_law(_table(t, p), window=(16, 1024))
        assert fit.slope == pytest.approx(-0.3, abs=1e-10)

    @pytest.mark.parametrize("c", [1e-6, 0.37, 5.0])
    def test_scale_equivariance(self, c):
        rng = np.random.default_rng(0)
        t = 2.0 ** np.arange(4, 13)
        p = t**-0.4 * np.exp(rng.normal(0, 0.1, t.size))
        se = 0.05 * p * rng.uniform(0.5, 2, t.size)
        a = fit_power_law(_table(t, p, se))
        b = fit_power_law(_table(t, c * p, c * se))
        assert b.slope == pytest.approx(a.slope, abs=1e-12)
        assert b.intercept == pytest.approx(a.intercept + np.log(c), abs=1e-10)

    def test_noise_coverage(self):
        rng = np.random.default_rng(1)
        t = 2.0 ** np.arange(4, 13)
        hits = 0
        for _ in range(1000):
            p = t**-0.5 * np.exp(rng.normal(0, 0.1, t.size))
            fit = fit_power_law(_table(t, p, 0.1 * p))
            hits += abs(fit.slope + 0.5) <= 3 * fit.slope_std_err
        assert hits >= 950

    def test_insufficient(self):
        with pytest.raises(InsufficientData):
            fit_power_law(_table([1, 2, 3], [0.5, 0.4, 0.3]), window=(1, 3))
        with pytest.raises(InsufficientData):
            fit_power_law(_table([1, 2, 3, 4, 5], [0.5, 0.4, 0.0, 0.0, 0.0]), window=(1, 5))

    def test_degenerate(self):
        with pytest.raises(DegenerateData):
            fit_power_law(_table([1, 2, 3, 4, 5], [0.5] * 5))

    def test_zero_error_falls_back_to_equal_weights(self):
        t = 2.0 ** np.arange(1, 8)
        p = t**-0.5
        fit = fit_power_law(_table(t, p, np.zeros_like(p)), window=(2, 128))
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)

    def test_loglog_skips_unit_threshold(self):
        t = np.array([1.0, 4, 16, 64, 256, 1024])
        fit = fit_power_law(_table(t, np.minimum(1.0, 1 / np.log(np.maximum(t, 2)))), Transform.LOGLOG, window=(1, 1024))
        assert fit.n_points == 5


class TestSandwich:
    def _tables(self):
        t = [1, 2, 4, 16]
        mx = _table(t, [0.5, 0.3, 0.2, 0.1], mode="max_population")
        tot = _table(t, [0.6, 0.4, 0.3, 0.15], mode="total_population")
        ext = _table(t, [0.5, 0.4, 0.3, 0.2])
        return mx, tot, ext

    def test_aligned_rows(self):
        mx, tot, ext = self._tables()
        rep = sandwich_report(mx, tot, ext)
        # aligned: N with N and N^2 in the total table
        assert [r["threshold"] for r in rep.rows] == [1, 2, 4]
        assert rep.ok

    def test_equal_tables_upper_chain_tight(self):
        t = [1, 2, 4, 16]
        p = [0.5, 0.3, 0.2, 0.1]
        mx = _table(t, p, np.zeros(4), mode="max_population")
        tot = _table(t, p, np.zeros(4), mode="total_population")
        ext = _table(t, np.zeros(4), np.zeros(4))
        rep = sandwich_report(mx, tot, ext)
        assert rep.ok
        assert all(r["max"] == r["upper"] for r in rep.rows)

    def test_violation_detected(self):
        mx, tot, ext = self._tables()
        bad = _table(mx.thresholds, [0.9, 0.3, 0.2, 0.1], np.full(4, 1e-4), mode="max_population")
        tot_tight = _table(tot.thresholds, tot.p_hat, np.full(4, 1e-4), mode="total_population")
        rep = sandwich_report(bad, tot_tight, ext)
        assert not rep.ok
        assert rep.violations[0]["threshold"] == 1
        assert rep.to_dict()["violations"] == 1

    def test_alignment_error(self):
        mx = _table([3, 5, 7, 9], [0.4, 0.3, 0.2, 0.1], mode="max_population")
        tot = _table([2, 4, 6, 8], [0.4, 0.3, 0.2, 0.1], mode="total_population")
        with pytest.raises(AlignmentError):
            sandwich_report(mx, tot, _table([3, 5, 7, 9], [0.4, 0.3, 0.2, 0.1]))
