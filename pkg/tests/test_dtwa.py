import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipgeom.dtwa import (
    CouplingSchedule,
    all_to_all,
    auto_horizon,
    dtwa_evolve,
    initial_spins,
    mean_coupling,
    oat_optimum,
    oat_wineland,
    scaling_fit,
    squeeze_schedule,
    squeezing_parameter,
)
from dipgeom.errors import DomainError
from oracles import dicke_oat_wineland, two_spin_sx


def random_couplings(rng, n, scale=1.0):
    m = rng.normal(0, scale, (n, n))
    m = m + m.T
    np.fill_diagonal(m, 0.0)
    return m


class TestSchedule:
    def test_validation(self):
        good = all_to_all(3)
        with pytest.raises(DomainError):
            CouplingSchedule((good,), (0.0,))
        with pytest.raises(DomainError):
            CouplingSchedule((good,), (1.0, 1.0))
        asym = good.copy()
        asym[0, 1] += 1e-6
        with pytest.raises(DomainError):
            CouplingSchedule.static(asym, 1.0)
        diag = good.copy()
        diag[0, 0] = 1.0
        with pytest.raises(DomainError):
            CouplingSchedule.static(diag, 1.0)
        with pytest.raises(DomainError):
            CouplingSchedule((good, all_to_all(4)), (1.0, 1.0))
        with pytest.raises(DomainError):
            CouplingSchedule.static(good, 1.0, reference_hz=0.0)
        with pytest.raises(DomainError):
            all_to_all(1)

    def test_repeated(self):
        a, b = all_to_all(3, 1.0), all_to_all(3, 2.0)
        sch = CouplingSchedule((a, b), (1.0, 2.0))
        rep = sch.repeated(7.5)
        assert rep.durations == (1.0, 2.0, 1.0, 2.0, 1.0, 0.5)
        assert rep.total_duration == pytest.approx(7.5)
        assert rep.matrices[-1] is b or np.array_equal(rep.matrices[-1], b)

    def test_json_roundtrip(self):
        sch = CouplingSchedule((all_to_all(3, 1.5),), (0.25,), 38.0)
        data = json.loads(sch.to_json())
        assert data["reference_hz"] == 38.0
        assert data["segments"][0]["duration"] == 0.25
        assert np.array_equal(np.reshape(data["segments"][0]["matrix"], (3, 3)), sch.matrices[0])

    def test_reference_units(self):
        m = all_to_all(4, 38.0)
        sec = CouplingSchedule.static(m, 0.01)
        dimless = CouplingSchedule.static(m, 0.38, reference_hz=38.0)
        assert mean_coupling(sec) * sec.total_duration == pytest.approx(
            mean_coupling(dimless) * dimless.total_duration)


class TestInitialState:
    def test_values(self):
        s = initial_spins(3, np.arange(500), 6)
        assert np.all(s[0] == 0.5)
        assert set(np.unique(s[1:])) == {-0.5, 0.5}
        assert abs(s[1].mean()) < 0.05 and abs(s[2].mean()) < 0.05

    def test_independent_of_grouping(self):
        a = initial_spins(7, np.arange(10), 5)
        b = initial_spins(7, np.arange(5, 10), 5)
        assert np.array_equal(a[:, 5:], b)

    def test_labels(self):
        perm = np.array([2, 0, 1, 4, 3])
        a = initial_spins(7, np.arange(10), 5)
        b = initial_spins(7, np.arange(10), 5, spin_labels=perm)
        assert np.array_equal(a[:, :, perm], b)


class TestEvolution:
    def test_zero_coupling_frozen(self):
        sch = CouplingSchedule.static(np.zeros((5, 5)), 1.0)
        traj = dtwa_evolve(sch, 200, 1, np.linspace(0, 1, 11))
        assert np.all(traj.mean_spin[:, 0] == 2.5)
        first = traj.collective[:, :1]
        assert np.array_equal(traj.collective, np.broadcast_to(first, traj.collective.shape))

    def test_two_spin_short_time(self):
        j = 3.0
        times = np.linspace(0, 2.3 / (2 * math.pi * j), 24)
        traj = dtwa_evolve(CouplingSchedule.static(all_to_all(2, j), times[-1]), 4000, 0, times)
        exact = np.array([two_spin_sx(j, t) for t in times])
        assert np.max(np.abs(traj.mean_spin[:, 0] - exact)) < 0.05

    def test_conservation(self):
        rng = np.random.default_rng(2)
        sch = CouplingSchedule(tuple(random_couplings(rng, 8) for _ in range(3)), (0.3, 0.2, 0.5))
        traj = dtwa_evolve(sch, 300, 5)
        assert traj.max_norm_drift < 1e-8
        assert traj.max_sz_drift < 1e-8

    def test_worker_and_chunk_determinism(self):
        rng = np.random.default_rng(3)
        sch = CouplingSchedule((random_couplings(rng, 6), random_couplings(rng, 6)), (0.4, 0.4))
        ref = dtwa_evolve(sch, 600, 11)
        for workers, chunk in ((4, 250), (2, 100), (1, 37)):
            other = dtwa_evolve(sch, 600, 11, workers=workers, chunk_size=chunk)
            assert np.array_equal(ref.collective, other.collective)

    def test_permutation_covariance(self):
        rng = np.random.default_rng(4)
        n = 7
        sch = CouplingSchedule((random_couplings(rng, n), random_couplings(rng, n)), (0.3, 0.3))
        perm = rng.permutation(n)
        a = dtwa_evolve(sch, 400, 9)
        b = dtwa_evolve(sch.permuted(perm), 400, 9, spin_labels=perm)
        assert np.allclose(a.collective, b.collective, rtol=1e-12, atol=1e-12)

    def test_sample_time_validation(self):
        sch = CouplingSchedule.static(all_to_all(3), 1.0)
        with pytest.raises(DomainError):
            dtwa_evolve(sch, 10, 0, [0.0, 0.5, 0.5])
        with pytest.raises(DomainError):
            dtwa_evolve(sch, 10, 0, [-1.0, 0.5])
        with pytest.raises(DomainError):
            dtwa_evolve(sch, 0, 0)
        with pytest.raises(DomainError):
            dtwa_evolve(sch, 10, 0, max_rotation=0.1)

    def test_piecewise_matches_concatenation(self):
        # splitting a segment into two equal halves changes nothing but the step grid
        m = all_to_all(4, 1.0)
        whole = dtwa_evolve(CouplingSchedule.static(m, 1.0), 200, 0, [0.0, 1.0])
        split = dtwa_evolve(CouplingSchedule((m, m), (0.5, 0.5)), 200, 0, [0.0, 1.0])
        assert np.allclose(whole.collective, split.collective, atol=1e-9)


class TestSqueezing:
    def test_coherent_state(self):
        traj = dtwa_evolve(CouplingSchedule.static(all_to_all(10), 0.01), 4000, 0, [0.0])
        res = squeezing_parameter(traj)
        assert abs(res.xi2[0] - 1) < 3 * res.xi2_stderr[0]
        assert abs(res.xi2[0] - 1) < 3 / math.sqrt(4000) * 3

    def test_minimum_trajectories(self):
        traj = dtwa_evolve(CouplingSchedule.static(all_to_all(3), 0.1), 50, 0, [0.0, 0.1])
        with pytest.raises(DomainError):
            squeezing_parameter(traj)

    def test_contrast_loss_flag(self):
        # long all-to-all evolution dephases the collective spin completely
        n = 4
        chi_t = math.pi / 2  # mu = pi: <S_x> = cos(pi/2)^(N-1) = 0
        t = chi_t / math.pi
        traj = dtwa_evolve(CouplingSchedule.static(all_to_all(n), t), 2000, 0, [0.0, t])
        res = squeezing_parameter(traj)
        assert not res.contrast_loss[0]
        norm = np.linalg.norm(res.mean_spin[1])
        assert res.contrast_loss[1] == (norm < 1e-3 * n / 2)
        assert res.min_index == 0 or not res.contrast_loss[res.min_index]

    def test_result_export(self):
        traj = dtwa_evolve(CouplingSchedule.static(all_to_all(5), 0.2), 200, 3, np.linspace(0, 0.2, 5))
        res = squeezing_parameter(traj)
        rows = list(res.rows())
        assert len(rows) == 5 and len(rows[0]) == len(res.CSV_HEADER)
        summary = res.summary()
        assert summary["N"] == 5 and summary["n_traj"] == 200 and summary["seed"] == 3
        assert np.all(res.xi2 > 0)

    def test_oat_agreement_n20(self):
        n = 20
        chi_opt, xi_opt = oat_optimum(n)
        res = squeeze_schedule(CouplingSchedule.static(all_to_all(n), 1.0), 4000, 0)
        assert abs(res.min_xi2 / xi_opt - 1) < 0.15
        assert res.min_xi2 < 0.2
        # time of the minimum matches the OAT optimum (chi = pi J) to within the broad optimum
        assert res.min_time == pytest.approx(chi_opt / math.pi, rel=0.3)

    @pytest.mark.slow
    def test_trajectory_doubling_consistent(self):
        sch = CouplingSchedule.static(all_to_all(12), 1.0)
        horizon = auto_horizon(sch)
        a = squeeze_schedule(sch, 4000, 0, horizon=horizon)
        b = squeeze_schedule(sch, 8000, 0, horizon=horizon)
        err = math.hypot(a.min_xi2_stderr, b.min_xi2_stderr)
        assert abs(a.min_xi2 - b.min_xi2) < 3 * err


class TestOat:
    @given(st.integers(3, 40), st.floats(0.001, 0.6))
    @settings(max_examples=40)
    def test_closed_form_matches_dicke(self, n, chi_t):
        assert oat_wineland(n, chi_t) == pytest.approx(dicke_oat_wineland(n, chi_t), rel=1e-8)

    def test_optimum(self):
        for n in (10, 20, 100):
            chi, xi = oat_optimum(n)
            grid = np.linspace(chi * 0.5, chi * 1.5, 201)
            assert xi <= np.min(oat_wineland(n, grid)) + 1e-12
        assert oat_optimum(20)[1] == pytest.approx(dicke_oat_wineland(20, oat_optimum(20)[0]), rel=1e-8)


class TestScalingFit:
    def test_exact_power_law(self):
        ns = [10, 20, 40, 80, 160]
        fit = scaling_fit([(n, n ** (-2 / 3)) for n in ns])
        assert fit.exponent == pytest.approx(-2 / 3, abs=1e-12)
        assert fit.stderr < 1e-12
        assert fit.ci95[0] <= fit.exponent <= fit.ci95[1]

    @given(st.floats(-2, 2), st.floats(0.1, 10))
    def test_recovers_exponent(self, p, c):
        fit = scaling_fit([(n, c * n**p) for n in (4, 9, 16, 64)])
        assert fit.exponent == pytest.approx(p, abs=1e-9)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            scaling_fit([(10, 0.3), (20, 0.2), (40, 0.1)])
        with pytest.raises(DomainError):
            scaling_fit([(10, 0.3), (20, 0.2), (40, 0.1), (79, 0.05)])
        with pytest.raises(DomainError):
            scaling_fit([(10, 0.3), (20, 0.0), (40, 0.1), (80, 0.05)])
        with pytest.raises(DomainError):
            scaling_fit([(10, 0.3), (20, -0.2), (40, 0.1), (80, 0.05)])


def test_static_chain_saturates_small():
    # nearest-neighbour chains squeeze far less than all-to-all at equal N
    n = 20
    m = np.zeros((n, n))
    for i in range(n - 1):
        m[i, i + 1] = m[i + 1, i] = 1.0
    chain = squeeze_schedule(CouplingSchedule.static(m, 1.0), 1000, 0)
    full = squeeze_schedule(CouplingSchedule.static(all_to_all(n), 1.0), 1000, 0)
    assert chain.min_xi2 > 1.5 * full.min_xi2
