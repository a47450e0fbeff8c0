import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from resoflow.assembly import OperatorPair
from resoflow.potentials import gaussian_profile, step_profile, sum_profiles
from resoflow.radial import (
    Channel,
    birman_schwinger_ext,
    birman_schwinger_int,
    born_phase_bound,
    bound_states,
    channels_up_to,
    count_above_one,
    free_waves,
    outgoing_green,
    phase_branch_on_grid,
    phase_shift,
    phase_shift_table,
    smatrix_eigenvalue,
    stationary_smatrix_channel,
    weighted_resolvent_norm,
)


def s_wave_square_well_phase(energy, depth=2.0, a=1.0):
    """Independent closed form for the s-wave well, principal branch."""
    k, kk = math.sqrt(energy), math.sqrt(energy + depth)
    d = -k * a + math.atan(k / kk * math.tan(kk * a))
    return (d + math.pi / 2) % math.pi - math.pi / 2


class TestChannels:
    def test_weights_d3(self):
        assert [Channel(3, l).weight for l in range(4)] == [1, 3, 5, 7]

    def test_weights_d2(self):
        assert [Channel(2, l).weight for l in range(4)] == [1, 2, 2, 2]

    def test_centrifugal(self):
        assert Channel(3, 2).centrifugal == 6.0
        assert Channel(2, 0).centrifugal == -0.25

    def test_validation(self):
        with pytest.raises(ValueError):
            Channel(4, 0)
        with pytest.raises(ValueError):
            Channel(3, -1)


class TestFreeWaves:
    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("ell", [0, 1, 5])
    def test_wronskian_normalisation(self, dim, ell):
        x = np.linspace(0.4, 25.0, 40)
        F, Fp, G, Gp = free_waves(dim, ell, x)
        assert np.max(np.abs(F * Gp - Fp * G + 1.0)) < 5e-14


class TestPhaseShift:
    def test_free_potential_zero_phase(self):
        free = step_profile(0.0, 1.0, 2.0)
        for ell in (0, 1, 3):
            for dim in (2, 3):
                d = phase_shift(Channel(dim, ell), free, 1.7, 0.5)
                assert abs(d) < 1e-9

    def test_square_well_closed_form(self, square_well):
        ch = Channel(3, 0)
        for e in np.linspace(0.3, 12.0, 50):
            got = phase_shift(ch, square_well, e, 1.0)
            assert got == pytest.approx(s_wave_square_well_phase(e), abs=1e-8)

    def test_higher_waves_against_ivp_oracle(self, square_well):
        # independent route: scipy integration plus direct matching
        for ell in (1, 2, 5):
            e = 3.0
            c = ell * (ell + 1)

            def rhs(r, y):
                val = -2.0 if r < 1.0 else 0.0
                return [y[1], ((val - e) + c / r**2) * y[0]]

            r0, rm = 1e-4, 1.7
            sol = solve_ivp(rhs, (r0, rm), [r0 ** (ell + 1), (ell + 1) * r0**ell],
                            rtol=1e-12, atol=1e-300)
            u, up = sol.y[0][-1], sol.y[1][-1]
            k = math.sqrt(e)
            F, Fp, G, Gp = free_waves(3, ell, np.array([k * rm]))
            tan_num = -(F[0] * up - k * Fp[0] * u)
            tan_den = G[0] * up - k * Gp[0] * u
            oracle = math.atan2(tan_num, tan_den)
            oracle = (oracle + math.pi / 2) % math.pi - math.pi / 2
            got = phase_shift(Channel(3, ell), square_well, e, 1.0)
            assert got == pytest.approx(oracle, abs=5e-9)

    def test_unitarity_of_eigenvalue(self, default_triple):
        val = smatrix_eigenvalue(Channel(3, 1), default_triple.v, 1.1, 0.17)
        assert abs(abs(val) - 1.0) < 1e-12

    def test_batch_matches_scalar(self, default_triple):
        chans = channels_up_to(3, 4)
        es = np.array([0.8, 1.3])
        table = phase_shift_table(chans, default_triple.v, es, 0.2)
        for i, ch in enumerate(chans):
            for j, e in enumerate(es):
                assert table[i, j] == pytest.approx(
                    phase_shift(ch, default_triple.v, e, 0.2), abs=1e-9)

    def test_rejects_nonpositive_energy(self, square_well):
        with pytest.raises(ValueError):
            phase_shift(Channel(3, 0), square_well, -1.0, 1.0)

    def test_d2_free_and_well(self):
        free = step_profile(0.0, 0.5, 0.6)
        assert abs(phase_shift(Channel(2, 1), free, 2.0, 1.0)) < 1e-9
        # attractive well in d=2 gives a positive s-wave phase at low energy
        well = step_profile(-1.0, 0.0, 1.0)
        assert phase_shift(Channel(2, 0), well, 0.2, 1.0) > 0.05


class TestPhaseBranch:
    def test_high_energy_anchor_tends_to_zero(self):
        # depth 3 well holds exactly one s-wave bound state; by the standard
        # threshold count the branch then starts near pi and dies off at
        # high energy once anchored there
        deep = step_profile(-3.0, 0.0, 1.0)
        es = np.geomspace(0.05, 40.0, 24)
        branch = phase_branch_on_grid(Channel(3, 0), deep, es, 1.0)
        assert branch[-1] == pytest.approx(0.0, abs=0.25)
        assert branch[0] > 2.0

    def test_resonance_jump_of_about_pi(self, default_triple):
        # the lowest even channel resonance at hbar = 0.2 sits near 0.9992
        es = np.linspace(0.9988, 0.9997, 31)
        branch = phase_branch_on_grid(Channel(3, 2), default_triple.v, es, 0.2,
                                      anchor="relative")
        jump = branch[-1] - branch[0]
        assert jump == pytest.approx(math.pi, abs=0.25)

    def test_born_envelope_is_an_upper_bound(self, square_well):
        for e in (4.0, 9.0, 25.0):
            env = float(born_phase_bound(square_well, e, 1.0))
            for ell in (0, 1, 2):
                assert abs(phase_shift(Channel(3, ell), square_well, e, 1.0)) <= env


class TestBoundStates:
    def test_dirichlet_ball_limit(self):
        # a very tall wall approximates the Dirichlet ball: E_n ~ (hbar n pi / a)^2
        hbar = 0.1
        tall = sum_profiles(
            step_profile(0.0, 0.2, 0.3),
            step_profile(400.0, 1.0, 60.0, blend=0.02),
            name="tall_wall")
        states = bound_states(tall, hbar, [Channel(3, 0)], 1.4,
                              wall_height=400.0, r_box=3.0)
        exact = [(hbar * n * math.pi) ** 2 for n in (1, 2, 3)]
        got = states.energies()
        assert len(got) >= 3
        for g, e in zip(got[:3], exact):
            assert g == pytest.approx(e, rel=0.02)

    def test_degeneracy_weight(self, default_triple):
        states = bound_states(default_triple.v_int, 0.2, [Channel(3, 1)], 1.4)
        assert states.states
        assert all(s.weight == 3 for s in states.states)

    def test_count_below(self, default_triple):
        states = bound_states(default_triple.v_int, 0.2,
                              channels_up_to(3, 4), 1.4)
        # levels at ~0.301 (w=1), ~0.612 (w=3), ~0.999 (w=5), ~1.172 (w=1)
        assert states.count_below(0.5) == 1
        assert states.count_below(0.8) == 4
        assert states.count_below(1.3) == 10

    def test_grid_refinement_convergence(self, default_triple):
        coarse = bound_states(default_triple.v_int, 0.2, [Channel(3, 0)], 1.4)
        fine = bound_states(default_triple.v_int, 0.2, [Channel(3, 0)], 1.4,
                            base_step=1.2e-3)
        for a, b in zip(coarse.energies(), fine.energies()):
            assert a == pytest.approx(b, abs=5e-7)

    def test_wall_must_confine(self, square_well):
        with pytest.raises(ValueError):
            bound_states(square_well, 0.2, [Channel(3, 0)], 1.0)


class TestGreenKernels:
    def test_free_closed_form(self):
        free = step_profile(0.0, 0.5, 0.6)
        e = 1.7
        k = math.sqrt(e)
        nodes = np.linspace(0.1, 2.0, 9)
        kern = outgoing_green(Channel(3, 0), free, e, 1.0, nodes)
        for i, r in enumerate(nodes):
            for j, rp in enumerate(nodes):
                exact = math.sin(k * min(r, rp)) * np.exp(1j * k * max(r, rp)) / k
                assert abs(kern.matrix[i, j] - exact) < 1e-9

    def test_symmetry_on_random_nodes(self, default_triple, rng):
        nodes = np.sort(rng.uniform(0.05, 1.3, size=12))
        kern = outgoing_green(Channel(3, 1), default_triple.v_ext, 1.05, 0.2, nodes)
        assert np.max(np.abs(kern.matrix - kern.matrix.T)) < 1e-10 * np.max(np.abs(kern.matrix))

    def test_imaginary_part_positive_semidefinite(self, default_triple):
        nodes = np.linspace(0.05, 1.3, 16)
        kern = outgoing_green(Channel(3, 0), default_triple.v_ext, 1.1, 0.15, nodes)
        w = np.linspace(0.2, 1.0, 16)  # arbitrary nonnegative weights
        m = np.sqrt(w)[:, None] * np.imag(kern.matrix) * np.sqrt(w)[None, :]
        vals = np.linalg.eigvalsh(0.5 * (m + m.T))
        # negative eigenvalues only at the absolute rounding floor
        assert vals.min() > -1e-11

    def test_wronskian_drift_small(self, default_triple):
        nodes = np.linspace(0.1, 1.3, 8)
        kern = outgoing_green(Channel(3, 2), default_triple.v_ext, 0.9, 0.15, nodes)
        assert kern.wronskian_drift < 1e-8


class TestBirmanSchwinger:
    def test_zero_plug_gives_zero_kernels(self, square_well):
        from types import SimpleNamespace
        from resoflow.potentials import step_profile as sp

        zero = sp(0.0, 0.2, 0.3)
        fake = SimpleNamespace(v0=zero, v_ext=square_well, omega1=1.0,
                               e_plus=1.5)
        kern = birman_schwinger_ext(fake, Channel(3, 0), 1.0, 0.5)
        assert np.max(np.abs(kern.a)) == 0.0
        assert np.max(np.abs(kern.b)) == 0.0

    def test_symmetry_and_positivity(self, default_triple):
        kern = birman_schwinger_ext(default_triple, Channel(3, 0), 1.1, 0.15)
        assert kern.asymmetry < 1e-10
        b_eigs = np.linalg.eigvalsh(kern.b)
        assert b_eigs.min() > -1e-11
        # outgoing kernel's imaginary part is rank one per channel
        assert b_eigs[-2] < max(1e-12, 1e-8 * b_eigs[-1])

    def test_node_doubling_stability(self, default_triple):
        a_lo = np.linalg.eigvalsh(
            birman_schwinger_ext(default_triple, Channel(3, 0), 0.9, 0.2,
                                 n_nodes=128).a)
        a_hi = np.linalg.eigvalsh(
            birman_schwinger_ext(default_triple, Channel(3, 0), 0.9, 0.2,
                                 n_nodes=256).a)
        big_lo = a_lo[np.abs(a_lo) > 0.5]
        big_hi = a_hi[np.abs(a_hi) > 0.5]
        assert len(big_lo) == len(big_hi)
        assert np.max(np.abs(np.sort(big_lo) - np.sort(big_hi))) < 1e-6

    def test_interior_count_matches_bound_states(self, default_triple):
        hbar = 0.2
        ch = Channel(3, 0)
        states = bound_states(default_triple.v_int, hbar, [ch], 1.45)
        for e in (0.25, 0.5, 0.9, 1.3):
            kern = birman_schwinger_int(default_triple, ch, e, hbar)
            cnt, _ = count_above_one(kern)
            assert cnt == states.count_below(e, weighted=False)

    def test_interior_kernel_requires_low_energy(self, default_triple):
        with pytest.raises(ValueError):
            birman_schwinger_int(default_triple, Channel(3, 0), 1.6, 0.2)

    def test_kernel_difference_decays_with_hbar(self, default_triple):
        ch = Channel(3, 0)
        norms = []
        for hb in (0.2, 0.15, 0.12):
            kern = birman_schwinger_ext(default_triple, ch, 0.8, hb)
            k_int = birman_schwinger_int(default_triple, ch, 0.8, hb)
            norms.append(np.linalg.norm(kern.a - k_int, 2))
        assert norms[0] > norms[1] > norms[2]
        assert norms[2] < 1e-4


class TestStationary:
    def test_identity_for_zero_perturbation(self):
        from types import SimpleNamespace

        zero = step_profile(0.0, 0.4, 0.5)
        shim = SimpleNamespace(v=zero)
        s = stationary_smatrix_channel(Channel(3, 0), shim,
                                       OperatorPair.FULL_FREE, 1.3, 1.0)
        assert s == pytest.approx(1.0, abs=1e-12)

    def test_agreement_with_phase_route(self, square_well, default_triple):
        from types import SimpleNamespace

        shim = SimpleNamespace(v=square_well)
        for ell, e in ((0, 2.3), (1, 0.7), (3, 6.0)):
            s_stat = stationary_smatrix_channel(Channel(3, ell), shim,
                                                OperatorPair.FULL_FREE, e, 1.0)
            s_ode = smatrix_eigenvalue(Channel(3, ell), square_well, e, 1.0)
            assert abs(s_stat - s_ode) < 1e-6
        s_stat = stationary_smatrix_channel(Channel(3, 2), default_triple,
                                            OperatorPair.FULL_FREE, 0.9, 0.2)
        s_ode = smatrix_eigenvalue(Channel(3, 2), default_triple.v, 0.9, 0.2)
        assert abs(s_stat - s_ode) < 1e-6

    def test_unitary_by_construction(self, default_triple):
        for pair in (OperatorPair.FULL_FREE, OperatorPair.EXT_FREE,
                     OperatorPair.FULL_EXT):
            s = stationary_smatrix_channel(Channel(3, 1), default_triple,
                                           pair, 1.05, 0.2)
            assert abs(abs(s) - 1.0) < 1e-8


def test_weighted_resolvent_norm_scales_like_inverse_hbar():
    free = step_profile(0.0, 0.5, 0.6)
    hbars = [0.4, 0.3, 0.22, 0.16]
    vals = [weighted_resolvent_norm(free, 1.0, hb, channels=channels_up_to(3, 4),
                                    n_nodes=64, r_window=20.0)
            for hb in hbars]
    x = np.log(hbars)
    y = np.log(vals)
    slope = np.polyfit(x, y, 1)[0]
    assert -1.3 <= slope <= -0.7
