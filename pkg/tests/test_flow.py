import math

import numpy as np
import pytest

from resoflow.assembly import OperatorPair
from resoflow.flow import (
    DiagonalBranches,
    MatrixPath,
    SampledMatrices,
    brute_force_flow,
    count_on_arc,
    flow_difference_identity,
    mu_flow,
    mu_via_birman_schwinger,
    product_perturbation_check,
    random_small_arc_generator,
    random_unitary_family,
    rotation_speed_bounds_check,
    spectral_flow,
    ssf_branch,
    ssf_from_table,
)
from resoflow.potentials import step_profile


class TestCountOnArc:
    def test_identity_matrix_counts_nothing(self):
        assert count_on_arc(np.eye(4), 1.0, 5.0) == 0

    def test_explicit_diagonal(self):
        u = np.diag([1j, -1, -1j])
        assert count_on_arc(u, math.pi / 2, 3 * math.pi / 2) == 2
        assert count_on_arc(u, 3 * math.pi / 2, math.pi / 2) == -2

    def test_random_matrix_against_dense_eigensolve(self, rng):
        for _ in range(12):
            z = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
            q = np.linalg.qr(z)[0]
            t1, t2 = sorted(rng.uniform(0.05, 2 * math.pi - 0.05, 2))
            expected = int(np.sum(
                (np.mod(np.angle(np.linalg.eigvals(q)), 2 * math.pi) >= t1)
                & (np.mod(np.angle(np.linalg.eigvals(q)), 2 * math.pi) < t2)))
            assert count_on_arc(q, t1, t2) == expected

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            count_on_arc(np.eye(2), 0.0, 1.0)


class TestSpectralFlow:
    def test_single_winding(self):
        grid = np.linspace(0.0, 1.0, 33)
        fam = DiagonalBranches(grid=grid, branches=2 * math.pi * grid[None, :],
                               weights=[1.0])
        for theta in (0.5, math.pi, 5.9):
            assert spectral_flow(fam, theta).flow == 1

    def test_constant_family(self):
        grid = np.linspace(0.0, 1.0, 9)
        fam = DiagonalBranches(grid=grid, branches=np.full((2, 9), 0.9),
                               weights=[1.0, 2.0])
        assert spectral_flow(fam, 2.2).flow == 0

    def test_certificate_telescopes_and_serialises(self):
        grid = np.linspace(0.0, 1.0, 17)
        branches = np.stack([3 * math.pi * grid, -2 * math.pi * grid + 0.3])
        fam = DiagonalBranches(grid=grid, branches=branches, weights=[1.0, 2.0])
        res = spectral_flow(fam, 1.0)
        assert res.flow == res.telescoped()
        assert res.crossings
        payload = res.to_json()
        assert '"flow"' in payload
        for seg in res.segments:
            if seg.gap_angle is not None:
                assert seg.gap_distance > 0

    def test_matrix_family_vs_brute_force(self, rng):
        for _ in range(8):
            fam = random_unitary_family(rng, 4)
            theta = rng.uniform(0.3, 2 * math.pi - 0.3)
            assert (spectral_flow(fam, theta).flow
                    == brute_force_flow(fam.refine, theta, n=4000))

    def test_diagonal_vs_matrix_representations(self, rng):
        # the same family through both representations
        phases = np.array([0.2, 1.1])
        grid = np.linspace(0.0, 1.0, 21)
        branches = np.stack([phases[0] + 5.0 * grid, phases[1] - 4.0 * grid])
        diag = DiagonalBranches(grid=grid, branches=branches, weights=[1.0, 1.0])
        mats = [np.diag(np.exp(1j * branches[:, j])) for j in range(len(grid))]
        samp = SampledMatrices(grid=grid, matrices=mats)
        for theta in (0.7, 2.9, 4.4):
            assert spectral_flow(diag, theta).flow == spectral_flow(samp, theta).flow

    def test_concatenation(self, rng):
        fam = random_unitary_family(rng, 3)
        theta = 2.0
        total = spectral_flow(fam, theta).flow
        left = SampledMatrices.from_callable(fam.refine, np.linspace(0, 0.4, 21))
        right = SampledMatrices.from_callable(fam.refine, np.linspace(0.4, 1.0, 31))
        assert total == spectral_flow(left, theta).flow + spectral_flow(right, theta).flow

    def test_refinement_invariance(self, rng):
        fam_coarse = random_unitary_family(rng, 4, n_grid=24)
        fam_fine = SampledMatrices.from_callable(fam_coarse.refine,
                                                 np.linspace(0, 1, 96))
        for theta in (1.0, math.pi, 5.0):
            assert (spectral_flow(fam_coarse, theta).flow
                    == spectral_flow(fam_fine, theta).flow)

    def test_no_gap_error_without_callback(self):
        grid = np.linspace(0.0, 1.0, 3)
        # dense spectra at both ends of a huge step and no way to refine
        rng = np.random.default_rng(0)
        mats = []
        for t in grid:
            z = rng.standard_normal((24, 24)) + 1j * rng.standard_normal((24, 24))
            mats.append(np.linalg.qr(z)[0])
        fam = SampledMatrices(grid=grid, matrices=mats)
        with pytest.raises(RuntimeError, match="gap"):
            spectral_flow(fam, math.pi)

    def test_theta_domain(self):
        grid = np.linspace(0.0, 1.0, 5)
        fam = DiagonalBranches(grid=grid, branches=np.zeros((1, 5)), weights=[1.0])
        with pytest.raises(ValueError):
            spectral_flow(fam, 0.0)
        with pytest.raises(ValueError):
            spectral_flow(fam, 2 * math.pi)


class TestDifferenceIdentity:
    def test_constant_family(self):
        grid = np.linspace(0, 1, 5)
        fam = DiagonalBranches(grid=grid, branches=np.full((1, 5), 1.3),
                               weights=[1.0])
        assert flow_difference_identity(fam, 1.0, 4.0) == (0, 0)

    def test_equal_angles_on_winding(self):
        grid = np.linspace(0, 1, 33)
        fam = DiagonalBranches(grid=grid, branches=2 * math.pi * grid[None, :],
                               weights=[1.0])
        assert flow_difference_identity(fam, 2.0, 2.0) == (0, 0)

    def test_random_families(self, rng):
        for _ in range(25):
            fam = random_unitary_family(rng, 4)
            t1, t2 = rng.uniform(0.2, 2 * math.pi - 0.2, 2)
            lhs, rhs = flow_difference_identity(fam, t1, t2)
            assert lhs == rhs


class TestProductPerturbation:
    def test_identity_twist_collapses_to_equality(self, rng):
        u_fam = random_unitary_family(rng, 3)
        eye_path = MatrixPath(factors=((np.eye(3, dtype=complex),
                                        np.zeros(3), 1.0),))
        ut_fam = SampledMatrices.from_callable(eye_path, u_fam.grid)
        rep = product_perturbation_check(u_fam, ut_fam, 2.5, 1e-6)
        assert rep["hypotheses_ok"]
        assert rep["m"] == 0
        assert rep["lower"] == rep["sf_product"] == rep["upper"]

    def test_commuting_two_by_two_hand_calculation(self):
        # U rotates both phases by 3 pi, the twist winds one phase once
        grid = np.linspace(0.0, 1.0, 65)
        q = np.eye(2, dtype=complex)
        u_path = MatrixPath(factors=((q, np.array([3 * math.pi, 3 * math.pi]), 1.0),))
        ut_path = MatrixPath(factors=((q, np.array([2 * math.pi, 0.0]), 1.0),))
        u_fam = SampledMatrices.from_callable(u_path, grid)
        ut_fam = SampledMatrices.from_callable(ut_path, grid)
        phi = 1e-9
        theta = 2.0
        rep = product_perturbation_check(u_fam, ut_fam, theta, phi)
        # by hand: each U phase climbs to 3 pi, crossing theta + 2 pi k at
        # k = 0, 1, so sf(U) = 4; m = 1; the product phases climb to 5 pi
        # and 3 pi, giving 3 + 2 = 5 = sf(U) + m
        assert rep["hypotheses_ok"]
        assert rep["m"] == 1
        assert rep["sf_product"] == rep["lower"] == rep["upper"] == 5

    def test_random_pairs_bound_holds(self, rng):
        for _ in range(30):
            dim = int(rng.integers(2, 6))
            phi = float(rng.uniform(0.2, 0.8))
            u_fam = random_unitary_family(rng, dim)
            ut_fam, m_exact = random_small_arc_generator(rng, dim, phi)
            theta = float(rng.uniform(phi + 0.05, 2 * math.pi - phi - 0.05))
            rep = product_perturbation_check(u_fam, ut_fam, theta, phi)
            assert rep["hypotheses_ok"]
            assert rep["m"] == m_exact
            assert rep["holds"]

    def test_hypothesis_violations_reported(self, rng):
        u_fam = random_unitary_family(rng, 3)
        ut_fam, _ = random_small_arc_generator(rng, 3, 1.2)
        rep = product_perturbation_check(u_fam, ut_fam, math.pi, 0.3)
        assert not rep["hypotheses_ok"]
        assert rep["violations"]

    def test_rotation_speed_bounds(self, rng):
        for _ in range(10):
            dim = 4
            z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            u0 = np.linalg.qr(z)[0]
            h = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            h = 0.5 * (h + h.conj().T)
            h *= 0.6 / np.linalg.norm(h, 2)
            rep = rotation_speed_bounds_check(u0, h, 2.8)
            assert rep.get("upper_holds", True)
            assert rep.get("lower_holds", True)


class TestCounting:
    def test_free_potential_counts_zero(self):
        from types import SimpleNamespace
        free = step_profile(0.0, 0.5, 0.6)
        shim = SimpleNamespace(v=free, v_ext=free, e_plus_prime=1.0, omega1=1.0)
        for theta in (1.0, math.pi, 5.2):
            cv = mu_flow(shim, OperatorPair.FULL_FREE, 0.8, theta, 1.0)
            assert cv.value == 0

    def test_threshold_winding_of_shallow_bound_state(self):
        # one bound state near threshold: the count at low energy picks up
        # one full phase winding
        from types import SimpleNamespace
        well = step_profile(-3.0, 0.0, 1.0)
        shim = SimpleNamespace(v=well, v_ext=well, e_plus_prime=1.0, omega1=1.0)
        cv = mu_flow(shim, OperatorPair.FULL_FREE, 0.05, math.pi, 1.0)
        assert cv.value == 1

    def test_attractive_potentials_count_nonnegative(self, rng):
        from types import SimpleNamespace
        for _ in range(6):
            depth = float(rng.uniform(0.5, 6.0))
            width = float(rng.uniform(0.5, 1.6))
            well = step_profile(-depth, 0.0, width, blend=0.04)
            shim = SimpleNamespace(v=well, v_ext=well, e_plus_prime=1.0,
                                   omega1=width)
            theta = float(rng.uniform(0.4, 2 * math.pi - 0.4))
            e = float(rng.uniform(0.1, 2.0))
            assert mu_flow(shim, OperatorPair.FULL_FREE, e, theta, 1.0).value >= 0

    def test_counting_difference_is_arc_count(self, default_triple):
        # difference of counts at two marked angles equals the arc count of
        # the endpoint table (with the high-energy term vanishing)
        from resoflow.assembly import arc_count, assemble
        seeds = [0.99925011, 1.17199781]
        hb, e = 0.2, 1.05
        t1, t2 = 2.0, 4.6
        mu1 = mu_flow(default_triple, OperatorPair.FULL_FREE, e, t1, hb,
                      seeds=seeds)
        mu2 = mu_flow(default_triple, OperatorPair.FULL_FREE, e, t2, hb,
                      seeds=seeds)
        table = assemble(default_triple, OperatorPair.FULL_FREE, e, hb)
        # endpoint identity: the counting difference equals the arc count of
        # the terminal scattering matrix (the far end contributes nothing)
        assert mu1.value - mu2.value == arc_count(table, t1, t2)

    def test_kernel_route_trivial_and_theta_pi(self, default_triple):
        out = mu_via_birman_schwinger(default_triple, 0.8, math.pi, 0.2)
        assert out["count"] == 4  # one s level (w 1) plus one p level (w 3)


class TestSsf:
    def test_free_table_gives_zero(self):
        from test_assembly import make_table
        t = make_table([0.0, 0.0, 0.0])
        assert ssf_from_table(t).fractional == 0.0

    def test_determinant_restatement(self, rng):
        from test_assembly import make_table
        phases = rng.uniform(-0.5, 0.5, 6) * np.geomspace(1, 1e-8, 6)
        weights = rng.integers(1, 6, 6).astype(float)
        t = make_table(phases, weights)
        val = ssf_from_table(t)
        det = np.prod(np.exp(1j * phases) ** weights)
        assert abs(det - np.exp(-2j * math.pi * val.fractional)) < 1e-10

    def test_branch_decreases_by_multiplicity_across_resonance(self, default_triple):
        from resoflow.assembly import build_family
        # the m = 5 crossing at hbar = 0.2; the reference family carries the
        # smooth background drift, so the step shows up in the difference
        grid = np.linspace(0.9975, 1.0010, 13)
        fam = build_family(default_triple, OperatorPair.FULL_FREE, grid, 0.2,
                           tol=1e-6, seeds=[0.99925011])
        ref = build_family(default_triple, OperatorPair.EXT_FREE,
                           [grid[0], grid[-1]], 0.2, tol=1e-6)
        xi = ssf_branch(fam)
        xi_ref = ssf_branch(ref)
        drop = (xi[0] - xi[-1]) - (xi_ref[0] - xi_ref[-1])
        assert drop == pytest.approx(5.0, abs=0.05)
