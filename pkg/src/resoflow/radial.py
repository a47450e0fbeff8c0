"""Per-channel radial Schrodinger computations.

A scattering problem with a radial potential in d = 2 or 3 dimensions
splits into angular-momentum channels.  Each channel carries a degeneracy
weight and a centrifugal coefficient; on the half-line the reduced problem
is ``-hbar^2 u'' + (V(r) + hbar^2 c/r^2) u = E u``.  This module computes,
per channel:

* scattering phase shifts (principal values and continuous branches),
* bound / quasi-bound spectra of confining potentials,
* outgoing Green kernels and the sandwiched resolvent matrices used by
  eigenvalue-counting formulas,
* the stationary (resolvent-based) S-matrix value, an algebraic route that
  is independent of the phase-shift integration and serves as its oracle.

Sign and normalization conventions are pinned by tests against closed
forms: the free pair (F, G) satisfies F G' - F' G = -1, matching
``u ~ cos(delta) F + sin(delta) G``, and the free outgoing kernel at
hbar = 1, l = 0 equals sin(k r<) e^{i k r>} / k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal
from scipy.special import jv, jvp, spherical_jn, spherical_yn, yv, yvp

from .numerov import propagate
from .potentials import RadialPotential

__all__ = [
    "Channel",
    "channels_up_to",
    "free_waves",
    "phase_shift",
    "phase_shift_table",
    "phase_branch_on_grid",
    "smatrix_eigenvalue",
    "born_phase_bound",
    "BoundState",
    "BoundStateList",
    "bound_states",
    "GreenKernel",
    "outgoing_green",
    "interior_green",
    "BSKernels",
    "birman_schwinger_ext",
    "birman_schwinger_int",
    "count_above_one",
    "stationary_smatrix_channel",
    "weighted_resolvent_norm",
    "MatchError",
]


class MatchError(RuntimeError):
    """Raised when asymptotic matching is numerically degenerate."""


@dataclass(frozen=True)
class Channel:
    """One angular-momentum sector of the radial reduction."""

    dimension: int
    ell: int

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if self.ell < 0:
            raise ValueError("ell must be non-negative")

    @property
    def weight(self) -> int:
        if self.dimension == 3:
            return 2 * self.ell + 1
        return 1 if self.ell == 0 else 2

    @property
    def centrifugal(self) -> float:
        """Coefficient c in the hbar^2 c / r^2 term of the reduced operator."""
        if self.dimension == 3:
            return float(self.ell * (self.ell + 1))
        return float(self.ell * self.ell) - 0.25


def channels_up_to(dimension: int, l_max: int) -> tuple:
    return tuple(Channel(dimension, l) for l in range(l_max + 1))


# ---------------------------------------------------------------------------
# free solutions


def free_waves(dimension: int, ell: int, x):
    """Regular/irregular free radial pair (F, F', G, G') at argument x = k r.

    Normalised so that F G' - F' G = -1.  F is the solution regular at the
    origin; asymptotically the pair oscillates with unit amplitude.
    """
    x = np.asarray(x, dtype=float)
    if dimension == 3:
        j = spherical_jn(ell, x)
        jp = spherical_jn(ell, x, derivative=True)
        y = spherical_yn(ell, x)
        yp = spherical_yn(ell, x, derivative=True)
        F = x * j
        Fp = j + x * jp
        G = -x * y
        Gp = -(y + x * yp)
    else:
        s = np.sqrt(math.pi * x / 2.0)
        J = jv(ell, x)
        Jp = jvp(ell, x)
        Y = yv(ell, x)
        Yp = yvp(ell, x)
        F = s * J
        Fp = s * (J / (2.0 * x) + Jp)
        G = -s * Y
        Gp = -s * (Y / (2.0 * x) + Yp)
    return F, Fp, G, Gp


# ---------------------------------------------------------------------------
# start conditions and matching


def _leading_free_radius(v: RadialPotential) -> float:
    """Largest breakpoint below which the profile vanishes identically."""
    best = 0.0
    for b in sorted(v.breakpoints):
        if b <= 0:
            continue
        rr = np.linspace(1e-9, b, 101)
        if np.max(np.abs(v(rr))) == 0.0:
            best = b
        else:
            break
    return best


def _frobenius_indicial(channel: Channel) -> float:
    # s(s-1) = c with the regular (larger) root
    c = channel.centrifugal
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * c))


def _series_radius(v, energies, hbar, *, cap=0.04, series_tol=1e-10):
    """Start radius where the two-term regular series is valid for every channel.

    The truncated series u ~ r^s (1 + c2 r^2) carries a relative error of
    order (q r^2)^2 / 120; the s = 1 channel is the most restrictive, so one
    radius serves a mixed-channel batch.
    """
    first_break = min((b for b in v.breakpoints if b > 0), default=0.5)
    r0 = min(cap, 0.2 * first_break)
    q_scale = (abs(float(v(min(r0, 1e-3)))) + float(np.max(energies))) / hbar**2
    r_err = (120.0 * series_tol) ** 0.25 / math.sqrt(max(q_scale, 1e-12))
    return max(min(r0, r_err), 1e-4)


def _start_conditions(channel, v, energies, hbar, r_free, *, r0=None):
    """Per-lane (r_start, u0, up0) for the regular solution."""
    k = np.sqrt(energies) / hbar
    if r_free > 0:
        x = k * r_free
        F, Fp, _, _ = free_waves(channel.dimension, channel.ell, x)
        return r_free, F.astype(complex), (k * Fp).astype(complex)
    s = _frobenius_indicial(channel)
    if r0 is None:
        r0 = _series_radius(v, energies, hbar)
    v0 = float(v(r0))
    q0 = (v0 - energies) / hbar**2
    c2 = q0 / (4.0 * s + 2.0)
    c4 = q0 * c2 / (8.0 * s + 12.0)
    u0 = np.ones_like(energies, dtype=complex)
    poly = 1.0 + c2 * r0 * r0 + c4 * r0**4
    up0 = (s / r0 + (2.0 * c2 * r0 + 4.0 * c4 * r0**3) / poly).astype(complex)
    return r0, u0, up0


def _match_radius(v: RadialPotential, hbar, energies, *, tail_tol=1e-9) -> float:
    # a finite offset past the support keeps the final segment long enough
    # for the endpoint derivative to stay clear of rounding cancellation
    r_m = max(v.support_radius, 0.5) + 0.25
    if v.tail_amplitude > 0 and math.isfinite(v.decay_exponent):
        # push the matching radius until the neglected Born tail is small
        k_min = math.sqrt(np.min(energies)) / hbar
        rho = v.decay_exponent
        target = tail_tol * hbar * hbar * k_min * (rho - 1.0) / v.tail_amplitude
        r_tail = target ** (-1.0 / (rho - 1.0)) - 1.0
        r_m = max(r_m, min(r_tail, 500.0))
    return r_m


def _phase_from_match(channel, k, r_m, u, up):
    """Principal phase shift in (-pi/2, pi/2] from values at the match radius.

    Channels far beyond their centrifugal activation carry solutions (and
    free irregular references) that underflow or overflow double precision;
    their true phase is indistinguishable from zero and is reported as such
    rather than failing the batch.
    """
    x = k * r_m
    with np.errstate(invalid="ignore", over="ignore"):
        F, Fp, G, Gp = free_waves(channel.dimension, channel.ell, x)
        sin_part = -(F * up - k * Fp * u)
        cos_part = G * up - k * Gp * u
        amp = np.hypot(np.abs(sin_part), np.abs(cos_part))
        delta = np.arctan2(np.real(sin_part), np.real(cos_part))
    delta = np.where(delta > math.pi / 2, delta - math.pi, delta)
    delta = np.where(delta <= -math.pi / 2, delta + math.pi, delta)

    # deep pre-activation: regular free amplitude negligible at the match
    # radius, or the propagated solution underflowed to zero outright
    dead = (~np.isfinite(delta) | (np.abs(F) < 1e-120)
            | ((np.abs(u) + np.abs(up)) == 0.0))
    if np.any(dead):
        delta = np.where(dead, 0.0, delta)
    live = ~dead
    floor = 1e-13 * (np.abs(u) * k + np.abs(up))
    if np.any(amp[live] <= floor[live]):
        raise MatchError("asymptotic matching is degenerate (vanishing amplitude)")
    return delta


def phase_shift_table(channels: Sequence[Channel], v: RadialPotential,
                      energies, hbar: float, *, tol=1e-10) -> np.ndarray:
    """Principal phase shifts on a (channel, energy) grid in one batch.

    Returns shape (n_channels, n_energies) with values in (-pi/2, pi/2].
    The whole grid travels through the propagator as one lane batch.
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    if np.any(energies <= 0):
        raise ValueError("energies must be positive")
    if not channels:
        return np.zeros((0, len(energies)))
    dim = channels[0].dimension
    if any(ch.dimension != dim for ch in channels):
        raise ValueError("channels must share the dimension")

    r_free = _leading_free_radius(v)
    r_m = _match_radius(v, hbar, energies)
    n_ch, n_e = len(channels), len(energies)

    out = np.empty((n_ch, n_e))
    # lanes grouped per channel (start radius differs only through r_free=const)
    e_lane = np.tile(energies, n_ch)
    c_lane = np.repeat([ch.centrifugal for ch in channels], n_e)
    if r_free > 0:
        r0 = min(r_free, r_m - 1e-9)
        u0 = np.empty(n_ch * n_e, dtype=complex)
        up0 = np.empty_like(u0)
        for i, ch in enumerate(channels):
            _, a, b = _start_conditions(ch, v, energies, hbar, r0)
            u0[i * n_e:(i + 1) * n_e] = a
            up0[i * n_e:(i + 1) * n_e] = b
    else:
        r0 = _series_radius(v, energies, hbar)
        u0 = np.empty(n_ch * n_e, dtype=complex)
        up0 = np.empty_like(u0)
        for i, ch in enumerate(channels):
            _, a, b = _start_conditions(ch, v, energies, hbar, 0.0, r0=r0)
            u0[i * n_e:(i + 1) * n_e] = a
            up0[i * n_e:(i + 1) * n_e] = b

    pts = np.unique(np.concatenate([[r0, r_m], [b for b in v.breakpoints if r0 < b < r_m]]))
    res = propagate(v, pts, e_lane, c_lane, hbar, u0, up0, tol=tol)
    u_m = res.u[-1]
    up_m = res.up[-1]
    k = np.sqrt(e_lane) / hbar
    for i, ch in enumerate(channels):
        sl = slice(i * n_e, (i + 1) * n_e)
        out[i] = _phase_from_match(ch, k[sl], r_m, u_m[sl], up_m[sl])
    return out


def phase_shift(channel: Channel, v: RadialPotential, energy: float,
                hbar: float, *, tol=1e-10) -> float:
    """Principal phase shift delta in (-pi/2, pi/2] at one energy.

    Branch-continuous values over energy grids come from
    :func:`phase_branch_on_grid`, which anchors the branch to delta -> 0 at
    high energy.
    """
    return float(phase_shift_table([channel], v, [energy], hbar, tol=tol)[0, 0])


def smatrix_eigenvalue(channel: Channel, v: RadialPotential, energy: float,
                       hbar: float, *, tol=1e-10) -> complex:
    """Unimodular S-matrix eigenvalue exp(2 i delta) for the channel."""
    delta = phase_shift(channel, v, energy, hbar, tol=tol)
    return complex(np.exp(2j * delta))


@lru_cache(maxsize=256)
def _abs_integral(v: RadialPotential, r_hi: float) -> float:
    val, _ = quad(lambda r: abs(float(v(r))), 0.0, r_hi,
                  points=[b for b in v.breakpoints if 0 < b < r_hi] or None,
                  limit=200)
    return val


def born_phase_bound(v: RadialPotential, energy, hbar: float) -> np.ndarray:
    """Rigorous envelope |delta_l(E)| <= C Int|V| / (hbar^2 k), uniform in l.

    Comes from the variable-phase comparison with |F|, |G| <= 1.1 on the
    oscillatory side; used to certify that phases are small at the top of a
    normalisation sweep.
    """
    energy = np.asarray(energy, dtype=float)
    r_hi = max(v.support_radius, 1.0) * 1.0
    if v.tail_amplitude > 0 and math.isfinite(v.decay_exponent):
        r_hi = max(r_hi, 60.0)
    total = _abs_integral(v, float(r_hi))
    tail = 0.0
    if v.tail_amplitude > 0 and math.isfinite(v.decay_exponent) and v.decay_exponent > 1:
        tail = v.tail_amplitude * (1.0 + r_hi) ** (1.0 - v.decay_exponent) / (v.decay_exponent - 1.0)
    k = np.sqrt(energy) / hbar
    return 1.3 * (total + tail) / (hbar * hbar * k)


def _unwrap_step(prev_branch, pv_next):
    """Continue a branch: pick pv + pi*n closest to the previous value."""
    n = np.round((prev_branch - pv_next) / math.pi)
    return pv_next + math.pi * n


def phase_branch_on_grid(channel: Channel, v: RadialPotential, energies,
                         hbar: float, *, tol=1e-10, anchor="high_energy",
                         max_refine=48, motion_cap=math.pi / 2) -> np.ndarray:
    """Continuous-in-energy phase branch on the given sorted grid.

    With ``anchor="high_energy"`` the grid is extended internally by a
    geometric ladder until the Born envelope certifies |delta| < 0.3; there
    the principal value equals the true phase, fixing the additive multiple
    of pi so delta -> 0 as E -> infinity.  Steps whose apparent motion
    exceeds ``motion_cap`` are bisected up to ``max_refine`` extra points
    per gap.  Narrow resonances can defeat pointwise bisection; sweep-level
    callers seed the grid with located crossings.
    """
    energies = np.sort(np.asarray(energies, dtype=float))
    grid = list(energies)
    if anchor == "high_energy":
        e_top = grid[-1]
        while float(born_phase_bound(v, e_top, hbar)) > 0.3:
            e_top *= 1.9
        ladder = []
        e = grid[-1]
        while e < e_top:
            e *= 1.9
            ladder.append(min(e, e_top))
        grid = grid + ladder
    grid = np.unique(np.asarray(grid))

    pv = phase_shift_table([channel], v, grid, hbar, tol=tol)[0]

    # refine on apparent motion, then verify every surviving step with its
    # midpoint; an aliased full-pi jump folds to zero and only the midpoint
    # test can expose it
    budget = max_refine
    verified: set = set()
    while budget > 0:
        budget -= 1
        jumps = np.abs(np.diff(_fold_pi(pv)))
        jumps = np.minimum(jumps, math.pi - jumps)  # distance mod pi
        bad = np.where(jumps >= min(motion_cap, 1.2))[0]
        if len(bad) == 0:
            todo = [j for j in range(len(grid) - 1)
                    if (grid[j], grid[j + 1]) not in verified]
            if not todo:
                break
            mids = np.array([0.5 * (grid[j] + grid[j + 1]) for j in todo])
            pv_mid = phase_shift_table([channel], v, mids, hbar, tol=tol)[0]
            keep_e, keep_pv = [], []
            for idx, j in enumerate(todo):
                left = pv[j]
                right = left + float(_fold_pi(np.asarray([pv[j + 1] - left]))[0])
                target = 0.5 * (left + right)
                mid_unw = target + float(_fold_pi(np.asarray([pv_mid[idx] - target]))[0])
                resid = abs(mid_unw - target)
                if resid <= 0.25 * abs(right - left) + 0.05:
                    verified.add((grid[j], mids[idx]))
                    verified.add((mids[idx], grid[j + 1]))
                keep_e.append(mids[idx])
                keep_pv.append(pv_mid[idx])
            grid = np.concatenate([grid, keep_e])
            pv = np.concatenate([pv, keep_pv])
            order = np.argsort(grid)
            grid, pv = grid[order], pv[order]
            continue
        new_pts = 0.5 * (grid[bad] + grid[bad + 1])
        new_pv = phase_shift_table([channel], v, new_pts, hbar, tol=tol)[0]
        grid = np.concatenate([grid, new_pts])
        pv = np.concatenate([pv, new_pv])
        order = np.argsort(grid)
        grid, pv = grid[order], pv[order]

    branch = np.empty_like(pv)
    branch[-1] = pv[-1]  # anchored: true phase equals principal value up top
    for i in range(len(pv) - 2, -1, -1):
        branch[i] = _unwrap_step(branch[i + 1], pv[i])
    # report on the requested grid only
    idx = np.searchsorted(grid, energies)
    return branch[idx]


def _fold_pi(x):
    return np.mod(x + math.pi / 2, math.pi) - math.pi / 2


# ---------------------------------------------------------------------------
# bound states


@dataclass(frozen=True)
class BoundState:
    channel: Channel
    energy: float
    radial_index: int
    boundary_mass: float

    @property
    def weight(self):
        return self.channel.weight


@dataclass(frozen=True)
class BoundStateList:
    states: tuple
    e_cut: float
    r_box: float
    grid_points: int

    def energies(self, channel=None):
        return [s.energy for s in self.states if channel is None or s.channel == channel]

    def count_below(self, energy, channel=None, weighted=True):
        """Number of states strictly below ``energy`` (weighted by degeneracy)."""
        total = 0
        for s in self.states:
            if channel is not None and s.channel != channel:
                continue
            if s.energy < energy:
                total += s.weight if weighted else 1
        return total


def _fd_channel_eigs(v_eff_grid, h, hbar, e_cut):
    """Dirichlet eigenvalues below e_cut of the second-order FD operator."""
    t = hbar * hbar / (h * h)
    diag = 2.0 * t + v_eff_grid
    off = -t * np.ones(len(v_eff_grid) - 1)
    try:
        vals, vecs = eigh_tridiagonal(diag, off, select="v",
                                      select_range=(-1e12, e_cut))
    except Exception as exc:  # pragma: no cover
        raise RuntimeError(f"tridiagonal eigensolve failed: {exc}") from exc
    return vals, vecs


def bound_states(v_conf: RadialPotential, hbar: float, channels: Sequence[Channel],
                 e_cut: float, *, wall_height=None, r_box=None, base_step=None,
                 boundary_tol=1e-6) -> BoundStateList:
    """Discrete spectrum below ``e_cut`` of a confining radial potential.

    Discretises each channel on [0, r_box] with Dirichlet walls using
    second-order finite differences on two nested grids and Richardson
    extrapolation (leaving O(h^4) error).  The box is sized so that
    eigenfunction mass at the outer wall is negligible; if it is not, a
    box-size error is raised.
    """
    if wall_height is None:
        far = max((b for b in v_conf.breakpoints), default=2.0) + 1.0
        wall_height = float(v_conf(far + 5.0))
    if wall_height <= e_cut:
        raise ValueError("potential does not confine below e_cut")
    if r_box is None:
        kappa = math.sqrt(wall_height - e_cut) / hbar
        start = max((b for b in v_conf.breakpoints), default=2.0)
        r_box = start + 18.0 / kappa

    states = []
    n_pts = 0
    for ch in channels:
        if base_step is None:
            k_max = math.sqrt(max(e_cut - 0.0, 0.5)) / hbar
            h = min(2.5e-3 / k_max * 12.0, r_box / 400.0)
        else:
            h = base_step
        n = int(math.ceil(r_box / h))
        vals_two = []
        vecs_fine = None
        grid_fine = None
        for factor in (1, 2):
            m = n * factor
            grid = np.linspace(0.0, r_box, m + 1)[1:-1]
            v_eff = np.asarray(v_conf(grid), dtype=float) + hbar * hbar * ch.centrifugal / grid**2
            vals, vecs = _fd_channel_eigs(v_eff, r_box / m, hbar, e_cut)
            vals_two.append(vals)
            if factor == 2:
                vecs_fine = vecs
                grid_fine = grid
        n_found = min(len(vals_two[0]), len(vals_two[1]))
        n_pts = max(n_pts, 2 * n)
        for idx in range(n_found):
            e_h, e_h2 = vals_two[0][idx], vals_two[1][idx]
            e_rich = (4.0 * e_h2 - e_h) / 3.0
            if e_rich >= e_cut:
                continue
            vec = vecs_fine[:, idx]
            tail = float(np.sum(vec[-5:] ** 2))
            if tail > boundary_tol:
                raise RuntimeError(
                    f"box too small: boundary mass {tail:.2e} for l={ch.ell}, "
                    f"E={e_rich:.6f}; enlarge r_box"
                )
            states.append(BoundState(channel=ch, energy=float(e_rich),
                                     radial_index=idx, boundary_mass=tail))
    states.sort(key=lambda s: (s.energy, s.channel.ell))
    return BoundStateList(states=tuple(states), e_cut=float(e_cut),
                          r_box=float(r_box), grid_points=n_pts)


# ---------------------------------------------------------------------------
# Green kernels


@dataclass(frozen=True)
class GreenKernel:
    channel: Channel
    energy: float
    nodes: np.ndarray
    matrix: np.ndarray
    wronskian_drift: float
    regular_values: np.ndarray  # scaled so Im G = pi * e_E outer-product
    phase_shift: float


def _outgoing_start(channel, k, r_m):
    F, Fp, G, Gp = free_waves(channel.dimension, channel.ell, np.asarray([k * r_m]))
    u = (G + 1j * F)[0]
    up = (k * (Gp + 1j * Fp))[0]
    return u, up


def _regular_through_nodes(channel, v, energy, hbar, nodes, r_m, tol):
    """Regular solution values/derivatives at [nodes..., r_m], with scales."""
    e_arr = np.asarray([energy], dtype=float)
    r_free = _leading_free_radius(v)
    if r_free > 0 and r_free < nodes[0]:
        r0, u0, up0 = _start_conditions(channel, v, e_arr, hbar, r_free)
    else:
        r_series = min(_series_radius(v, e_arr, hbar), 0.25 * nodes[0])
        r0, u0, up0 = _start_conditions(channel, v, e_arr, hbar, 0.0, r0=r_series)
    pts = np.unique(np.concatenate([[r0], nodes, [r_m],
                                    [b for b in v.breakpoints if r0 < b < r_m]]))
    res = propagate(v, pts, e_arr, np.asarray([channel.centrifugal]), hbar,
                    u0, up0, tol=tol)
    sel = np.searchsorted(pts, np.concatenate([nodes, [r_m]]))
    return pts, res, sel


def outgoing_green(channel: Channel, v_base: RadialPotential, energy: float,
                   hbar: float, nodes, *, tol=1e-10) -> GreenKernel:
    """Sampled kernel of the outgoing resolvent (E + i0 boundary values).

    Built as u_reg(r<) u_out(r>) / (-hbar^2 W) from the regular solution and
    the solution matching free outgoing asymptotics beyond the support of
    the potential.  The Wronskian is evaluated at every node; its relative
    drift is the solver health metric.
    """
    nodes = np.sort(np.asarray(nodes, dtype=float))
    if energy <= 0:
        raise ValueError("outgoing kernel needs E > 0")
    k = math.sqrt(energy) / hbar
    r_m = _match_radius(v_base, hbar, np.asarray([energy]))
    if nodes[-1] >= r_m:
        r_m = nodes[-1] + 0.25

    pts, reg, sel = _regular_through_nodes(channel, v_base, energy, hbar, nodes, r_m, tol)
    u_reg = reg.u[sel, 0]
    up_reg = reg.up[sel, 0]
    lg_reg = reg.log_scale[sel, 0]

    # inward pass for the outgoing solution
    u_out0, up_out0 = _outgoing_start(channel, k, r_m)
    pts_in = np.unique(np.concatenate([nodes, [r_m],
                                       [b for b in v_base.breakpoints if nodes[0] < b < r_m]]))[::-1]
    res_out = propagate(v_base, pts_in, np.asarray([energy]),
                        np.asarray([channel.centrifugal]), hbar,
                        np.asarray([u_out0]), np.asarray([up_out0]), tol=tol)
    pos = {r: i for i, r in enumerate(pts_in)}
    sel_out = np.asarray([pos[r] for r in np.concatenate([nodes, [r_m]])])
    u_out = res_out.u[sel_out, 0]
    up_out = res_out.up[sel_out, 0]
    lg_out = res_out.log_scale[sel_out, 0]

    # Wronskian at every shared radius; log-scales recombine lane by lane
    w_raw = u_reg * up_out - up_reg * u_out
    lg_w = lg_reg + lg_out
    w_ref = w_raw[-1]
    w_all = w_raw * np.exp(lg_w - lg_w[-1])
    drift = float(np.max(np.abs(w_all - w_ref)) / max(abs(w_ref), 1e-300))
    if abs(w_ref) < 1e-250:
        raise RuntimeError("outgoing Wronskian vanished; resolvent near-singular")

    n = len(nodes)
    lo = np.minimum.outer(np.arange(n), np.arange(n))
    hi = np.maximum.outer(np.arange(n), np.arange(n))
    log_part = lg_reg[lo] + lg_out[hi] - lg_w[-1]
    mat = (u_reg[lo] * u_out[hi] / (-(hbar * hbar) * w_ref)) * np.exp(log_part)

    delta = _phase_from_match(channel, np.asarray([k]), r_m,
                              np.asarray([u_reg[-1]]), np.asarray([up_reg[-1]]))[0]
    # normalise stored regular values to unit asymptotic amplitude
    F, Fp, G, Gp = free_waves(channel.dimension, channel.ell, np.asarray([k * r_m]))
    a_s = -(F[0] * up_reg[-1] - k * Fp[0] * u_reg[-1])
    a_c = G[0] * up_reg[-1] - k * Gp[0] * u_reg[-1]
    amp = math.hypot(abs(a_s), abs(a_c)) / k
    reg_vals = np.real(u_reg[:n]) * np.exp(lg_reg[:n] - lg_reg[-1]) / amp

    return GreenKernel(channel=channel, energy=float(energy), nodes=nodes,
                       matrix=mat, wronskian_drift=drift,
                       regular_values=reg_vals, phase_shift=float(delta))


def interior_green(channel: Channel, v_conf: RadialPotential, energy: float,
                   hbar: float, nodes, *, r_box=None, tol=1e-10) -> np.ndarray:
    """Kernel of (H_conf - E)^(-1) for a potential confining at ``energy``.

    The right solution decays under the wall; it is seeded by the local WKB
    exponent at the box edge and integrated inward.  Returns a real
    symmetric matrix on the nodes.
    """
    nodes = np.sort(np.asarray(nodes, dtype=float))
    far = max((b for b in v_conf.breakpoints if math.isfinite(b)), default=3.0)
    wall = float(v_conf(far + 5.0))
    if energy >= wall:
        raise ValueError("energy not below the confining wall")
    if r_box is None:
        kappa = math.sqrt(wall - energy) / hbar
        r_box = far + 14.0 / kappa

    pts, reg, sel = _regular_through_nodes(channel, v_conf, energy, hbar, nodes, r_box, tol)
    u_reg = reg.u[sel, 0]
    up_reg = reg.up[sel, 0]
    lg_reg = reg.log_scale[sel, 0]

    q_box = (wall - energy) / hbar**2 + channel.centrifugal / r_box**2
    kappa = math.sqrt(max(q_box, 1e-12))
    pts_in = np.unique(np.concatenate([nodes, [r_box],
                                       [b for b in v_conf.breakpoints
                                        if math.isfinite(b) and nodes[0] < b < r_box]]))[::-1]
    res_dec = propagate(v_conf, pts_in, np.asarray([energy]),
                        np.asarray([channel.centrifugal]), hbar,
                        np.asarray([1.0 + 0j]), np.asarray([-kappa + 0j]), tol=tol)
    pos = {r: i for i, r in enumerate(pts_in)}
    sel_dec = np.asarray([pos[r] for r in np.concatenate([nodes, [r_box]])])
    u_dec = res_dec.u[sel_dec, 0]
    up_dec = res_dec.up[sel_dec, 0]
    lg_dec = res_dec.log_scale[sel_dec, 0]

    w_raw = u_reg * up_dec - up_reg * u_dec
    lg_w = lg_reg + lg_dec
    w_ref = w_raw[-1]
    n = len(nodes)
    lo = np.minimum.outer(np.arange(n), np.arange(n))
    hi = np.maximum.outer(np.arange(n), np.arange(n))
    log_part = lg_reg[lo] + lg_dec[hi] - lg_w[-1]
    mat = (u_reg[lo] * u_dec[hi] / (-(hbar * hbar) * w_ref)) * np.exp(log_part)
    mat = np.real(mat)
    return 0.5 * (mat + mat.T)


# ---------------------------------------------------------------------------
# Birman-Schwinger matrices


@dataclass(frozen=True)
class BSKernels:
    channel: Channel
    energy: float
    nodes: np.ndarray
    weights: np.ndarray
    a: np.ndarray
    b: np.ndarray
    wronskian_drift: float
    asymmetry: float


def _gauss_nodes(r_lo, r_hi, n):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (r_hi - r_lo)
    return r_lo + half * (x + 1.0), half * w


def _panel_nodes(r_lo, r_hi, n_total, breakpoints=()):
    """Composite Gauss-Legendre nodes split at profile breakpoints.

    Node counts are allocated proportionally to panel length (at least 6
    each), so steep mollified edges get resolved without wasting nodes on
    flat stretches.
    """
    edges = [r_lo] + [b for b in sorted(set(breakpoints)) if r_lo < b < r_hi] + [r_hi]
    lengths = np.diff(edges)
    total = lengths.sum()
    n_panels = len(lengths)
    floor = max(6, n_total // (2 * n_panels))
    nodes, weights = [], []
    for (a, b), ln in zip(zip(edges[:-1], edges[1:]), lengths):
        n = max(floor, int(round(n_total * ln / total)))
        x, w = _gauss_nodes(a, b, n)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def _kink_correction(nodes, weights, r_lo, r_hi, hbar):
    """Diagonal product-integration correction for the resolvent kernel kink.

    Radial Green kernels are u(r<) w(r>)/(-hbar^2 W); across the diagonal
    the derivative jumps by exactly -1/hbar^2 regardless of the potential,
    so the kernel is A(x,y) + |x-y| * B(x,y) with B(x,x) = -1/(2 hbar^2).
    Plain quadrature misintegrates the |x-y| factor near the diagonal; the
    defect is restored on the diagonal of the sandwiched matrix.
    """
    exact = 0.5 * ((nodes - r_lo) ** 2 + (r_hi - nodes) ** 2)
    approx = np.abs(nodes[:, None] - nodes[None, :]) @ weights
    return (-0.5 / (hbar * hbar)) * (exact - approx)


def birman_schwinger_ext(triple, channel: Channel, energy: float, hbar: float,
                         *, n_nodes=48, tol=1e-10) -> BSKernels:
    """Real and imaginary parts of the plug-weighted exterior resolvent.

    The operator sqrt(V0) (H_ext - E - i0)^(-1) sqrt(V0) is discretised on a
    Gauss-Legendre grid over the plug support with the weights folded in
    symmetrically, so eigenvalue counts of the matrices track the counts of
    the integral operator.  B (the imaginary part) is positive semidefinite
    and rank one per channel.
    """
    if energy <= 0:
        raise ValueError("need E > 0")
    nodes, w = _panel_nodes(0.0, triple.omega1, n_nodes, triple.v0.breakpoints)
    v0_vals = np.asarray(triple.v0(nodes), dtype=float)
    kern = outgoing_green(channel, triple.v_ext, energy, hbar, nodes, tol=tol)
    root = np.sqrt(np.maximum(v0_vals, 0.0) * w)
    m = root[:, None] * kern.matrix * root[None, :]
    asym = float(np.max(np.abs(m - m.T)) / max(np.max(np.abs(m)), 1e-300))
    m = 0.5 * (m + m.T)
    a = np.real(m)
    a[np.diag_indices_from(a)] += (
        np.maximum(v0_vals, 0.0) * _kink_correction(nodes, w, 0.0, triple.omega1, hbar)
    )
    return BSKernels(channel=channel, energy=float(energy), nodes=nodes,
                     weights=w, a=a, b=np.imag(m),
                     wronskian_drift=kern.wronskian_drift, asymmetry=asym)


def birman_schwinger_int(triple, channel: Channel, energy: float, hbar: float,
                         *, n_nodes=48, tol=1e-10) -> np.ndarray:
    """Plug-weighted resolvent of the shifted interior model.

    Discretises sqrt(V0) (H_int + V0 - E)^(-1) sqrt(V0); requires E below
    the confinement threshold so the operator inverse exists.
    """
    if energy >= triple.e_plus:
        raise ValueError("interior kernel requires E < e_plus")
    from .potentials import sum_profiles

    shifted = sum_profiles(triple.v_int, triple.v0, name="int_plus_plug")
    nodes, w = _panel_nodes(0.0, triple.omega1, n_nodes, triple.v0.breakpoints)
    v0_vals = np.asarray(triple.v0(nodes), dtype=float)
    g = interior_green(channel, shifted, energy, hbar, nodes, tol=tol)
    root = np.sqrt(np.maximum(v0_vals, 0.0) * w)
    m = root[:, None] * g * root[None, :]
    m = 0.5 * (m + m.T)
    m[np.diag_indices_from(m)] += (
        np.maximum(v0_vals, 0.0) * _kink_correction(nodes, w, 0.0, triple.omega1, hbar)
    )
    return m


def count_above_one(mat: np.ndarray, *, boundary_tol=1e-10):
    """Number of eigenvalues exceeding 1, with a near-boundary warning flag."""
    vals = np.linalg.eigvalsh(mat)
    near = np.any(np.abs(vals - 1.0) < boundary_tol)
    return int(np.sum(vals > 1.0)), bool(near)


# ---------------------------------------------------------------------------
# stationary representation


def _free_green_matrix(channel, k, hbar, nodes):
    x = k * nodes
    F, Fp, G, Gp = free_waves(channel.dimension, channel.ell, x)
    out = G + 1j * F
    n = len(nodes)
    lo = np.minimum.outer(np.arange(n), np.arange(n))
    hi = np.maximum.outer(np.arange(n), np.arange(n))
    return F[lo] * out[hi] / (hbar * hbar * k)


def stationary_smatrix_channel(channel: Channel, triple, pair, energy: float,
                               hbar: float, *, n_nodes=192, tol=1e-10) -> complex:
    """Channel S-matrix value from the resolvent-sandwich representation.

    For the operator pair (target, base) with perturbation W = V_t - V_b,
    evaluates ``1 - 2 pi i <phi, sqrt|W| (J + A0 + i B0)^(-1) sqrt|W| phi>``
    where A0 + i B0 is the weighted outgoing resolvent kernel of the base
    operator, J = sign(W), and phi is the base energy-shell trace vector.
    Entirely independent of the phase-shift integration route.
    """
    from .assembly import OperatorPair  # local import, no cycle at module load

    if energy <= 0:
        raise ValueError("need E > 0")
    k = math.sqrt(energy) / hbar

    if pair == OperatorPair.FULL_FREE:
        v_base, v_pert = None, triple.v
        lo_supp, hi_supp = 0.0, triple.v.support_radius
        breaks = triple.v.breakpoints
    elif pair == OperatorPair.EXT_FREE:
        v_base, v_pert = None, triple.v_ext
        lo_supp, hi_supp = 0.0, triple.v_ext.support_radius
        breaks = triple.v_ext.breakpoints
    elif pair == OperatorPair.FULL_EXT:
        v_base, v_pert = triple.v_ext, None  # perturbation is -v0
        lo_supp, hi_supp = 0.0, triple.omega1
        breaks = triple.v0.breakpoints
    else:
        raise ValueError(f"unknown pair {pair!r}")

    nodes, w = _panel_nodes(lo_supp, hi_supp, n_nodes, breaks)
    if pair == OperatorPair.FULL_EXT:
        w_vals = -np.asarray(triple.v0(nodes), dtype=float)
    else:
        w_vals = np.asarray(v_pert(nodes), dtype=float)

    j_sign = np.sign(w_vals)
    j_sign[j_sign == 0.0] = 1.0
    root = np.sqrt(np.abs(w_vals) * w)

    if v_base is None:
        g = _free_green_matrix(channel, k, hbar, nodes)
        x = k * nodes
        F = free_waves(channel.dimension, channel.ell, x)[0]
        phi = F / math.sqrt(math.pi * hbar * hbar * k)
    else:
        kern = outgoing_green(channel, v_base, energy, hbar, nodes, tol=tol)
        g = kern.matrix
        phi = kern.regular_values / math.sqrt(math.pi * hbar * hbar * k)

    t0 = root[:, None] * g * root[None, :]
    t0[np.diag_indices_from(t0)] += (
        np.abs(w_vals) * _kink_correction(nodes, w, lo_supp, hi_supp, hbar)
    )
    m = np.diag(j_sign) + t0
    vec = root * phi
    try:
        sol = np.linalg.solve(m, vec)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("stationary kernel is singular (embedded threshold?)") from exc
    s_val = 1.0 - 2j * math.pi * np.dot(vec, sol)
    return complex(s_val)


# ---------------------------------------------------------------------------
# weighted resolvent norm


def weighted_resolvent_norm(v: RadialPotential, energy: float, hbar: float,
                            *, s=1.0, channels=None, n_nodes=96,
                            r_window=None, tol=1e-9) -> float:
    """Largest channel norm of <x>^-s (H - E - i0)^(-1) <x>^-s.

    A non-trapping diagnostic: across an hbar sweep the fitted power of the
    norm should sit near -1.
    """
    if channels is None:
        channels = channels_up_to(3, 8)
    if r_window is None:
        r_window = max(v.support_radius, 1.0) + 30.0
    nodes, w = _gauss_nodes(1e-4, r_window, n_nodes)
    weight = (1.0 + nodes**2) ** (-s / 2.0)
    best = 0.0
    for ch in channels:
        kern = outgoing_green(ch, v, energy, hbar, nodes, tol=tol)
        m = (np.sqrt(w) * weight)[:, None] * kern.matrix * (np.sqrt(w) * weight)[None, :]
        best = max(best, float(np.linalg.norm(m, 2)))
    return best
