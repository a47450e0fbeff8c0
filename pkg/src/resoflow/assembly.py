"""Scattering-matrix assembly across channels.

The scattering matrix of a radial problem is diagonal in the angular
harmonic basis, so at fixed energy it is fully described by an eigenphase
table: one phase 2*delta_l per channel with the channel's degeneracy
weight.  Tables exist for three operator pairs (full vs free, exterior
reference vs free, full vs exterior reference); the chain rule makes the
third the per-channel difference of the first two.

Energy families of tables carry branch-continuous phases, refined
adaptively so each branch moves less than a configured cap between
neighbouring energies.  Narrow resonance loops are invisible to pointwise
refinement (a full 2*pi swing aliases to zero), so sweep drivers seed the
grids with located crossings; see :mod:`resoflow.lab`.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .potentials import PotentialTriple, RadialPotential
from .radial import Channel, channels_up_to, phase_shift_table

__all__ = [
    "OperatorPair",
    "EigenphaseTable",
    "SMatrixFamily",
    "default_l_max",
    "assemble",
    "build_family",
    "op_norm_diff",
    "s_minus_identity",
    "deviation_bound_check",
    "arc_count",
    "hoelder_ratio",
    "tables_to_csv",
    "tables_from_csv",
]


class OperatorPair(enum.Enum):
    """Which two Hamiltonians the scattering matrix compares."""

    FULL_FREE = "full-free"
    EXT_FREE = "ext-free"
    FULL_EXT = "full-ext"

    def __str__(self):
        return self.value


def potential_for(triple: PotentialTriple, pair: OperatorPair):
    """Target potential(s) whose phase shifts build the pair's table."""
    if pair == OperatorPair.FULL_FREE:
        return (triple.v,)
    if pair == OperatorPair.EXT_FREE:
        return (triple.v_ext,)
    return (triple.v, triple.v_ext)


@dataclass(frozen=True)
class EigenphaseTable:
    """Eigenphases of S(E) at one energy, diagonal over channels.

    ``theta_branch`` is a continuous-in-energy representative (equal to the
    principal value for standalone tables); ``theta_mod`` is its reduction
    to [0, 2*pi).  Entries are sorted by channel index.
    """

    energy: float
    pair: OperatorPair
    ells: np.ndarray
    weights: np.ndarray
    theta_branch: np.ndarray
    dimension: int = 3

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if np.any(np.diff(self.ells) <= 0):
            raise ValueError("entries must be sorted by channel")

    @property
    def theta_mod(self) -> np.ndarray:
        return np.mod(self.theta_branch, 2.0 * math.pi)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.exp(1j * self.theta_branch)

    def rebased(self, theta_branch) -> "EigenphaseTable":
        return EigenphaseTable(energy=self.energy, pair=self.pair, ells=self.ells,
                               weights=self.weights,
                               theta_branch=np.asarray(theta_branch, dtype=float),
                               dimension=self.dimension)

    def max_weighted_phase(self) -> float:
        return float(np.max(self.weights * np.abs(self.theta_branch)))

    def max_phase(self) -> float:
        return float(np.max(np.abs(self.theta_branch)))


def default_l_max(v: RadialPotential, energy: float, hbar: float, *,
                  margin: int = 5, dimension: int = 3, radius=None) -> int:
    """Channel cutoff: first ell whose centrifugal barrier tops 4E, plus margin.

    Beyond the cutoff the classical turning point of the centrifugal term
    alone lies outside the potential support, so phase shifts are negligible
    (asserted by the truncation test).  ``radius`` overrides the support
    radius, e.g. when only an inner region of the profile matters.
    """
    r = radius if radius is not None else max(v.support_radius, 0.5)
    l = 0
    while True:
        c = Channel(dimension, l).centrifugal
        if c > 0 and hbar * hbar * c / (r * r) > 4.0 * energy:
            return l + margin
        l += 1
        if l > 10_000:
            raise RuntimeError("channel cutoff search ran away")


def assemble(triple: PotentialTriple, pair: OperatorPair, energy: float,
             hbar: float, *, l_max=None, dimension: int = 3,
             tol=1e-10) -> EigenphaseTable:
    """Eigenphase table of the pair at one energy (principal branch).

    For the FULL_EXT pair the phases are differences of the component phase
    shifts, which realises the chain rule exactly in this basis.
    """
    if l_max is None:
        l_max = default_l_max(triple.v_ext, energy, hbar, dimension=dimension)
    channels = channels_up_to(dimension, l_max)
    pots = potential_for(triple, pair)
    deltas = [phase_shift_table(channels, p, [energy], hbar, tol=tol)[:, 0] for p in pots]
    if len(deltas) == 1:
        theta = 2.0 * deltas[0]
    else:
        theta = 2.0 * (deltas[0] - deltas[1])
    return EigenphaseTable(
        energy=float(energy), pair=pair,
        ells=np.array([ch.ell for ch in channels]),
        weights=np.array([ch.weight for ch in channels], dtype=float),
        theta_branch=np.asarray(theta, dtype=float),
        dimension=dimension,
    )


@dataclass
class SMatrixFamily:
    """Branch-continuous eigenphase tables over a refined energy grid.

    ``branch[i, j]`` is the continuous phase of channel i at ``energies[j]``.
    The branch is anchored at the grid's high end to the principal values
    there; whole-family rebasings (e.g. to the zero branch at infinity) are
    the caller's business.
    """

    pair: OperatorPair
    dimension: int
    ells: np.ndarray
    weights: np.ndarray
    energies: np.ndarray
    branch: np.ndarray  # (n_channels, n_energies)
    refined_steps: int = 0

    def table_at(self, idx: int) -> EigenphaseTable:
        return EigenphaseTable(energy=float(self.energies[idx]), pair=self.pair,
                               ells=self.ells, weights=self.weights,
                               theta_branch=self.branch[:, idx],
                               dimension=self.dimension)

    def max_step_motion(self) -> float:
        if self.branch.shape[1] < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.branch, axis=1))))


def _fold_pi(x):
    return np.mod(x + math.pi / 2.0, math.pi) - math.pi / 2.0


def build_family(triple: PotentialTriple, pair: OperatorPair, energies,
                 hbar: float, *, l_max=None, dimension: int = 3, tol=1e-10,
                 seeds=(), motion_cap=1.0, max_depth=80,
                 max_points=6000) -> SMatrixFamily:
    """Adaptively refined eigenphase family over an energy window.

    Starts from ``energies`` plus ``seeds`` (crossing locations from the
    resonance search) and refines in two interleaved ways:

    * any step where some branch's apparent motion reaches ``motion_cap``
      radians is bisected;
    * every surviving step must pass midpoint verification: the midpoint
      phase, unwrapped against the step ends, has to sit near the linear
      interpolant.  This catches aliased steps whose true motion differs
      from the apparent one by full turns, which the cap alone cannot see.

    Verification midpoints are kept as grid points.  Exhausting the budget
    raises rather than silently truncating.
    """
    grid = np.unique(np.concatenate([np.asarray(energies, dtype=float),
                                     np.asarray(list(seeds), dtype=float)]))
    if np.any(grid <= 0):
        raise ValueError("energies must be positive")
    if l_max is None:
        l_max = default_l_max(triple.v_ext, float(np.max(grid)), hbar,
                              dimension=dimension)
    channels = channels_up_to(dimension, l_max)
    pots = potential_for(triple, pair)

    def pv_at(es):
        parts = [phase_shift_table(channels, p, es, hbar, tol=tol) for p in pots]
        if len(parts) == 1:
            return 2.0 * parts[0]
        return 2.0 * (parts[0] - parts[1])

    pv = pv_at(grid)
    verified: set = set()
    rounds = 0
    while True:
        rounds += 1
        if rounds > max_depth:
            raise RuntimeError(
                f"family refinement exhausted at depth {max_depth} "
                f"with {len(grid)} points")
        d = np.abs(np.diff(_fold_2pi(pv), axis=1))
        d = np.minimum(d, 2.0 * math.pi - d)
        worst = d.max(axis=0)
        bad = np.where(worst >= motion_cap)[0]
        if len(bad) == 0:
            todo = [j for j in range(len(grid) - 1)
                    if (grid[j], grid[j + 1]) not in verified]
            if not todo:
                break
            mids = np.array([0.5 * (grid[j] + grid[j + 1]) for j in todo])
            pv_mid = pv_at(mids)
            insert_pv = []
            insert_e = []
            for idx, j in enumerate(todo):
                left = pv[:, j]
                right = left + _fold_2pi(pv[:, j + 1] - left)
                target = 0.5 * (left + right)
                mid_unw = target + _fold_2pi(pv_mid[:, idx] - target)
                resid = float(np.max(np.abs(mid_unw - target)))
                allowance = 0.25 * float(np.max(np.abs(right - left))) + 0.08
                e_mid = float(mids[idx])
                insert_e.append(e_mid)
                insert_pv.append(pv_mid[:, idx])
                if resid <= allowance:
                    verified.add((grid[j], e_mid))
                    verified.add((e_mid, grid[j + 1]))
            grid = np.concatenate([grid, np.asarray(insert_e)])
            order = np.argsort(grid)
            grid = grid[order]
            pv = np.concatenate([pv, np.stack(insert_pv, axis=1)], axis=1)[:, order]
            if len(grid) > max_points:
                raise RuntimeError("family refinement exceeded the point budget")
            continue
        if len(grid) + len(bad) > max_points:
            raise RuntimeError("family refinement exceeded the point budget")
        mid = 0.5 * (grid[bad] + grid[bad + 1])
        pv_mid = pv_at(mid)
        grid = np.concatenate([grid, mid])
        order = np.argsort(grid)
        grid = grid[order]
        pv = np.concatenate([pv, pv_mid], axis=1)[:, order]

    # unwrap each channel from the high-energy end (mod 2*pi continuation)
    branch = np.empty_like(pv)
    branch[:, -1] = pv[:, -1]
    for j in range(pv.shape[1] - 2, -1, -1):
        prev = branch[:, j + 1]
        step = _fold_2pi(pv[:, j] - prev)
        branch[:, j] = prev + step

    return SMatrixFamily(
        pair=pair, dimension=dimension,
        ells=np.array([ch.ell for ch in channels]),
        weights=np.array([ch.weight for ch in channels], dtype=float),
        energies=grid, branch=branch, refined_steps=rounds,
    )


def _fold_2pi(x):
    return np.mod(np.asarray(x) + math.pi, 2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# norms and counts on tables


def _check_same_basis(t1: EigenphaseTable, t2: EigenphaseTable):
    if (t1.dimension != t2.dimension or len(t1.ells) != len(t2.ells)
            or np.any(t1.ells != t2.ells)):
        raise ValueError("tables live on different channel sets")


def op_norm_diff(t1: EigenphaseTable, t2: EigenphaseTable) -> float:
    """Exact operator norm of the difference of two commuting diagonal unitaries."""
    _check_same_basis(t1, t2)
    return float(np.max(np.abs(np.exp(1j * t1.theta_branch)
                               - np.exp(1j * t2.theta_branch))))


def s_minus_identity(t: EigenphaseTable) -> float:
    return float(np.max(np.abs(np.exp(1j * t.theta_branch) - 1.0)))


def deviation_bound_check(table: EigenphaseTable, a_dist: float, b_norm: float):
    """Algebraic bound on ||S - I|| for the full/exterior pair.

    Given a = dist(1, spec(A)) > 0 and ||B||, the deviation of the pair's
    scattering matrix from the identity obeys
    ``2 (||B||/a) (1 + (||B||/a)^2)^(-1/2)``.  Returns (lhs, rhs, holds);
    reports non-applicability when a vanishes to tolerance.
    """
    if a_dist <= 1e-14:
        return {"applicable": False, "reason": "dist(1, spec(A)) vanishes"}
    lhs = s_minus_identity(table)
    ratio = b_norm / a_dist
    rhs = 2.0 * ratio / math.sqrt(1.0 + ratio * ratio)
    return {"applicable": True, "lhs": lhs, "rhs": rhs,
            "holds": bool(lhs <= rhs + 1e-10)}


def arc_count(table: EigenphaseTable, theta1: float, theta2: float) -> int:
    """Weighted eigenphase count on the half-open arc [theta1, theta2).

    Arguments are angles in (0, 2*pi); swapped arguments negate the count.
    The accumulation point 1 (angle 0) never contributes.
    """
    if not (0.0 < theta1 < 2.0 * math.pi and 0.0 < theta2 < 2.0 * math.pi):
        raise ValueError("arc endpoints must lie in (0, 2*pi)")
    if theta1 >= theta2:
        return -arc_count(table, theta2, theta1)
    phases = table.theta_mod
    inside = (phases >= theta1) & (phases < theta2)
    return int(np.sum(table.weights[inside]))


def hoelder_ratio(t1: EigenphaseTable, t2: EigenphaseTable, gamma: float) -> float:
    """||S(E1) - S(E2)|| / |E1 - E2|^gamma for a Hoelder-in-energy scan."""
    if t1.energy == t2.energy:
        raise ValueError("energies must differ")
    return op_norm_diff(t1, t2) / abs(t1.energy - t2.energy) ** gamma


# ---------------------------------------------------------------------------
# serialization


_CSV_HEADER = ["E", "ell", "w", "theta_branch", "theta_mod2pi", "pair"]


def tables_to_csv(tables, stream=None) -> str | None:
    """Deterministic long-format CSV of eigenphase tables."""
    own = stream is None
    if own:
        stream = io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for t in sorted(tables, key=lambda t: (t.energy, str(t.pair))):
        for i in range(len(t.ells)):
            writer.writerow([
                f"{t.energy:.12g}", int(t.ells[i]), f"{t.weights[i]:.12g}",
                f"{t.theta_branch[i]:.15g}", f"{t.theta_mod[i]:.15g}", str(t.pair),
            ])
    if own:
        return stream.getvalue()
    return None


def tables_from_csv(text: str) -> list:
    """Inverse of :func:`tables_to_csv` (branch values are taken as stored)."""
    rows = list(csv.reader(io.StringIO(text)))
    if rows and rows[0] == _CSV_HEADER:
        rows = rows[1:]
    groups = {}
    for row in rows:
        if not row:
            continue
        e, ell, w, tb, _, pair = row
        groups.setdefault((float(e), pair), []).append((int(ell), float(w), float(tb)))
    tables = []
    for (e, pair), entries in sorted(groups.items()):
        entries.sort()
        ells = np.array([x[0] for x in entries])
        weights = np.array([x[1] for x in entries])
        theta = np.array([x[2] for x in entries])
        tables.append(EigenphaseTable(energy=e, pair=OperatorPair(pair), ells=ells,
                                      weights=weights, theta_branch=theta))
    return tables
