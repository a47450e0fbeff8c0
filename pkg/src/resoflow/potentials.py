"""Radial potential models and classical-mechanics diagnostics.

Everything downstream assumes a rotationally symmetric potential V(r) on
r >= 0 that is piecewise smooth, compactly supported up to an optional
power-law tail, and cheap to evaluate on large numpy grids.  This module
provides:

* profile primitives (mollified steps, gaussians, polynomials, power tails)
  and a small catalogue loader for named profiles,
* the decomposition of ``{V < E}`` into interior wells and the unbounded
  exterior region,
* construction of the companion potentials: ``v_ext`` fills the interior
  well with a high plug so nothing is trapped, ``v_int`` walls off the
  exterior so the well spectrum becomes discrete,
* Agmon (tunnelling) distances and classical escape diagnostics.

Energies and lengths are dimensionless; ``hbar`` enters only in the quantum
modules.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

__all__ = [
    "RadialPotential",
    "RegionDecomposition",
    "PotentialTriple",
    "ClassicalTrajectory",
    "NonTrappingReport",
    "DecayReport",
    "smoothstep",
    "step_profile",
    "gaussian_profile",
    "polynomial_profile",
    "power_tail_profile",
    "sum_profiles",
    "ring_barrier",
    "profile_from_spec",
    "load_catalogue",
    "classically_accessible",
    "build_triple",
    "agmon_distance",
    "non_trapping_check",
    "decay_check",
]


def smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, exp(-1/x)-blended between.

    All derivatives vanish at both ends, so profiles assembled from it stay
    smooth when pieces are glued at their flat values.
    """
    x = np.asarray(x, dtype=float)
    lo = x <= 0.0
    hi = x >= 1.0
    mid = ~(lo | hi)
    out = np.zeros_like(x)
    out[hi] = 1.0
    xm = x[mid]
    a = np.exp(-1.0 / xm)
    b = np.exp(-1.0 / (1.0 - xm))
    out[mid] = a / (a + b)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# profile pieces
#
# Each piece is a top-level class with plain-data fields so that profiles
# pickle cleanly (worker pools) and repr usefully.


@dataclass(frozen=True)
class _MollifiedStep:
    height: float
    r_on: float
    r_off: float
    blend: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        w = self.blend
        if w <= 0.0:
            return self.height * ((r >= self.r_on) & (r < self.r_off))
        up = smoothstep((r - (self.r_on - 0.5 * w)) / w)
        down = smoothstep(((self.r_off + 0.5 * w) - r) / w)
        return self.height * up * down

    @property
    def breakpoints(self):
        w = self.blend
        if w <= 0.0:
            return (self.r_on, self.r_off)
        return (
            self.r_on - 0.5 * w,
            self.r_on + 0.5 * w,
            self.r_off - 0.5 * w,
            self.r_off + 0.5 * w,
        )

    @property
    def support(self):
        w = max(self.blend, 0.0)
        return max(self.r_off + 0.5 * w, 0.0)


@dataclass(frozen=True)
class _Gaussian:
    amplitude: float
    center: float
    width: float  # gaussian exp(-(r-center)^2/width)
    cutoff_sigmas: float = 12.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.amplitude * np.exp(-((r - self.center) ** 2) / self.width)

    @property
    def breakpoints(self):
        return (self.center,)

    @property
    def support(self):
        return self.center + self.cutoff_sigmas * math.sqrt(self.width)


@dataclass(frozen=True)
class _Polynomial:
    coeffs: tuple  # ascending powers of r, applied on [r_on, r_off), zero outside
    r_on: float
    r_off: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= self.r_on) & (r < self.r_off)
        val = np.zeros_like(r)
        acc = np.zeros_like(r)
        for c in reversed(self.coeffs):
            acc = acc * r + c
        val[inside] = acc[inside]
        return val

    @property
    def breakpoints(self):
        return (self.r_on, self.r_off)

    @property
    def support(self):
        return self.r_off


@dataclass(frozen=True)
class _PowerTail:
    amplitude: float
    rho: float
    r_on: float
    blend: float = 0.25

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        ramp = smoothstep((r - self.r_on) / max(self.blend, 1e-12))
        return self.amplitude * ramp * (1.0 + r) ** (-self.rho)

    @property
    def breakpoints(self):
        return (self.r_on, self.r_on + self.blend)

    @property
    def support(self):
        return self.r_on  # tail starts here; handled through decay metadata


@dataclass(frozen=True)
class _Sum:
    parts: tuple

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        total = np.zeros_like(r)
        for p in self.parts:
            total = total + p(r)
        return total

    @property
    def breakpoints(self):
        pts = []
        for p in self.parts:
            pts.extend(p.breakpoints)
        return tuple(sorted(set(pts)))

    @property
    def support(self):
        return max(p.support for p in self.parts)


@dataclass(frozen=True)
class RadialPotential:
    """A radial profile r -> V(r) with piecewise-smoothness metadata.

    ``breakpoints`` are radii where the profile or its derivatives may kink;
    integrators align their grids with them.  Beyond ``support_radius`` the
    profile either vanishes identically (``tail_amplitude == 0``) or obeys
    ``|V(r)| <= tail_amplitude * (1+r)**(-decay_exponent)``.
    """

    profile: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple = ()
    support_radius: float = 0.0
    decay_exponent: float = math.inf
    tail_amplitude: float = 0.0
    name: str = ""

    def __call__(self, r):
        return self.profile(np.asarray(r, dtype=float))

    def grid_breakpoints(self, r_lo: float, r_hi: float) -> np.ndarray:
        """Sorted breakpoints clipped to (r_lo, r_hi), with the ends included."""
        pts = [r_lo, r_hi]
        for b in self.breakpoints:
            if r_lo < b < r_hi:
                pts.append(b)
        return np.array(sorted(set(pts)))

    def sample_extremum(self, r_lo, r_hi, n=2001, mode="min"):
        """Dense-grid (value, argmin/argmax) of the profile on [r_lo, r_hi]."""
        r = np.linspace(r_lo, r_hi, n)
        v = self(r)
        idx = int(np.argmin(v)) if mode == "min" else int(np.argmax(v))
        return float(v[idx]), float(r[idx])


def _wrap(piece, name=""):
    return RadialPotential(
        profile=piece,
        breakpoints=tuple(piece.breakpoints),
        support_radius=float(piece.support),
        name=name,
    )


def step_profile(height, r_on, r_off, blend=0.0, name="step"):
    """Indicator-type barrier/well of the given height on [r_on, r_off].

    ``blend > 0`` mollifies both edges over that width, keeping the stated
    height on the flat middle; the support grows by half a blend width on
    each side.
    """
    return _wrap(_MollifiedStep(float(height), float(r_on), float(r_off), float(blend)), name)


def gaussian_profile(amplitude, center, width, name="gaussian"):
    """Gaussian bump ``amplitude * exp(-(r-center)^2 / width)`` (width = variance scale)."""
    piece = _Gaussian(float(amplitude), float(center), float(width))
    pot = _wrap(piece, name)
    # numerically compact: beyond the cutoff the values are below 1e-60
    return pot


def polynomial_profile(coeffs, r_on, r_off, name="polynomial"):
    return _wrap(_Polynomial(tuple(float(c) for c in coeffs), float(r_on), float(r_off)), name)


def power_tail_profile(amplitude, rho, r_on=0.0, blend=0.25, name="powertail"):
    """Long-range tail ``amplitude (1+r)^(-rho)`` switched on smoothly at r_on."""
    piece = _PowerTail(float(amplitude), float(rho), float(r_on), float(blend))
    return RadialPotential(
        profile=piece,
        breakpoints=tuple(piece.breakpoints),
        support_radius=float(r_on + blend),
        decay_exponent=float(rho),
        tail_amplitude=abs(float(amplitude)),
        name=name,
    )


def sum_profiles(*pots, name="sum"):
    parts = tuple(p.profile for p in pots)
    tails = [(p.decay_exponent, p.tail_amplitude) for p in pots if p.tail_amplitude > 0]
    rho = min((t[0] for t in tails), default=math.inf)
    amp = sum(t[1] for t in tails)
    return RadialPotential(
        profile=_Sum(parts),
        breakpoints=tuple(sorted({b for p in pots for b in p.breakpoints})),
        support_radius=max(p.support_radius for p in pots),
        decay_exponent=rho,
        tail_amplitude=amp,
        name=name,
    )


def ring_barrier(a=1.0, b=2.0, height=2.0, blend=0.05, name="ring_barrier"):
    """The default shape-resonance generator: a mollified annular barrier.

    V = height on [a, b] up to edge blending, zero in the interior well and
    outside.  With height 2 and unit well radius the well supports a handful
    of quasi-bound levels below the barrier top at the hbar values used here.
    """
    return step_profile(height, a, b, blend=blend, name=name)


_PROFILE_KINDS = {
    "step": lambda p: step_profile(
        p["height"], p["r_on"], p["r_off"], blend=p.get("blend", 0.0)
    ),
    "gaussian": lambda p: gaussian_profile(p["amplitude"], p["center"], p["width"]),
    "polynomial": lambda p: polynomial_profile(p["coeffs"], p["r_on"], p["r_off"]),
    "powertail": lambda p: power_tail_profile(
        p["amplitude"], p["rho"], p.get("r_on", 0.0), p.get("blend", 0.25)
    ),
}


def profile_from_spec(spec) -> RadialPotential:
    """Build a profile from a declarative description.

    ``spec`` is either ``{"kind": ..., "params": {...}}`` or a list of such
    pieces, which are summed.  Unknown kinds raise ``ValueError``.
    """
    if isinstance(spec, dict) and "pieces" in spec:
        spec = spec["pieces"]
    if isinstance(spec, dict):
        spec = [spec]
    parts = []
    for piece in spec:
        kind = piece.get("kind")
        if kind not in _PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {kind!r}")
        parts.append(_PROFILE_KINDS[kind](piece.get("params", {})))
    if len(parts) == 1:
        return parts[0]
    return sum_profiles(*parts)


def load_catalogue(path) -> dict:
    """Load named profiles from a JSON or TOML catalogue file.

    The file maps profile names to piece lists as accepted by
    :func:`profile_from_spec`.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    out = {}
    for name, spec in data.items():
        pot = profile_from_spec(spec)
        out[name] = RadialPotential(
            profile=pot.profile,
            breakpoints=pot.breakpoints,
            support_radius=pot.support_radius,
            decay_exponent=pot.decay_exponent,
            tail_amplitude=pot.tail_amplitude,
            name=name,
        )
    return out


# ---------------------------------------------------------------------------
# classically accessible regions


@dataclass(frozen=True)
class RegionDecomposition:
    """Intervals where V < E, split into bounded wells and the exterior.

    ``interior`` are the bounded components, ``exterior`` is the unbounded
    one (right endpoint ``inf``).  Endpoints solve V(r) = E to ``root_tol``.
    """

    energy: float
    interior: tuple
    exterior: tuple | None
    root_tol: float = 1e-10

    @property
    def accessible(self):
        segs = list(self.interior)
        if self.exterior is not None:
            segs.append(self.exterior)
        return tuple(segs)

    def contains(self, other: "RegionDecomposition", pad=1e-9) -> bool:
        """True when every accessible interval of ``other`` sits inside ours."""
        for lo, hi in other.accessible:
            ok = False
            for slo, shi in self.accessible:
                if lo >= slo - pad and (math.isinf(hi) and math.isinf(shi) or hi <= shi + pad):
                    ok = True
                    break
            if not ok:
                return False
        return True


def _refine_root(f, lo, hi, tol):
    try:
        return brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)
    except ValueError as exc:  # pragma: no cover - diagnostic path
        raise RuntimeError(
            f"root bracketing failed on [{lo:.6g}, {hi:.6g}]: {exc}"
        ) from exc


def classically_accessible(v: RadialPotential, energy: float, *, root_tol=1e-10,
                           samples_per_piece=4003) -> RegionDecomposition:
    """Decompose {r >= 0 : V(r) < E} into maximal open intervals.

    Scans each smooth piece on a dense grid for sign changes of V - E and
    polishes the endpoints with a bracketing root finder.  Tangential
    touchings (V = E with V' ~ 0) are treated as no crossing; the degenerate
    interval is dropped with a warning on stderr.
    """
    if energy <= 0:
        raise ValueError("energy must be positive")
    r_hi = max(v.support_radius * 1.5 + 1.0, 2.0)
    edges = v.grid_breakpoints(0.0, r_hi)
    f = lambda r: float(v(r) - energy)

    roots = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        rr = np.linspace(lo, hi, samples_per_piece)
        vv = v(rr) - energy
        sign = np.sign(vv)
        for i in range(len(rr) - 1):
            if sign[i] == 0.0:
                continue
            if sign[i] * sign[i + 1] < 0:
                roots.append(_refine_root(f, rr[i], rr[i + 1], root_tol))
            elif sign[i + 1] == 0.0 and i + 2 < len(rr) and sign[i] * sign[i + 2] < 0:
                roots.append(_refine_root(f, rr[i], rr[i + 2], root_tol))
    roots = sorted(roots)

    # walk the segments between consecutive roots, classifying by a midpoint
    pts = [0.0] + roots + [math.inf]
    intervals = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid = lo + 0.5 * (min(hi, lo + 2 * (r_hi - lo)) - lo) if math.isinf(hi) else 0.5 * (lo + hi)
        if math.isinf(hi):
            mid = max(v.support_radius + 1.0, lo + 1.0)
        if v(mid) < energy:
            intervals.append((lo, hi))

    # merge intervals separated by tangential (non-crossing) roots
    merged = []
    for seg in intervals:
        if merged and abs(merged[-1][1] - seg[0]) < root_tol * 10:
            merged[-1] = (merged[-1][0], seg[1])
        else:
            merged.append(list(seg))
    interior = tuple((lo, hi) for lo, hi in merged if not math.isinf(hi))
    exterior = None
    for lo, hi in merged:
        if math.isinf(hi):
            exterior = (lo, hi)
    return RegionDecomposition(energy=float(energy), interior=interior,
                               exterior=exterior, root_tol=root_tol)


# ---------------------------------------------------------------------------
# the potential triple


@dataclass(frozen=True)
class _PlugPiece:
    """(plug_height - V)+ restricted smoothly to [0, omega1)."""

    base: Callable
    plug_height: float
    omega1: float
    blend: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        gap = np.maximum(np.asarray(self.plug_height - self.base(r), dtype=float), 0.0)
        cut = smoothstep((self.omega1 - r) / max(self.blend, 1e-12))
        return gap * cut

    @property
    def breakpoints(self):
        return (self.omega1 - self.blend, self.omega1)

    @property
    def support(self):
        return self.omega1


@dataclass(frozen=True)
class _WallPiece:
    """(wall_height - V)+ switched on smoothly for r > omega2."""

    base: Callable
    wall_height: float
    omega2: float
    blend: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        gap = np.maximum(np.asarray(self.wall_height - self.base(r), dtype=float), 0.0)
        ramp = smoothstep((r - self.omega2) / max(self.blend, 1e-12))
        return gap * ramp

    @property
    def breakpoints(self):
        return (self.omega2, self.omega2 + self.blend)

    @property
    def support(self):
        return math.inf


@dataclass(frozen=True)
class PotentialTriple:
    """V together with the exterior reference and interior comparison models.

    ``v_ext`` = V + V0 where V0 plugs the interior well up to at least
    ``e_plus_prime`` and vanishes identically for r >= omega1.  ``v_int``
    equals V on [0, omega2) and rises to a constant wall beyond, so its
    spectrum below ``e_plus`` is discrete; those eigenvalues are the resonant
    energies tracked by the experiments.
    """

    v: RadialPotential
    v_int: RadialPotential
    v_ext: RadialPotential
    v0: RadialPotential
    omega1: float
    omega2: float
    e0: float
    e_plus: float
    e_plus_prime: float
    plug_height: float
    wall_height: float
    blend: float

    def validate(self, n_samples=10_000, tol=1e-12):
        """Sample all structural inequalities on a dense grid; raise on failure."""
        r_hi = max(self.v.support_radius, self.omega2 + 2.0) * 1.5 + 3.0
        r = np.linspace(0.0, r_hi, n_samples)
        v = self.v(r)
        vx = self.v_ext(r)
        vi = self.v_int(r)
        v0 = self.v0(r)
        checks = {
            "v_ext >= v": np.min(vx - v) >= -tol,
            "v0 >= 0": np.min(v0) >= -tol,
            "v_ext = v + v0": np.max(np.abs(vx - (v + v0))) <= 1e-9 * max(1.0, np.max(np.abs(v)) + self.plug_height),
            "v0 vanishes beyond omega1": np.max(np.abs(v0[r >= self.omega1])) == 0.0,
            "v_ext >= e_plus_prime on omega1": np.min(vx[r < self.omega1]) >= self.e_plus_prime - 1e-9,
            "v_int = v on omega2": np.max(np.abs((vi - v)[r < self.omega2])) == 0.0,
            "v_int >= e_plus_prime outside omega2": np.min(vi[r >= self.omega2 + self.blend]) >= self.e_plus_prime - 1e-9,
            "v_int + v0 >= e_plus": np.min(vi + v0) >= self.e_plus - 1e-9,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ValueError("triple invariants violated: " + ", ".join(bad))
        return True


def build_triple(v: RadialPotential, omega1: float, omega2: float, e0: float,
                 e_plus: float, e_plus_prime: float, *, blend=0.05,
                 plug_height=None, wall_height=None) -> PotentialTriple:
    """Construct the interior/exterior companion potentials for ``v``.

    Preconditions checked here:

    * ``omega1 < omega2`` and both sit inside the barrier in the sense that
      ``inf V on [omega1, omega2] > e_plus`` (rejected with the measured
      infimum otherwise),
    * the interior accessible region at ``e0`` is contained in [0, omega1),
    * ``e0 < e_plus < e_plus_prime``.

    The plug and wall are ``(H - V)+`` shapes with C-infinity cutoffs, so
    ``v0 = v_ext - v`` vanishes identically beyond ``omega1`` and
    ``v_int = v`` exactly on [0, omega2).  Default heights take the barrier
    top, which makes the modifications join the profile smoothly.
    """
    if omega1 >= omega2:
        raise ValueError(f"omega1 ({omega1}) must be smaller than omega2 ({omega2})")
    if not (e0 < e_plus < e_plus_prime):
        raise ValueError("need e0 < e_plus < e_plus_prime")

    inf_barrier, r_at = v.sample_extremum(omega1, omega2, mode="min")
    if inf_barrier <= e_plus:
        raise ValueError(
            f"inf V on [omega1, omega2] is {inf_barrier:.6g} at r={r_at:.6g}, "
            f"not above e_plus={e_plus:.6g}"
        )

    regions = classically_accessible(v, e0)
    for lo, hi in regions.interior:
        if hi >= omega1:
            raise ValueError(
                f"interior accessible region ({lo:.4g},{hi:.4g}) at e0={e0} "
                f"is not contained in [0, omega1={omega1})"
            )

    top = v.sample_extremum(0.0, omega2 + blend, mode="max")[0]
    plug = float(plug_height) if plug_height is not None else max(top, e_plus_prime)
    wall = float(wall_height) if wall_height is not None else max(top, e_plus_prime)
    if plug < e_plus_prime or wall < e_plus_prime:
        raise ValueError("plug/wall heights must reach e_plus_prime")

    plug_piece = _PlugPiece(v.profile, plug, float(omega1), float(blend))
    wall_piece = _WallPiece(v.profile, wall, float(omega2), float(blend))

    v0 = RadialPotential(
        profile=plug_piece,
        breakpoints=tuple(sorted(set(v.breakpoints) | set(plug_piece.breakpoints) | {omega1})),
        support_radius=float(omega1),
        name=(v.name + ":plug") if v.name else "plug",
    )
    v_ext = sum_profiles(v, v0, name=(v.name + ":ext") if v.name else "ext")
    v_int = RadialPotential(
        profile=_Sum((v.profile, wall_piece)),
        breakpoints=tuple(sorted(set(v.breakpoints) | set(wall_piece.breakpoints))),
        support_radius=math.inf,  # wall extends forever; solvers use box sizes
        name=(v.name + ":int") if v.name else "int",
    )

    triple = PotentialTriple(
        v=v, v_int=v_int, v_ext=v_ext, v0=v0,
        omega1=float(omega1), omega2=float(omega2), e0=float(e0),
        e_plus=float(e_plus), e_plus_prime=float(e_plus_prime),
        plug_height=plug, wall_height=wall, blend=float(blend),
    )
    triple.validate()
    return triple


# ---------------------------------------------------------------------------
# Agmon distance


def agmon_distance(v: RadialPotential, energy: float, r_from: float, r_to: float,
                   *, tol=1e-11) -> float:
    """Tunnelling action integral of sqrt((V - E)+) between two radii.

    This is the geodesic distance in the degenerate metric (V-E)+ dr^2
    restricted to the half-line, which controls the exp(-d/hbar) decay rates
    fitted by the experiments.  Integrable square-root kinks at turning
    points are passed to the quadrature as explicit breakpoints.
    """
    if r_from > r_to:
        raise ValueError("need r_from <= r_to")
    if r_from == r_to:
        return 0.0

    def integrand(r):
        gap = v(r) - energy
        return math.sqrt(gap) if gap > 0 else 0.0

    pts = [b for b in v.breakpoints if r_from < b < r_to]
    # locate turning points V = E inside the range so quad sees the kinks
    rr = np.linspace(r_from, r_to, 4001)
    gap = v(rr) - energy
    sign = np.sign(gap)
    f = lambda r: float(v(r) - energy)
    for i in range(len(rr) - 1):
        if sign[i] * sign[i + 1] < 0:
            pts.append(brentq(f, rr[i], rr[i + 1], xtol=1e-13))
    pts = sorted(set(pts))

    val, err = quad(integrand, r_from, r_to, points=pts or None,
                    epsabs=tol, epsrel=tol, limit=400)
    if err > 100 * max(tol, tol * abs(val)) and err > 1e-8:
        raise RuntimeError(f"agmon quadrature did not converge: estimate {err:.2e}")
    return float(val)


# ---------------------------------------------------------------------------
# classical flow diagnostics


@dataclass(frozen=True)
class ClassicalTrajectory:
    y0: tuple
    v0: tuple
    times: np.ndarray
    radii: np.ndarray
    energy_drift: float
    escaped: bool
    failure: str | None = None


@dataclass(frozen=True)
class NonTrappingReport:
    energy: float
    radius: float
    horizon: float
    trajectories: tuple
    all_escaped: bool
    failures: int


def _integrate_trajectory(v: RadialPotential, y0, xi0, t_max, escape_radius,
                          rtol=1e-10, atol=1e-12):
    """Planar Hamiltonian flow of p^2 + V(|x|): xdot = 2 xi, xidot = -grad V."""

    def rhs(t, s):
        x = s[:2]
        xi = s[2:]
        r = math.hypot(x[0], x[1])
        if r < 1e-12:
            g = np.zeros(2)
        else:
            h = 1e-7 * max(r, 1.0)
            dv = (float(v(r + h)) - float(v(r - h))) / (2 * h)
            g = dv * x / r
        return np.concatenate([2.0 * xi, -g])

    def escaped_event(t, s):
        return math.hypot(s[0], s[1]) - escape_radius

    escaped_event.terminal = True
    escaped_event.direction = 1.0

    s0 = np.array([y0[0], y0[1], xi0[0], xi0[1]])
    sol = solve_ivp(rhs, (0.0, t_max), s0, rtol=rtol, atol=atol,
                    events=escaped_event, dense_output=False, max_step=t_max / 50)
    if not sol.success:
        return None, sol.message
    return sol, None


def non_trapping_check(v: RadialPotential, energy: float, radius: float,
                       horizon: float | None = None, samples: int = 12,
                       *, angles=(0.0, math.pi / 4, math.pi / 2)) -> NonTrappingReport:
    """Integrate classical trajectories launched in the exterior region.

    Initial positions sample the exterior accessible region inside ``radius``
    on ``samples`` radii; momenta satisfy |xi|^2 + V(y) = E with launch
    directions from ``angles`` (0 = radially outward, pi/2 = tangential, the
    one that detects orbiting).  A trajectory passes when it reaches
    ``radius`` within the time horizon in both time directions (the flow is
    reversible, so backward escape is checked by flipping the momentum).
    Per-trajectory integrator failures are recorded, not raised.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    regions = classically_accessible(v, energy)
    if regions.exterior is None:
        raise ValueError("no exterior accessible region at this energy")
    r_lo = regions.exterior[0]
    if r_lo >= radius:
        raise ValueError("escape radius lies inside the classically forbidden region")

    if horizon is None:
        # free-flight heuristic with a generous factor for barrier grazing
        horizon = 6.0 * radius / math.sqrt(energy) + 2.0

    rows = []
    all_ok = True
    failures = 0
    starts = np.linspace(r_lo + 1e-3 * (radius - r_lo), radius * 0.98, samples)
    for r0 in starts:
        kin = energy - float(v(r0))
        if kin <= 0:
            continue
        speed = math.sqrt(kin)
        for ang in angles:
            xi0 = (speed * math.cos(ang), speed * math.sin(ang))
            y0 = (r0, 0.0)
            ok_both = True
            drift_max = 0.0
            fail_msg = None
            times = np.array([0.0])
            radii = np.array([r0])
            for direction in (1.0, -1.0):
                sol, err = _integrate_trajectory(
                    v, y0, (direction * xi0[0], direction * xi0[1]), horizon, radius
                )
                if err is not None:
                    failures += 1
                    fail_msg = err
                    ok_both = False
                    break
                times = sol.t
                radii = np.hypot(sol.y[0], sol.y[1])
                e_traj = sol.y[2] ** 2 + sol.y[3] ** 2 + np.asarray(v(radii))
                drift_max = max(drift_max, float(np.max(np.abs(e_traj - energy)) / max(energy, 1e-12)))
                if not (len(sol.t_events[0]) > 0):
                    ok_both = False
            rows.append(ClassicalTrajectory(
                y0=y0, v0=xi0, times=times, radii=radii,
                energy_drift=drift_max, escaped=ok_both, failure=fail_msg,
            ))
            if not ok_both:
                all_ok = False
    return NonTrappingReport(
        energy=float(energy), radius=float(radius), horizon=float(horizon),
        trajectories=tuple(rows), all_escaped=all_ok, failures=failures,
    )


# ---------------------------------------------------------------------------
# decay check


@dataclass(frozen=True)
class DecayReport:
    rho: float
    bound: float
    worst_ratio: float
    worst_radius: float
    passed: bool


def decay_check(v: RadialPotential, rho: float, n_samples: int = 400,
                *, bound=None, r_max=None) -> DecayReport:
    """Sample |V(r)| (1+r)^rho on a log grid beyond the support radius.

    Passes when the ratio stays below ``bound`` (default: the declared tail
    amplitude, or the small-number floor for compactly supported profiles).
    """
    r_lo = max(v.support_radius, 0.5)
    r_hi = r_max if r_max is not None else max(50.0, 20.0 * r_lo)
    r = np.geomspace(r_lo + 1e-9, r_hi, n_samples)
    ratio = np.abs(v(r)) * (1.0 + r) ** rho
    idx = int(np.argmax(ratio))
    worst = float(ratio[idx])
    if bound is None:
        bound = v.tail_amplitude if v.tail_amplitude > 0 else 1e-12
    return DecayReport(rho=float(rho), bound=float(bound), worst_ratio=worst,
                       worst_radius=float(r[idx]), passed=bool(worst <= bound * (1 + 1e-9)))
