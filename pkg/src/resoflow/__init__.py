"""resoflow: desk-scale spectral-flow experiments for shape-resonance scattering."""

__version__ = "0.1.0"

from .potentials import (  # noqa: F401
    RadialPotential,
    PotentialTriple,
    RegionDecomposition,
    ring_barrier,
    step_profile,
    gaussian_profile,
    power_tail_profile,
    build_triple,
    classically_accessible,
    agmon_distance,
    non_trapping_check,
    decay_check,
    load_catalogue,
)
