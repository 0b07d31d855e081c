"""Absorption spectra of linear molecular aggregates at zero temperature.

Two solvers produce the dipole correlation trace M(t) for the same model
(open chain of two-level monomers, Lorentzian-sum spectral densities):

* ``zofe``  -- reduced-space propagation in the N-dimensional electronic
  space with auxiliary memory operators (approximate; exact for
  non-interacting monomers and in the Markov limit),
* ``pseudomode`` -- numerically exact propagation with one damped auxiliary
  mode per Lorentzian, in a truncated occupation basis.

``spectra`` turns traces into spectra and quantifies the agreement of two
spectra with an area-overlap percentage; ``cli`` drives scenario files.
"""

from .model import (
    AggregateSpec,
    LorentzianBath,
    UnitSystem,
    bath_correlation,
    build_system_hamiltonian,
    gamma_to_huang_rhys,
    huang_rhys_to_gamma,
    initial_bright_state,
    spectral_density,
)
from .propagation import PropagationConfig, PropagationError, default_time_step
from .pseudomode import (
    BasisSizeError,
    CapConvergenceError,
    PmBasisState,
    PmGenerator,
    assemble_generator,
    converge_caps,
    default_caps,
    embed_initial_state,
    enumerate_basis,
    pm_correlation,
    propagate_pm,
)
from .spectra import (
    CorrelationTrace,
    Spectrum,
    absorption_from_trace,
    cumulant_oracle,
    markov_oracle,
    mean_shift,
    overlap,
)
from .zofe import BathTerms, ZofeState, coupling_operators, propagate_zofe, zofe_rhs

__version__ = "0.1.0"
