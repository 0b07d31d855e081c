"""Reduced-space propagation of the dipole correlation function.

For zero-temperature absorption, no stochastic driving enters and the
electronic state psi(t) obeys a deterministic equation in the N-dimensional
one-excitation space, coupled to memory operators.  Closing the functional
expansion of the memory kernel at zeroth order (the ZOFE approximation) and
splitting the sum-of-exponentials bath correlation per term, one auxiliary
N x N operator

    Q[n,j](t) = integral_0^t ds Gamma_nj e^{-(1j*Omega_nj + gamma_nj)(t-s)}
                              O0[n](t, s)

is propagated per (monomer n, bath term j).  Differentiating under the
integral (the integrand obeys a pure commutator equation with initial value
O0[n](s, s) = L[n]) gives the closed local system

    dpsi/dt    = K(t) psi,
    dQ[n,j]/dt = Gamma_nj L[n] - (1j*Omega_nj + gamma_nj) Q[n,j] + [K(t), Q[n,j]],

with K(t) = -1j H - sum_n L[n]^dag Qbar[n], Qbar[n] = sum_j Q[n,j] and the
coupling operators L[n] = -|pi_n><pi_n|.  This avoids any history
convolution: the cost per step is independent of t.  The scheme is exact for
non-interacting monomers (V = 0) and in the Markov limit of broad baths.

The auxiliary feedback is quadratic; in narrow resonance-like windows of the
electronic coupling it develops sharp transients that the fixed step must
resolve, otherwise the norm guard aborts the run ("dt too large").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    AggregateSpec,
    LorentzianBath,
    build_system_hamiltonian,
    initial_bright_state,
)
from .propagation import PropagationConfig, PropagationError
from .spectra import CorrelationTrace

__all__ = [
    "ZofeState",
    "BathTerms",
    "coupling_operators",
    "zofe_rhs",
    "propagate_zofe",
]

# ||psi|| may transiently revive under non-Markovian damping but must never
# exceed 1 beyond integration noise; a larger norm signals an unstable step.
_NORM_GUARD = 1.0 + 1e-6


@dataclass
class ZofeState:
    """Propagation state: electronic vector, stacked auxiliary operators, time.

    ``aux[k]`` is the N x N operator Q[n,j] of the k-th flattened bath term.
    """

    psi: np.ndarray
    aux: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class BathTerms:
    """Flattened (monomer, term) list: owner index, decay z = 1j*Omega + gamma,
    and weight Gamma for each exponential of the bath correlation."""

    monomer: np.ndarray
    z: np.ndarray
    gamma_amp: np.ndarray

    @classmethod
    def from_bath(cls, bath: LorentzianBath):
        owners, zs, amps = [], [], []
        for n, monomer_terms in enumerate(bath.terms):
            for gamma_amp, center, width in monomer_terms:
                owners.append(n)
                zs.append(1j * center + width)
                amps.append(gamma_amp)
        return cls(
            monomer=np.asarray(owners, dtype=int),
            z=np.asarray(zs, dtype=complex),
            gamma_amp=np.asarray(amps, dtype=float),
        )

    @property
    def count(self):
        return self.monomer.size


def coupling_operators(n_monomers: int) -> np.ndarray:
    """Stack of the N coupling operators L[n] = -|pi_n><pi_n|, shape (N, N, N)."""
    ops = np.zeros((n_monomers, n_monomers, n_monomers), dtype=complex)
    for n in range(n_monomers):
        ops[n, n, n] = -1.0
    return ops


class _RhsContext:
    """Quantities that do not change between steps, built once per run."""

    def __init__(self, h_sys, terms: BathTerms, l_ops):
        n = h_sys.shape[0]
        if h_sys.shape != (n, n):
            raise ValueError("h_sys must be square")
        if l_ops.shape != (n, n, n):
            raise ValueError("need one N x N coupling operator per monomer")
        self.n = n
        self.terms = terms
        self.minus_ih = -1j * h_sys
        self.l_dag = np.ascontiguousarray(l_ops.conj().transpose(0, 2, 1))
        # source term Gamma_nj * L[n] of each auxiliary operator
        self.source = np.empty((terms.count, n, n), dtype=complex)
        for k in range(terms.count):
            self.source[k] = terms.gamma_amp[k] * l_ops[terms.monomer[k]]


def _rhs(psi, aux, ctx: _RhsContext):
    n, terms = ctx.n, ctx.terms
    qbar = np.zeros((n, n, n), dtype=complex)
    for k in range(terms.count):
        qbar[terms.monomer[k]] += aux[k]
    k_op = ctx.minus_ih.copy()
    for m in range(n):
        k_op -= ctx.l_dag[m] @ qbar[m]
    dpsi = k_op @ psi
    daux = np.matmul(k_op, aux)
    daux -= np.matmul(aux, k_op)
    daux -= terms.z[:, None, None] * aux
    daux += ctx.source
    return dpsi, daux


def zofe_rhs(state: ZofeState, h_sys: np.ndarray, terms: BathTerms, l_ops: np.ndarray):
    """Time derivative of (psi, aux) for the closed ZOFE system.

    Returns the pair (dpsi, daux) with the same shapes as ``state.psi`` and
    ``state.aux``.  Raises ValueError on dimension mismatch.
    """
    n = state.psi.shape[0]
    if h_sys.shape != (n, n):
        raise ValueError("h_sys dimension does not match the state vector")
    if state.aux.shape != (terms.count, n, n):
        raise ValueError("aux stack does not match the bath term list")
    if l_ops.shape != (n, n, n):
        raise ValueError("need one N x N coupling operator per monomer")
    return _rhs(state.psi, state.aux, _RhsContext(h_sys, terms, l_ops))


def _propagate(agg: AggregateSpec, bath: LorentzianBath, config: PropagationConfig):
    """Run the fixed-step RK4 loop; returns (trace, final ZofeState)."""
    if bath.n_monomers != agg.n_monomers:
        raise ValueError("bath must provide a term list per monomer")
    h_sys = build_system_hamiltonian(agg)
    terms = BathTerms.from_bath(bath)
    ctx = _RhsContext(h_sys, terms, coupling_operators(agg.n_monomers))
    psi0, mu_tot = initial_bright_state(agg)
    mu_sq = mu_tot**2

    dt = config.dt
    half = 0.5 * dt
    sixth = dt / 6.0
    n_steps = config.n_steps
    psi = psi0.copy()
    aux = np.zeros((terms.count, agg.n_monomers, agg.n_monomers), dtype=complex)
    samples = np.empty(n_steps + 1, dtype=complex)
    samples[0] = mu_sq * np.vdot(psi0, psi)
    guard_sq = _NORM_GUARD**2

    for k in range(n_steps):
        d1p, d1a = _rhs(psi, aux, ctx)
        d2p, d2a = _rhs(psi + half * d1p, aux + half * d1a, ctx)
        d3p, d3a = _rhs(psi + half * d2p, aux + half * d2a, ctx)
        d4p, d4a = _rhs(psi + dt * d3p, aux + dt * d3a, ctx)
        psi = psi + sixth * (d1p + 2.0 * (d2p + d3p) + d4p)
        aux = aux + sixth * (d1a + 2.0 * (d2a + d3a) + d4a)
        norm_sq = np.vdot(psi, psi).real
        if not norm_sq <= guard_sq:
            raise PropagationError(
                f"state norm grew to {np.sqrt(norm_sq):.6g} at t = {(k + 1) * dt:.4g}; "
                f"dt too large"
            )
        samples[k + 1] = mu_sq * np.vdot(psi0, psi)

    trace = CorrelationTrace(dt=dt, samples=samples, mu_tot_sq=mu_sq)
    return trace, ZofeState(psi, aux, n_steps * dt)


def propagate_zofe(
    agg: AggregateSpec,
    bath: LorentzianBath,
    config: PropagationConfig,
    self_check_tol=None,
) -> CorrelationTrace:
    """Correlation trace M(t_k) = mu_tot^2 <psi0|psi(t_k)> on t_k = k*dt.

    Parameters
    ----------
    agg, bath : model inputs (bath terms per monomer).
    config : PropagationConfig
        Fixed RK4 step and final time.
    self_check_tol : float, optional
        When given, the trace is recomputed with dt/2 and the two runs must
        agree to this absolute tolerance (relative to mu_tot^2) on shared
        grid points; disagreement raises PropagationError.
    """
    trace, _ = _propagate(agg, bath, config)
    if self_check_tol is not None:
        fine, _ = _propagate(
            agg, bath, PropagationConfig(dt=config.dt / 2, t_max=config.t_max)
        )
        diff = np.max(np.abs(trace.samples - fine.samples[::2])) / trace.mu_tot_sq
        if diff > self_check_tol:
            raise PropagationError(
                f"step-halving self check failed: traces differ by {diff:.3e} "
                f"(tolerance {self_check_tol:.3e}); reduce dt"
            )
    return trace
