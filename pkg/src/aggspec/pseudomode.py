"""Numerically exact propagation in a truncated electronic x occupation basis.

One damped auxiliary mode per Lorentzian of the spectral density is pulled
into the propagated space.  Basis states pair an excited-monomer index n with
an occupation vector beta over all (monomer, mode) slots; in that basis the
non-Hermitian generator G of  d c/dt = G c  has per component c[n, beta]:

  * diagonal  -1j*(eps_n + sum_mj (Omega_mj - 1j*gamma_mj) beta_mj),
  * ladder    +1j*sqrt(Gamma_nj)*sqrt(beta_nj)   to beta_nj - 1   and
              +1j*sqrt(Gamma_nj)*sqrt(beta_nj+1) to beta_nj + 1,
    on the modes of the excited monomer n only,
  * hopping   -1j*V to (m, beta) for |m - n| = 1.

G = -1j*H - D with a real symmetric H and a diagonal damping D >= 0, and it
is very sparse; matrix-vector products are the only operation needed.
Truncation is hard: ladder transitions leaving the enumerated set are
dropped, and cap convergence is certified on a doubling ladder.

Because the initial bright state is real for real dipoles and G is complex
symmetric, exp(G t) is symmetric too, so the correlation value at 2t follows
from the state at t alone:  M(2t) = mu_tot^2 * psi(t)^T psi(t)  (plain
transpose, no conjugation).  This doubling trick halves the propagation time
and holds exactly, step-for-step, for the RK4 scheme as well.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse

from .model import (
    AggregateSpec,
    LorentzianBath,
    gamma_to_huang_rhys,
    initial_bright_state,
)
from .propagation import PropagationConfig, PropagationError
from .spectra import CorrelationTrace, absorption_from_trace, overlap

__all__ = [
    "PmBasisState",
    "PmGenerator",
    "BasisSizeError",
    "CapConvergenceError",
    "count_occupation_vectors",
    "enumerate_basis",
    "assemble_generator",
    "embed_initial_state",
    "propagate_pm",
    "pm_correlation",
    "default_caps",
    "converge_caps",
    "default_nu_grid",
]

DEFAULT_MAX_STATES = 2_000_000


class BasisSizeError(PropagationError):
    """The requested basis would exceed the configured memory budget."""

    def __init__(self, dim, max_states):
        self.dim = dim
        self.max_states = max_states
        super().__init__(
            f"basis would hold {dim} states, exceeding the budget of {max_states}"
        )


class CapConvergenceError(PropagationError):
    """The cap ladder hit the memory budget before the spectra converged."""

    def __init__(self, message, overlaps):
        self.overlaps = tuple(overlaps)
        super().__init__(message)


@dataclass(frozen=True)
class PmBasisState:
    """Excited-monomer index paired with mode occupations over all slots."""

    monomer: int
    occupations: tuple


@dataclass(frozen=True)
class PmGenerator:
    """Sparse generator G over an enumerated basis (CSR; matvec only)."""

    matrix: scipy.sparse.csr_matrix
    basis: tuple

    @property
    def dim(self):
        return self.matrix.shape[0]


def _mode_slots(bath: LorentzianBath):
    """Flattened (monomer, term index) slots plus per-slot parameter arrays."""
    owners, centers, widths, couplings = [], [], [], []
    for n, monomer_terms in enumerate(bath.terms):
        for gamma_amp, center, width in monomer_terms:
            owners.append(n)
            centers.append(center)
            widths.append(width)
            couplings.append(math.sqrt(gamma_amp))
    return (
        np.asarray(owners, dtype=int),
        np.asarray(centers, dtype=float),
        np.asarray(widths, dtype=float),
        np.asarray(couplings, dtype=float),
    )


def count_occupation_vectors(n_slots: int, b_tot: int, b_mode: int) -> int:
    """Number of occupation vectors with entry cap b_mode and sum cap b_tot."""
    if b_tot < 0 or b_mode < 0:
        raise ValueError("caps must be >= 0")
    counts = [1] + [0] * b_tot
    for _ in range(n_slots):
        new = [0] * (b_tot + 1)
        for total in range(b_tot + 1):
            acc = 0
            for k in range(min(b_mode, total) + 1):
                acc += counts[total - k]
            new[total] = acc
        counts = new
    return sum(counts)


def _occupation_vectors(n_slots, b_tot, b_mode):
    if n_slots == 0:
        yield ()
        return
    for first in range(min(b_tot, b_mode) + 1):
        for rest in _occupation_vectors(n_slots - 1, b_tot - first, b_mode):
            yield (first,) + rest


def enumerate_basis(
    n_monomers: int,
    modes_per_monomer,
    b_tot: int,
    b_mode: int,
    max_states: int = DEFAULT_MAX_STATES,
):
    """Ordered basis: every (n, beta) within the caps, exactly once.

    The ordering is lexicographic in (n, beta) and deterministic.  ``beta``
    runs over all modes of all monomers (sum(modes_per_monomer) slots);
    sum(beta) <= b_tot and each entry <= b_mode.  Raises BasisSizeError with
    the projected dimension if it would exceed ``max_states``.
    """
    n_slots = int(sum(modes_per_monomer))
    dim = n_monomers * count_occupation_vectors(n_slots, b_tot, b_mode)
    if dim > max_states:
        raise BasisSizeError(dim, max_states)
    vectors = list(_occupation_vectors(n_slots, b_tot, b_mode))
    return [
        PmBasisState(monomer=n, occupations=beta)
        for n in range(n_monomers)
        for beta in vectors
    ]


def assemble_generator(agg: AggregateSpec, bath: LorentzianBath, basis) -> PmGenerator:
    """Sparse generator over ``basis`` (any deterministic ordering).

    Ladder transitions whose target state is not in the basis are dropped
    (hard truncation).
    """
    if bath.n_monomers != agg.n_monomers:
        raise ValueError("bath must provide a term list per monomer")
    slot_owner, slot_center, slot_width, slot_coupling = _mode_slots(bath)
    n_slots = slot_owner.size
    index = {}
    for row, state in enumerate(basis):
        if len(state.occupations) != n_slots:
            raise ValueError("basis occupation length does not match the bath")
        index[(state.monomer, state.occupations)] = row

    eps = agg.epsilon
    v = agg.coupling_v
    slots_of_monomer = [
        [s for s in range(n_slots) if slot_owner[s] == n]
        for n in range(agg.n_monomers)
    ]
    rows, cols, vals = [], [], []
    for row, state in enumerate(basis):
        n, beta = state.monomer, state.occupations
        diag = eps[n]
        damp = 0.0
        for s in range(n_slots):
            diag += slot_center[s] * beta[s]
            damp += slot_width[s] * beta[s]
        rows.append(row)
        cols.append(row)
        vals.append(-1j * diag - damp)
        for s in slots_of_monomer[n]:
            b_s = beta[s]
            if b_s > 0:
                target = index.get((n, beta[:s] + (b_s - 1,) + beta[s + 1:]))
                if target is not None:
                    rows.append(row)
                    cols.append(target)
                    vals.append(1j * slot_coupling[s] * math.sqrt(b_s))
            target = index.get((n, beta[:s] + (b_s + 1,) + beta[s + 1:]))
            if target is not None:
                rows.append(row)
                cols.append(target)
                vals.append(1j * slot_coupling[s] * math.sqrt(b_s + 1))
        for m in (n - 1, n + 1):
            if 0 <= m < agg.n_monomers and v != 0.0:
                rows.append(row)
                cols.append(index[(m, beta)])
                vals.append(-1j * v)
    dim = len(basis)
    matrix = scipy.sparse.coo_matrix(
        (np.asarray(vals, dtype=complex), (rows, cols)), shape=(dim, dim)
    ).tocsr()
    return PmGenerator(matrix=matrix, basis=tuple(basis))


def embed_initial_state(basis, psi0) -> np.ndarray:
    """Bright electronic state tensored with all-modes-in-vacuum."""
    psi0 = np.asarray(psi0)
    out = np.zeros(len(basis), dtype=complex)
    for row, state in enumerate(basis):
        if all(b == 0 for b in state.occupations):
            out[row] = psi0[state.monomer]
    return out


def _rk4_step(matrix, psi, dt):
    k1 = matrix @ psi
    k2 = matrix @ (psi + (0.5 * dt) * k1)
    k3 = matrix @ (psi + (0.5 * dt) * k2)
    k4 = matrix @ (psi + dt * k3)
    return psi + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def propagate_pm(
    generator: PmGenerator,
    psi0_embedded: np.ndarray,
    config: PropagationConfig,
    mu_tot_sq: float = 1.0,
    doubling: bool = True,
) -> CorrelationTrace:
    """Correlation trace from the sparse generator.

    With ``doubling`` (default), the state is propagated to t_max/2 with step
    dt and M(2*t_k) = mu_tot^2 * psi(t_k)^T psi(t_k) is recorded, so the
    returned trace has spacing 2*dt and the number of integration steps is
    halved.  Requires a real initial vector (guaranteed for real dipoles);
    complex input raises PropagationError.  Without doubling the trace is
    M(t_k) = mu_tot^2 <psi0|psi(t_k)> on spacing dt.
    """
    psi0_embedded = np.asarray(psi0_embedded, dtype=complex)
    if psi0_embedded.shape != (generator.dim,):
        raise ValueError("initial state does not match the generator dimension")
    matrix = generator.matrix
    dt = config.dt
    n_steps = config.n_steps
    if doubling:
        if np.any(psi0_embedded.imag != 0.0):
            raise PropagationError("doubling requires real initial state")
        half_steps = (n_steps + 1) // 2
        samples = np.empty(half_steps + 1, dtype=complex)
        psi = psi0_embedded.copy()
        samples[0] = mu_tot_sq * np.dot(psi, psi)
        for k in range(half_steps):
            psi = _rk4_step(matrix, psi, dt)
            samples[k + 1] = mu_tot_sq * np.dot(psi, psi)
        return CorrelationTrace(dt=2.0 * dt, samples=samples, mu_tot_sq=mu_tot_sq)
    samples = np.empty(n_steps + 1, dtype=complex)
    psi = psi0_embedded.copy()
    samples[0] = mu_tot_sq * np.vdot(psi0_embedded, psi)
    for k in range(n_steps):
        psi = _rk4_step(matrix, psi, dt)
        samples[k + 1] = mu_tot_sq * np.vdot(psi0_embedded, psi)
    return CorrelationTrace(dt=dt, samples=samples, mu_tot_sq=mu_tot_sq)


def default_caps(bath: LorentzianBath) -> int:
    """Occupation cap heuristic, ceil(4 + 6 * max Huang-Rhys factor).

    A Poisson-tail estimate; converge_caps certifies or replaces it.  Baths
    with a zero-frequency mode have no Huang-Rhys factor and need explicit
    caps.
    """
    max_x = 0.0
    for monomer_terms in bath.terms:
        for gamma_amp, center, width in monomer_terms:
            if center <= 0.0:
                raise ValueError(
                    "no cap heuristic for modes at non-positive frequency; "
                    "pass caps explicitly"
                )
            max_x = max(max_x, gamma_to_huang_rhys(gamma_amp, center))
    return math.ceil(4.0 + 6.0 * max_x)


def pm_correlation(
    agg: AggregateSpec,
    bath: LorentzianBath,
    config: PropagationConfig,
    caps=None,
    doubling: bool = True,
    max_states: int = DEFAULT_MAX_STATES,
) -> CorrelationTrace:
    """Convenience wrapper: enumerate, assemble, embed and propagate.

    ``caps`` is (b_tot, b_mode), a single int for both, or None for the
    default heuristic.  Doubling is dropped automatically if the bright
    state is not real (it always is for the real dipoles of AggregateSpec).
    """
    if caps is None:
        caps = default_caps(bath)
    b_tot, b_mode = (caps, caps) if isinstance(caps, (int, np.integer)) else caps
    modes = [len(t) for t in bath.terms]
    basis = enumerate_basis(agg.n_monomers, modes, b_tot, b_mode, max_states)
    generator = assemble_generator(agg, bath, basis)
    psi0, mu_tot = initial_bright_state(agg)
    psi0_embedded = embed_initial_state(basis, psi0)
    doubling = doubling and not np.any(psi0_embedded.imag != 0.0)
    return propagate_pm(
        generator, psi0_embedded, config, mu_tot_sq=mu_tot**2, doubling=doubling
    )


def _cap_ladder():
    cap = 1
    while True:
        yield cap
        cap *= 2


def converge_caps(
    agg: AggregateSpec,
    bath: LorentzianBath,
    config: PropagationConfig,
    tolerance: float,
    eta: float = 0.01,
    nu=None,
    doubling: bool = True,
    max_states: int = DEFAULT_MAX_STATES,
):
    """Smallest cap on the doubling ladder whose spectrum overlaps the next
    ladder step by at least 100 * (1 - tolerance) percent.

    The ladder is 1, 2, 4, 8, ...; a bath without coupling terms converges
    trivially at cap 0.  Returns (b_tot, b_mode, trace) for the accepted
    (smaller) cap, with b_mode = b_tot.  Raises CapConvergenceError,
    reporting the last two overlap values, if the memory budget is hit first.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    if nu is None:
        nu = default_nu_grid(agg, bath)
    target = 100.0 * (1.0 - tolerance)
    modes = [len(t) for t in bath.terms]
    n_slots = sum(modes)
    if n_slots == 0:
        # no electron-vibration coupling: every cap spans the same basis, so
        # the ladder is trivially converged at zero occupation
        trace = pm_correlation(
            agg, bath, config, caps=0, doubling=doubling, max_states=max_states
        )
        return 0, 0, trace
    overlaps = []
    prev = None  # (cap, trace, spectrum)
    for cap in _cap_ladder():
        dim = agg.n_monomers * count_occupation_vectors(n_slots, cap, cap)
        if dim > max_states:
            raise CapConvergenceError(
                f"cap ladder needs {dim} states at cap {cap}, over the budget "
                f"of {max_states}; last overlaps: "
                + (", ".join(f"{o:.4f}%" for o in overlaps[-2:]) or "none"),
                overlaps,
            )
        trace = pm_correlation(
            agg, bath, config, caps=cap, doubling=doubling, max_states=max_states
        )
        spectrum = absorption_from_trace(trace, eta, nu)
        if prev is not None:
            value = overlap(prev[2], spectrum)
            overlaps.append(value)
            if value >= target:
                return prev[0], prev[0], prev[1]
        prev = (cap, trace, spectrum)


def default_nu_grid(agg: AggregateSpec, bath: LorentzianBath, step: float = 0.01):
    """Frequency grid generously covering the aggregate absorption support."""
    eps_lo = float(np.min(agg.epsilon))
    eps_hi = float(np.max(agg.epsilon))
    v = abs(agg.coupling_v)
    reorg = 0.0
    max_center = 0.0
    for monomer_terms in bath.terms:
        r = sum(g / c if c > 0 else g for g, c, _ in monomer_terms)
        reorg = max(reorg, r)
        for _, center, _ in monomer_terms:
            max_center = max(max_center, center)
    lo = eps_lo - 2.0 * v - reorg - 2.0
    hi = eps_hi + 2.0 * v + 3.0 * reorg + 3.0 * max_center + 2.0
    n = int(np.floor((hi - lo) / step)) + 1
    return lo + step * np.arange(n)
