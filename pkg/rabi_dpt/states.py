"""Analytic ground states of the quantum Rabi model and state utilities.

In the eta -> infinity limit the ground states are Gaussian:

    normal phase (g < 1):       S[s_np] |0> |down>
    superradiant phase (g > 1): D[+-alpha_sp] S[s_sp] |0> |down+->

with D[alpha] = exp(alpha (a^dag - a)) for real alpha and
S[s] = exp(s / 2 (a^dag^2 - a^2)). For s > 0 the squeezing widens the x
quadrature. The Fock amplitudes are produced by a
two-term forward recurrence that follows from the annihilation relation

    [(a - alpha) cosh s - (a^dag - alpha) sinh s] |psi> = 0,

and the truncated-norm deficit is checked against the exact vacuum amplitude
before the vector is renormalized.
"""

import dataclasses
import math

import numpy as np
import torch

from rabi_dpt import errors
from rabi_dpt import hilbert

NORM_DEFICIT_TOLERANCE = 1e-8
_RESCALE = 1e100


@dataclasses.dataclass(frozen=True, eq=False)
class QuantumState:
    """A normalized complex amplitude vector in the product basis.

    Attributes:
        amplitudes: (dim,) complex128 tensor ordered as `hilbert.BasisDescriptor`.
        norm_tolerance: Allowed deviation of the norm from 1.
    """

    amplitudes: torch.Tensor
    norm_tolerance: float = 1e-10

    def __post_init__(self):
        amplitudes = torch.as_tensor(self.amplitudes).to(torch.complex128)
        object.__setattr__(self, "amplitudes", amplitudes)
        norm = torch.linalg.vector_norm(amplitudes).item()
        if abs(norm - 1) > self.norm_tolerance:
            raise errors.ParameterError(
                f"State norm {norm!r} deviates from 1 by more than "
                f"{self.norm_tolerance}."
            )

    @classmethod
    def normalized(cls, amplitudes):
        """Builds a state from unnormalized amplitudes."""
        amplitudes = torch.as_tensor(amplitudes).to(torch.complex128)
        return cls(amplitudes / torch.linalg.vector_norm(amplitudes))

    @property
    def dim(self):
        return self.amplitudes.shape[0]

    @property
    def cutoff(self):
        return self.dim // 2 - 1

    def fock_distribution(self):
        """Returns the probability of every Fock level, summed over the spin."""
        probabilities = self.amplitudes.abs() ** 2
        return probabilities.view(-1, 2).sum(dim=1)


@dataclasses.dataclass(frozen=True)
class SuperradiantParams:
    """Closed-form parameters of the superradiant ground state.

    Attributes:
        g: Coupling the state belongs to (> 1).
        eta: Frequency ratio.
        alpha_sp: Displacement magnitude sqrt(eta (g^2 - g^-2) / 4) > 0.
        s_sp: Squeezing -log(1 - g^-4) / 4.
        spin_up_coeff: branch * sqrt((1 - g^-2) / 2).
        spin_down_coeff: sqrt((1 + g^-2) / 2).
        branch: +1 or -1.
    """

    g: float
    eta: float
    alpha_sp: float
    s_sp: float
    spin_up_coeff: float
    spin_down_coeff: float
    branch: int

    @property
    def alpha(self):
        """The signed displacement branch * alpha_sp."""
        return self.branch * self.alpha_sp

    @property
    def sigma_x(self):
        return self.branch * math.sqrt(1 - self.g ** -4)

    @property
    def sigma_z(self):
        return -self.g ** -2

    @property
    def x(self):
        return self.branch * math.sqrt((self.g ** 2 - self.g ** -2) / 2)


def _check_branch(branch):
    if branch not in (1, -1):
        raise errors.ParameterError(f"branch must be +1 or -1, got {branch}.")


def superradiant_parameters(g, eta, branch=1):
    """Evaluates the closed-form parameters of the superradiant ground state.

    Args:
        g: Coupling, must be > 1.
        eta: Frequency ratio, must be > 0.
        branch: +1 or -1, selects the symmetry-broken branch.
    Returns:
        A SuperradiantParams instance.
    """
    _check_branch(branch)
    if not g > 1:
        raise errors.ParameterError(
            f"Superradiant parameters are undefined for g <= 1, got g={g}."
        )
    if not eta > 0:
        raise errors.ParameterError(f"eta must be > 0, got {eta}.")
    return SuperradiantParams(
        g=g,
        eta=eta,
        alpha_sp=math.sqrt(eta * (g ** 2 - g ** -2) / 4),
        s_sp=-math.log1p(-(g ** -4)) / 4,
        spin_up_coeff=branch * math.sqrt((1 - g ** -2) / 2),
        spin_down_coeff=math.sqrt((1 + g ** -2) / 2),
        branch=branch,
    )


def normal_squeezing(g):
    """Returns s_np = -log(1 - g^2) / 4 of the normal-phase ground state."""
    if not 0 <= g < 1:
        raise errors.ParameterError(
            f"Normal-phase squeezing requires 0 <= g < 1, got g={g}."
        )
    return -math.log1p(-(g ** 2)) / 4


def _fock_amplitudes(alpha, s, cutoff):
    """Returns (amplitudes, deficit) of D(alpha) S(s) |0> truncated at `cutoff`."""
    cosh, sinh = math.cosh(s), math.sinh(s)
    decay = alpha * math.exp(-s)
    c = np.zeros(cutoff + 1, dtype=np.float64)
    c[0], log_scale = 1.0, 0.0
    for n in range(cutoff):
        previous = c[n - 1] if n > 0 else 0.0
        c[n + 1] = (decay * c[n] + sinh * math.sqrt(n) * previous) / (
            cosh * math.sqrt(n + 1)
        )
        if abs(c[n + 1]) > _RESCALE:
            c[: n + 2] /= _RESCALE
            log_scale += math.log(_RESCALE)

    log_c0 = -0.5 * math.log(cosh) - alpha ** 2 * (1 - math.tanh(s)) / 2
    log_norm = 2 * (log_c0 + log_scale) + math.log(np.sum(c ** 2))
    deficit = -math.expm1(log_norm)
    return c / math.sqrt(np.sum(c ** 2)), deficit


def coherent_squeezed_vector(alpha, s, spin, cutoff):
    """Builds D(alpha) S(s) |0> tensored with a spin state.

    Args:
        alpha: Real displacement.
        s: Real squeezing in the S[s] = exp(s / 2 (a^dag^2 - a^2)) convention.
        spin: Pair (c_up, c_down) of real spin amplitudes.
        cutoff: Fock cutoff of the basis.
    Returns:
        The normalized QuantumState.
    Raises:
        CutoffError: If more than NORM_DEFICIT_TOLERANCE of the norm lies above
            the cutoff.
    """
    basis = hilbert.build_basis(cutoff)
    fock, deficit = _fock_amplitudes(float(alpha), float(s), basis.cutoff)
    if deficit > NORM_DEFICIT_TOLERANCE:
        raise errors.CutoffError(
            f"Cutoff {basis.cutoff} is too small for alpha={alpha}, s={s}: "
            f"truncated-norm deficit {deficit:.3e} > {NORM_DEFICIT_TOLERANCE}."
        )
    c_up, c_down = spin
    spinor = np.zeros(2)
    spinor[hilbert.SPIN_DOWN], spinor[hilbert.SPIN_UP] = c_down, c_up
    amplitudes = torch.kron(torch.from_numpy(fock), torch.from_numpy(spinor))
    return QuantumState.normalized(amplitudes)


def analytic_ground_state(params, branch=1, phase=None):
    """Builds the eta -> infinity ground state at coupling params.g.

    Args:
        params: ModelParams; the state is built at params.g in params.cutoff.
        branch: +1 or -1, only used in the superradiant phase.
        phase: 'normal', 'superradiant' or None to infer it from params.g.
    Returns:
        The normalized QuantumState.
    """
    g = params.g
    if g == 1:
        raise errors.ParameterError(
            "The analytic ground state is undefined at g=1 (the squeezing diverges)."
        )
    phase = phase or ("normal" if g < 1 else "superradiant")
    if phase == "normal":
        return coherent_squeezed_vector(
            0.0, normal_squeezing(g), (0.0, 1.0), params.cutoff
        )
    if phase != "superradiant":
        raise errors.ParameterError(
            f"phase must be 'normal' or 'superradiant', got '{phase}'."
        )
    sp = superradiant_parameters(g, params.eta, branch)
    return coherent_squeezed_vector(
        sp.alpha, sp.s_sp, (sp.spin_up_coeff, sp.spin_down_coeff), params.cutoff
    )


def overlap(a, b):
    """Returns <a|b> as a Python complex."""
    if a.dim != b.dim:
        raise errors.ParameterError(
            f"Cannot overlap states of dimension {a.dim} and {b.dim}."
        )
    return torch.vdot(a.amplitudes, b.amplitudes).item()


def expectation(state, operator):
    """Returns the real expectation value <state|operator|state>."""
    if state.dim != operator.dim:
        raise errors.ParameterError(
            f"State dimension {state.dim} does not match operator dimension "
            f"{operator.dim}."
        )
    psi = state.amplitudes
    return torch.vdot(psi, operator.to_complex() @ psi).real.item()


def squeezed_coherent_overlap(alpha1, s1, alpha2, s2):
    """Closed-form <alpha1, s1|alpha2, s2> of two real displaced squeezed vacua.

    Both states are real Gaussians in the quadrature (a + a^dag) / sqrt(2) with
    mean sqrt(2) alpha and variance exp(2 s) / 2.
    """
    v1, v2 = math.exp(2 * s1) / 2, math.exp(2 * s2) / 2
    mu1, mu2 = math.sqrt(2) * alpha1, math.sqrt(2) * alpha2
    return (
        math.sqrt(2)
        * (v1 * v2) ** 0.25
        / math.sqrt(v1 + v2)
        * math.exp(-((mu1 - mu2) ** 2) / (4 * (v1 + v2)))
    )


def analytic_branch_overlap(g, eta):
    """Closed-form <phi_0^-|phi_0^+> of the two superradiant branches."""
    sp = superradiant_parameters(g, eta)
    spin = sp.spin_down_coeff ** 2 - sp.spin_up_coeff ** 2
    return spin * squeezed_coherent_overlap(-sp.alpha_sp, sp.s_sp, sp.alpha_sp, sp.s_sp)
