"""Truncated spin-boson Hilbert space of the quantum Rabi model.

States live in the product basis |n>|s> of a Fock space truncated at
occupation N (the cutoff) and a spin-1/2. The basis is Fock-major with the spin
as the fast index:

    index(s, n) = 2 * n + s,    s = 0 for |down>, s = 1 for |up>.

With this ordering the parity operator sigma_z (-1)^(a^dag a) is diagonal and
the Hamiltonian

    H(g) = Omega/2 sigma_z + w0 a^dag a - g sqrt(Omega w0)/2 (a + a^dag) sigma_x

is a real symmetric matrix. Omega is never stored; it is always eta * w0.
`BASIS_VERSION` is bumped whenever the ordering changes so that cached
eigenvectors can be invalidated.
"""

import dataclasses
import math

import torch

from rabi_dpt import errors

BASIS_VERSION = 1
DTYPE = torch.float64

SPIN_DOWN, SPIN_UP = 0, 1

OPERATOR_KINDS = ("sigma_x", "sigma_y", "sigma_z", "x", "p", "number", "parity")
# Operators stored as the real matrix M, the operator itself being i * M.
_IMAGINARY_KINDS = ("sigma_y", "p")


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Physical inputs of one quantum Rabi model instance.

    Attributes:
        eta: Frequency ratio Omega / w0, plays the role of system size.
        g: Dimensionless coupling strength.
        cutoff: Maximum Fock occupation N kept in the truncated basis.
        omega0: Mode frequency w0 in inverse time units.
    """

    eta: float
    g: float = 0.0
    cutoff: int = 0
    omega0: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise errors.ParameterError(f"eta must be > 0, got {self.eta}.")
        if not self.omega0 > 0:
            raise errors.ParameterError(f"omega0 must be > 0, got {self.omega0}.")
        if not self.g >= 0:
            raise errors.ParameterError(f"g must be >= 0, got {self.g}.")
        if int(self.cutoff) != self.cutoff or self.cutoff < 0:
            raise errors.ParameterError(
                f"cutoff must be a non-negative integer, got {self.cutoff}."
            )

    @property
    def omega(self):
        """The spin frequency Omega = eta * w0."""
        return self.eta * self.omega0

    @property
    def dim(self):
        return 2 * (int(self.cutoff) + 1)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class BasisDescriptor:
    """Enumeration of the truncated spin-boson product basis."""

    cutoff: int
    dim: int
    ordering: str = "fock-major, spin-minor: index = 2 * n + s (s=0 down, s=1 up)"
    version: int = BASIS_VERSION

    def index(self, spin, n):
        """Returns the basis index of |n>|spin>."""
        assert spin in (SPIN_DOWN, SPIN_UP), f"Invalid spin label: {spin}"
        assert 0 <= n <= self.cutoff, f"Fock level {n} outside cutoff {self.cutoff}"
        return 2 * n + spin

    def label(self, index):
        """Returns the (spin, n) pair of a basis index."""
        assert 0 <= index < self.dim, f"Index {index} outside basis of size {self.dim}"
        return index % 2, index // 2

    def fock_levels(self):
        """Returns the Fock occupation of every basis index."""
        return torch.arange(self.dim) // 2


@dataclasses.dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """A dense real matrix representing an operator in the product basis.

    Attributes:
        label: Semantic tag, e.g. 'hamiltonian' or 'sigma_x'.
        entries: The (dim, dim) float64 matrix. When `imaginary` is True the
            operator is i * entries and entries is antisymmetric.
        imaginary: Whether the stored matrix is the imaginary part.
        params: The model parameters the operator was built for.
    """

    label: str
    entries: torch.Tensor
    imaginary: bool = False
    params: ModelParams = None

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def cutoff(self):
        return self.dim // 2 - 1

    def to_complex(self):
        """Returns the operator as a complex128 matrix."""
        entries = self.entries.to(torch.complex128)
        return 1j * entries if self.imaginary else entries


def build_basis(cutoff):
    """Builds the descriptor of the basis truncated at Fock level `cutoff`."""
    if int(cutoff) != cutoff or cutoff < 0:
        raise errors.ParameterError(f"cutoff must be >= 0, got {cutoff}.")
    cutoff = int(cutoff)
    return BasisDescriptor(cutoff=cutoff, dim=2 * (cutoff + 1))


def auto_cutoff(eta, g):
    """Heuristic Fock cutoff for dynamics that reach coupling `g`.

    The mean photon number of the superradiant ground state is alpha_sp^2 =
    eta (g^2 - g^-2) / 4 and its tail needs roughly ten standard deviations of
    headroom on top of a fixed margin.
    """
    alpha_sq = eta * (g ** 2 - g ** -2) / 4 if g > 1 else 0.0
    return int(math.ceil(alpha_sq + 10 * math.sqrt(alpha_sq) + 20))


def _annihilation(cutoff):
    return torch.diag(torch.sqrt(torch.arange(1, cutoff + 1, dtype=DTYPE)), 1)


def _spin_matrix(kind):
    # Rows and columns are ordered (down, up).
    if kind == "sigma_x":
        return torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=DTYPE)
    if kind == "sigma_y":
        return torch.tensor([[0.0, 1.0], [-1.0, 0.0]], dtype=DTYPE)
    if kind == "sigma_z":
        return torch.tensor([[-1.0, 0.0], [0.0, 1.0]], dtype=DTYPE)
    return torch.eye(2, dtype=DTYPE)


def _fock_matrix(kind, cutoff, eta):
    a = _annihilation(cutoff)
    if kind == "x":
        return (a + a.T) / math.sqrt(2 * eta)
    if kind == "p":
        return (a.T - a) / math.sqrt(2 * eta)
    levels = torch.arange(cutoff + 1, dtype=DTYPE)
    if kind == "number":
        return torch.diag(levels)
    if kind == "parity":
        return torch.diag(1.0 - 2.0 * (levels % 2))
    return torch.eye(cutoff + 1, dtype=DTYPE)


def parity_diagonal(cutoff):
    """Returns the diagonal of sigma_z (-1)^(a^dag a), entries are +1 or -1."""
    levels = torch.arange(cutoff + 1, dtype=DTYPE)
    return torch.kron(1.0 - 2.0 * (levels % 2), torch.diag(_spin_matrix("sigma_z")))


def assemble_hamiltonian(params):
    """Assembles H(g) as a dense real symmetric matrix.

    Args:
        params: The ModelParams of the instance.
    Returns:
        An OperatorMatrix labelled 'hamiltonian'.
    """
    cutoff = int(params.cutoff)
    a = _annihilation(cutoff)
    number = _fock_matrix("number", cutoff, params.eta)
    coupling = params.g * math.sqrt(params.omega * params.omega0) / 2
    # Every term is a Kronecker product of symmetric factors, so H == H.T exactly.
    identity = torch.eye(cutoff + 1, dtype=DTYPE)
    hamiltonian = (
        params.omega / 2 * torch.kron(identity, _spin_matrix("sigma_z"))
        + params.omega0 * torch.kron(number, _spin_matrix("identity"))
        - coupling * torch.kron(a + a.T, _spin_matrix("sigma_x"))
    )
    return OperatorMatrix(label="hamiltonian", entries=hamiltonian, params=params)


def assemble_operator(kind, params):
    """Assembles an observable or symmetry operator in the product basis.

    Args:
        kind: One of OPERATOR_KINDS. 'x' and 'p' are the rescaled quadratures
            (a + a^dag) / sqrt(2 eta) and i (a^dag - a) / sqrt(2 eta).
        params: The ModelParams of the instance. Only eta and cutoff are used.
    Returns:
        An OperatorMatrix. 'sigma_y' and 'p' are returned with imaginary=True.
    """
    if kind not in OPERATOR_KINDS:
        raise errors.ParameterError(
            f"Unknown operator kind '{kind}', expected one of {OPERATOR_KINDS}."
        )
    cutoff = int(params.cutoff)
    if kind in ("sigma_x", "sigma_y", "sigma_z"):
        fock, spin = torch.eye(cutoff + 1, dtype=DTYPE), _spin_matrix(kind)
    elif kind == "parity":
        fock, spin = _fock_matrix(kind, cutoff, params.eta), _spin_matrix("sigma_z")
    else:
        fock, spin = _fock_matrix(kind, cutoff, params.eta), _spin_matrix("identity")
    return OperatorMatrix(
        label=kind,
        entries=torch.kron(fock.contiguous(), spin),
        imaginary=kind in _IMAGINARY_KINDS,
        params=params,
    )
