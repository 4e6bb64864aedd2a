"""Dense eigendecomposition of quantum Rabi Hamiltonians.

Quench dynamics and Loschmidt echoes need every populated eigenpair, so the
full spectrum is computed with a dense real-symmetric solver. The Hamiltonian
commutes with the (diagonal) parity operator, so by default the two parity
blocks are diagonalized separately and merged. This gives every eigenvector a
definite parity even inside the exponentially degenerate doublets of the
superradiant phase, where a single solve would return arbitrary mixtures.

Decompositions can be persisted in a `SpectralCache` directory. Each file holds
a versioned header followed by little-endian float64 eigenvalues and then the
column-major eigenvector matrix.
"""

import dataclasses
import hashlib
import os
import tempfile
import time
import warnings

import numpy as np
import torch

from rabi_dpt import errors
from rabi_dpt import hilbert
from rabi_dpt import states

DEFAULT_GAP_THRESHOLD = 1e-3
CACHE_ENV_VAR = "RABI_DPT_CACHE"
CACHE_MAGIC = b"RABIDPT1"
CACHE_FORMAT_VERSION = 1

_HEADER_DTYPE = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("basis_version", "<u4"),
        ("eta", "<f8"),
        ("omega0", "<f8"),
        ("g", "<f8"),
        ("cutoff", "<i8"),
        ("dim", "<i8"),
    ]
)


@dataclasses.dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenvalues and eigenvectors of one Hamiltonian instance.

    Attributes:
        params: The ModelParams of the decomposed Hamiltonian.
        eigenvalues: Ascending (dim,) float64 tensor E_n.
        eigenvectors: (dim, dim) float64 tensor whose columns are |phi_n>.
        parity_labels: (dim,) float64 tensor of +1 / -1 parity eigenvalues.
    """

    params: hilbert.ModelParams
    eigenvalues: torch.Tensor
    eigenvectors: torch.Tensor
    parity_labels: torch.Tensor

    @property
    def dim(self):
        return self.eigenvalues.shape[0]

    def coefficients(self, state):
        """Returns <phi_n|state> for every eigenvector as a complex tensor."""
        if state.dim != self.dim:
            raise errors.ParameterError(
                f"State dimension {state.dim} does not match spectrum dimension "
                f"{self.dim}."
            )
        return self.eigenvectors.to(torch.complex128).T @ state.amplitudes

    def reconstruct(self):
        """Returns V diag(E) V^T."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


@dataclasses.dataclass(frozen=True)
class DegeneracyReport:
    """Pairing of the spectrum into parity doublets relative to the separatrix.

    Attributes:
        separatrix_energy: E_c = -eta * w0 / 2.
        pairs_below: (E_n, E_n+1, gap) for every opposite-parity doublet with
            gap below `gap_threshold` and mean energy below E_c.
        gaps_above: Statistics of the gaps between opposite-parity neighbours
            above E_c (keys: count, mean, median, min, max).
        gap_threshold: The gap below which two levels count as degenerate.
        n_below: Number of levels below E_c.
    """

    separatrix_energy: float
    pairs_below: list
    gaps_above: dict
    gap_threshold: float
    n_below: int


def _parity_labels(eigenvectors, parity):
    return torch.sign(((eigenvectors ** 2) * parity[:, None]).sum(dim=0))


def _eigh(matrix):
    try:
        return torch.linalg.eigh(matrix)
    except RuntimeError as e:
        asymmetry = (matrix - matrix.T).abs().max().item()
        raise errors.SpectralError(
            f"Eigensolver failed for a {matrix.shape[0]}x{matrix.shape[0]} matrix "
            f"(max |entry| = {matrix.abs().max().item():.6g}, "
            f"max |H - H^T| = {asymmetry:.3g}): {e}"
        ) from e


def eigendecompose(hamiltonian, by_parity=True):
    """Computes the full eigendecomposition of a Hamiltonian.

    Args:
        hamiltonian: A symmetric OperatorMatrix from `hilbert.assemble_hamiltonian`.
        by_parity: Whether to diagonalize the two parity blocks separately. Falls
            back to a single solve if the matrix does not commute with parity.
    Returns:
        The SpectralData of the Hamiltonian.
    """
    assert not hamiltonian.imaginary, "Only real Hamiltonians are supported."
    entries = hamiltonian.entries
    parity = hilbert.parity_diagonal(hamiltonian.cutoff)
    blocks = [parity > 0, parity < 0]
    mixes_blocks = entries[blocks[0]][:, blocks[1]].abs().max().item() > 0

    if not by_parity or mixes_blocks:
        eigenvalues, eigenvectors = _eigh(entries)
        labels = _parity_labels(eigenvectors, parity)
    else:
        values, vectors, labels = [], [], []
        for sign, mask in zip((1.0, -1.0), blocks):
            block_values, block_vectors = _eigh(entries[mask][:, mask])
            embedded = torch.zeros(
                (entries.shape[0], block_values.shape[0]), dtype=entries.dtype
            )
            embedded[mask] = block_vectors
            values.append(block_values)
            vectors.append(embedded)
            labels.append(torch.full_like(block_values, sign))
        eigenvalues = torch.cat(values)
        order = torch.argsort(eigenvalues, stable=True)
        eigenvalues = eigenvalues[order]
        eigenvectors = torch.cat(vectors, dim=1)[:, order]
        labels = torch.cat(labels)[order]

    return SpectralData(
        params=hamiltonian.params,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        parity_labels=labels,
    )


def ground_state(sd):
    """Returns (state, energy) of the lowest eigenpair."""
    state = states.QuantumState(sd.eigenvectors[:, 0].to(torch.complex128))
    return state, sd.eigenvalues[0].item()


def symmetric_doublet(sd, branch=1):
    """Builds the symmetry-broken state (|E_0> +- |E_1>) / sqrt(2).

    The relative sign is chosen so that <sigma_x> has the sign of `branch`, which
    makes this the finite-eta counterpart of the analytic superradiant state.

    Args:
        sd: SpectralData of H(g) with g > 1.
        branch: +1 or -1.
    Returns:
        The normalized QuantumState.
    """
    assert branch in (1, -1), f"branch must be +1 or -1, got {branch}"
    v0, v1 = sd.eigenvectors[:, 0], sd.eigenvectors[:, 1]
    sigma_x = hilbert.assemble_operator("sigma_x", sd.params).entries
    sign = 1.0 if (v0 @ sigma_x @ v1).item() * branch >= 0 else -1.0
    amplitudes = (v0 + sign * v1) / np.sqrt(2.0)
    return states.QuantumState(amplitudes.to(torch.complex128))


def degeneracy_map(sd, gap_threshold=None):
    """Pairs eigenstates into parity doublets below the separatrix.

    Args:
        sd: The SpectralData to analyze.
        gap_threshold: Gap below which two opposite-parity neighbours are counted
            as a doublet. Defaults to DEFAULT_GAP_THRESHOLD * w0.
    Returns:
        A DegeneracyReport.
    """
    omega0 = sd.params.omega0
    if gap_threshold is None:
        gap_threshold = DEFAULT_GAP_THRESHOLD * omega0
    separatrix = -sd.params.eta * omega0 / 2
    energies = sd.eigenvalues.tolist()
    labels = sd.parity_labels.tolist()

    pairs, i = [], 0
    while i + 1 < len(energies) and (energies[i] + energies[i + 1]) / 2 < separatrix:
        gap = energies[i + 1] - energies[i]
        if labels[i] != labels[i + 1] and gap < gap_threshold:
            pairs.append((energies[i], energies[i + 1], gap))
            i += 2
        else:
            i += 1

    gaps = [
        energies[j + 1] - energies[j]
        for j in range(len(energies) - 1)
        if energies[j] >= separatrix and labels[j] != labels[j + 1]
    ]
    gaps_above = {"count": len(gaps)}
    for name, statistic in (
        ("mean", np.mean),
        ("median", np.median),
        ("min", np.min),
        ("max", np.max),
    ):
        gaps_above[name] = float(statistic(gaps)) if gaps else np.nan

    return DegeneracyReport(
        separatrix_energy=separatrix,
        pairs_below=pairs,
        gaps_above=gaps_above,
        gap_threshold=gap_threshold,
        n_below=sum(e < separatrix for e in energies),
    )


@dataclasses.dataclass(frozen=True)
class CacheEntry:
    """A file in the spectral cache as reported by `SpectralCache.entries()`."""

    path: str
    params: hilbert.ModelParams
    size: int
    mtime: float


class SpectralCache:
    """A directory of eigendecompositions keyed by model parameters.

    Writes go to a temporary file in the cache directory which is then renamed
    into place, so concurrent readers never see a partial file. Unreadable,
    corrupt or stale files are treated as cache misses.
    """

    def __init__(self, cache_dir):
        """Initializes a new SpectralCache instance.

        Args:
            cache_dir: The directory holding the cache files. Created if missing.
        """
        self._cache_dir = cache_dir
        os.makedirs(self._cache_dir, exist_ok=True)

    @classmethod
    def from_env(cls, cache_dir=None):
        """Returns a cache for `cache_dir` or $RABI_DPT_CACHE, None if unset."""
        cache_dir = cache_dir or os.environ.get(CACHE_ENV_VAR)
        return cls(cache_dir) if cache_dir else None

    @property
    def cache_dir(self):
        return self._cache_dir

    @staticmethod
    def key(params):
        raw = "|".join(
            [
                repr(float(params.eta)),
                repr(float(params.omega0)),
                repr(float(params.g)),
                str(int(params.cutoff)),
                str(hilbert.BASIS_VERSION),
            ]
        )
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:24]

    def path(self, params):
        return os.path.join(self._cache_dir, f"spec_{self.key(params)}.bin")

    def store(self, sd):
        """Writes `sd` to the cache and returns the file path."""
        params = sd.params
        header = np.array(
            [
                (
                    CACHE_MAGIC,
                    CACHE_FORMAT_VERSION,
                    hilbert.BASIS_VERSION,
                    params.eta,
                    params.omega0,
                    params.g,
                    int(params.cutoff),
                    sd.dim,
                )
            ],
            dtype=_HEADER_DTYPE,
        )
        payload = (
            header.tobytes()
            + sd.eigenvalues.numpy().astype("<f8").tobytes()
            + sd.eigenvectors.numpy().astype("<f8").tobytes(order="F")
        )
        path = self.path(params)
        fd, tmp_path = tempfile.mkstemp(dir=self._cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        return path

    def _read_header(self, path, data):
        if len(data) < _HEADER_DTYPE.itemsize:
            return None
        header = np.frombuffer(data, dtype=_HEADER_DTYPE, count=1)[0]
        if header["magic"] != CACHE_MAGIC:
            return None
        if header["version"] != CACHE_FORMAT_VERSION or (
            header["basis_version"] != hilbert.BASIS_VERSION
        ):
            warnings.warn(
                f"Ignoring stale cache file {path} (format version "
                f"{int(header['version'])}, basis version "
                f"{int(header['basis_version'])}; expected {CACHE_FORMAT_VERSION}, "
                f"{hilbert.BASIS_VERSION}).",
                errors.CacheWarning,
            )
            return None
        return header

    def lookup(self, params):
        """Returns the cached SpectralData for `params`, or None on a miss."""
        path = self.path(params)
        try:
            with open(path, "rb") as f:
                data = f.read()
        except OSError:
            return None
        header = self._read_header(path, data)
        if header is None:
            return None
        cached = (float(header["eta"]), float(header["omega0"]), float(header["g"]))
        if cached != (float(params.eta), float(params.omega0), float(params.g)) or (
            int(header["cutoff"]) != int(params.cutoff)
        ):
            return None
        dim = int(header["dim"])
        offset = _HEADER_DTYPE.itemsize
        if len(data) != offset + 8 * (dim + dim * dim):
            return None
        eigenvalues = np.frombuffer(data, dtype="<f8", count=dim, offset=offset)
        eigenvectors = np.frombuffer(
            data, dtype="<f8", count=dim * dim, offset=offset + 8 * dim
        ).reshape((dim, dim), order="F")
        eigenvectors = torch.from_numpy(np.array(eigenvectors, dtype=np.float64))
        parity = hilbert.parity_diagonal(int(params.cutoff))
        return SpectralData(
            params=params,
            eigenvalues=torch.from_numpy(np.array(eigenvalues, dtype=np.float64)),
            eigenvectors=eigenvectors,
            parity_labels=_parity_labels(eigenvectors, parity),
        )

    def entries(self):
        """Lists every readable cache file, oldest first."""
        result = []
        for name in sorted(os.listdir(self._cache_dir)):
            if not (name.startswith("spec_") and name.endswith(".bin")):
                continue
            path = os.path.join(self._cache_dir, name)
            with open(path, "rb") as f:
                data = f.read(_HEADER_DTYPE.itemsize)
            header = self._read_header(path, data)
            if header is None:
                continue
            stat = os.stat(path)
            params = hilbert.ModelParams(
                eta=float(header["eta"]),
                g=float(header["g"]),
                cutoff=int(header["cutoff"]),
                omega0=float(header["omega0"]),
            )
            result.append(CacheEntry(path, params, stat.st_size, stat.st_mtime))
        return sorted(result, key=lambda entry: entry.mtime)

    def purge(self, older_than=None):
        """Deletes cache files, optionally only those older than `older_than` seconds.

        Returns:
            The number of files removed.
        """
        now, removed = time.time(), 0
        for name in os.listdir(self._cache_dir):
            if not (name.startswith("spec_") and name.endswith(".bin")):
                continue
            path = os.path.join(self._cache_dir, name)
            if older_than is not None and now - os.stat(path).st_mtime <= older_than:
                continue
            os.remove(path)
            removed += 1
        return removed

    def stat(self):
        """Returns a summary of the cache directory."""
        entries = self.entries()
        return {
            "cache_dir": self._cache_dir,
            "n_entries": len(entries),
            "total_bytes": sum(entry.size for entry in entries),
            "oldest": min((entry.mtime for entry in entries), default=None),
            "newest": max((entry.mtime for entry in entries), default=None),
        }


def decompose(params, cache=None):
    """Returns the SpectralData of H(params), going through `cache` if given."""
    if cache is not None:
        sd = cache.lookup(params)
        if sd is not None:
            return sd
    sd = eigendecompose(hilbert.assemble_hamiltonian(params))
    if cache is not None:
        cache.store(sd)
    return sd
