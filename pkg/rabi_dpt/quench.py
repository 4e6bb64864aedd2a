"""Sudden quenches g1 -> g2 and long-time-averaged order parameters.

A symmetry-broken ground state prepared at g1 > 1 is evolved with H(g2) by
exact spectral propagation,

    |psi(t)> = sum_n exp(-i E_n t) <phi_n|psi_0> |phi_n>,

so there is no time-step error at any t. Order parameters are averaged over a
finite window of late times. Whether they stay finite depends on whether the
quenched energy lies below the separatrix E_c = -eta w0 / 2, which happens for
g2 above the critical coupling g2c(g1).
"""

import dataclasses
import math

import numpy as np
import torch

from rabi_dpt import diagnostics
from rabi_dpt import errors
from rabi_dpt import hilbert
from rabi_dpt import runner as runner_lib
from rabi_dpt import spectra
from rabi_dpt import states

ZERO_BAND = 0.05
DEFAULT_G2_LIST = [round(0.5 + 0.05 * i, 10) for i in range(23)]
INITIAL_STATE_SOURCES = ("analytic", "numeric-doublet")
ORDER_PARAMETERS = ("sigma_x", "x", "sigma_z", "number")
# An automatic cutoff grows by this factor while the evolved tail is too heavy.
AUTO_CUTOFF_GROWTH = 1.5
AUTO_CUTOFF_ATTEMPTS = 3
SWEEP_HEADER = (
    "g2", "sx_mean", "sx_err", "x_mean", "x_err", "sz_mean", "sz_err", "n_mean", "n_err"
)


@dataclasses.dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled real values.

    Attributes:
        times: Strictly increasing, uniform time grid in units of 1 / w0.
        values: Real values, one per time.
        label: What the values are, e.g. 'sigma_x'.
    """

    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.shape != values.shape or len(times) == 0:
            raise errors.ParameterError(
                f"times and values must be non-empty 1D arrays of equal length, got "
                f"{times.shape} and {values.shape}."
            )
        if len(times) > 1:
            steps = np.diff(times)
            scale = max(np.abs(times).max(), steps[0])
            if steps.min() <= 0 or np.abs(steps - steps[0]).max() > 1e-12 * scale:
                raise errors.ParameterError(
                    "times must be strictly increasing and uniform."
                )

    @property
    def dt(self):
        return self.times[1] - self.times[0] if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.times)


def uniform_times(t_max, dt, t_start=0.0):
    """Returns the grid t_start, t_start + dt, ..., up to t_max inclusive."""
    if not dt > 0 or not t_max > t_start:
        raise errors.ParameterError(
            f"Need dt > 0 and t_max > t_start, got dt={dt}, t_max={t_max}."
        )
    n_steps = int(round((t_max - t_start) / dt))
    return t_start + dt * np.arange(n_steps + 1, dtype=np.float64)


@dataclasses.dataclass(frozen=True)
class LongTimeWindow:
    """Late-time window [t_start, t_end] sampled at n_samples uniform points."""

    t_start: float = 100.0
    t_end: float = 500.0
    n_samples: int = 400

    def __post_init__(self):
        if not self.t_end > self.t_start > 0:
            raise errors.ParameterError(
                f"Window needs t_end > t_start > 0, got [{self.t_start}, {self.t_end}]."
            )
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise errors.ParameterError(
                f"Window needs n_samples >= 2, got {self.n_samples}."
            )

    def times(self):
        return np.linspace(self.t_start, self.t_end, int(self.n_samples))


@dataclasses.dataclass(frozen=True)
class QuenchSpec:
    """A sudden quench g1 -> g2 of a symmetry-broken ground state.

    Attributes:
        g1: Coupling of the initial ground state.
        g2: Coupling of the evolution Hamiltonian.
        eta: Frequency ratio.
        omega0: Mode frequency.
        cutoff: Fock cutoff, or None for `hilbert.auto_cutoff` at max(g1, g2).
        branch: +1 or -1, the symmetry-broken branch of the initial state.
        initial_state_source: 'analytic' for the eta -> infinity state or
            'numeric-doublet' for (|E_0> +- |E_1>) / sqrt(2) of H(g1).
    """

    g1: float
    g2: float
    eta: float
    omega0: float = 1.0
    cutoff: int = None
    branch: int = 1
    initial_state_source: str = "analytic"

    def __post_init__(self):
        if self.initial_state_source not in INITIAL_STATE_SOURCES:
            raise errors.ParameterError(
                f"initial_state_source must be one of {INITIAL_STATE_SOURCES}, got "
                f"'{self.initial_state_source}'."
            )
        if self.branch not in (1, -1):
            raise errors.ParameterError(f"branch must be +1 or -1, got {self.branch}.")
        if self.g1 == 1:
            raise errors.ParameterError("g1=1 has no analytic ground state.")
        if self.initial_state_source == "numeric-doublet" and not self.g1 > 1:
            raise errors.ParameterError(
                f"A numeric doublet needs g1 > 1, got g1={self.g1}."
            )
        # Validates eta, omega0, g2 and cutoff.
        hilbert.ModelParams(
            eta=self.eta, g=self.g2, cutoff=self.cutoff or 0, omega0=self.omega0
        )

    @property
    def resolved_cutoff(self):
        if self.cutoff is not None:
            return int(self.cutoff)
        return hilbert.auto_cutoff(self.eta, max(self.g1, self.g2))

    def initial_params(self):
        return hilbert.ModelParams(
            eta=self.eta, g=self.g1, cutoff=self.resolved_cutoff, omega0=self.omega0
        )

    def final_params(self):
        return self.initial_params().replace(g=self.g2)


def initial_state(spec, cache=None):
    """Builds the pre-quench state described by a QuenchSpec."""
    params = spec.initial_params()
    if spec.initial_state_source == "analytic":
        return states.analytic_ground_state(params, branch=spec.branch)
    return spectra.symmetric_doublet(spectra.decompose(params, cache), spec.branch)


class QuantumEvolution:
    """The state e^{-i t H} |psi_0> on a grid of times.

    The amplitudes of every sampled time are held in memory as a (dim, n_times)
    complex matrix, so expectation values of any operator are a matrix product.
    """

    def __init__(self, sd, psi0, times):
        """Initializes a new QuantumEvolution instance.

        Args:
            sd: SpectralData of the evolution Hamiltonian.
            psi0: The initial QuantumState.
            times: 1D array of times.
        """
        self._sd = sd
        self._times = np.asarray(times, dtype=np.float64)
        coefficients = sd.coefficients(psi0)
        phases = torch.exp(
            -1j * torch.outer(sd.eigenvalues, torch.from_numpy(self._times))
        )
        self._amplitudes = sd.eigenvectors.to(torch.complex128) @ (
            coefficients[:, None] * phases
        )

    @property
    def times(self):
        return self._times

    @property
    def amplitudes(self):
        return self._amplitudes

    def expectation(self, operator):
        """Returns <psi(t)|operator|psi(t)> for every time as a numpy array."""
        psi = self._amplitudes
        values = (psi.conj() * (operator.to_complex() @ psi)).sum(dim=0)
        return values.real.numpy()

    def norms(self):
        return torch.linalg.vector_norm(self._amplitudes, dim=0).numpy()

    def tail_probability(self, fraction=diagnostics.TAIL_FRACTION):
        """Maximum over time of the probability in the top Fock levels."""
        first = 2 * diagnostics.tail_levels(self._sd.params.cutoff, fraction)
        return (self._amplitudes[first:].abs() ** 2).sum(dim=0).max().item()

    def conservation(self):
        hamiltonian = hilbert.assemble_hamiltonian(self._sd.params)
        energies = self.expectation(hamiltonian)
        return diagnostics.conservation_report(self.norms(), energies)


def propagate_expectations(
    sd, psi0, ops, times, tail_threshold=diagnostics.TAIL_THRESHOLD, strict=False
):
    """Evolves `psi0` with the Hamiltonian of `sd` and records expectation values.

    Args:
        sd: SpectralData of H(g2).
        psi0: Normalized initial QuantumState in the basis of `sd`.
        ops: A list of OperatorMatrix observables.
        times: The sampling times.
        tail_threshold: Maximum allowed probability in the top 5% Fock levels.
        strict: Whether to raise a CutoffError instead of warning.
    Returns:
        One TimeSeries per operator.
    """
    evolution = QuantumEvolution(sd, psi0, times)
    diagnostics.check_cutoff(
        evolution.tail_probability(), sd.params.cutoff, tail_threshold, strict
    )
    return [TimeSeries(times, evolution.expectation(op), op.label) for op in ops]


def long_time_average(series, window):
    """Averages the samples of `series` that fall inside `window`.

    Returns:
        (mean, std_error) where std_error is the sample standard deviation
        divided by sqrt(number of samples).
    """
    times = series.times
    tolerance = 1e-9 * max(abs(window.t_end), 1.0)
    if times[0] > window.t_start + tolerance or times[-1] < window.t_end - tolerance:
        raise errors.ParameterError(
            f"Series [{times[0]}, {times[-1]}] does not cover the window "
            f"[{window.t_start}, {window.t_end}]."
        )
    mask = (times >= window.t_start - tolerance) & (times <= window.t_end + tolerance)
    values = series.values[mask]
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def critical_coupling(g1):
    """Returns g2c = g1 (3 + g1^2) / (2 (1 + g1^2))."""
    if not g1 > 1:
        raise errors.ParameterError(f"The critical coupling needs g1 > 1, got {g1}.")
    return g1 * (3 + g1 ** 2) / (2 * (1 + g1 ** 2))


def dynamical_phase(g1, g2):
    """Classifies a quench as 'broken' (g2 >= g2c) or 'symmetric'."""
    return "broken" if g2 >= critical_coupling(g1) else "symmetric"


def analytic_quench_energy(g1, g2, eta, omega0=1.0, include_squeezing=True):
    """Closed-form <phi_0(g1)|H(g2)|phi_0(g1)> of the analytic ground state.

    Args:
        g1: Coupling of the initial state, != 1.
        g2: Coupling of the Hamiltonian.
        eta: Frequency ratio.
        omega0: Mode frequency.
        include_squeezing: Whether to keep the w0 sinh^2(s) term, which is
            subleading in eta.
    """
    if g1 == 1:
        raise errors.ParameterError("The quench energy diverges at g1=1.")
    if g1 < 1:
        s = states.normal_squeezing(g1)
        squeezing = math.sinh(s) ** 2 if include_squeezing else 0.0
        return -eta * omega0 / 2 + omega0 * squeezing
    sp = states.superradiant_parameters(g1, eta)
    squeezing = math.sinh(sp.s_sp) ** 2 if include_squeezing else 0.0
    return (
        -eta * omega0 / (2 * g1 ** 2)
        + omega0 * (squeezing + sp.alpha_sp ** 2)
        - g2 * omega0 * eta / 2 * g1 * (1 - g1 ** -4)
    )


def quench_energy(g1, g2, eta, omega0=1.0, cutoff=None, branch=1):
    """Returns (analytic, numeric) quenched energies.

    The numeric value is <psi_0|H(g2)|psi_0> of the truncated analytic state.
    """
    spec = QuenchSpec(g1, g2, eta, omega0, cutoff, branch)
    psi0 = initial_state(spec)
    hamiltonian = hilbert.assemble_hamiltonian(spec.final_params())
    analytic = analytic_quench_energy(g1, g2, eta, omega0)
    return analytic, states.expectation(psi0, hamiltonian)


@dataclasses.dataclass(frozen=True)
class SweepRow:
    """Long-time averages of one quench, plus the numerical health of the run."""

    g2: float
    sx_mean: float
    sx_err: float
    x_mean: float
    x_err: float
    sz_mean: float
    sz_err: float
    n_mean: float
    n_err: float
    phase: str = None
    tail_probability: float = None
    max_norm_deviation: float = None
    max_relative_energy_drift: float = None
    cutoff: int = None

    def csv_row(self):
        return [getattr(self, name) for name in SWEEP_HEADER]


def evolve_with_auto_cutoff(spec, times, cache=None, psi0=None):
    """Evolves the quench state, growing an automatic cutoff until its tail is small.

    The cutoff starts at `spec.resolved_cutoff`. When `spec.cutoff` is None and no
    `psi0` is given, it grows by AUTO_CUTOFF_GROWTH until the tail probability
    passes diagnostics.TAIL_THRESHOLD, at most AUTO_CUTOFF_ATTEMPTS times.

    Returns:
        (spec with the cutoff used, QuantumEvolution, tail probability).
    """
    fixed = spec.cutoff is not None or psi0 is not None
    cutoff = spec.resolved_cutoff
    for attempt in range(AUTO_CUTOFF_ATTEMPTS + 1):
        current = dataclasses.replace(spec, cutoff=cutoff)
        state = psi0 if psi0 is not None else initial_state(current, cache)
        sd = spectra.decompose(current.final_params(), cache)
        evolution = QuantumEvolution(sd, state, times)
        tail = evolution.tail_probability()
        if fixed or tail <= diagnostics.TAIL_THRESHOLD:
            break
        if attempt < AUTO_CUTOFF_ATTEMPTS:
            cutoff = int(math.ceil(AUTO_CUTOFF_GROWTH * cutoff))
    return current, evolution, tail


def quench_averages(spec, window=None, cache=None, psi0=None):
    """Runs one quench and returns its SweepRow."""
    window = window or LongTimeWindow()
    spec, evolution, tail = evolve_with_auto_cutoff(spec, window.times(), cache, psi0)
    params = spec.final_params()
    diagnostics.check_cutoff(tail, params.cutoff)

    averages = []
    for kind in ORDER_PARAMETERS:
        values = evolution.expectation(hilbert.assemble_operator(kind, params))
        series = TimeSeries(window.times(), values, kind)
        averages.extend(long_time_average(series, window))
    phase = dynamical_phase(spec.g1, spec.g2) if spec.g1 > 1 else "symmetric"
    return SweepRow(
        spec.g2,
        *averages,
        phase=phase,
        tail_probability=tail,
        cutoff=params.cutoff,
        **evolution.conservation(),
    )


def sweep_order_parameters(
    g1,
    g2_list,
    eta,
    window=None,
    omega0=1.0,
    cutoff=None,
    branch=1,
    initial_state_source="analytic",
    cache=None,
    threads=1,
):
    """Long-time averaged order parameters for a list of final couplings.

    With an explicit cutoff all quenches share it and one initial state. Otherwise
    every quench starts from the automatic cutoff at max(g1, g2) and grows it
    until its evolved tail passes the cutoff check.

    Returns:
        One SweepRow per g2, in the order of `g2_list`.
    """
    g2_list = list(g2_list)
    specs = [
        QuenchSpec(g1, g2, eta, omega0, cutoff, branch, initial_state_source)
        for g2 in g2_list
    ]
    psi0 = initial_state(specs[0], cache) if cutoff is not None else None
    return runner_lib.parallel_map(
        lambda spec: quench_averages(spec, window, cache, psi0),
        specs,
        threads,
        desc="quench sweep",
    )


@dataclasses.dataclass(frozen=True)
class ScalingReport:
    """Long-time averaged sigma_x as a function of eta at fixed (g1, g2).

    Attributes:
        rows: (eta, sx_mean, sx_err) tuples in the order of the eta list.
        trend: 'saturating' if |sx| is non-decreasing in eta, 'decaying' if it is
            non-increasing, 'mixed' otherwise and None for a single eta.
    """

    g1: float
    g2: float
    rows: list
    trend: str


def _trend(values):
    if len(values) < 2:
        return None
    steps = np.diff(np.abs(values))
    if np.all(steps >= 0):
        return "saturating"
    if np.all(steps <= 0):
        return "decaying"
    return "mixed"


def finite_eta_scaling(
    g1, g2, eta_list, window=None, omega0=1.0, branch=1, cache=None, threads=1
):
    """Long-time averaged sigma_x at each eta, each with its own auto cutoff."""
    specs = [QuenchSpec(g1, g2, eta, omega0, branch=branch) for eta in eta_list]
    rows = runner_lib.parallel_map(
        lambda spec: quench_averages(spec, window, cache),
        specs,
        threads,
        desc="eta scaling",
    )
    rows = [(spec.eta, row.sx_mean, row.sx_err) for spec, row in zip(specs, rows)]
    return ScalingReport(g1, g2, rows, _trend([row[1] for row in rows]))


def reproduce(
    g1=1.5,
    g2_list=None,
    eta=100.0,
    omega0=1.0,
    window=None,
    cutoff=None,
    branch=1,
    initial_state_source="analytic",
    log_dir=None,
    cache_dir=None,
    threads=1,
    convergence_check=False,
    gnuplot_script=False,
    config=None,
):
    """Order-parameter sweep with defaults to reproduce the DPT-I phase diagram.

    The code inside this function is self contained and can be used as a top level
    script, e.g. by copy/pasting it into a Jupyter notebook.

    Args:
        g1: Coupling of the initial state.
        g2_list: Final couplings; defaults to 0.5, 0.55, ..., 1.6. With a single
            entry the full time series over [0, window.t_end] is written as well.
        eta: Frequency ratio.
        omega0: Mode frequency.
        window: LongTimeWindow of the averages.
        cutoff: Fock cutoff, None for automatic.
        branch: Symmetry-broken branch of the initial state.
        initial_state_source: 'analytic' or 'numeric-doublet'.
        log_dir: Directory where to write sweep.csv, quench.json and meta.json.
        cache_dir: Spectral cache directory, falls back to $RABI_DPT_CACHE.
        threads: Number of sweep workers.
        convergence_check: Whether to recompute the first average at twice the
            cutoff and record the difference in meta.json.
        gnuplot_script: Whether to emit gnuplot scripts next to the CSV files.
        config: Configuration echoed into meta.json; defaults to the arguments.
    Returns:
        The list of SweepRow.
    """
    g2_list = list(g2_list) if g2_list is not None else DEFAULT_G2_LIST
    window = window or LongTimeWindow()
    cache = spectra.SpectralCache.from_env(cache_dir)
    config = config or dict(
        mode="quench",
        g1=g1,
        g2_list=g2_list,
        eta=eta,
        omega0=omega0,
        window=window,
        cutoff=cutoff,
        branch=branch,
        initial_state_source=initial_state_source,
    )

    def make_spec(g2, n=cutoff):
        return QuenchSpec(g1, g2, eta, omega0, n, branch, initial_state_source)

    with runner_lib.Runner(config, log_dir, gnuplot_script=gnuplot_script) as run:
        rows = sweep_order_parameters(
            g1,
            g2_list,
            eta,
            window,
            omega0,
            cutoff,
            branch,
            initial_state_source,
            cache,
            threads,
        )
        for step, row in enumerate(rows):
            averages = {"sigma_x": row.sx_mean, "x": row.x_mean}
            run.add_scalars("order_parameter", averages, step)
            run.add_scalar("convergence/tail_probability", row.tail_probability, step)
        run.write_csv(
            "sweep.csv",
            SWEEP_HEADER,
            [row.csv_row() for row in rows],
            plot=("g2", ["sx_mean", "x_mean", "sz_mean"]),
        )
        run.write_json(
            "quench.json",
            {
                "spec": make_spec(g2_list[0]),
                "g2_list": g2_list,
                "window": window,
                "cutoff": [row.cutoff for row in rows],
                "critical_coupling": critical_coupling(g1) if g1 > 1 else None,
                "rows": rows,
            },
        )
        run.record_convergence(
            "max_tail_probability", max(row.tail_probability for row in rows)
        )
        run.record_convergence(
            "max_norm_deviation", max(row.max_norm_deviation for row in rows)
        )
        run.record_convergence(
            "max_relative_energy_drift",
            max(row.max_relative_energy_drift for row in rows),
        )

        if len(g2_list) == 1:
            spec = make_spec(g2_list[0], rows[0].cutoff)
            params = spec.final_params()
            times = np.linspace(0.0, window.t_end, 2001)
            series = propagate_expectations(
                spectra.decompose(params, cache),
                initial_state(spec, cache),
                [hilbert.assemble_operator(kind, params) for kind in ORDER_PARAMETERS],
                times,
            )
            run.write_csv(
                "series.csv",
                ("t", "sx", "x", "sz", "n"),
                zip(times, *[s.values for s in series]),
                plot=("t", ["sx", "x"]),
            )

        if convergence_check:
            report = diagnostics.cutoff_convergence(
                lambda n: quench_averages(make_spec(g2_list[0], n), window).sx_mean,
                rows[0].cutoff,
            )
            run.record_convergence("doubled_cutoff", report)
    return rows


def reproduce_scaling(
    g1=4 / 3,
    g2=None,
    eta_list=(25.0, 50.0, 100.0),
    omega0=1.0,
    window=None,
    branch=1,
    log_dir=None,
    cache_dir=None,
    threads=1,
    gnuplot_script=False,
    config=None,
):
    """Finite-eta scaling of the order parameter, by default at g2 = g2c(4/3).

    Writes scaling.csv (eta, sx_mean, sx_err) and scaling.json with the trend.
    """
    g2 = critical_coupling(g1) if g2 is None else g2
    cache = spectra.SpectralCache.from_env(cache_dir)
    config = config or dict(
        mode="scaling", g1=g1, g2=g2, eta_list=list(eta_list), window=window
    )

    with runner_lib.Runner(config, log_dir, gnuplot_script=gnuplot_script) as run:
        report = finite_eta_scaling(
            g1, g2, eta_list, window, omega0, branch, cache, threads
        )
        for step, (_, sx_mean, _) in enumerate(report.rows):
            run.add_scalar("scaling/sigma_x", sx_mean, step)
        run.write_csv(
            "scaling.csv",
            ("eta", "sx_mean", "sx_err"),
            report.rows,
            plot=("eta", ["sx_mean"]),
        )
        run.write_json("scaling.json", report)
    return report


def reproduce_phase_diagram(
    g1_min=1.05, g1_max=3.0, steps=40, log_dir=None, gnuplot_script=False, config=None
):
    """Writes critical_line.csv with (g1, g2c) pairs on a uniform g1 grid."""
    if not 1 < g1_min < g1_max or steps < 2:
        raise errors.ParameterError(
            f"Need 1 < g1_min < g1_max and steps >= 2, got {g1_min}, {g1_max}, "
            f"{steps}."
        )
    g1_values = np.linspace(g1_min, g1_max, int(steps))
    rows = [(g1, critical_coupling(g1)) for g1 in g1_values]
    config = config or dict(
        mode="phase-diagram", g1_min=g1_min, g1_max=g1_max, steps=steps
    )
    with runner_lib.Runner(config, log_dir, gnuplot_script=gnuplot_script) as run:
        run.write_csv(
            "critical_line.csv", ("g1", "g2c"), rows, plot=("g1", ["g2c"])
        )
    return rows
