"""Mean-field dynamics of the quantum Rabi model.

In the rescaled variables (x, p) = eta^{-1/2} (x~, p~) and a classical spin
(sx, sy, sz) on the unit sphere the equations of motion carry no eta:

    x' = p                    sx' = -sy
    p' = -x + g sx / sqrt(2)  sy' = sx + sqrt(2) g x sz
                              sz' = -sqrt(2) g x sy

with conserved energy H = (x^2 + p^2) / 2 + sz / 2 - g x sx / sqrt(2) (in units
of eta w0) and conserved spin norm. Time is in units of 1 / w0. The separatrix
sits at H = -1/2, the energy of the unstable point x = p = 0, sz = -1.

Trajectories are integrated with a fixed-step classic Runge-Kutta scheme that is
vectorized over a batch of initial conditions, each with its own coupling.
"""

import dataclasses
import math
import warnings

import numpy as np

from rabi_dpt import errors
from rabi_dpt import quench
from rabi_dpt import runner as runner_lib
from rabi_dpt import states

X, P, SX, SY, SZ = range(5)
ENERGY_TOLERANCE = 1e-6
NORM_TOLERANCE = 1e-8
MAX_HALVINGS = 3
SAMPLINGS = ("wigner-gaussian", "single-trajectory")
# Samples are integrated in fixed chunks so results do not depend on the worker count.
ENSEMBLE_CHUNK = 64
_SQRT2 = math.sqrt(2.0)


@dataclasses.dataclass(frozen=True)
class SemiclassicalState:
    """A phase-space point: rescaled quadratures and a classical spin."""

    x: float
    p: float
    sx: float
    sy: float
    sz: float

    def as_array(self):
        return np.array([self.x, self.p, self.sx, self.sy, self.sz], dtype=np.float64)

    @classmethod
    def from_array(cls, array):
        return cls(*[float(value) for value in array])

    @property
    def spin_norm(self):
        return self.sx ** 2 + self.sy ** 2 + self.sz ** 2


def initial_condition(g1, branch=1):
    """Mean-field image of the symmetry-broken ground state at g1 > 1."""
    if not g1 > 1:
        raise errors.ParameterError(f"The initial condition needs g1 > 1, got g1={g1}.")
    if branch not in (1, -1):
        raise errors.ParameterError(f"branch must be +1 or -1, got {branch}.")
    return SemiclassicalState(
        x=branch * math.sqrt((g1 ** 2 - g1 ** -2) / 2),
        p=0.0,
        sx=branch * math.sqrt(1 - g1 ** -4),
        sy=0.0,
        sz=-(g1 ** -2),
    )


def classical_energy(state, g):
    """H = (x^2 + p^2) / 2 + sz / 2 - g x sx / sqrt(2).

    Args:
        state: A SemiclassicalState or an array whose last axis has 5 entries.
        g: The coupling, scalar or broadcastable against the batch.
    """
    y = state.as_array() if isinstance(state, SemiclassicalState) else np.asarray(state)
    x, p, sx, sz = y[..., X], y[..., P], y[..., SX], y[..., SZ]
    energy = (x ** 2 + p ** 2) / 2 + sz / 2 - g * x * sx / _SQRT2
    return float(energy) if np.ndim(energy) == 0 else energy


def _derivative(y, g):
    x, p, sx, sy, sz = y.T
    return np.stack(
        [
            p,
            -x + g * sx / _SQRT2,
            -sy,
            sx + _SQRT2 * g * x * sz,
            -_SQRT2 * g * x * sy,
        ],
        axis=1,
    )


def _rk4_step(y, g, h):
    k1 = _derivative(y, g)
    k2 = _derivative(y + h / 2 * k1, g)
    k3 = _derivative(y + h / 2 * k2, g)
    k4 = _derivative(y + h * k3, g)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _run(y0, g, dt, n_steps, substeps, observe):
    """Integrates n_steps of size dt split into substeps, calling observe(i, y)."""
    y, h = y0.copy(), dt / substeps
    observe(0, y)
    for i in range(1, n_steps + 1):
        for _ in range(substeps):
            y = _rk4_step(y, g, h)
        observe(i, y)
    return y


class _DriftMonitor:
    """Tracks the worst energy and spin-norm drift of a batch."""

    def __init__(self, y0, g):
        self._g = g
        self._energy0 = classical_energy(y0, g)
        self._scale = np.maximum(np.abs(self._energy0), 1e-3)
        self._norm0 = np.sum(y0[:, SX:] ** 2, axis=1)
        self.energy_drift = np.zeros(len(y0))
        self.norm_drift = np.zeros(len(y0))

    def __call__(self, y):
        drift = np.abs(classical_energy(y, self._g) - self._energy0) / self._scale
        np.maximum(self.energy_drift, drift, out=self.energy_drift)
        norm = np.sum(y[:, SX:] ** 2, axis=1)
        np.maximum(self.norm_drift, np.abs(norm - self._norm0), out=self.norm_drift)

    def ok(self, energy_tolerance, norm_tolerance):
        return (
            self.energy_drift.max() <= energy_tolerance
            and self.norm_drift.max() <= norm_tolerance
        )


def _integrate_checked(
    y0, g, dt, n_steps, make_observer, energy_tolerance, norm_tolerance, max_halvings
):
    """Runs `_run`, halving the step on drift violations.

    Args:
        make_observer: A `fn()->observe(i, y)` building a fresh observer per attempt.
    Returns:
        (observer, monitor, halvings) of the accepted attempt.
    """
    for halvings in range(max_halvings + 1):
        monitor, observer = _DriftMonitor(y0, g), make_observer()

        def observe(i, y):
            monitor(y)
            observer(i, y)

        _run(y0, g, dt, n_steps, 2 ** halvings, observe)
        if monitor.ok(energy_tolerance, norm_tolerance):
            return observer, monitor, halvings
        if halvings < max_halvings:
            warnings.warn(
                f"Semiclassical drift (energy {monitor.energy_drift.max():.2e}, spin "
                f"norm {monitor.norm_drift.max():.2e}) exceeds tolerance at step "
                f"{dt / 2 ** halvings}; halving the step.",
                errors.ConvergenceWarning,
            )
    raise errors.IntegrationError(
        f"Semiclassical drift (energy {monitor.energy_drift.max():.2e}, spin norm "
        f"{monitor.norm_drift.max():.2e}) exceeds tolerance after {max_halvings} "
        f"step halvings from dt={dt}."
    )


@dataclasses.dataclass(frozen=True, eq=False)
class Trajectory:
    """A sampled mean-field trajectory.

    Attributes:
        times: Sampling times, spaced by dt (negative when integrated backward).
        states: (n_times, 5) array of (x, p, sx, sy, sz).
        g: The coupling of the dynamics.
        energy_drift: Maximum relative energy drift.
        norm_drift: Maximum spin-norm drift.
        halvings: Number of step halvings that were needed.
    """

    times: np.ndarray
    states: np.ndarray
    g: float
    energy_drift: float = 0.0
    norm_drift: float = 0.0
    halvings: int = 0

    @property
    def sx(self):
        return self.states[:, SX]

    def energies(self):
        return classical_energy(self.states, self.g)

    def final_state(self):
        return SemiclassicalState.from_array(self.states[-1])


class _Recorder:
    def __init__(self, n_steps, batch):
        self.states = np.empty((n_steps + 1, batch, 5))

    def __call__(self, i, y):
        self.states[i] = y


def integrate_batch(
    states0,
    g,
    t_max,
    dt=0.005,
    backward=False,
    energy_tolerance=ENERGY_TOLERANCE,
    norm_tolerance=NORM_TOLERANCE,
    max_halvings=MAX_HALVINGS,
):
    """Integrates a batch of initial conditions, each with its own coupling.

    Args:
        states0: Sequence of SemiclassicalState or an (B, 5) array.
        g: Scalar coupling or one coupling per initial condition.
        t_max: Integration time, > 0.
        dt: Sampling interval and nominal step.
        backward: Whether to integrate towards negative times.
        energy_tolerance: Allowed relative energy drift.
        norm_tolerance: Allowed spin-norm drift.
        max_halvings: Number of step halvings before giving up.
    Returns:
        A list of Trajectory, one per initial condition.
    Raises:
        IntegrationError: If the drift stays above tolerance after all halvings.
    """
    if not t_max > 0 or not dt > 0:
        raise errors.ParameterError(f"Need t_max > 0 and dt > 0, got {t_max}, {dt}.")
    y0 = np.array(
        [s.as_array() if isinstance(s, SemiclassicalState) else s for s in states0],
        dtype=np.float64,
    ).reshape(-1, 5)
    g = np.broadcast_to(np.asarray(g, dtype=np.float64), (len(y0),)).copy()
    n_steps = int(round(t_max / dt))
    step = -dt if backward else dt

    recorder, monitor, halvings = _integrate_checked(
        y0, g, step, n_steps, lambda: _Recorder(n_steps, len(y0)),
        energy_tolerance, norm_tolerance, max_halvings,
    )
    times = step * np.arange(n_steps + 1)
    return [
        Trajectory(
            times=times,
            states=recorder.states[:, b],
            g=float(g[b]),
            energy_drift=float(monitor.energy_drift[b]),
            norm_drift=float(monitor.norm_drift[b]),
            halvings=halvings,
        )
        for b in range(len(y0))
    ]


def integrate(state0, g2, t_max, dt=0.005, backward=False, **kwargs):
    """Integrates one trajectory with coupling g2; see `integrate_batch`."""
    return integrate_batch([state0], g2, t_max, dt, backward, **kwargs)[0]


@dataclasses.dataclass(frozen=True, eq=False)
class Section:
    """Stroboscopic samples of a trajectory.

    `sz` is recovered from the sphere constraint with the sign of the integrated
    value; `constraint_drift` is the largest difference between the two.
    """

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    constraint_drift: float


def stroboscopic_section(traj, n_points=5000, t_final=1000.0):
    """Samples a trajectory at t_k = k t_final / n_points, k = 1..n_points."""
    if abs(traj.times[-1]) < t_final * (1 - 1e-12):
        raise errors.ParameterError(
            f"Trajectory ends at {traj.times[-1]}, before t_final={t_final}."
        )
    times = t_final * np.arange(1, n_points + 1) / n_points
    grid = np.abs(traj.times)
    x, p, sx, sy, sz = (np.interp(times, grid, traj.states[:, i]) for i in range(5))
    magnitude = np.sqrt(np.clip(1 - sx ** 2 - sy ** 2, 0, None))
    recovered = np.where(sz < 0, -1.0, 1.0) * magnitude
    return Section(
        times=times,
        x=x,
        p=p,
        sx=sx,
        sy=sy,
        sz=recovered,
        constraint_drift=float(np.max(np.abs(recovered - sz))),
    )


def sign_flip_time(traj):
    """First time at which sx changes sign, or None if it never does."""
    sx, times = traj.sx, traj.times
    sign = np.sign(sx[0])
    flipped = np.nonzero(np.sign(sx[1:]) != sign)[0]
    if len(flipped) == 0 or sign == 0:
        return None
    i = flipped[0]
    s0, s1 = sx[i], sx[i + 1]
    return float(times[i] + (times[i + 1] - times[i]) * s0 / (s0 - s1))


class _FlipDetector:
    """Records whether sx of each batch member left the sign of its start."""

    def __init__(self, batch):
        self.flipped = np.zeros(batch, dtype=bool)
        self._sign = None

    def __call__(self, i, y):
        if self._sign is None:
            self._sign = np.sign(y[:, SX])
        self.flipped |= np.sign(y[:, SX]) != self._sign


@dataclasses.dataclass(frozen=True)
class SeparatrixBracket:
    """Bracket [low, high] of the dynamical critical coupling.

    Quenches to g2 = low reach the opposite sign of sx, quenches to g2 = high do not.
    """

    low: float
    high: float
    rounds: int

    @property
    def estimate(self):
        return (self.low + self.high) / 2


def separatrix_bisection(
    g1,
    branch=1,
    t_max=1000.0,
    dt=0.005,
    tolerance=0.005,
    n_candidates=8,
    low=1.0,
    high=None,
):
    """Brackets the smallest g2 whose trajectory never flips the sign of sx.

    Each round integrates `n_candidates` couplings spread evenly inside the
    current bracket as one batch and keeps the sub-interval where the flips stop.

    Returns:
        A SeparatrixBracket narrower than `tolerance`.
    """
    high = g1 if high is None else high
    y0 = initial_condition(g1, branch).as_array()
    rounds = 0
    while high - low > tolerance:
        couplings = np.linspace(low, high, n_candidates + 2)
        detector, _, _ = _integrate_checked(
            np.tile(y0, (n_candidates + 2, 1)), couplings, dt, int(round(t_max / dt)),
            lambda: _FlipDetector(n_candidates + 2),
            ENERGY_TOLERANCE, NORM_TOLERANCE, MAX_HALVINGS,
        )
        first_stable = int(np.argmin(detector.flipped))
        if detector.flipped[first_stable]:
            raise errors.NumericalError(
                f"Every coupling in [{low}, {high}] flips the sign of sx."
            )
        if first_stable == 0:
            raise errors.NumericalError(
                f"The lower end g2={low} of the bracket does not flip the sign of sx."
            )
        low, high = couplings[first_stable - 1], couplings[first_stable]
        rounds += 1
    return SeparatrixBracket(float(low), float(high), rounds)


@dataclasses.dataclass(frozen=True)
class EnsembleSpec:
    """Phase-space sampling of the initial state.

    Attributes:
        n_samples: Number of trajectories; 1 reduces to single-trajectory mode.
        sampling: 'wigner-gaussian' or 'single-trajectory'.
        rng_seed: Seed of the per-sample random streams.
        variance_scale: Multiplier of the squeezed-vacuum quadrature variances.
    """

    n_samples: int = 1000
    sampling: str = "wigner-gaussian"
    rng_seed: int = 0
    variance_scale: float = 1.0

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise errors.ParameterError(
                f"n_samples must be >= 1, got {self.n_samples}."
            )
        if self.sampling not in SAMPLINGS:
            raise errors.ParameterError(
                f"sampling must be one of {SAMPLINGS}, got '{self.sampling}'."
            )
        if not self.variance_scale >= 0:
            raise errors.ParameterError(
                f"variance_scale must be >= 0, got {self.variance_scale}."
            )

    @property
    def single_trajectory(self):
        return self.sampling == "single-trajectory" or self.n_samples == 1


def sample_initial_conditions(g1, eta, spec, branch=1):
    """Draws initial conditions around the mean-field image of |phi_0(g1)>.

    x and p are Gaussian with variances exp(+-2 s_sp) / (2 eta) times
    `spec.variance_scale`; the spin is frozen at its mean direction. Sample k
    uses its own Philox stream spawned from `spec.rng_seed`.

    Returns:
        An (n, 5) array; a single row at the mean in single-trajectory mode.
    """
    mean = initial_condition(g1, branch).as_array()
    if spec.single_trajectory:
        return mean[None, :]
    s = states.superradiant_parameters(g1, eta).s_sp
    widths = np.sqrt(
        spec.variance_scale * np.array([math.exp(2 * s), math.exp(-2 * s)]) / (2 * eta)
    )
    samples = np.tile(mean, (spec.n_samples, 1))
    streams = np.random.SeedSequence(spec.rng_seed).spawn(spec.n_samples)
    for k, stream in enumerate(streams):
        rng = np.random.Generator(np.random.Philox(stream))
        samples[k, [X, P]] += widths * rng.standard_normal(2)
    return samples


@dataclasses.dataclass(frozen=True)
class EnsembleResult:
    """Ensemble means of window-averaged observables and their standard errors."""

    sx_bar: float
    x_bar: float
    sz_bar: float
    n_proxy_bar: float
    sx_err: float
    x_err: float
    sz_err: float
    n_proxy_err: float
    n_samples: int
    seed: int


class _WindowAverager:
    """Accumulates sx, x, sz and eta (x^2 + p^2) / 2 at selected step indices."""

    def __init__(self, steps, batch, eta):
        self._steps = set(steps)
        self._eta = eta
        self.sums = np.zeros((batch, 4))
        self.count = 0

    def __call__(self, i, y):
        if i not in self._steps:
            return
        n_proxy = self._eta * (y[:, X] ** 2 + y[:, P] ** 2) / 2
        self.sums += np.stack([y[:, SX], y[:, X], y[:, SZ], n_proxy], axis=1)
        self.count += 1

    def averages(self):
        return self.sums / self.count


def ensemble_average(
    g1, g2, spec, window=None, eta=100.0, dt=0.01, branch=1, threads=1
):
    """Long-time averaged observables of a semiclassical ensemble.

    Every sample is integrated up to window.t_end; its observables are averaged
    over the window times (snapped to the integration grid) and the per-sample
    averages are then averaged over the ensemble.

    Returns:
        An EnsembleResult.
    """
    window = window or quench.LongTimeWindow()
    samples = sample_initial_conditions(g1, eta, spec, branch)
    n_steps = int(round(window.t_end / dt))
    steps = sorted({int(round(t / dt)) for t in window.times()})
    chunks = [
        samples[i : i + ENSEMBLE_CHUNK]
        for i in range(0, len(samples), ENSEMBLE_CHUNK)
    ]

    def run_chunk(chunk):
        averager, _, _ = _integrate_checked(
            chunk, np.full(len(chunk), g2, dtype=np.float64), dt, n_steps,
            lambda: _WindowAverager(steps, len(chunk), eta),
            ENERGY_TOLERANCE, NORM_TOLERANCE, MAX_HALVINGS,
        )
        return averager.averages()

    averages = np.concatenate(
        runner_lib.parallel_map(run_chunk, chunks, threads, desc="ensemble")
    )
    means = averages.mean(axis=0)
    n = len(averages)
    errs = averages.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(4)
    return EnsembleResult(*means, *errs, n_samples=n, seed=spec.rng_seed)


def reproduce(
    g1=1.5,
    g2=None,
    branch=1,
    t_max=1000.0,
    dt=0.005,
    n_points=5000,
    trajectory_stride=20,
    g2_list=None,
    eta=100.0,
    n_samples=1000,
    seed=0,
    window=None,
    ensemble_dt=0.01,
    log_dir=None,
    threads=1,
    gnuplot_script=False,
    config=None,
):
    """Mean-field trajectory, Poincare section and optional ensemble sweep.

    The code inside this function is self contained and can be used as a top level
    script, e.g. by copy/pasting it into a Jupyter notebook.

    Args:
        g1: Coupling of the initial state (> 1).
        g2: Coupling of the dynamics; defaults to the critical coupling g2c(g1).
        branch: Symmetry-broken branch of the initial condition.
        t_max: Integration time of the single trajectory.
        dt: Step of the single trajectory.
        n_points: Number of stroboscopic section points up to t_max.
        trajectory_stride: Write every `trajectory_stride`-th sample to
            trajectory.csv.
        g2_list: If given, also run an ensemble for every g2 and write sweep.csv.
        eta: Frequency ratio, only used for the ensemble widths.
        n_samples: Ensemble size.
        seed: Ensemble random seed.
        window: LongTimeWindow of the ensemble averages.
        ensemble_dt: Step of the ensemble trajectories.
        log_dir: Directory where to write trajectory.csv, sections.csv and
            meta.json.
        threads: Number of ensemble workers.
        gnuplot_script: Whether to emit gnuplot scripts next to the CSV files.
        config: Configuration echoed into meta.json; defaults to the arguments.
    Returns:
        (Trajectory, Section, list of (g2, EnsembleResult)).
    """
    g2 = quench.critical_coupling(g1) if g2 is None else g2
    config = config or dict(
        mode="semiclassical",
        g1=g1,
        g2=g2,
        branch=branch,
        t_max=t_max,
        dt=dt,
        n_points=n_points,
        g2_list=g2_list,
        eta=eta,
        n_samples=n_samples,
    )
    run = runner_lib.Runner(config, log_dir, seed=seed, gnuplot_script=gnuplot_script)
    with run:
        traj = integrate(initial_condition(g1, branch), g2, t_max, dt)
        section = stroboscopic_section(traj, n_points, t_max)
        energies = traj.energies()
        run.write_csv(
            "trajectory.csv",
            ("t", "x", "p", "sx", "sy", "sz", "energy"),
            (
                (traj.times[i], *traj.states[i], energies[i])
                for i in range(0, len(traj.times), trajectory_stride)
            ),
            plot=("t", ["x", "sx"]),
        )
        run.write_csv(
            "sections.csv",
            ("t", "x", "p", "sx", "sy"),
            zip(section.times, section.x, section.p, section.sx, section.sy),
        )
        run.write_json(
            "trajectory.json",
            {
                "g1": g1,
                "g2": g2,
                "critical_coupling": quench.critical_coupling(g1),
                "sign_flip_time": sign_flip_time(traj),
                "energy_drift": traj.energy_drift,
                "norm_drift": traj.norm_drift,
                "halvings": traj.halvings,
                "constraint_drift": section.constraint_drift,
            },
        )
        run.record_convergence("energy_drift", traj.energy_drift)
        run.record_convergence("norm_drift", traj.norm_drift)

        results = []
        if g2_list:
            spec = EnsembleSpec(n_samples=n_samples, rng_seed=seed)
            for step, value in enumerate(g2_list):
                result = ensemble_average(
                    g1, value, spec, window, eta, ensemble_dt, branch, threads
                )
                run.add_scalar("ensemble/sigma_x", result.sx_bar, step)
                results.append((value, result))
            run.write_csv(
                "sweep.csv",
                quench.SWEEP_HEADER,
                (
                    (
                        value,
                        r.sx_bar,
                        r.sx_err,
                        r.x_bar,
                        r.x_err,
                        r.sz_bar,
                        r.sz_err,
                        r.n_proxy_bar,
                        r.n_proxy_err,
                    )
                    for value, r in results
                ),
                plot=("g2", ["sx_mean", "x_mean"]),
            )
            run.write_json(
                "ensemble.json", {"spec": spec, "window": window, "results": results}
            )
    return traj, section, results
