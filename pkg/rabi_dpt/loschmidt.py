"""Loschmidt echoes, rate functions and their non-analytic kinks.

The echo of a symmetry-broken initial state |phi_0^+> counts the return
probability to both branches of the ground doublet,

    |L(t)|^2 = sum_{q=+,-} P_q(t),    P_q = |<phi_0^q| e^{-i t H(g2)} |phi_0^+>|^2,

and the rate function is r(t) = -log|L(t)|^2 / eta. Both P_q decay like
exp(-eta f_q(t)), so they are handled as logarithms from the start. At finite
eta the rate carries a fast ripple at the spin frequency ~ eta w0. Kink detection
therefore filters the rate on that scale before taking second differences.
"""

import dataclasses
import math
import warnings

import numpy as np
from scipy import ndimage
from scipy import stats
import torch

from rabi_dpt import errors
from rabi_dpt import quench
from rabi_dpt import runner as runner_lib
from rabi_dpt import spectra
from rabi_dpt import states

# Gaussian filter width in units of the spin precession period 2 pi / (eta w0).
SPIN_FILTER_PERIODS = 0.75
KINK_FACTOR = 10.0
# A kink survives the spin filter with its second-difference peak reduced by
# sqrt(2 pi) sigma / dt while smooth curvature is not, so filtered series use a
# smaller factor over the same smooth-region reference.
FILTERED_KINK_FACTOR = 3.0
# Samples whose filtered second difference exceeds the one at twice the filter
# width by this ratio lie next to a kink or residual ripple.
SHARPNESS_RATIO = 1.5
KINK_PERCENTILE = 90.0
KINK_FLOOR = 1e-6
DEFAULT_FIT_WINDOW = 0.3
# Relative float64 rounding of one term of the spectral echo sum.
ECHO_EPSILON = 16 * np.finfo(np.float64).eps
RATE_HEADER = ("t", "log_p_plus", "log_p_minus", "rate", "slope")
ANALYTIC_HEADER = (
    "t", "f_plus", "f_minus", "r_infinity", "r_finite_eta", "r_spin_resolved"
)


def _logsumexp(*logs):
    stacked = torch.stack(
        [torch.as_tensor(np.asarray(x, dtype=np.float64)) for x in logs]
    )
    return torch.logsumexp(stacked, dim=0).numpy()


@dataclasses.dataclass(frozen=True, eq=False)
class RateSeries:
    """Branch-resolved return probabilities and the rate function.

    Attributes:
        times: Uniform time grid.
        log_p_plus: log P_+(t), return probability to the initial branch.
        log_p_minus: log P_-(t), transfer probability to the other branch.
        eta: Frequency ratio, the 'system size' of the rate.
        omega0: Mode frequency.
        floor_plus: log of the float64 rounding floor of P_+, None if exact.
        floor_minus: log of the float64 rounding floor of P_-, None if exact.
        rate: -logsumexp(log P_+, log P_-) / eta, computed on construction.
    """

    times: np.ndarray
    log_p_plus: np.ndarray
    log_p_minus: np.ndarray
    eta: float
    omega0: float = 1.0
    floor_plus: np.ndarray = None
    floor_minus: np.ndarray = None
    rate: np.ndarray = dataclasses.field(init=False)

    def __post_init__(self):
        arrays = ("times", "log_p_plus", "log_p_minus", "floor_plus", "floor_minus")
        for name in arrays:
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.float64)
            object.__setattr__(self, name, value)
        # Validates the grid.
        quench.TimeSeries(self.times, self.log_p_plus)
        rate = -_logsumexp(self.log_p_plus, self.log_p_minus) / self.eta
        assert np.all(np.isfinite(rate)), "Both echo branches underflowed."
        object.__setattr__(self, "rate", rate)

    @property
    def dt(self):
        return self.times[1] - self.times[0]

    @property
    def resolved(self):
        """Mask of samples where the dominant branch lies above its rounding floor."""
        if self.floor_plus is None or self.floor_minus is None:
            return np.ones(len(self.times), dtype=bool)
        margin = np.maximum(
            self.log_p_plus - self.floor_plus, self.log_p_minus - self.floor_minus
        )
        return margin > 0

    def as_series(self):
        return quench.TimeSeries(self.times, self.rate, "rate")

    def spin_filter_width(self):
        """Default Gaussian width 0.75 * 2 pi / (eta w0) of the spin-ripple filter."""
        return SPIN_FILTER_PERIODS * 2 * math.pi / (self.eta * self.omega0)

    def smoothed(self, sigma=None):
        """Returns the rate convolved with a Gaussian of width `sigma` (time units)."""
        sigma = self.spin_filter_width() if sigma is None else sigma
        values = self.rate
        if sigma > 0:
            values = ndimage.gaussian_filter1d(
                self.rate, sigma / self.dt, mode="nearest"
            )
        return quench.TimeSeries(self.times, values, "rate_smoothed")


def _log_echo(weights, energies, times):
    """Returns log |sum_n w_n exp(-i E_n t)|^2 and the log of its rounding floor.

    Energies are measured from the |w|-weighted mean, which leaves the modulus
    unchanged. Each term carries a phase error of ~ eps |E_n t|, so the sum cannot
    resolve amplitudes below ECHO_EPSILON * sum_n |w_n| (1 + |E_n t|).
    """
    magnitudes = weights.abs()
    scale = magnitudes.max()
    if scale == 0:
        empty = np.full(len(times), -np.inf)
        return empty, empty
    shift = (magnitudes * energies).sum() / magnitudes.sum()
    arguments = torch.outer(torch.from_numpy(times), energies - shift)
    amplitude = torch.exp(-1j * arguments) @ (weights / scale)
    noise = ECHO_EPSILON * ((1 + arguments.abs()) @ (magnitudes / scale))
    log_scale = 2 * torch.log(scale)
    return (
        (log_scale + torch.log(amplitude.abs() ** 2)).numpy(),
        (log_scale + 2 * torch.log(noise)).numpy(),
    )


def loschmidt_rate(sd, psi_plus, psi_minus, times, eta=None):
    """Computes the two-branch Loschmidt echo and its rate function.

    Args:
        sd: SpectralData of the quench Hamiltonian H(g2).
        psi_plus: The initial state, also the '+' projection target.
        psi_minus: The other branch of the ground doublet.
        times: Uniform time grid.
        eta: Rate normalization, defaults to sd.params.eta.
    Returns:
        A RateSeries carrying the rounding floor of both branches.
    Warns:
        ConvergenceWarning: If both branches drop below their float64 rounding
            floor somewhere on the grid. The rate there is rounding noise; for
            g2 = 0 and analytic states use `gaussian_echo_g2zero` instead.
    """
    eta = sd.params.eta if eta is None else eta
    times = np.asarray(times, dtype=np.float64)
    k = sd.coefficients(psi_plus)
    (log_p_plus, floor_plus), (log_p_minus, floor_minus) = [
        _log_echo(sd.coefficients(target).conj() * k, sd.eigenvalues, times)
        for target in (psi_plus, psi_minus)
    ]
    rs = RateSeries(
        times,
        log_p_plus,
        log_p_minus,
        eta,
        sd.params.omega0,
        floor_plus=floor_plus,
        floor_minus=floor_minus,
    )
    unresolved = ~rs.resolved
    if unresolved.any():
        floor = np.maximum(floor_plus, floor_minus)[unresolved]
        ceiling = float(np.min(-floor) / eta)
        warnings.warn(
            f"The Loschmidt echo is below the float64 rounding floor at "
            f"{int(unresolved.sum())} of {len(times)} times (first at "
            f"t={times[unresolved][0]:.4g}); rates above ~{ceiling:.3g} are not "
            "resolved there.",
            errors.ConvergenceWarning,
        )
    return rs


def _log_gaussian_overlap(gamma1, q1, p1, gamma2, q2, p2):
    """log |<psi_1|psi_2>| of normalized Gaussians in the quadrature x.

    psi_j(x) ~ exp(-gamma_j / 2 (x - q_j)^2 + i p_j (x - q_j)) with Re gamma_j > 0.
    The result stays finite however far apart the two packets are.
    """
    gamma1 = np.asarray(gamma1, dtype=np.complex128)
    gamma2 = np.asarray(gamma2, dtype=np.complex128)
    a = (gamma1.conj() + gamma2) / 2
    b = gamma1.conj() * q1 + gamma2 * q2 + 1j * (p2 - p1)
    c = -gamma1.conj() * q1 ** 2 / 2 - gamma2 * q2 ** 2 / 2 + 1j * (p1 * q1 - p2 * q2)
    norms = (np.log(gamma1.real / np.pi) + np.log(gamma2.real / np.pi)) / 4
    return norms + np.log(np.abs(np.pi / a)) / 2 + np.real(b ** 2 / (4 * a) + c)


def gaussian_echo_g2zero(g1, eta, times, omega0=1.0, branch=1):
    """Exact finite-eta echo of the analytic branch states after a quench to g2 = 0.

    H(0) = Omega / 2 sigma_z + w0 a^dag a dephases the spin and rotates
    D(alpha) S(s)|0> rigidly in phase space. The mean follows the classical
    orbit and the Gaussian width gamma = exp(-2 s) evolves as
    (gamma cos w0 t + i sin w0 t) / (cos w0 t + i gamma sin w0 t). Both log P_q
    are then closed-form overlaps, exact at any depth below the float64 floor of
    the spectral sum.

    Args:
        g1: Coupling of the initial state (> 1).
        eta: Frequency ratio.
        times: Time grid.
        omega0: Mode frequency.
        branch: Branch of the initial state.
    Returns:
        A RateSeries without rounding floors.
    """
    sp = states.superradiant_parameters(g1, eta, branch)
    times = np.asarray(times, dtype=np.float64)
    cos, sin = np.cos(omega0 * times), np.sin(omega0 * times)
    gamma0 = math.exp(-2 * sp.s_sp)
    gamma = (gamma0 * cos + 1j * sin) / (cos + 1j * gamma0 * sin)
    mean = math.sqrt(2) * branch * sp.alpha_sp
    u_sq, d_sq = sp.spin_up_coeff ** 2, sp.spin_down_coeff ** 2
    precession = 2 * u_sq * d_sq * np.cos(eta * omega0 * times)
    log_p = []
    for q in (1, -1):
        boson = _log_gaussian_overlap(
            gamma0, q * mean, 0.0, gamma, mean * cos, -mean * sin
        )
        log_p.append(np.log(u_sq ** 2 + d_sq ** 2 + q * precession) + 2 * boson)
    return RateSeries(times, log_p[0], log_p[1], eta, omega0)


@dataclasses.dataclass(frozen=True)
class AnalyticRate:
    """Closed-form g2 = 0 echo of the eta -> infinity theory."""

    times: np.ndarray
    f_plus: np.ndarray
    f_minus: np.ndarray
    r_infinity: np.ndarray
    r_finite_eta: np.ndarray


def _alpha_squared(g1):
    if not g1 > 1:
        raise errors.ParameterError(f"The analytic rate needs g1 > 1, got g1={g1}.")
    return (g1 ** 2 - g1 ** -2) / 4


def analytic_rate_g2zero(g1, eta, times, omega0=1.0):
    """Closed-form rate for a quench to g2 = 0.

    With alpha^2 = (g1^2 - g1^-2) / 4 the branches decay with
    f_+-(t) = 2 alpha^2 (1 -+ cos w0 t), so f_+(0) = 0. The eta -> infinity rate
    is min(f_+, f_-) and the finite-eta rate -log(e^{-eta f_+} + e^{-eta f_-}) / eta.
    """
    alpha_sq = _alpha_squared(g1)
    times = np.asarray(times, dtype=np.float64)
    cos = np.cos(omega0 * times)
    f_plus, f_minus = 2 * alpha_sq * (1 - cos), 2 * alpha_sq * (1 + cos)
    return AnalyticRate(
        times=times,
        f_plus=f_plus,
        f_minus=f_minus,
        r_infinity=np.minimum(f_plus, f_minus),
        r_finite_eta=-_logsumexp(-eta * f_plus, -eta * f_minus) / eta,
    )


def spin_resolved_rate_g2zero(g1, eta, times, omega0=1.0):
    """Finite-eta g2 = 0 rate that keeps the spin precession factor.

    Each branch is weighted by u^4 + d^4 + 2 q u^2 d^2 cos(eta w0 t) where
    u^2 = (1 - g1^-2) / 2 and d^2 = (1 + g1^-2) / 2 are the spin populations.
    """
    analytic = analytic_rate_g2zero(g1, eta, times, omega0)
    u_sq, d_sq = (1 - g1 ** -2) / 2, (1 + g1 ** -2) / 2
    precession = 2 * u_sq * d_sq * np.cos(eta * omega0 * analytic.times)
    log_p_plus = np.log(u_sq ** 2 + d_sq ** 2 + precession) - eta * analytic.f_plus
    log_p_minus = np.log(u_sq ** 2 + d_sq ** 2 - precession) - eta * analytic.f_minus
    return RateSeries(analytic.times, log_p_plus, log_p_minus, eta, omega0)


def rate_slope(series):
    """Central-difference derivative of a RateSeries or TimeSeries."""
    times, values = _arrays(series)
    if len(times) < 3:
        raise errors.ParameterError(
            f"The slope needs at least 3 points, got {len(times)}."
        )
    return quench.TimeSeries(times, np.gradient(values, times[1] - times[0]), "slope")


def _arrays(series):
    if isinstance(series, RateSeries):
        return series.times, series.rate
    return series.times, series.values


@dataclasses.dataclass(frozen=True)
class KinkReport:
    """Kinks of a rate function.

    Attributes:
        critical_times: Refined kink locations t_c.
        rate_at_kinks: The unfiltered rate interpolated at each t_c.
        left_slopes: Slope of the linear fit just before each t_c.
        right_slopes: Slope of the linear fit just after each t_c.
        detection_threshold: Slope jump above which a point counts as a kink.
        smoothing: Width of the Gaussian filter applied before detection.
        branch_crossings: Times where log P_+ = log P_-.
    """

    critical_times: list
    rate_at_kinks: list
    left_slopes: list
    right_slopes: list
    detection_threshold: float
    smoothing: float
    branch_crossings: list


def _crossings(times, values):
    """Times where `values` changes sign, by linear interpolation."""
    crossings = []
    for i in np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)[0]:
        t0, t1, v0, v1 = times[i], times[i + 1], values[i], values[i + 1]
        crossings.append(float(t0 + (t1 - t0) * v0 / (v0 - v1)))
    return crossings


def _side_fit(times, values, lo, hi):
    mask = (times >= lo) & (times <= hi)
    if mask.sum() < 2:
        return None
    return np.polyfit(times[mask], values[mask], 1)


def _slope_jumps(rs, sigma):
    filtered = rs.smoothed(sigma).values
    return filtered, np.abs(filtered[2:] - 2 * filtered[1:-1] + filtered[:-2]) / rs.dt


def _interior(n, sigma, dt):
    # The filter distorts 4 sigma at each end of the series.
    margin = int(math.ceil(4 * sigma / dt)) + 1
    mask = np.zeros(n, dtype=bool)
    mask[margin : n - margin] = True
    return mask


def smooth_region(rs, sigma=None):
    """Mask of second-difference samples away from kinks and residual ripple.

    A smooth stretch of the rate has the same filtered curvature at widths sigma
    and 2 sigma. A kink, whose filtered curvature scales like 1 / sigma, doubles
    between the two. Samples within 3 sigma of a point that sharpens by more than
    SHARPNESS_RATIO are excluded, as are the filter margins.
    """
    sigma = rs.spin_filter_width() if sigma is None else sigma
    _, jumps = _slope_jumps(rs, sigma)
    if sigma <= 0:
        return _interior(len(jumps), 0.0, rs.dt)
    _, wide = _slope_jumps(rs, 2 * sigma)
    sharp = jumps > SHARPNESS_RATIO * wide + KINK_FLOOR
    reach = int(math.ceil(3 * sigma / rs.dt))
    near_sharp = ndimage.binary_dilation(sharp, iterations=reach) if reach else sharp
    return _interior(len(jumps), 2 * sigma, rs.dt) & ~near_sharp


def detect_kinks(
    rs,
    threshold=None,
    smoothing=None,
    factor=None,
    percentile=KINK_PERCENTILE,
):
    """Locates kinks of a rate function.

    A point is a kink candidate when the slope jump |r_{i+1} - 2 r_i + r_{i-1}| / dt
    of the filtered rate exceeds the threshold. Candidates are clustered, and every
    cluster is refined by intersecting linear fits on either side of it.

    Args:
        rs: The RateSeries to analyze.
        threshold: Absolute slope-jump threshold. Defaults to `factor` times the
            `percentile`-th percentile of the slope jumps in the smooth region
            (see `smooth_region`), floored at KINK_FLOOR.
        smoothing: Gaussian filter width in time units. Defaults to
            `rs.spin_filter_width()`; 0 disables filtering.
        factor: Multiplier of the percentile for the relative threshold. Defaults
            to FILTERED_KINK_FACTOR, or KINK_FACTOR when filtering is disabled.
        percentile: Percentile of the relative threshold.
    Returns:
        A KinkReport; empty lists if no kinks are found.
    """
    times, dt = rs.times, rs.dt
    sigma = rs.spin_filter_width() if smoothing is None else smoothing
    filtered, jumps = _slope_jumps(rs, sigma)
    valid = _interior(len(jumps), sigma, dt)
    if threshold is None:
        if factor is None:
            factor = FILTERED_KINK_FACTOR if sigma > 0 else KINK_FACTOR
        smooth = smooth_region(rs, sigma)
        if smooth.sum() >= 10:
            reference = jumps[smooth]
        else:
            reference = jumps[valid] if valid.any() else jumps
        threshold = max(factor * np.percentile(reference, percentile), KINK_FLOOR)

    # Gaps between candidates shorter than the filter width belong to one kink.
    candidates = np.nonzero(valid & (jumps > threshold))[0]
    join = max(2, int(math.ceil(2 * sigma / dt)))
    clusters = []
    for index in candidates:
        if clusters and index - clusters[-1][-1] <= join:
            clusters[-1].append(index)
        else:
            clusters.append([index])

    gap = max(2 * dt, 3 * sigma)
    width = max(5 * dt, 0.05)
    critical_times, left_slopes, right_slopes = [], [], []
    for cluster in clusters:
        peak = times[1 + max(cluster, key=lambda i: jumps[i])]
        left = _side_fit(times, filtered, peak - gap - width, peak - gap)
        right = _side_fit(times, filtered, peak + gap, peak + gap + width)
        if left is None or right is None:
            continue
        if abs(left[0] - right[0]) <= threshold:
            continue
        t_c = (right[1] - left[1]) / (left[0] - right[0])
        if abs(t_c - peak) > gap:
            t_c = peak
        critical_times.append(float(t_c))
        left_slopes.append(float(left[0]))
        right_slopes.append(float(right[0]))

    return KinkReport(
        critical_times=critical_times,
        rate_at_kinks=[float(np.interp(t, times, rs.rate)) for t in critical_times],
        left_slopes=left_slopes,
        right_slopes=right_slopes,
        detection_threshold=float(threshold),
        smoothing=float(sigma),
        branch_crossings=_crossings(times, rs.log_p_plus - rs.log_p_minus),
    )


@dataclasses.dataclass(frozen=True)
class ExponentFit:
    """Result of fitting r(t_c) - r(t) = prefactor |t - t_c|^beta."""

    beta: float
    prefactor: float
    residual: float
    r_critical: float
    n_points: int


def kink_apex(series, t_c, fit_window=None, apex_width=0.05):
    """Returns r(t_c) as the apex of one-sided linear fits next to t_c."""
    times, values = _arrays(series)
    lo = fit_window[0] if fit_window else 2 * (times[1] - times[0])
    left = _side_fit(times, values, t_c - lo - apex_width, t_c - lo)
    right = _side_fit(times, values, t_c + lo, t_c + lo + apex_width)
    if left is None or right is None:
        raise errors.FitError(
            f"Not enough points next to t_c={t_c} to locate the apex."
        )
    return float((np.polyval(left, t_c) + np.polyval(right, t_c)) / 2)


def critical_exponent_fit(series, t_c, fit_window=None, r_critical=None):
    """Fits the power law of a rate function around a kink.

    Args:
        series: A RateSeries or a TimeSeries of rate values (e.g. analytic or
            filtered).
        t_c: The critical time.
        fit_window: (lo, hi) range of |t - t_c| used on both sides; defaults to
            (2 dt, 0.3).
        r_critical: r(t_c); defaults to the apex of one-sided linear fits.
    Returns:
        An ExponentFit.
    Raises:
        FitError: If a difference in the window is not positive or fewer than
            3 points are available.
    """
    times, values = _arrays(series)
    dt = times[1] - times[0]
    lo, hi = fit_window or (2 * dt, DEFAULT_FIT_WINDOW)
    if r_critical is None:
        r_critical = kink_apex(series, t_c, (lo, hi))
    distance = np.abs(times - t_c)
    mask = (distance >= lo) & (distance <= hi)
    if mask.sum() < 3:
        raise errors.FitError(
            f"Only {mask.sum()} points in the fit window ({lo}, {hi})."
        )
    differences = r_critical - values[mask]
    if np.any(differences <= 0):
        raise errors.FitError(
            f"r(t_c) - r(t) is not positive in the fit window around t_c={t_c}; "
            "the kink is probably mislocated."
        )
    fit = stats.linregress(np.log(distance[mask]), np.log(differences))
    predicted = fit.intercept + fit.slope * np.log(distance[mask])
    residual = float(np.sqrt(np.mean((np.log(differences) - predicted) ** 2)))
    return ExponentFit(
        beta=float(fit.slope),
        prefactor=float(np.exp(fit.intercept)),
        residual=residual,
        r_critical=float(r_critical),
        n_points=int(mask.sum()),
    )


def branch_states(params, source="analytic", cache=None, branch=1):
    """Returns (initial, other) branch states of the ground doublet at params.g."""
    if source == "analytic":
        return (
            states.analytic_ground_state(params, branch),
            states.analytic_ground_state(params, -branch),
        )
    sd = spectra.decompose(params, cache)
    return spectra.symmetric_doublet(sd, branch), spectra.symmetric_doublet(sd, -branch)


def reproduce(
    g1=1.5,
    g2=0.75,
    eta=100.0,
    omega0=1.0,
    t_max=2 * math.pi,
    dt=0.005,
    cutoff=None,
    initial_state_source="analytic",
    smoothing=None,
    kink_factor=None,
    kink_threshold=None,
    log_dir=None,
    cache_dir=None,
    gnuplot_script=False,
    config=None,
):
    """Rate function and kink analysis with defaults to reproduce the DPT-II kink.

    The code inside this function is self contained and can be used as a top level
    script, e.g. by copy/pasting it into a Jupyter notebook.

    Args:
        g1: Coupling of the initial state (> 1).
        g2: Coupling of the quench Hamiltonian.
        eta: Frequency ratio.
        omega0: Mode frequency.
        t_max: Last time of the grid.
        dt: Grid spacing.
        cutoff: Fock cutoff, None for automatic.
        initial_state_source: 'analytic' or 'numeric-doublet'.
        smoothing: Spin filter width, None for the default.
        kink_factor: Relative kink threshold factor, None for the default.
        kink_threshold: Absolute kink threshold, overrides `kink_factor`.
        log_dir: Directory where to write rate.csv, kinks.json and meta.json.
        cache_dir: Spectral cache directory, falls back to $RABI_DPT_CACHE.
        gnuplot_script: Whether to emit gnuplot scripts next to the CSV files.
        config: Configuration echoed into meta.json; defaults to the arguments.
    Returns:
        (RateSeries, KinkReport, ExponentFit or None).
    """
    spec = quench.QuenchSpec(g1, g2, eta, omega0, cutoff, 1, initial_state_source)
    cache = spectra.SpectralCache.from_env(cache_dir)
    config = config or dict(
        mode="rate",
        spec=spec,
        t_max=t_max,
        dt=dt,
        smoothing=smoothing,
        kink_factor=kink_factor,
        kink_threshold=kink_threshold,
    )
    times = quench.uniform_times(t_max, dt)

    with runner_lib.Runner(config, log_dir, gnuplot_script=gnuplot_script) as run:
        psi_plus, psi_minus = branch_states(
            spec.initial_params(), initial_state_source, cache
        )
        sd = spectra.decompose(spec.final_params(), cache)
        if g2 == 0 and initial_state_source == "analytic":
            rs = gaussian_echo_g2zero(g1, eta, times, omega0)
            run.record_convergence("echo", "gaussian")
        else:
            rs = loschmidt_rate(sd, psi_plus, psi_minus, times)
            run.record_convergence("echo", "spectral")
            run.record_convergence(
                "unresolved_fraction", float(np.mean(~rs.resolved))
            )
        slope = rate_slope(rs)
        report = detect_kinks(
            rs, threshold=kink_threshold, smoothing=smoothing, factor=kink_factor
        )

        fit, fit_error = None, None
        if report.critical_times:
            lo = max(2 * dt, 3 * report.smoothing)
            try:
                fit = critical_exponent_fit(
                    rs.smoothed(report.smoothing),
                    report.critical_times[0],
                    (lo, max(DEFAULT_FIT_WINDOW, lo + 0.15)),
                )
            except errors.FitError as e:
                fit_error = str(e)

        for step in range(0, len(times), max(1, len(times) // 500)):
            run.add_scalar("rate/r", rs.rate[step], step)
        run.write_csv(
            "rate.csv",
            RATE_HEADER,
            zip(times, rs.log_p_plus, rs.log_p_minus, rs.rate, slope.values),
            plot=("t", ["rate"]),
        )
        run.write_json(
            "kinks.json",
            {
                "critical_times": report.critical_times,
                "rate_at_kinks": report.rate_at_kinks,
                "left_slopes": report.left_slopes,
                "right_slopes": report.right_slopes,
                "detection_threshold": report.detection_threshold,
                "smoothing": report.smoothing,
                "branch_crossings": report.branch_crossings,
                "beta_fit": fit,
                "beta_fit_error": fit_error,
            },
        )
        if g2 == 0:
            analytic = analytic_rate_g2zero(g1, eta, times, omega0)
            spin_resolved = spin_resolved_rate_g2zero(g1, eta, times, omega0)
            run.write_csv(
                "analytic.csv",
                ANALYTIC_HEADER,
                zip(
                    times, analytic.f_plus, analytic.f_minus, analytic.r_infinity,
                    analytic.r_finite_eta, spin_resolved.rate,
                ),
                plot=("t", ["r_infinity", "r_finite_eta", "r_spin_resolved"]),
            )
            run.record_convergence(
                "max_deviation_from_analytic",
                float(np.max(np.abs(rs.rate - spin_resolved.rate))),
            )
        stride = max(1, len(times) // 200)
        evolution = quench.QuantumEvolution(sd, psi_plus, times[::stride])
        run.record_convergence("tail_probability", evolution.tail_probability())
        run.record_convergence("conservation", evolution.conservation())
    return rs, report, fit
