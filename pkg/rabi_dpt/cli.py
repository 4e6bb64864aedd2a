"""Command-line front end of rabi-dpt.

Every mode regenerates the data of one experiment under `--out`:

    phase-diagram  critical_line.csv
    quench         sweep.csv, quench.json (and series.csv for a single g2)
    rate           rate.csv, kinks.json (and analytic.csv for g2 = 0)
    scaling        scaling.csv, scaling.json
    semiclassical  trajectory.csv, sections.csv, trajectory.json
                   (and sweep.csv, ensemble.json with --g2-list)
    cache          list | purge | stat of the spectral cache

Every run also writes meta.json. Flags override values from `--config`, which
accepts either a flat RunConfig JSON object or a previous run's meta.json.
Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

import argparse
import dataclasses
import datetime
import json
import math
import os
import sys

from rabi_dpt import errors
from rabi_dpt import hilbert
from rabi_dpt import loschmidt
from rabi_dpt import quench
from rabi_dpt import semiclassics
from rabi_dpt import spectra

MODES = ("phase-diagram", "quench", "rate", "scaling", "semiclassical")
REQUIRED_FIELDS = {
    "phase-diagram": (),
    "quench": ("g1", "eta"),
    "rate": ("g1", "g2", "eta"),
    "scaling": ("g1", "eta_list"),
    "semiclassical": ("g1",),
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Flat, strictly validated configuration of one CLI run."""

    mode: str
    g1: float = None
    g2: float = None
    g2_list: list = None
    eta: float = None
    eta_list: list = None
    omega0: float = 1.0
    cutoff: int = None
    branch: int = 1
    initial_state: str = "analytic"
    window_start: float = 100.0
    window_end: float = 500.0
    window_samples: int = 400
    tmax: float = None
    dt: float = None
    g1_min: float = 1.05
    g1_max: float = 3.0
    steps: int = 40
    n_points: int = 5000
    n_samples: int = 1000
    smoothing: float = None
    kink_factor: float = None
    kink_threshold: float = None
    output_dir: str = None
    cache_dir: str = None
    seed: int = 0
    threads: int = None
    gnuplot_script: bool = False
    convergence_check: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise errors.ConfigError(
                f"mode must be one of {MODES}, got '{self.mode}'."
            )
        missing = [
            name for name in REQUIRED_FIELDS[self.mode] if getattr(self, name) is None
        ]
        if self.mode == "quench" and self.g2 is None and not self.g2_list:
            missing.append("g2 or g2_list")
        if missing:
            raise errors.ConfigError(
                f"Mode '{self.mode}' is missing required field(s): "
                f"{', '.join(missing)}."
            )
        if self.branch not in (1, -1):
            raise errors.ConfigError(f"branch must be +1 or -1, got {self.branch}.")
        if self.threads is not None and self.threads < 1:
            raise errors.ConfigError(f"threads must be >= 1, got {self.threads}.")
        self.window()
        etas = [self.eta] if self.eta is not None else []
        for eta in etas + list(self.eta_list or []):
            hilbert.ModelParams(
                eta=eta, g=0.0, cutoff=self.cutoff or 0, omega0=self.omega0
            )
        for g in [self.g1, self.g2] + list(self.g2_list or []):
            if g is not None and not g >= 0:
                raise errors.ConfigError(f"Couplings must be >= 0, got {g}.")

    def window(self):
        return quench.LongTimeWindow(
            self.window_start, self.window_end, self.window_samples
        )

    @property
    def worker_threads(self):
        return self.threads or os.cpu_count() or 1


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
# Keyword names of the library reproduce functions that differ from RunConfig.
_ECHO_ALIASES = {"t_max": "tmax", "initial_state_source": "initial_state"}
_WINDOW_KEYS = {
    "t_start": "window_start",
    "t_end": "window_end",
    "n_samples": "window_samples",
}


def _flatten_echo(echo):
    """Maps the config echo of a library `reproduce` call onto RunConfig keys.

    Nested 'spec' and 'window' objects are flattened, keyword names are renamed
    and keys without a RunConfig counterpart are dropped.
    """
    flat = {}
    for key, value in echo.items():
        if key == "spec" and isinstance(value, dict):
            flat.update(_flatten_echo(value))
        elif key == "window" and isinstance(value, dict):
            flat.update(
                {_WINDOW_KEYS[k]: v for k, v in value.items() if k in _WINDOW_KEYS}
            )
        else:
            flat[_ECHO_ALIASES.get(key, key)] = value
    return {key: value for key, value in flat.items() if key in _FIELDS}


def _coerce(name, value):
    """Checks a config value against the RunConfig field type."""
    if value is None:
        return None
    kind = _TYPES[name]
    message = f"Config key '{name}' expects {getattr(kind, '__name__', kind)}"
    if kind is list:
        if not isinstance(value, list):
            raise errors.ConfigError(f"{message}, got {value!r}.")
        return [_coerce_number(float, item, message) for item in value]
    if kind in (float, int):
        return _coerce_number(kind, value, message)
    if not isinstance(value, kind):
        raise errors.ConfigError(f"{message}, got {value!r}.")
    return value


def _coerce_number(kind, value, message):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise errors.ConfigError(f"{message}, got {value!r}.")
    if kind is int:
        if not math.isfinite(value) or value != int(value):
            raise errors.ConfigError(f"{message}, got {value!r}.")
        return int(value)
    return float(value)


def load_config(path):
    """Reads RunConfig keys from a JSON file, rejecting unknown keys and bad types.

    A run's meta.json is accepted too. Its 'config' entry is used, after mapping
    the echo of a library `reproduce` call onto RunConfig keys.

    Raises:
        ConfigError: If the file cannot be read, holds unknown keys or holds a
            value of the wrong type.
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise errors.ConfigError(f"Cannot read config file '{path}': {e}") from e
    if not isinstance(data, dict):
        raise errors.ConfigError(f"Config file '{path}' must hold a JSON object.")
    if "config" in data and "version" in data:
        if not isinstance(data["config"], dict):
            raise errors.ConfigError(f"meta.json '{path}' has no config object.")
        data = _flatten_echo(data["config"])
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise errors.ConfigError(
            f"Unknown config key(s) in '{path}': {', '.join(unknown)}."
        )
    return {key: _coerce(key, value) for key, value in data.items()}


# Flag name -> (type, help). The destination is the RunConfig field of the same name.
_FLAGS = {
    "g1": (float, "coupling of the initial ground state"),
    "g2": (float, "coupling of the quench Hamiltonian"),
    "g2_list": (float, "list of quench couplings"),
    "eta": (float, "frequency ratio Omega / w0"),
    "eta_list": (float, "list of frequency ratios"),
    "omega0": (float, "mode frequency w0"),
    "cutoff": (int, "Fock cutoff (default: automatic)"),
    "branch": (int, "symmetry-broken branch, +1 or -1"),
    "initial_state": (str, "'analytic' or 'numeric-doublet'"),
    "window_start": (float, "start of the long-time window"),
    "window_end": (float, "end of the long-time window"),
    "window_samples": (int, "number of samples in the long-time window"),
    "tmax": (float, "final time"),
    "dt": (float, "time step"),
    "g1_min": (float, "smallest g1 of the critical line"),
    "g1_max": (float, "largest g1 of the critical line"),
    "steps": (int, "number of g1 values"),
    "n_points": (int, "number of stroboscopic section points"),
    "n_samples": (int, "semiclassical ensemble size"),
    "smoothing": (float, "spin filter width for kink detection (0 disables)"),
    "kink_factor": (float, "relative kink detection threshold"),
    "kink_threshold": (float, "absolute kink detection threshold"),
}
_LIST_FLAGS = ("g2_list", "eta_list")
_WINDOW = ("window_start", "window_end", "window_samples")
_STATE = ("omega0", "cutoff", "branch", "initial_state")
_MODE_FLAGS = {
    "phase-diagram": ("g1_min", "g1_max", "steps"),
    "quench": ("g1", "g2", "g2_list", "eta") + _STATE + _WINDOW,
    "rate": ("g1", "g2", "eta", "omega0", "cutoff", "initial_state", "tmax", "dt")
    + ("smoothing", "kink_factor", "kink_threshold"),
    "scaling": ("g1", "g2", "eta_list", "omega0", "branch") + _WINDOW,
    "semiclassical": ("g1", "g2", "g2_list", "branch", "tmax", "dt", "n_points")
    + ("eta", "n_samples")
    + _WINDOW,
}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=str, help="JSON config file or a run's meta.json"
    )
    common.add_argument(
        "--out", dest="output_dir", type=str, help="directory where to write outputs"
    )
    common.add_argument("--cache-dir", type=str, help="spectral cache directory")
    common.add_argument(
        "--threads", type=int, help="worker threads (default: all cores)"
    )
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument(
        "--gnuplot-script",
        action="store_true",
        default=None,
        help="emit a gnuplot script per CSV file",
    )
    common.add_argument(
        "--convergence-check",
        action="store_true",
        default=None,
        help="recompute at twice the cutoff and record the difference",
    )

    parser = argparse.ArgumentParser(
        prog="rabi-dpt",
        description="Dynamical phase transitions in the quantum Rabi model.",
    )
    modes = parser.add_subparsers(dest="mode", required=True)
    for mode, names in _MODE_FLAGS.items():
        sub = modes.add_parser(mode, parents=[common])
        for name in names:
            kind, help_text = _FLAGS[name]
            nargs = "+" if name in _LIST_FLAGS else None
            sub.add_argument(
                _flag(name), dest=name, type=kind, nargs=nargs, help=help_text
            )

    cache = modes.add_parser("cache", help="manage the spectral cache")
    cache.add_argument("action", choices=("list", "purge", "stat"))
    cache.add_argument("--cache-dir", type=str, help="spectral cache directory")
    cache.add_argument(
        "--older-than", type=float, help="only purge entries older than this many days"
    )
    return parser


def make_config(args):
    """Merges the config file and the command-line flags into a RunConfig."""
    values = load_config(args.config) if args.config else {}
    values = {key: value for key, value in values.items() if key != "mode"}
    for name, value in vars(args).items():
        if name in _FIELDS and name != "mode" and value is not None:
            values[name] = value
    return RunConfig(mode=args.mode, **values)


def _run_phase_diagram(config, echo):
    quench.reproduce_phase_diagram(
        config.g1_min,
        config.g1_max,
        config.steps,
        log_dir=config.output_dir,
        gnuplot_script=config.gnuplot_script,
        config=echo,
    )


def _run_quench(config, echo):
    quench.reproduce(
        g1=config.g1,
        g2_list=config.g2_list or [config.g2],
        eta=config.eta,
        omega0=config.omega0,
        window=config.window(),
        cutoff=config.cutoff,
        branch=config.branch,
        initial_state_source=config.initial_state,
        log_dir=config.output_dir,
        cache_dir=config.cache_dir,
        threads=config.worker_threads,
        convergence_check=config.convergence_check,
        gnuplot_script=config.gnuplot_script,
        config=echo,
    )


def _run_rate(config, echo):
    loschmidt.reproduce(
        g1=config.g1,
        g2=config.g2,
        eta=config.eta,
        omega0=config.omega0,
        t_max=config.tmax if config.tmax is not None else 2 * math.pi,
        dt=config.dt if config.dt is not None else 0.005,
        cutoff=config.cutoff,
        initial_state_source=config.initial_state,
        smoothing=config.smoothing,
        kink_factor=config.kink_factor,
        kink_threshold=config.kink_threshold,
        log_dir=config.output_dir,
        cache_dir=config.cache_dir,
        gnuplot_script=config.gnuplot_script,
        config=echo,
    )


def _run_scaling(config, echo):
    quench.reproduce_scaling(
        g1=config.g1,
        g2=config.g2,
        eta_list=config.eta_list,
        omega0=config.omega0,
        window=config.window(),
        branch=config.branch,
        log_dir=config.output_dir,
        cache_dir=config.cache_dir,
        threads=config.worker_threads,
        gnuplot_script=config.gnuplot_script,
        config=echo,
    )


def _run_semiclassical(config, echo):
    semiclassics.reproduce(
        g1=config.g1,
        g2=config.g2,
        branch=config.branch,
        t_max=config.tmax if config.tmax is not None else 1000.0,
        dt=config.dt if config.dt is not None else 0.005,
        n_points=config.n_points,
        g2_list=config.g2_list,
        eta=config.eta if config.eta is not None else 100.0,
        n_samples=config.n_samples,
        seed=config.seed,
        window=config.window(),
        log_dir=config.output_dir,
        threads=config.worker_threads,
        gnuplot_script=config.gnuplot_script,
        config=echo,
    )


MODE_DICT = {
    "phase-diagram": _run_phase_diagram,
    "quench": _run_quench,
    "rate": _run_rate,
    "scaling": _run_scaling,
    "semiclassical": _run_semiclassical,
}


def run(config):
    """Runs one configured experiment, writing its artifacts under output_dir."""
    if config.output_dir is None:
        output_dir = os.path.join("runs", config.mode)
        config = dataclasses.replace(config, output_dir=output_dir)
    MODE_DICT[config.mode](config, dataclasses.asdict(config))
    return config.output_dir


def cache_admin(action, cache_dir=None, older_than=None, out=None):
    """Lists, purges or summarizes the spectral cache.

    Args:
        action: 'list', 'purge' or 'stat'.
        cache_dir: The cache directory, falls back to $RABI_DPT_CACHE.
        older_than: For 'purge', only remove entries older than this many days.
        out: Stream the report is printed to, defaults to stdout.
    Returns:
        The report: a list of CacheEntry, the number of purged files or a dict.
    """
    out = out or sys.stdout
    cache = spectra.SpectralCache.from_env(cache_dir)
    if cache is None:
        raise errors.ConfigError(
            f"No cache directory: pass --cache-dir or set ${spectra.CACHE_ENV_VAR}."
        )
    if action == "list":
        report = cache.entries()
        for entry in report:
            stamp = datetime.datetime.fromtimestamp(entry.mtime)
            params = entry.params
            print(
                f"{entry.path}\teta={params.eta!r}\tomega0={params.omega0!r}"
                f"\tg={params.g!r}\tcutoff={params.cutoff}\t{entry.size}"
                f"\t{stamp.isoformat(timespec='seconds')}",
                file=out,
            )
    elif action == "purge":
        seconds = None if older_than is None else older_than * 86400.0
        report = cache.purge(seconds)
        print(f"removed {report} file(s)", file=out)
    else:
        report = cache.stat()
        print(json.dumps(report, indent=2, sort_keys=True), file=out)
    return report


def main(argv=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    try:
        if args.mode == "cache":
            cache_admin(args.action, args.cache_dir, args.older_than)
        else:
            output_dir = run(make_config(args))
            print(f"wrote {output_dir}")
    except errors.ParameterError as e:
        print(f"rabi-dpt: error: {e}", file=sys.stderr)
        return 2
    except (errors.NumericalError, OSError) as e:
        print(f"rabi-dpt: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0
