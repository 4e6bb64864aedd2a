"""Utilities to run numerical experiments and record their outputs."""

import concurrent.futures
import csv
import dataclasses
import json
import math
import os
import tempfile
import time

import numpy as np
import torch
from torch.utils import tensorboard
import tqdm


def jsonable(obj):
    """Recursively converts dataclasses, tensors and numpy values to JSON types.

    Non-finite floats become None so that the output is strict JSON.
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(key): jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(value) for value in obj]
    if isinstance(obj, torch.Tensor):
        return jsonable(obj.tolist())
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def format_value(value):
    """Formats a CSV cell; floats keep 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def parallel_map(fn, items, threads=1, desc=None):
    """Applies `fn` to every item with a thread pool, preserving input order.

    Args:
        fn: The function to apply.
        items: A sequence of inputs.
        threads: Number of worker threads. 1 runs serially in the calling thread.
        desc: Optional progress bar description.
    Returns:
        The list of results in the order of `items`.
    """
    items = list(items)
    threads = max(1, int(threads or 1))
    progress = dict(total=len(items), desc=desc, disable=None, leave=False)
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in tqdm.tqdm(items, **progress)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(tqdm.tqdm(pool.map(fn, items), **progress))


class Runner:
    """Owns the output directory of one run.

    The runner writes CSV and JSON artifacts, logs scalars to TensorBoard and, on
    `close()`, writes `meta.json` with the configuration echo, package version,
    wall time, convergence report and random seed. It can be used as a context
    manager.
    """

    def __init__(self, config=None, log_dir=None, seed=None, gnuplot_script=False):
        """Initializes a new Runner instance.

        Args:
            config: A JSON-serializable description of the run (dict or dataclass)
                that is echoed into meta.json.
            log_dir: The directory where to write artifacts and TensorBoard metrics.
                If `None` a temporary directory is created (note that this directory
                is not cleaned up automatically).
            seed: The random seed of the run, echoed into meta.json.
            gnuplot_script: Whether to emit a gnuplot script next to each CSV file
                written with a `plot` specification.
        """
        self._config = config if config is not None else {}
        self._log_dir = log_dir or tempfile.mkdtemp()
        os.makedirs(self._log_dir, exist_ok=True)
        self._seed = seed
        self._gnuplot_script = gnuplot_script

        self._start_time = time.time()
        self._convergence = {}
        self._artifacts = []
        self._closed = False

        self._summary_writer = tensorboard.SummaryWriter(
            self._path("tensorboard"), max_queue=100
        )

    @property
    def log_dir(self):
        return self._log_dir

    @property
    def convergence(self):
        return dict(self._convergence)

    def _path(self, file_name):
        return os.path.join(self._log_dir, file_name)

    def add_scalar(self, tag, value, step):
        self._summary_writer.add_scalar(tag, value, step)

    def add_scalars(self, tag, values, step):
        self._summary_writer.add_scalars(tag, values, step)

    def record_convergence(self, key, value):
        """Adds an entry to the convergence report written into meta.json."""
        self._convergence[key] = jsonable(value)

    def write_csv(self, file_name, header, rows, plot=None):
        """Writes an RFC-4180 CSV file with a header row.

        Args:
            file_name: Name of the file inside the log directory.
            header: The column names.
            rows: An iterable of row sequences.
            plot: Optional (x_column, [y_columns]) used for the gnuplot script.
        Returns:
            The path of the written file.
        """
        path = self._path(file_name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\r\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(value) for value in row])
        self._artifacts.append(file_name)
        if self._gnuplot_script and plot is not None:
            self._write_gnuplot(file_name, header, *plot)
        return path

    def _write_gnuplot(self, file_name, header, x_column, y_columns):
        x = header.index(x_column) + 1
        curves = ", \\\n     ".join(
            f"'{file_name}' using {x}:{header.index(y) + 1} with lines title '{y}'"
            for y in y_columns
        )
        script = (
            "set datafile separator ','\n"
            f"set xlabel '{x_column}'\n"
            f"plot {curves}\n"
        )
        script_name = os.path.splitext(file_name)[0] + ".gp"
        with open(self._path(script_name), "w", encoding="utf-8") as f:
            f.write(script)
        self._artifacts.append(script_name)

    def write_json(self, file_name, payload):
        path = self._path(file_name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(jsonable(payload), f, indent=2, sort_keys=True)
            f.write("\n")
        self._artifacts.append(file_name)
        return path

    def close(self):
        """Writes meta.json and flushes TensorBoard. Safe to call twice."""
        if self._closed:
            return
        from rabi_dpt import __version__

        self.write_json(
            "meta.json",
            {
                "config": self._config,
                "version": __version__,
                "wall_time": time.time() - self._start_time,
                "convergence": self._convergence,
                "seed": self._seed,
                "artifacts": sorted(set(self._artifacts)),
            },
        )
        self._summary_writer.close()
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
