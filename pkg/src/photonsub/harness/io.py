"""Tables, sidecars and fit-dataset ingestion."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..fit import Trace, TransmissionDataset
from ..model import ConfigError, PulseSpec

FLOAT_FORMAT = "{:.12g}"


@dataclass
class Table:
    """Column-named rows; values are numbers, strings or booleans."""

    columns: list
    rows: list = field(default_factory=list)

    def append(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, table has {len(self.columns)} columns")
        self.rows.append(list(values))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def __len__(self):
        return len(self.rows)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return "nan" if math.isnan(x) else FLOAT_FORMAT.format(x)
    return "" if v is None else str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return x if math.isfinite(x) else None
    return v


def write_table(table: Table, path: Path, fmt: str = "csv") -> Path:
    """Write ``table`` as ``path.csv`` or ``path.json``; returns the file written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        target = path.with_suffix(".csv")
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([_fmt(v) for v in row])
    elif fmt == "json":
        target = path.with_suffix(".json")
        data = [{c: _json_value(v) for c, v in zip(table.columns, row)} for row in table.rows]
        with open(target, "w") as fh:
            json.dump({"columns": table.columns, "rows": data}, fh, indent=1)
            fh.write("\n")
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    return target


def provenance(command: str, config_sha256: str, seed: int, resolved: dict) -> dict:
    return {
        "tool": "photonsub",
        "version": __version__,
        "command": command,
        "config_sha256": config_sha256,
        "seed": int(seed),
        "config": resolved,
    }


def write_sidecar(out_dir: Path, header: dict, outputs: list, extra: dict | None = None) -> Path:
    """Run metadata next to the tables in ``run.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(header)
    meta["outputs"] = [os.path.basename(str(p)) for p in outputs]
    if extra:
        meta.update(extra)
    target = out_dir / "run.json"
    with open(target, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True, default=_json_value)
        fh.write("\n")
    return target


def read_trace_csv(path, mean_photons_in: float) -> Trace:
    """One trace with header ``time_us,rate_out_per_us[,weight]``."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = [r for r in reader if r and any(x.strip() for x in r)]
    except (OSError, StopIteration) as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from exc
    if header[:2] != ["time_us", "rate_out_per_us"] or len(header) > 3 or (
            len(header) == 3 and header[2] != "weight"):
        raise ConfigError(f"{path}: header must be time_us,rate_out_per_us[,weight]")
    try:
        data = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: every row needs {len(header)} columns")
    weights = data[:, 2] if len(header) == 3 else None
    try:
        return Trace(mean_photons_in, data[:, 0], data[:, 1], weights)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def read_dataset(manifest, pulse: PulseSpec, n_sub: int) -> TransmissionDataset:
    """Manifest CSV ``file,mean_photons_in``; paths relative to the manifest."""
    manifest = Path(manifest)
    try:
        with open(manifest, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {manifest}: {exc}") from exc
    if not rows or set(rows[0]) != {"file", "mean_photons_in"}:
        raise ConfigError(f"{manifest}: expected columns file,mean_photons_in and at least one row")
    traces = []
    for r in rows:
        try:
            n_in = float(r["mean_photons_in"])
        except ValueError as exc:
            raise ConfigError(f"{manifest}: bad mean_photons_in {r['mean_photons_in']!r}") from exc
        traces.append(read_trace_csv(manifest.parent / r["file"], n_in))
    return TransmissionDataset(traces, pulse, n_sub)


def write_dataset(data: TransmissionDataset, out_dir) -> Path:
    """Inverse of read_dataset: one CSV per trace plus ``manifest.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, tr in enumerate(data.traces):
        name = f"trace_{k}.csv"
        cols = ["time_us", "rate_out_per_us"] + (["weight"] if tr.weights is not None else [])
        t = Table(cols)
        for i in range(tr.times.size):
            vals = [tr.times[i], tr.rate_out[i]] + ([tr.weights[i]] if tr.weights is not None else [])
            t.append(*vals)
        write_table(t, out_dir / name, "csv")
        rows.append((name, tr.mean_photons_in))
    target = out_dir / "manifest.csv"
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "mean_photons_in"])
        for name, n_in in rows:
            w.writerow([name, _fmt(float(n_in))])
    return target
