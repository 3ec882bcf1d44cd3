"""CSV ingestion, subsampling and report serialization.

Input files are long-format CSV with header ``group,subject,t,y``, one row
per observation and group labels 1 and 2.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from sfda.errors import FormatError, ValidationError
from sfda.spline import GroupSample

REQUIRED_COLUMNS = ("group", "subject", "t", "y")
SCHEMA_VERSION = "1"
SIG_DIGITS = 10

_REPORT_ARRAYS = ("grid", "diff_estimate", "band_lower", "band_upper", "sigma_hat", "kappa_b")


def _parse_float(text, column, line):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise FormatError(f"line {line}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"line {line}: column {column!r} must be finite, got {text!r}")
    return value


def _parse_group(text, line):
    label = (text or "").strip()
    if label not in ("1", "2"):
        raise FormatError(f"line {line}: unknown group label {text!r}; expected 1 or 2")
    return int(label)


def read_rows(path):
    """Validated ``(group, subject, t, y, line)`` tuples from a CSV file."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = [name.strip() for name in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        rows = []
        for rec in reader:
            line = reader.line_num
            rows.append((
                _parse_group(rec["group"], line),
                rec["subject"].strip(),
                _parse_float(rec["t"], "t", line),
                _parse_float(rec["y"], "y", line),
                line,
            ))
    return rows


def rescale_times(t):
    """Affine map of ``t`` onto [0, 1] using its own min and max."""
    t = np.asarray(t, dtype=float)
    lo, hi = t.min(), t.max()
    if not hi > lo:
        raise ValidationError("cannot rescale times: all observation times are equal")
    return np.clip((t - lo) / (hi - lo), 0.0, 1.0)


def parse_csv(path, rescale_time=False):
    """Read a two-group CSV into ``(sample1, sample2)``.

    Times must lie in [0, 1] unless ``rescale_time`` is set, in which case
    all times from both groups are mapped onto [0, 1] together.
    """
    rows = read_rows(path)
    if not rows:
        raise ValidationError(f"{path}: no observations")
    times = np.array([r[2] for r in rows])
    if rescale_time:
        times = rescale_times(times)
    else:
        for (_, _, t, _, line) in rows:
            if not 0.0 <= t <= 1.0:
                raise ValidationError(
                    f"line {line}: time {t!r} outside [0, 1] (use --rescale-time)"
                )
    samples = []
    for g in (1, 2):
        idx = [i for i, r in enumerate(rows) if r[0] == g]
        if not idx:
            raise ValidationError(f"{path}: group {g} has no observations")
        samples.append(GroupSample.from_records(
            [rows[i][1] for i in idx], times[idx], [rows[i][3] for i in idx], group=g,
        ))
    return samples[0], samples[1]


def write_csv(samples, path):
    """Write samples back out in the input layout (full float precision)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS)
        for sample in samples:
            for sid, t, y in zip(sample.subject, sample.t, sample.y):
                writer.writerow((sample.group, sample.subject_ids[sid], repr(float(t)), repr(float(y))))


def sparsify(sample, n_min, n_max, rng):
    """Keep a random subset of each subject's observations.

    Subject ``i`` keeps ``k ~ U{n_min, ..., min(n_max, N_i)}`` of its rows,
    chosen uniformly without replacement; row order is preserved.
    """
    if int(n_min) != n_min or int(n_max) != n_max or not 1 <= n_min <= n_max:
        raise ValidationError(f"need integers 1 <= n_min <= n_max, got {n_min}, {n_max}")
    short = [sample.subject_ids[i] for i, c in enumerate(sample.counts) if c < n_min]
    if short:
        raise ValidationError(
            f"subjects with fewer than {n_min} observations: {', '.join(map(str, short))}"
        )
    keep = []
    for i in range(sample.n):
        rows = np.flatnonzero(sample.subject == i)
        k = int(rng.integers(n_min, min(n_max, rows.size) + 1))
        keep.append(np.sort(rng.choice(rows, size=k, replace=False)))
    keep = np.sort(np.concatenate(keep))
    return GroupSample(
        t=sample.t[keep], y=sample.y[keep], subject=sample.subject[keep],
        subject_ids=sample.subject_ids, group=sample.group,
    )


def _round(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(format(float(value), f".{SIG_DIGITS}g"))
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_round(v) for v in value]
    return value


def curve_path(path):
    """Sibling CSV path for the plotting table of a report."""
    path = Path(path)
    target = path.with_suffix(".csv")
    return target if target != path else path.with_name(path.name + ".curve.csv")


def report_document(report):
    doc = {"schema": SCHEMA_VERSION}
    doc.update({k: _round(v) for k, v in report.to_dict().items() if v is not None})
    return doc


def emit_report(report, path):
    """Write the report as JSON plus a ``t,diff,lower,upper`` CSV beside it.

    Returns the two paths written.
    """
    path = Path(path)
    table = curve_path(path)
    doc = report_document(report)
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        with open(table, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("t", "diff", "lower", "upper"))
            for row in zip(report.grid, report.diff_estimate, report.band_lower, report.band_upper):
                writer.writerow([format(float(v), f".{SIG_DIGITS}g") for v in row])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report to {exc.filename or path}: {exc.strerror}") from exc
    return path, table


def load_report(path):
    """Read a report written by :func:`emit_report`; arrays come back as ndarrays."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported report schema {doc.get('schema')!r}")
    for key in _REPORT_ARRAYS:
        if key in doc:
            doc[key] = np.asarray(doc[key], dtype=float)
    return doc
