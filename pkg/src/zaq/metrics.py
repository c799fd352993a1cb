"""Training metrics records and their CSV round trip.

One ``step`` row per training iteration and one ``eval`` row per epoch.
Floats are written with ``repr`` so parsing them back is lossless; when the
feature discrepancy is disabled the omega columns are omitted entirely.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError

_BASE_FIELDS = ["kind", "epoch", "step", "loss_de", "d_o", "d_f", "l_a", "loss_kt"]
_TAIL_FIELDS = ["lr_g", "lr_q", "accuracy"]


@dataclass
class MetricsRecord:
    kind: str  # "step" or "eval"
    epoch: int
    step: Optional[int] = None
    loss_de: Optional[float] = None
    d_o: Optional[float] = None
    d_f: Optional[float] = None
    l_a: Optional[float] = None
    loss_kt: Optional[float] = None
    omegas: Optional[tuple[float, ...]] = None
    lr_g: Optional[float] = None
    lr_q: Optional[float] = None
    accuracy: Optional[float] = None


def header_fields(num_layers: Optional[int]) -> list[str]:
    omega = [] if num_layers is None else [f"omega_{i + 1}" for i in range(num_layers)]
    return _BASE_FIELDS + omega + _TAIL_FIELDS


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Streams records to a CSV file with a fixed header."""

    def __init__(self, path, num_layers: Optional[int]):
        self.path = Path(path)
        self.num_layers = num_layers
        self._fh = open(self.path, "w", newline="")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(header_fields(num_layers))

    def write(self, rec: MetricsRecord) -> None:
        row = [rec.kind, rec.epoch, _fmt(rec.step), _fmt(rec.loss_de), _fmt(rec.d_o),
               _fmt(rec.d_f), _fmt(rec.l_a), _fmt(rec.loss_kt)]
        if self.num_layers is not None:
            omegas = rec.omegas if rec.omegas is not None else (None,) * self.num_layers
            if len(omegas) != self.num_layers:
                raise ConfigError(f"expected {self.num_layers} omegas, got {len(omegas)}")
            row += [_fmt(w) for w in omegas]
        row += [_fmt(rec.lr_g), _fmt(rec.lr_q), _fmt(rec.accuracy)]
        self._csv.writerow(row)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_opt(s: str, cast):
    return None if s == "" else cast(s)


def read_metrics(path) -> tuple[list[MetricsRecord], Optional[int]]:
    """Parse a metrics CSV back into records; returns (records, num_layers)
    where num_layers is None when the omega columns are absent."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty metrics file")
    header = rows[0]
    omega_cols = [h for h in header if h.startswith("omega_")]
    num_layers = len(omega_cols) or None
    if header != header_fields(num_layers):
        raise ConfigError(f"{path}: unexpected metrics header {header}")
    records = []
    for row in rows[1:]:
        vals = dict(zip(header, row))
        omegas = None
        if num_layers is not None:
            parsed = [_parse_opt(vals[f"omega_{i + 1}"], float) for i in range(num_layers)]
            if any(p is not None for p in parsed):
                omegas = tuple(parsed)
        records.append(MetricsRecord(
            kind=vals["kind"],
            epoch=int(vals["epoch"]),
            step=_parse_opt(vals["step"], int),
            loss_de=_parse_opt(vals["loss_de"], float),
            d_o=_parse_opt(vals["d_o"], float),
            d_f=_parse_opt(vals["d_f"], float),
            l_a=_parse_opt(vals["l_a"], float),
            loss_kt=_parse_opt(vals["loss_kt"], float),
            omegas=omegas,
            lr_g=_parse_opt(vals["lr_g"], float),
            lr_q=_parse_opt(vals["lr_q"], float),
            accuracy=_parse_opt(vals["accuracy"], float),
        ))
    return records, num_layers
