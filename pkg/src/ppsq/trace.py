"""Per-iteration telemetry rows with a stable CSV schema.

One row per iterate: monitored value, optimality/feasibility gaps, cumulative
oracle calls and communicated bits, and the active schedule parameters.
Unavailable quantities are NaN and serialise to an empty CSV field.  Float
fields are written with their shortest round-trip representation so that
identical runs produce byte-identical files.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

COLUMNS = (
    "t",
    "dual_value",
    "primal_gap",
    "gap",
    "oracle_calls",
    "bits",
    "r_t",
    "M_t",
    "alpha_t",
    "beta_t",
)

_INT_COLUMNS = {"t", "oracle_calls", "bits", "r_t", "M_t"}


@dataclass
class RunTrace:
    rows: list = field(default_factory=list)

    def append(self, t, dual_value, primal_gap, gap, oracle_calls, bits,
               r_t, M_t, alpha_t, beta_t):
        if self.rows:
            prev = self.rows[-1]
            if oracle_calls < prev[4] or bits < prev[5]:
                raise ValueError("cumulative columns must be nondecreasing")
        self.rows.append(
            (int(t), float(dual_value), float(primal_gap), float(gap),
             int(oracle_calls), int(bits), int(r_t), int(M_t),
             float(alpha_t), float(beta_t))
        )

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        i = COLUMNS.index(name)
        return np.array([row[i] for row in self.rows])

    def final(self, name):
        return self.rows[-1][COLUMNS.index(name)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for row in self.rows:
                writer.writerow([_format(name, v) for name, v in zip(COLUMNS, row)])

    @classmethod
    def from_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != COLUMNS:
                raise ValueError(f"unexpected trace header: {header}")
            for raw in reader:
                vals = [_parse(name, v) for name, v in zip(COLUMNS, raw)]
                trace.rows.append(tuple(vals))
        return trace


def _format(name, value):
    if name in _INT_COLUMNS:
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return ""
    return repr(v)


def _parse(name, text):
    if name in _INT_COLUMNS:
        return int(text)
    if text == "":
        return float("nan")
    return float(text)
