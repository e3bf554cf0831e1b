"""Calibration error, robustness and stability metrics and their aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .errors import ContractError

STABILITY_STEPS = (2, 5, 10)


@dataclass(frozen=True)
class CalibrationError:
    euler: tuple[float, float, float]  # degrees, fixed-axis XYZ
    trans: tuple[float, float, float]  # centimeters
    rot_rmse: float
    trans_rmse: float

    def as_row(self) -> list[float]:
        return [*self.euler, *self.trans, self.rot_rmse, self.trans_rmse]

    def to_dict(self) -> dict:
        return {"euler": list(self.euler), "trans": list(self.trans),
                "rot_rmse": self.rot_rmse, "trans_rmse": self.trans_rmse}  # fmt: skip

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationError":
        return cls(tuple(d["euler"]), tuple(d["trans"]), d["rot_rmse"], d["trans_rmse"])


def rmse3(v) -> float:
    """Root of the mean of squares over the three axes."""
    v = np.asarray(v, dtype=np.float64)
    return math.sqrt(float(np.mean(v * v)))


def error_transform(estimate: np.ndarray, gt: np.ndarray) -> CalibrationError:
    """Per-axis errors of ``estimate @ inv(gt)``; rotation in degrees, translation in cm."""
    eps = lie.compose(estimate, lie.inverse(gt))
    euler = lie.euler_from_rotation(eps)
    trans = eps[:3, 3] * 100.0
    return CalibrationError(
        tuple(float(a) for a in euler),
        tuple(float(a) for a in trans),
        rmse3(euler),
        rmse3(trans),
    )


@dataclass
class RunRecord:
    sample_id: str
    method: str
    surrogate: str
    errors_by_step: list[CalibrationError]
    final_error: CalibrationError
    initial_error: CalibrationError | None = None
    flagged: bool = False
    denoiser_failures: int = 0

    def step(self, i: int) -> CalibrationError:
        """Error after the ``i``-th function evaluation (1-based)."""
        if not 1 <= i <= len(self.errors_by_step):
            raise ContractError(
                f"{self.sample_id}/{self.method}: step {i} not recorded "
                f"({len(self.errors_by_step)} steps)"
            )
        return self.errors_by_step[i - 1]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "method": self.method,
            "surrogate": self.surrogate,
            "flagged": self.flagged,
            "denoiser_failures": self.denoiser_failures,
            "initial_error": None if self.initial_error is None else self.initial_error.to_dict(),
            "final_error": self.final_error.to_dict(),
            "errors_by_step": [e.to_dict() for e in self.errors_by_step],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        init = d.get("initial_error")
        return cls(
            sample_id=d["sample_id"],
            method=d["method"],
            surrogate=d["surrogate"],
            errors_by_step=[CalibrationError.from_dict(e) for e in d["errors_by_step"]],
            final_error=CalibrationError.from_dict(d["final_error"]),
            initial_error=None if init is None else CalibrationError.from_dict(init),
            flagged=d.get("flagged", False),
            denoiser_failures=d.get("denoiser_failures", 0),
        )


def threshold_rates(errors: list[CalibrationError]) -> tuple[float, float]:
    """Percent of samples under 3 deg / 3 cm and under 5 deg / 5 cm (strict)."""
    if not errors:
        raise ValueError("threshold_rates needs at least one error")
    n = len(errors)
    r3 = sum(1 for e in errors if e.rot_rmse < 3.0 and e.trans_rmse < 3.0)
    r5 = sum(1 for e in errors if e.rot_rmse < 5.0 and e.trans_rmse < 5.0)
    return 100.0 * r3 / n, 100.0 * r5 / n


def is_monotone(record: RunRecord, steps=STABILITY_STEPS) -> bool:
    errs = [record.step(i) for i in steps]
    rot = all(a.rot_rmse >= b.rot_rmse for a, b in zip(errs, errs[1:]))
    trans = all(a.trans_rmse >= b.trans_rmse for a, b in zip(errs, errs[1:]))
    return rot and trans


def stability_rho(records: list[RunRecord]) -> float:
    """Percent of records whose rotation and translation RMSE are both
    non-increasing across evaluations 2, 5 and 10."""
    if not records:
        raise ValueError("stability_rho needs at least one record")
    return 100.0 * sum(is_monotone(r) for r in records) / len(records)


@dataclass
class MethodSummary:
    surrogate: str
    method: str
    n_samples: int
    n_flagged: int
    rot_rmse_mean: float
    rot_rmse_median: float
    trans_rmse_mean: float
    trans_rmse_median: float
    rate_3deg3cm: float
    rate_5deg5cm: float
    rho_percent: float | None  # None when undefined (single step)


@dataclass
class AggregateReport:
    rows: list[MethodSummary] = field(default_factory=list)

    COLUMNS = (
        "surrogate", "method", "n", "flagged",
        "rot_rmse_mean", "rot_rmse_median", "trans_rmse_mean", "trans_rmse_median",
        "3deg3cm", "5deg5cm", "rho",
    )  # fmt: skip

    def row(self, surrogate: str, method: str) -> MethodSummary:
        for r in self.rows:
            if r.surrogate == surrogate and r.method == method:
                return r
        raise KeyError((surrogate, method))

    def table_rows(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            out.append([
                r.surrogate, r.method, str(r.n_samples), str(r.n_flagged),
                _fmt(r.rot_rmse_mean), _fmt(r.rot_rmse_median),
                _fmt(r.trans_rmse_mean), _fmt(r.trans_rmse_median),
                _fmt(r.rate_3deg3cm, 2), _fmt(r.rate_5deg5cm, 2), _fmt(r.rho_percent, 2),
            ])  # fmt: skip
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        w.writerows(self.table_rows())
        return buf.getvalue()

    def to_text(self) -> str:
        return format_table(list(self.COLUMNS), self.table_rows())


def _fmt(v, digits: int = 4) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "N/A"
    return f"{v:.{digits}f}"


def format_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def summarize(records: list[RunRecord]) -> MethodSummary:
    """Summary for records sharing one (surrogate, method) pair.

    Flagged records are counted but excluded from means, rates and rho.
    """
    if not records:
        raise ValueError("cannot summarise an empty record set")
    good = [r for r in records if not r.flagged]
    finals = [r.final_error for r in good]
    nan = float("nan")
    if finals:
        rot = np.array([e.rot_rmse for e in finals])
        tr = np.array([e.trans_rmse for e in finals])
        r3, r5 = threshold_rates(finals)
        stats = (float(rot.mean()), float(np.median(rot)), float(tr.mean()), float(np.median(tr)))
    else:
        r3 = r5 = nan
        stats = (nan, nan, nan, nan)
    steps_needed = max(STABILITY_STEPS)
    if good and all(len(r.errors_by_step) >= steps_needed for r in good):
        rho = stability_rho(good)
    else:
        rho = None
    return MethodSummary(
        records[0].surrogate, records[0].method, len(records), len(records) - len(good),
        *stats, r3, r5, rho,
    )  # fmt: skip


def aggregate(records: list[RunRecord]) -> AggregateReport:
    """One summary row per (surrogate, method), in first-appearance order."""
    if not records:
        raise ValueError("aggregate needs at least one record")
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.surrogate, r.method), []).append(r)
    return AggregateReport([summarize(g) for g in groups.values()])
