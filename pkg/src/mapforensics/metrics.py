"""Binary-classification metrics over a confusion matrix.

All metrics are held as exact rationals; floating point never enters the
arithmetic. Display rounding is pinned to two half-up stages (4 decimals,
then 3) so values sitting just under a midpoint at full precision still
match figures that were rounded in two steps, e.g. 616/702 = 0.87749...
prints as 0.878.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

from .errors import EmptyMatrixError, ManifestFormatError

POSITIVE_LABEL = "ai_generated"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts for the positive class ai_generated.

    tp: ai predicted ai, fp: human predicted ai,
    fn: ai predicted human, tn: human predicted human.
    """

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative int, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    """Exact metric values; a field is None where its denominator is zero."""

    matrix: ConfusionMatrix
    accuracy: Fraction
    precision: Fraction | None
    recall: Fraction | None
    f1: Fraction | None


def compute_metrics(matrix: ConfusionMatrix) -> MetricsReport:
    if matrix.total == 0:
        raise EmptyMatrixError("confusion matrix has no observations")
    tp, fp, fn, tn = matrix.tp, matrix.fp, matrix.fn, matrix.tn
    accuracy = Fraction(tp + tn, matrix.total)
    precision = Fraction(tp, tp + fp) if tp + fp else None
    recall = Fraction(tp, tp + fn) if tp + fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(
        matrix=matrix, accuracy=accuracy, precision=precision, recall=recall, f1=f1
    )


def display_round(value: Fraction, places: int = 3) -> Decimal:
    """Round half-up to `places` via an intermediate at `places + 1`.

    Both stages round half-up. The extra stage is the convention used for
    all human-facing output here; exact values stay untouched elsewhere.
    """
    d = Decimal(value.numerator) / Decimal(value.denominator)
    mid = d.quantize(Decimal(1).scaleb(-(places + 1)), rounding=ROUND_HALF_UP)
    return mid.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def format_metric(value: Fraction | None, places: int = 3) -> str:
    return "n/a" if value is None else str(display_round(value, places))


_METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


def render_report(report: MetricsReport) -> str:
    """Human-facing table: matrix rows are predictions, columns are truth."""
    m = report.matrix
    width = max(len(str(v)) for v in (m.tp, m.fp, m.fn, m.tn))
    width = max(width, len("actual ai"))
    lines = [
        f"positive class: {POSITIVE_LABEL}",
        f"observations: {m.total}",
        "",
        f"{'':>16} {'actual ai':>{width}} {'actual human':>{width + 3}}",
        f"{'predicted ai':>16} {m.tp:>{width}} {m.fp:>{width + 3}}",
        f"{'predicted human':>16} {m.fn:>{width}} {m.tn:>{width + 3}}",
        "",
    ]
    for name in _METRIC_NAMES:
        lines.append(f"{name:<9} {format_metric(getattr(report, name))}")
    return "\n".join(lines) + "\n"


def render_machine(report: MetricsReport) -> str:
    """Lossless key=value form; rationals serialize as numerator/denominator."""
    m = report.matrix
    lines = [f"tp={m.tp}", f"fp={m.fp}", f"fn={m.fn}", f"tn={m.tn}"]
    for name in _METRIC_NAMES:
        value = getattr(report, name)
        text = "n/a" if value is None else f"{value.numerator}/{value.denominator}"
        lines.append(f"{name}={text}")
    return "\n".join(lines) + "\n"


def parse_machine(text: str) -> MetricsReport:
    """Inverse of render_machine; recomputes nothing, trusts the counts."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ManifestFormatError(f"line {lineno}: expected key=value, got {line!r}")
        values[key] = value
    try:
        matrix = ConfusionMatrix(
            tp=int(values["tp"]), fp=int(values["fp"]), fn=int(values["fn"]), tn=int(values["tn"])
        )
    except KeyError as exc:
        raise ManifestFormatError(f"missing confusion matrix field {exc}") from exc
    except ValueError as exc:
        raise ManifestFormatError(f"bad confusion matrix value: {exc}") from exc

    def parse_fraction(key: str) -> Fraction | None:
        raw = values.get(key)
        if raw is None:
            raise ManifestFormatError(f"missing metric field {key!r}")
        if raw == "n/a":
            return None
        num, sep, den = raw.partition("/")
        try:
            return Fraction(int(num), int(den)) if sep else Fraction(int(num))
        except (ValueError, ZeroDivisionError) as exc:
            raise ManifestFormatError(f"bad value for {key!r}: {raw!r}") from exc

    return MetricsReport(
        matrix=matrix,
        accuracy=parse_fraction("accuracy"),
        precision=parse_fraction("precision"),
        recall=parse_fraction("recall"),
        f1=parse_fraction("f1"),
    )
