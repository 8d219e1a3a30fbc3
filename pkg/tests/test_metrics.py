from decimal import Decimal
from fractions import Fraction

import pytest

from mapforensics.errors import EmptyMatrixError, ManifestFormatError
from mapforensics.metrics import (
    ConfusionMatrix,
    compute_metrics,
    display_round,
    format_metric,
    parse_machine,
    render_machine,
    render_report,
)

PUBLISHED = ConfusionMatrix(tp=616, fp=92, fn=86, tn=1135)


class TestComputeMetrics:
    def test_published_matrix_exact_fractions(self):
        report = compute_metrics(PUBLISHED)
        assert report.accuracy == Fraction(1751, 1929)
        assert report.precision == Fraction(616, 708)
        assert report.recall == Fraction(616, 702)
        assert report.f1 == Fraction(2 * 616, 2 * 616 + 92 + 86)

    def test_published_matrix_display_values(self):
        report = compute_metrics(PUBLISHED)
        assert str(display_round(report.accuracy)) == "0.908"
        assert str(display_round(report.precision)) == "0.870"
        assert str(display_round(report.recall)) == "0.878"
        assert str(display_round(report.f1)) == "0.874"

    def test_perfect_classifier(self):
        report = compute_metrics(ConfusionMatrix(tp=50, fp=0, fn=0, tn=50))
        assert report.accuracy == report.precision == report.recall == report.f1 == 1

    def test_constant_negative_classifier(self):
        report = compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=30, tn=70))
        assert report.accuracy == Fraction(7, 10)
        assert report.precision is None  # never predicted positive
        assert report.recall == 0
        assert report.f1 is None

    def test_constant_positive_classifier(self):
        report = compute_metrics(ConfusionMatrix(tp=30, fp=70, fn=0, tn=0))
        assert report.precision == Fraction(3, 10)
        assert report.recall == 1
        assert report.f1 == Fraction(2 * 30, 2 * 30 + 70)

    def test_no_positive_truth_or_predictions(self):
        report = compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=10))
        assert report.accuracy == 1
        assert report.precision is None and report.recall is None and report.f1 is None

    def test_empty_matrix_raises(self):
        with pytest.raises(EmptyMatrixError):
            compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=0))

    def test_counts_must_be_nonnegative_ints(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(tp=-1, fp=0, fn=0, tn=0)
        with pytest.raises(ValueError):
            ConfusionMatrix(tp=1.0, fp=0, fn=0, tn=0)
        with pytest.raises(ValueError):
            ConfusionMatrix(tp=True, fp=0, fn=0, tn=0)

    def test_metrics_scale_invariant(self):
        small = compute_metrics(ConfusionMatrix(tp=6, fp=2, fn=1, tn=11))
        big = compute_metrics(ConfusionMatrix(tp=6 * 7, fp=2 * 7, fn=1 * 7, tn=11 * 7))
        for name in ("accuracy", "precision", "recall", "f1"):
            assert getattr(small, name) == getattr(big, name)

    def test_f1_is_harmonic_mean(self):
        report = compute_metrics(ConfusionMatrix(tp=10, fp=5, fn=3, tn=20))
        p, r = report.precision, report.recall
        assert report.f1 == 2 * p * r / (p + r)
        assert min(p, r) <= report.f1 <= (p + r) / 2

    def test_all_metrics_within_unit_interval(self):
        report = compute_metrics(ConfusionMatrix(tp=3, fp=9, fn=4, tn=2))
        for name in ("accuracy", "precision", "recall", "f1"):
            assert 0 <= getattr(report, name) <= 1


class TestDisplayRounding:
    def test_two_stage_half_up(self):
        # 0.87749... -> 0.8775 at 4 places -> 0.878 at 3; a single-stage
        # half-up round of the same value would give 0.877
        assert str(display_round(Fraction(616, 702))) == "0.878"
        assert str(display_round(Fraction(8775, 10_000))) == "0.878"
        assert str(display_round(Fraction(12345, 100_000))) == "0.124"

    def test_plain_cases_unchanged(self):
        assert str(display_round(Fraction(1, 2))) == "0.500"
        assert str(display_round(Fraction(1, 3))) == "0.333"
        assert str(display_round(Fraction(2, 3))) == "0.667"
        assert str(display_round(Fraction(1))) == "1.000"

    def test_returns_decimal(self):
        assert display_round(Fraction(1, 4)) == Decimal("0.250")

    def test_format_metric_handles_none(self):
        assert format_metric(None) == "n/a"
        assert format_metric(Fraction(1, 8)) == "0.125"


class TestRenderedReport:
    def test_report_orientation_and_values(self):
        text = render_report(compute_metrics(PUBLISHED))
        lines = text.splitlines()
        assert "positive class: ai_generated" in lines[0]
        assert "observations: 1929" in lines[1]
        header = next(line for line in lines if "actual ai" in line)
        assert header.index("actual ai") < header.index("actual human")
        pred_ai = next(line for line in lines if line.strip().startswith("predicted ai"))
        assert "616" in pred_ai and "92" in pred_ai
        pred_human = next(line for line in lines if line.strip().startswith("predicted human"))
        assert "86" in pred_human and "1135" in pred_human
        assert "accuracy  0.908" in text
        assert "precision 0.870" in text
        assert "recall    0.878" in text
        assert "f1        0.874" in text

    def test_report_with_undefined_metrics(self):
        text = render_report(compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=4)))
        assert "precision n/a" in text


class TestMachineFormat:
    def test_round_trip(self):
        report = compute_metrics(PUBLISHED)
        assert parse_machine(render_machine(report)) == report

    def test_round_trip_with_undefined_fields(self):
        report = compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=4))
        assert parse_machine(render_machine(report)) == report

    def test_exact_rationals_serialized(self):
        text = render_machine(compute_metrics(PUBLISHED))
        assert "accuracy=1751/1929" in text
        assert "recall=308/351" in text  # 616/702 in lowest terms

    def test_parse_rejects_malformed_lines(self):
        with pytest.raises(ManifestFormatError):
            parse_machine("tp 616")
        with pytest.raises(ManifestFormatError, match="missing confusion"):
            parse_machine("tp=1\nfp=2\nfn=3")
        with pytest.raises(ManifestFormatError):
            parse_machine("tp=1\nfp=2\nfn=3\ntn=4\naccuracy=half")
