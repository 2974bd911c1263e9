from __future__ import annotations

import csv
import json
from random import Random

import pytest

from eventqa.corpus import Answer, QuestionCategory
from eventqa.evalkit import (
    AccuracyReport,
    PlotGrouping,
    PredictionRecord,
    ReportFormat,
    ScoringError,
    emit_plot_data,
    emit_report,
    format_accuracy_table,
    score,
)
from eventqa.extract import ExtractedAnswer, ExtractedLabel, ExtractionMethod
from eventqa.promptkit import all_configs, parse_selector


def _extracted(label):
    if label is ExtractedLabel.UNPARSEABLE:
        return ExtractedAnswer(answer=label, method=ExtractionMethod.NONE)
    return ExtractedAnswer(answer=label, method=ExtractionMethod.FALLBACK_FIRST_TOKEN, matched_span=(0, 2))


def make_prediction(instance_id, *, config="zero-text", backend="oracle", gold=Answer.NO,
                    predicted=ExtractedLabel.NO, category=QuestionCategory.CAUSAL):
    return PredictionRecord(
        instance_id=instance_id,
        config=parse_selector(config),
        backend=backend,
        extracted=_extracted(predicted),
        gold=gold,
        category=category,
    )


class TestScore:
    def test_three_of_four_correct(self):
        predictions = [
            make_prediction("a", predicted=ExtractedLabel.NO),
            make_prediction("b", predicted=ExtractedLabel.NO),
            make_prediction("c", predicted=ExtractedLabel.NO),
            make_prediction("d", predicted=ExtractedLabel.YES),
        ]
        report = score(predictions)
        cell = next(iter(report.cells.values()))
        assert cell.n == 4
        assert cell.accuracy == 0.75

    def test_unparseable_never_correct_and_counted(self):
        predictions = [
            make_prediction("a", gold=Answer.NO, predicted=ExtractedLabel.UNPARSEABLE),
            make_prediction("b", gold=Answer.NO, predicted=ExtractedLabel.NO),
        ]
        report = score(predictions)
        cell = next(iter(report.cells.values()))
        assert cell.accuracy == 0.5
        assert cell.unparseable_rate == 0.5

    def test_category_cells_partition_config_cells(self):
        rng = Random(4)
        predictions = [
            make_prediction(
                f"i{i}",
                category=rng.choice(list(QuestionCategory)),
                predicted=rng.choice([ExtractedLabel.YES, ExtractedLabel.NO]),
            )
            for i in range(60)
        ]
        report = score(predictions)
        for key, cell in report.cells.items():
            cluster_n = sum(stats.n for cluster_key, stats in report.cluster_cells.items() if cluster_key[:3] == key)
            cluster_correct = sum(
                stats.correct for cluster_key, stats in report.cluster_cells.items() if cluster_key[:3] == key
            )
            assert cluster_n == cell.n
            assert cluster_correct == cell.correct

    def test_duplicate_prediction_rejected(self):
        predictions = [make_prediction("a"), make_prediction("a")]
        with pytest.raises(ScoringError, match="duplicate"):
            score(predictions)

    def test_permutation_invariance(self):
        rng = Random(11)
        predictions = [
            make_prediction(f"i{i}", config=rng.choice([c.selector for c in all_configs()]),
                            predicted=rng.choice(list(ExtractedLabel)))
            for i in range(40)
        ]
        report_a = score(predictions)
        shuffled = list(predictions)
        rng.shuffle(shuffled)
        report_b = score(shuffled)
        assert {k: (v.n, v.correct) for k, v in report_a.cells.items()} == {
            k: (v.n, v.correct) for k, v in report_b.cells.items()
        }

    def test_concatenation_accuracy_is_weighted_mean(self):
        part_a = [make_prediction(f"a{i}", predicted=ExtractedLabel.NO) for i in range(3)]
        part_b = [make_prediction(f"b{i}", predicted=ExtractedLabel.YES) for i in range(5)]
        cell_a = next(iter(score(part_a).cells.values()))
        cell_b = next(iter(score(part_b).cells.values()))
        combined = next(iter(score(part_a + part_b).cells.values()))
        expected = (cell_a.accuracy * cell_a.n + cell_b.accuracy * cell_b.n) / (cell_a.n + cell_b.n)
        assert combined.accuracy == pytest.approx(expected, abs=0)

    def test_scripted_seven_of_ten(self):
        # Mirrors a mock-backend run scripted to land on exactly 7/10.
        predictions = [
            make_prediction(f"i{i}", predicted=ExtractedLabel.NO if i < 7 else ExtractedLabel.YES)
            for i in range(10)
        ]
        cell = next(iter(score(predictions).cells.values()))
        assert cell.accuracy == 0.70

    def test_correct_count_recoverable_from_accuracy(self):
        rng = Random(2)
        predictions = [
            make_prediction(f"i{i}", predicted=rng.choice([ExtractedLabel.YES, ExtractedLabel.NO]))
            for i in range(37)
        ]
        cell = next(iter(score(predictions).cells.values()))
        assert round(cell.accuracy * cell.n) == cell.correct


def full_grid_predictions():
    rng = Random(5)
    predictions = []
    index = 0
    for config in all_configs():
        for category in QuestionCategory:
            for _ in range(2):
                predictions.append(
                    make_prediction(
                        f"i{index}",
                        config=config.selector,
                        category=category,
                        predicted=rng.choice([ExtractedLabel.YES, ExtractedLabel.NO]),
                    )
                )
                index += 1
    return predictions


class TestEmission:
    def test_csv_row_counts_for_full_grid(self, tmp_path):
        report = score(full_grid_predictions())
        path = tmp_path / "report.csv"
        emit_report(report, ReportFormat.CSV, path)
        rows = list(csv.DictReader(path.read_text().splitlines()))
        config_rows = [r for r in rows if r["category"] == ""]
        cluster_rows = [r for r in rows if r["category"]]
        assert len(config_rows) == 9
        assert len(cluster_rows) == 9 * 13

    def test_single_cell_report(self, tmp_path):
        report = score([make_prediction("a")])
        path = tmp_path / "report.csv"
        emit_report(report, ReportFormat.CSV, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "backend,strategy,modality,category,n,accuracy,unparseable_rate"
        assert len(lines) == 3  # header + config row + one cluster row

    def test_reemission_is_byte_identical(self, tmp_path):
        report = score(full_grid_predictions())
        for fmt, name in ((ReportFormat.CSV, "r.csv"), (ReportFormat.JSON, "r.json")):
            emit_report(report, fmt, tmp_path / name, header={"seed": 1})
            first = (tmp_path / name).read_bytes()
            emit_report(report, fmt, tmp_path / name, header={"seed": 1})
            assert (tmp_path / name).read_bytes() == first

    def test_json_mirrors_csv_content(self, tmp_path):
        report = score(full_grid_predictions())
        emit_report(report, ReportFormat.JSON, tmp_path / "r.json")
        emit_report(report, ReportFormat.CSV, tmp_path / "r.csv")
        payload = json.loads((tmp_path / "r.json").read_text())
        csv_rows = list(csv.DictReader((tmp_path / "r.csv").read_text().splitlines()))
        assert len(payload["cells"]) == 9
        assert len(payload["cluster_cells"]) == 117
        first_json = payload["cells"][0]
        first_csv = csv_rows[0]
        assert first_csv["backend"] == first_json["backend"]
        assert float(first_csv["accuracy"]) == first_json["accuracy"]

    def test_empty_report_rejected(self, tmp_path):
        with pytest.raises(ScoringError):
            emit_report(AccuracyReport(), ReportFormat.CSV, tmp_path / "r.csv")

    def test_plot_data_shape_13_by_3(self, tmp_path):
        # TAG cells only, grouped by strategy: 13 categories x 3 strategies.
        predictions = [p for p in full_grid_predictions() if p.config.modality.value == "tag"]
        report = score(predictions)
        path = tmp_path / "plot.csv"
        emit_plot_data(report, PlotGrouping.BY_STRATEGY, path)
        rows = list(csv.DictReader(path.read_text().splitlines()))
        assert len(rows) == 13 * 3
        assert sorted({row["category"] for row in rows}) == sorted(c.value for c in QuestionCategory)

    def test_plot_data_empty_category_has_zero_n_blank_accuracy(self, tmp_path):
        predictions = [
            make_prediction("a", config="cot-tag", category=QuestionCategory.CAUSAL),
        ]
        report = score(predictions)
        path = tmp_path / "plot.csv"
        emit_plot_data(report, PlotGrouping.BY_STRATEGY, path)
        rows = list(csv.DictReader(path.read_text().splitlines()))
        missing = [row for row in rows if row["category"] == "unknown"]
        assert missing and all(row["n"] == "0" and row["accuracy"] == "" for row in missing)

    def test_plot_categories_alphabetical(self, tmp_path):
        report = score(full_grid_predictions())
        path = tmp_path / "plot.csv"
        emit_plot_data(report, PlotGrouping.BY_STRATEGY, path)
        rows = list(csv.DictReader(path.read_text().splitlines()))
        tag_zero = [row["category"] for row in rows if row["modality"] == "tag" and row["strategy"] == "zero"]
        assert tag_zero == sorted(tag_zero)

    def test_plot_requires_cluster_cells(self, tmp_path):
        with pytest.raises(ScoringError):
            emit_plot_data(AccuracyReport(), PlotGrouping.BY_STRATEGY, tmp_path / "p.csv")

    def test_accuracy_table_has_nine_numbers(self):
        report = score(full_grid_predictions())
        table = format_accuracy_table(report)
        assert "backend: oracle" in table
        assert table.count("0.") == 9
