from neural_osm.converters import (
    MISSING,
    band_rows,
    build_candidate_features,
    candidate_row,
    format_value,
    neighbour_row,
    render_table,
)
from neural_osm.responses import error, ok
from neural_osm.schemas import BandReport, BandRow, Neighbour


def test_format_value():
    assert format_value(0.5) == "0.5000"
    assert format_value(None) == MISSING


def test_render_table_pads_columns():
    text = render_table(["word", "n"], [["a", "10"], ["longer", "2"]])
    lines = text.splitlines()
    assert lines[0] == "word    n"
    assert lines[1] == "------  --"
    assert lines[3] == "longer  2"


def test_candidate_features_round_trip_exact_values():
    result = ok({"candidate": 1, "log_align": -1.2345678901234567, "log_word": -0.1})
    features = build_candidate_features("4", result)
    assert features.candidate == 1
    row = candidate_row("4", 1, result)
    assert float(row[2]) == -1.2345678901234567
    assert row[-1] == ""


def test_failed_candidate_row():
    result = error("CONTRACT_ERROR", "bad alignment")
    assert build_candidate_features("0", result) is None
    assert candidate_row("0", 3, result) == ["0", "3", MISSING, MISSING, "CONTRACT_ERROR"]


def test_neighbour_row():
    assert neighbour_row("kass", None) == ["kass", MISSING]
    assert neighbour_row("kass", [Neighbour(word="koer", similarity=0.75)]) == ["kass", "koer:0.7500"]


def test_band_rows_render_missing_values():
    report = BandReport(
        title="t",
        metrics=["tag", "lemma"],
        rows=[BandRow(band="0-4", words=2, values={"tag": None, "lemma": 0.25})],
    )
    assert band_rows(report) == [["0-4", "2", MISSING, "0.2500"]]
