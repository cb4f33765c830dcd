import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infraq.errors import DuplicateGeoid, MissingColumn, NonNumericCell, OutOfRange
from infraq.ingest import (
    COLUMNS,
    FEATURES,
    TractRecord,
    feature_matrix,
    incomes,
    load_tracts,
    write_tracts,
)


def record(geoid="T1", **over):
    base = dict(
        geoid=geoid, city="testville", road_pct=12.5, rail_pct=3.25, house_age_pct=40.0,
        park_pct=8.0, walkability=11.0, poi_density=55.5, heat_days=10.0, pm25_days=2.0,
        median_income=52000.0,
    )
    base.update(over)
    return TractRecord(**base)


def write_raw(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_three_rows_round_trip(tmp_path):
    recs = [record("A"), record("B", road_pct=0.1 + 0.2), record("C", median_income=None)]
    write_tracts(recs, tmp_path / "c.csv")
    assert load_tracts(tmp_path / "c.csv") == recs


def test_missing_walkability_column(tmp_path):
    header = [c for c in COLUMNS if c != "walkability"]
    write_raw(tmp_path / "c.csv", header, [["A", "x"] + ["1"] * (len(header) - 2)])
    with pytest.raises(MissingColumn) as err:
        load_tracts(tmp_path / "c.csv")
    assert err.value.column == "walkability"


def test_road_above_100_is_out_of_range(tmp_path):
    write_tracts([record("A")], tmp_path / "c.csv")
    text = (tmp_path / "c.csv").read_text().replace("12.5", "135.2")
    (tmp_path / "c.csv").write_text(text)
    with pytest.raises(OutOfRange):
        load_tracts(tmp_path / "c.csv")


@pytest.mark.parametrize("bad", ["abc", "nan", ""])
def test_non_numeric_feature_cell(tmp_path, bad):
    write_tracts([record("A")], tmp_path / "c.csv")
    text = (tmp_path / "c.csv").read_text().replace("55.5", bad)
    (tmp_path / "c.csv").write_text(text)
    with pytest.raises(NonNumericCell) as err:
        load_tracts(tmp_path / "c.csv")
    assert err.value.row == 1 and err.value.column == "poi_density"


def test_duplicate_geoid(tmp_path):
    write_tracts([record("A"), record("A")], tmp_path / "c.csv")
    with pytest.raises(DuplicateGeoid):
        load_tracts(tmp_path / "c.csv")


def test_negative_hazard_rejected(tmp_path):
    write_tracts([record("A", heat_days=-1.0)], tmp_path / "c.csv")
    with pytest.raises(OutOfRange):
        load_tracts(tmp_path / "c.csv")


def test_city_override(tmp_path):
    write_tracts([record("A")], tmp_path / "c.csv")
    assert load_tracts(tmp_path / "c.csv", city="other")[0].city == "other"


def test_single_record_matrix():
    rec = record("A")
    fm = feature_matrix([rec])
    assert fm.values.shape == (1, 6)
    assert fm.values[0].tolist() == [getattr(rec, f) for f in FEATURES]


def test_two_records_keep_order():
    fm = feature_matrix([record("B", road_pct=1.0), record("A", road_pct=2.0)])
    assert fm.geoids == ("B", "A")
    assert fm.column("road_pct").tolist() == [1.0, 2.0]


def test_poi_density_passthrough():
    fm = feature_matrix([record("A", poi_density=0.0), record("B", poi_density=812.5)])
    assert fm.values[:, 5].tolist() == [0.0, 812.5]


def test_missing_income_is_nan():
    out = incomes([record("A"), record("B", median_income=None)])
    assert out[0] == 52000.0 and math.isnan(out[1])


pct = st.floats(0, 100, allow_nan=False)
records_strategy = st.lists(
    st.builds(
        lambda i, road, rail, age, park, walk, poi, heat, pm, inc: record(
            f"G{i}", road_pct=road, rail_pct=rail, house_age_pct=age, park_pct=park,
            walkability=walk, poi_density=poi, heat_days=heat, pm25_days=pm, median_income=inc,
        ),
        st.integers(), pct, pct, pct, pct, st.floats(1, 20), st.floats(0, 1e6),
        st.floats(0, 365), st.floats(0, 365), st.none() | st.floats(0, 1e7),
    ),
    min_size=1,
    max_size=8,
    unique_by=lambda r: r.geoid,
)


@given(records_strategy)
def test_write_then_load_is_identity(tmp_path_factory, recs):
    path = tmp_path_factory.mktemp("rt") / "c.csv"
    write_tracts(recs, path)
    assert load_tracts(path) == recs


@given(records_strategy)
def test_feature_matrix_never_permutes(recs):
    fm = feature_matrix(recs)
    expected = np.array([[getattr(r, f) for f in FEATURES] for r in recs])
    assert np.array_equal(fm.values, expected)
    assert fm.geoids == tuple(r.geoid for r in recs)


def test_ragged_rows_are_data_errors(tmp_path):
    from infraq.errors import RaggedRow
    from infraq.synth import planted_city

    path = tmp_path / "t.csv"
    write_tracts(planted_city(5, seed=0), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3] + ["X1,y"]) + "\n")
    with pytest.raises(RaggedRow, match="row 3 has fewer"):
        load_tracts(path)
    path.write_text("\n".join(lines[:3] + [lines[3] + ",extra"]) + "\n")
    with pytest.raises(RaggedRow, match="row 3 has more"):
        load_tracts(path)
