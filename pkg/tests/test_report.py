import json

import numpy as np

from bohmexit.report import (
    EVENT_COLUMNS,
    CellRecord,
    ComparisonReport,
    config_hash,
    read_exit_events,
    write_exit_events,
    write_json,
)


def make_report():
    cells = [CellRecord((0,), 60, 0.6, 0.05, 0.58, 0.59, 0.2),
             CellRecord((1,), 40, 0.4, 0.05, None, 0.41, -0.2),
             CellRecord((2,), 0, 0.0, 0.0, 0.0, 0.0, np.inf, independence_z=-np.inf)]
    return ComparisonReport(cells, 100, 100, 3, 50.0, "custom", 1, {"statistic": 0.1, "dof": 1, "p_value": 0.75},
                            extra={"note": 1, "_private": object()}, metadata={"config_hash": "abc"})


def test_cell_record_serialises_infinities():
    d = make_report().cells[2].as_dict()
    assert d["z_score"] == "inf" and d["independence_z"] == "-inf"
    assert "independence_z" not in make_report().cells[0].as_dict()


def test_report_arrays():
    rep = make_report()
    assert np.array_equal(rep.empirical, [0.6, 0.4, 0.0])
    assert np.isnan(rep.flux[1])
    assert rep.max_abs_z(min_pred=0.01) == 0.2
    assert rep.max_abs_z(min_pred=1.0) == 0.0


def test_report_dict_drops_private_extras_and_merges_metadata(tmp_path):
    d = make_report().as_dict()
    assert "_private" not in d["extra"] and d["config_hash"] == "abc"
    path = tmp_path / "r.json"
    write_json(path, d)
    assert json.loads(path.read_text()) == json.loads(json.dumps(d))


def test_config_hash_is_canonical():
    a = {"x": 1, "y": [1.5, 2], "z": {"b": 2, "a": 1}}
    b = {"z": {"a": 1, "b": 2}, "y": [1.5, 2], "x": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "x": 2})
    assert config_hash({"v": np.arange(3)}) == config_hash({"v": [0, 1, 2]})
    assert len(config_hash(a)) == 64


def test_exit_events_round_trip(tmp_path):
    rows = [(0, 1, 12.25, 0.1, -0.2, 49.99, 3), (5, 0, 1 / 3, 1.0, 2.0, 3.0, 0)]
    path = tmp_path / "events.csv"
    write_exit_events(path, rows)
    back = read_exit_events(path)
    assert list(back[0]) == list(EVENT_COLUMNS)
    for row, rec in zip(rows, back):
        vals = [float(rec[c]) for c in EVENT_COLUMNS]
        assert vals == [float(v) for v in row]
