import math

import numpy as np
import pytest

from ldpvlm.pipeline.report import (REPORT_COLUMNS, RunRecord, RunReport, emit_report, read_report,
                                    report_from_json)


def record(**kw):
    base = dict(task="data_collection", level="latent", method="vlm", central_epsilon=math.inf,
                local_epsilon=10.0, accuracy_kind="clean", trial_values=[0.1, 0.2, 0.4],
                seeds=[1, 2, 3], epsilon_x=7.0, epsilon_y=3.0, bound=1 / 3)
    base.update(kw)
    return RunRecord(**base)


def test_empty_report_is_header_only():
    assert emit_report(RunReport()) == ",".join(REPORT_COLUMNS) + "\n"


def test_std_uses_sample_denominator():
    r = record()
    assert r.std == pytest.approx(np.std([0.1, 0.2, 0.4], ddof=1))
    assert math.isnan(record(trial_values=[0.5]).std)
    assert math.isnan(record(trial_values=[]).mean)


def test_csv_round_trip_is_exact():
    rep = RunReport([record(), record(method="laplace", epsilon_per_feature=0.3, status="failed")])
    rows = read_report(emit_report(rep, "csv"), fmt="csv")
    assert rows[0]["bound"] == 1 / 3
    assert rows[0]["trial_values"] == [0.1, 0.2, 0.4]
    assert math.isinf(rows[0]["central_epsilon"])
    assert math.isnan(rows[0]["epsilon_per_feature"])
    assert rows[1]["status"] == "failed"


def test_json_round_trip(tmp_path):
    rep = RunReport([record()], metadata={"seed": 3}, failures=[{"cell": "x"}])
    path = tmp_path / "r.json"
    emit_report(rep, "json", path)
    back = report_from_json(path)
    assert back.metadata == {"seed": 3} and back.failures == [{"cell": "x"}]
    assert emit_report(back, "json") == path.read_text()
    assert read_report(path)[0]["mean"] == pytest.approx(record().mean)


def test_find_and_get():
    rep = RunReport([record(), record(accuracy_kind="private")])
    assert rep.get(accuracy_kind="private").accuracy_kind == "private"
    with pytest.raises(KeyError):
        rep.get(method="vlm")


def test_unknown_format():
    with pytest.raises(ValueError):
        emit_report(RunReport(), "xml")


def test_wall_time_not_emitted():
    assert "wall_time" not in REPORT_COLUMNS
