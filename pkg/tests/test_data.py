import csv
import logging

import numpy as np
import pytest

from drvpp.data import (ExternalQuantileForecaster, Scenario, load_quantile_forecasts, load_scenario,
                        summary_rows, synth_scenario, write_quantile_forecasts, write_results,
                        write_scenario)
from drvpp.errors import DataError
from drvpp.forecast import PersistenceForecaster, QuantileForecast, QuantileGrid
from drvpp.mpc import ControllerMode, TrajectoryLog


def _write(path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _hours(n, start="2024-01-01T00:00:00Z"):
    t0 = np.datetime64(start.rstrip("Z"), "s")
    return [str(t0 + np.timedelta64(h, "h")) + "Z" for h in range(n)]


def _files(tmp_path, n=744, weather_rows=None, price_rows=None):
    ts = _hours(n)
    w = weather_rows or [(t, 5.0, 100.0, 3.0) for t in ts]
    p = price_rows or [(t, 0.1) for t in ts]
    wp, pp = tmp_path / "w.csv", tmp_path / "p.csv"
    _write(wp, ("timestamp", "t2m_c", "ghi_wm2", "wind_ms"), w)
    _write(pp, ("timestamp", "price_eur_kwh"), p)
    return wp, pp


def test_load_31_days(tmp_path):
    wp, pp = _files(tmp_path)
    sc = load_scenario(wp, pp)
    assert len(sc) == 744
    assert sc.timestamps[0] == np.datetime64("2024-01-01T00:00:00")


def test_round_trip(tmp_path):
    sc = synth_scenario(1, 3, "spring")
    write_scenario(sc, tmp_path / "w.csv", tmp_path / "p.csv")
    back = load_scenario(tmp_path / "w.csv", tmp_path / "p.csv", location=sc.location)
    np.testing.assert_array_equal(back.timestamps, sc.timestamps)
    for f in ("t2m", "ghi", "wind", "price"):
        np.testing.assert_array_equal(getattr(back, f), getattr(sc, f))


def test_duplicate_timestamp_names_row(tmp_path):
    ts = _hours(5)
    ts[3] = ts[2]
    wp, pp = _files(tmp_path, 5, weather_rows=[(t, 5, 0, 1) for t in ts])
    with pytest.raises(DataError, match=r"row 5: duplicated timestamp"):
        load_scenario(wp, pp)


def test_gap_names_missing_timestamp(tmp_path):
    ts = _hours(6)
    del ts[3]
    wp, pp = _files(tmp_path, 6, price_rows=[(t, 0.1) for t in ts])
    with pytest.raises(DataError, match=r"row 5: gap .*missing 2024-01-01T03:00:00Z"):
        load_scenario(wp, pp)


def test_non_monotone_timestamps(tmp_path):
    ts = _hours(5)
    ts[3] = "2023-12-31T23:00:00Z"
    wp, pp = _files(tmp_path, 5, weather_rows=[(t, 5, 0, 1) for t in ts])
    with pytest.raises(DataError, match=r"row 5: timestamp .* is not after"):
        load_scenario(wp, pp)


def test_missing_value_and_bad_header(tmp_path):
    ts = _hours(4)
    wp, pp = _files(tmp_path, 4, price_rows=[(t, "nan" if i == 2 else 0.1) for i, t in enumerate(ts)])
    with pytest.raises(DataError, match=r"row 4: missing price_eur_kwh value at"):
        load_scenario(wp, pp)
    _write(pp, ("time", "price"), [(ts[0], 0.1)])
    with pytest.raises(DataError, match="missing column"):
        load_scenario(wp, pp)


def test_negative_irradiance_clamped_with_warning(tmp_path, caplog):
    ts = _hours(4)
    wp, pp = _files(tmp_path, 4, weather_rows=[(t, 5, -1.0 if i == 1 else 50.0, 1) for i, t in enumerate(ts)])
    with caplog.at_level(logging.WARNING, logger="drvpp.data"):
        sc = load_scenario(wp, pp)
    assert sc.ghi[1] == 0.0 and sc.ghi[0] == 50.0
    assert any("clamped 1 negative irradiance" in r.getMessage() for r in caplog.records)


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_scenario(tmp_path / "nope.csv", tmp_path / "nope2.csv")


def test_scenario_alignment_to_common_span(tmp_path):
    ts = _hours(10)
    wp, pp = _files(tmp_path, 10, price_rows=[(t, 0.1) for t in ts[2:8]])
    sc = load_scenario(wp, pp)
    assert len(sc) == 6
    assert str(sc.timestamps[0]) == ts[2].rstrip("Z")


def test_check_window_names_timestamp():
    sc = synth_scenario(0, 2)
    with pytest.raises(DataError, match="missing data from 2024-04-06T00:00:00Z"):
        sc.check_window(0, 60)


def test_synth_deterministic():
    a, b = synth_scenario(5, 4), synth_scenario(5, 4)
    for f in ("t2m", "ghi", "wind", "price"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    c = synth_scenario(6, 4)
    assert not np.array_equal(a.price, c.price)


def test_synth_physical_ranges():
    sc = synth_scenario(2, 20, "spring")
    hours = sc.timestamps.astype("datetime64[h]").astype(np.int64) % 24
    assert np.all(sc.ghi[(hours >= 22) | (hours <= 1)] == 0.0)
    assert np.all(sc.ghi >= 0) and np.all(sc.wind >= 0) and np.all(sc.price > 0)


def test_autumn_colder_than_spring():
    spring = np.mean([synth_scenario(s, 20, "spring").t2m.mean() for s in range(3)])
    autumn = np.mean([synth_scenario(s, 20, "autumn").t2m.mean() for s in range(3)])
    assert autumn < spring


def test_synth_errors():
    with pytest.raises(ValueError):
        synth_scenario(0, 3, "winter")
    with pytest.raises(ValueError):
        synth_scenario(0, 0)


def test_scenario_rejects_irregular_steps():
    ts = np.array(["2024-01-01T00", "2024-01-01T02"], dtype="datetime64[s]")
    with pytest.raises(DataError, match="not hourly"):
        Scenario(ts, [1, 2], [0, 0], [0, 0], [0.1, 0.1])


def test_quantile_csv_round_trip_and_forecaster(tmp_path):
    sc = synth_scenario(0, 13)
    base = PersistenceForecaster(QuantileGrid(), 10, sc.location)
    idx = 11 * 24
    f = base.forecast("price", sc.timestamps, sc.price, idx, 24)
    write_quantile_forecasts(tmp_path / "q.csv", [f])
    table = load_quantile_forecasts(tmp_path / "q.csv")
    ext = ExternalQuantileForecaster(table, fallback=base)
    g = ext.forecast("price", sc.timestamps, sc.price, idx, 24)
    np.testing.assert_allclose(g.values, f.values, rtol=1e-8)
    w = ext.forecast("wind", sc.timestamps, sc.wind, idx, 24)
    np.testing.assert_array_equal(w.values, base.forecast("wind", sc.timestamps, sc.wind, idx, 24).values)
    with pytest.raises(DataError, match="no external price forecast"):
        ext.forecast("price", sc.timestamps, sc.price, idx + 1, 24)


def test_quantile_csv_crossing_rows_sorted(tmp_path):
    f = QuantileForecast("price", np.datetime64("2024-01-01T00", "s"), (0.1, 0.5, 0.9), [[3.0, 1.0, 2.0]])
    write_quantile_forecasts(tmp_path / "q.csv", [f])
    g = load_quantile_forecasts(tmp_path / "q.csv")
    np.testing.assert_array_equal(next(iter(g.values())).values[0], [1.0, 2.0, 3.0])


def _fake_log(mode, revenues):
    log = TrajectoryLog(mode)
    for i, r in enumerate(revenues):
        rec = {c: 0.0 for c in TrajectoryLog.columns}
        rec.update(timestamp=np.datetime64("2024-01-01T00", "s") + np.timedelta64(i, "h"), revenue=r,
                   simultaneous_flow=0, solver_iterations=0)
        log.append(**rec)
    return log


def test_summary_delta_percent():
    fc = ControllerMode("fc")
    dr = ControllerMode("dr", 0.25)
    pf = ControllerMode("pf")
    runs = [(pf, _fake_log(pf, [60.0, 60.0])), (fc, _fake_log(fc, [40.0, 60.0])),
            (dr, _fake_log(dr, [50.0, 52.0]))]
    rows = summary_rows(runs)
    assert rows[0]["delta_pct"] is None
    assert rows[1]["delta_pct"] == 0.0
    assert rows[2]["delta_pct"] == pytest.approx(100.0 * (102.0 - 100.0) / 100.0)
    neg = [(fc, _fake_log(fc, [-50.0])), (dr, _fake_log(dr, [-40.0]))]
    assert summary_rows(neg)[1]["delta_pct"] == pytest.approx(20.0)


def test_write_results_files(tmp_path):
    fc = ControllerMode("fc")
    dr = ControllerMode("dr", 0.5)
    runs = [(fc, _fake_log(fc, [1.0, 2.0, 3.0])), (dr, _fake_log(dr, [1.0, 1.0, 1.0]))]
    write_results(runs, tmp_path / "summary.csv", tmp_path)
    with (tmp_path / "summary.csv").open() as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == 2 and summary[1]["epsilon"] == "0.5"
    with (tmp_path / "timeseries_dr_eps0.5_full.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4 and rows[0] == list(TrajectoryLog.columns)
