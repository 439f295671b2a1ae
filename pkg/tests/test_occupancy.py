import io
from datetime import date

import pytest

from occtool.occupancy import (
    aggregate,
    calendar_year,
    day_profiles,
    profile_index,
    read_intervals,
    tile_annual_profile,
    write_intervals,
)
from occtool.samples import OccupancySample, read_series, write_series


def _s(ts, count, frame=0):
    return OccupancySample("v", frame, ts, count, 0.9, "detector")


def test_max_reducer_and_gap_filling():
    samples = [_s(0, 0), _s(100, 2), _s(250, 1), _s(950, 3)]
    iv = aggregate(samples, 300, "max")
    assert [(x.k, x.start, x.n, x.occupied) for x in iv] == [
        (0, 0.0, 2, True), (1, 300.0, 0, False), (2, 600.0, 0, False), (3, 900.0, 3, True),
    ]


@pytest.mark.parametrize("reducer,expected", [("mean", 1.0), ("median", 1.0), ("last", 2), ("max", 2)])
def test_reducers(reducer, expected):
    iv = aggregate([_s(0, 0), _s(10, 1), _s(20, 2)], 300, reducer)
    assert iv[0].n == expected


def test_mean_below_one_is_unoccupied():
    iv = aggregate([_s(0, 0), _s(10, 0), _s(20, 1)], 300, "mean")
    assert not iv[0].occupied


def test_explicit_window():
    iv = aggregate([_s(400, 1)], 300, "max", start=0, end=1200)
    assert [x.n for x in iv] == [0, 1, 0, 0]


def test_annual_tiling_round_robin_and_leap_day():
    profiles = [[i] * 288 for i in range(3)]
    year = tile_annual_profile(profiles, 2024)
    assert len(year) == 366 * 288
    assert [x.k for x in year[:3]] == [0, 1, 2]
    assert year[0].n == 0 and year[288].n == 1 and year[576].n == 2 and year[864].n == 0
    # day 366 repeats day 365's profile
    assert year[-1].n == year[364 * 288].n
    assert profile_index(date(2024, 12, 31), 3) == profile_index(date(2024, 12, 30), 3)
    assert len(calendar_year(2023)) == 365


def test_day_profiles_inverse_of_tiling():
    profiles = [[(j // 12) % 3 for j in range(288)], [1] * 288]
    tiled = tile_annual_profile(profiles, [date(2023, 1, 1), date(2023, 1, 2)])
    assert day_profiles(tiled) == profiles


def test_tiling_rejects_wrong_profile_length():
    with pytest.raises(ValueError):
        tile_annual_profile([[1] * 10], 2023)


def test_interval_and_series_csv_round_trip():
    iv = aggregate([_s(0, 1), _s(400, 0), _s(700, 2)], 300, "mean")
    buf = io.StringIO()
    write_intervals(iv, buf)
    buf.seek(0)
    assert read_intervals(buf) == iv

    series = [_s(0.5, 1, 0), _s(1.5, 0, 1)]
    buf = io.StringIO()
    write_series(series, buf)
    buf.seek(0)
    assert read_series(buf) == series


def test_series_state_column_checked():
    bad = "video,frame,ts,count,confidence,source,state\nv,0,0.0,2,0.9,detector,0\n"
    with pytest.raises(ValueError, match="state"):
        read_series(io.StringIO(bad))
