import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmtpp.errors import (
    HorizonError,
    NonFiniteTimeError,
    NonMonotoneTimeError,
    ParseError,
    SchemaError,
    TypeOutOfRangeError,
)
from mmtpp.events import (
    Event,
    EventSequence,
    empirical_quantiles,
    intervals,
    load_jsonl,
    save_jsonl,
    validate_sequence,
)


def seq_from_times(times, horizon=100.0, type_count=3, types=None):
    types = types or [0] * len(times)
    return EventSequence(
        events=tuple(Event(t, k) for t, k in zip(times, types)),
        horizon=horizon,
        type_count=type_count,
    )


increasing_times = st.lists(
    st.floats(min_value=1e-6, max_value=10.0, allow_nan=False), min_size=1, max_size=40
).map(lambda gaps: list(np.cumsum(gaps)))


class TestValidate:
    def test_ordered_ok(self):
        validate_sequence(seq_from_times([1.0, 2.0, 3.0], horizon=5.0))

    def test_tie_reports_first_offending_index(self):
        with pytest.raises(NonMonotoneTimeError) as exc:
            validate_sequence(seq_from_times([1.0, 1.0], horizon=5.0))
        assert exc.value.index == 2

    def test_decreasing(self):
        with pytest.raises(NonMonotoneTimeError) as exc:
            validate_sequence(seq_from_times([1.0, 0.5], horizon=5.0))
        assert exc.value.index == 2

    def test_nonpositive_first_time_is_nonmonotone_at_one(self):
        with pytest.raises(NonMonotoneTimeError) as exc:
            validate_sequence(seq_from_times([0.0, 1.0], horizon=5.0))
        assert exc.value.index == 1

    def test_nonfinite_time(self):
        with pytest.raises(NonFiniteTimeError):
            validate_sequence(seq_from_times([1.0, math.inf], horizon=5.0))

    def test_type_out_of_range(self):
        with pytest.raises(TypeOutOfRangeError):
            validate_sequence(seq_from_times([1.0], types=[7], type_count=3))

    def test_event_beyond_horizon(self):
        with pytest.raises(HorizonError):
            validate_sequence(seq_from_times([1.0, 6.0], horizon=5.0))

    def test_bad_horizon(self):
        with pytest.raises(HorizonError):
            validate_sequence(seq_from_times([1.0], horizon=-1.0))


class TestIntervals:
    def test_virtual_origin(self):
        series = intervals(seq_from_times([1.0, 2.0, 4.0]))
        assert series.intervals.tolist() == [1.0, 1.0, 2.0]
        assert series.adjacent_diffs.tolist() == [0.0, 1.0]

    def test_single_event(self):
        series = intervals(seq_from_times([0.5]))
        assert series.intervals.tolist() == [0.5]
        assert series.adjacent_diffs.size == 0

    def test_hand_subtraction(self):
        # tau = [2, 1, 0.1, 0.15] -> diffs |tau_{i+1} - tau_i|
        series = intervals(seq_from_times([2.0, 3.0, 3.1, 3.25]))
        expected = [abs(1.0 - 2.0), abs(0.1 - 1.0), abs(0.15 - 0.1)]
        assert np.allclose(series.adjacent_diffs, expected)

    def test_arrays_read_only(self):
        series = intervals(seq_from_times([1.0, 2.0]))
        with pytest.raises(ValueError):
            series.intervals[0] = 9.0

    @given(increasing_times)
    def test_sum_of_intervals_recovers_last_time(self, times):
        seq = seq_from_times(times, horizon=float(times[-1]) + 1.0)
        series = intervals(seq)
        total = 0.0
        for tau in series.intervals:
            total += tau
        assert total == pytest.approx(times[-1], abs=1e-9)
        assert len(series.intervals) == len(times)


class TestJsonl:
    def test_round_trip(self, tmp_path):
        seqs = [
            EventSequence(
                events=(
                    Event(0.5, 1, "hello 世界", "img/a.png"),
                    Event(1.25, 0, "", None),
                ),
                horizon=2.0,
                type_count=2,
                time_unit="h",
            )
        ]
        path = tmp_path / "seqs.jsonl"
        save_jsonl(seqs, path)
        assert load_jsonl(path) == seqs

    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = ('{"horizon": 1.0, "type_count": 1, "time_unit": "s", '
                '"events": []}')
        path.write_text(good + "\nnot json\n", encoding="utf-8")
        with pytest.raises(ParseError) as exc:
            load_jsonl(path)
        assert exc.value.line == 2

    def test_schema_error_names_field(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        obj = {"horizon": 1.0, "type_count": 1, "events": []}
        path.write_text(json.dumps(obj) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="time_unit"):
            load_jsonl(path)

    def test_float_precision_survives(self, tmp_path):
        t = 0.1 + 0.2  # not exactly representable in decimal
        path = tmp_path / "seqs.jsonl"
        save_jsonl([seq_from_times([t], horizon=1.0)], path)
        assert load_jsonl(path)[0].events[0].time == t


def test_quantiles_linear_interpolation():
    rows = empirical_quantiles([0.1, 0.2, 0.3, 0.4], [0.5])
    assert rows == [(0.5, 0.25)]
