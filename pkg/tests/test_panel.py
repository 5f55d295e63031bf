import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridcast import fixture_path
from hybridcast.panel import (CAMEO_CODES, EventPanel, Location, PanelFormatError,
                              PanelValidationError, SeriesKey, empirical_quantile, inverse_log_transform,
                              load_panel, log_transform, save_panel, sparsity_metric)

HEADER = "location_id,lat,lon,event_code,time_index,count\n"


def _write(tmp_path, body, name="p.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    return path


def _rank_quantile(values, tau):
    # closest-ranks interpolation written out by hand
    xs = sorted(values)
    pos = (len(xs) - 1) * tau
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


def test_minimal_file_shape(tmp_path):
    rows = "".join(f"1,10.0,20.0,{c},{t},{t + c}\n" for c in (14, 19) for t in range(3))
    panel = load_panel(_write(tmp_path, rows))
    assert panel.counts.shape == (1, 2, 3)
    assert panel.series(SeriesKey(1, 19))[2] == 21


def test_missing_cell_is_zero(tmp_path):
    rows = "1,10.0,20.0,14,0,4\n1,10.0,20.0,14,2,5\n"
    panel = load_panel(_write(tmp_path, rows))
    assert panel.series(SeriesKey(1, 14)).tolist() == [4, 0, 5]


@pytest.mark.parametrize("row,err", [
    ("1,10.0,20.0,14,0,-1\n", PanelValidationError),
    ("1,10.0,20.0,14,0,abc\n", PanelFormatError),
    ("1,10.0,20.0,14,0\n", PanelFormatError),
    ("1,95.0,20.0,14,0,2\n", PanelValidationError),
    ("1,10.0,20.0,14,0,2\n1,10.0,20.0,14,0,3\n", PanelValidationError),
    ("1,10.0,20.0,14,0,2\n1,11.0,20.0,14,1,3\n", PanelValidationError),
])
def test_bad_rows_rejected(tmp_path, row, err):
    with pytest.raises(err):
        load_panel(_write(tmp_path, row))


def test_format_error_names_the_line(tmp_path):
    with pytest.raises(PanelFormatError, match="line 3"):
        load_panel(_write(tmp_path, "1,10.0,20.0,14,0,2\n1,10.0,20.0,14,1,x\n"))


def test_header_and_cameo_checks(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(PanelFormatError):
        load_panel(bad)
    with pytest.raises(PanelValidationError):
        load_panel(_write(tmp_path, "1,10.0,20.0,99,0,2\n"), cameo=True)
    assert len(CAMEO_CODES) == 20


def test_round_trip(tmp_path):
    panel = load_panel(fixture_path(), cameo=True)
    save_panel(panel, tmp_path / "copy.csv")
    again = load_panel(tmp_path / "copy.csv", cameo=True)
    assert np.array_equal(panel.counts, again.counts)
    assert panel.locations == again.locations
    assert panel.start_index == again.start_index


def test_fixture_layout():
    panel = load_panel(fixture_path(), cameo=True)
    assert panel.counts.shape == (2, 2, 120)
    zero_frac = [sparsity_metric(panel.series(k)) for k in panel]
    assert max(zero_frac) > 0.9 and min(zero_frac) < 0.5


def test_counts_are_read_only():
    panel = EventPanel([Location(0, 0.0, 0.0)], [1], np.ones((1, 1, 4)))
    with pytest.raises(ValueError):
        panel.counts[0, 0, 0] = 5


def test_log_transform_values():
    assert log_transform(0, 1.0) == 0.0
    assert float(log_transform(3, 1.0)) == pytest.approx(1.3863, abs=1e-4)
    with pytest.raises(ValueError):
        log_transform(1, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 5.0))
def test_log_transform_round_trip(count, eps):
    assert inverse_log_transform(log_transform(count, eps), eps) == pytest.approx(count, rel=1e-12, abs=1e-9)


def test_sparsity_examples():
    assert sparsity_metric(np.zeros(10)) == 1.0
    assert sparsity_metric(np.arange(1, 11)) == 0.0
    assert sparsity_metric([0, 0, 0, 5, 0, 2, 0, 0, 0, 0]) == 0.8
    with pytest.raises(ValueError):
        sparsity_metric([])


def test_quantile_examples():
    assert empirical_quantile(np.full(7, 4), 0.3) == 4.0
    assert empirical_quantile(np.arange(1, 101), 0.95) == pytest.approx(95.05, abs=1e-12)
    assert empirical_quantile([0, 0, 0, 0, 10], 0.5) == 0.0
    with pytest.raises(ValueError):
        empirical_quantile([1, 2], 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=40), st.floats(0.01, 0.99))
def test_quantile_matches_rank_oracle(values, tau):
    assert empirical_quantile(values, tau) == pytest.approx(_rank_quantile(values, tau), abs=1e-9)
    assert min(values) <= empirical_quantile(values, tau) <= max(values)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=30))
def test_sparsity_is_zero_fraction(values):
    s = sparsity_metric(values)
    assert 0.0 <= s <= 1.0
    assert s == values.count(0) / len(values)
