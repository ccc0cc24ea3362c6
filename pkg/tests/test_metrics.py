import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_stats, random_rotation
from slmetro.artifact import ArtifactSpec
from slmetro.fitting import PointGrid
from slmetro.metrics import (
    CRITERIA,
    BenchmarkReport,
    EmptySamples,
    EmptyTrials,
    ErrorSamples,
    InsufficientMarkers,
    MetricTuple,
    NoBallsFound,
    NoBlockFound,
    SummaryStats,
    adjacent_pairs,
    aggregate,
    coplanarity_range,
    detect_markers,
    eval_flatness,
    eval_height,
    eval_length,
    eval_sphericity,
    flatness_residuals,
    is_finite_report,
    marker_centers_3d,
    match_marker_layout,
    passes_coplanarity,
    render_report,
    report_from_trials,
    summarize,
    table_row_cells,
)
from slmetro.pipeline import TrialSettings, plan_trials, simulate_scene


@pytest.fixture(scope="module")
def scenes(calib):
    s = TrialSettings(pipeline="fast")
    plan = plan_trials(1)[0]
    return {k: simulate_scene(k, plan, s, calib) for k in ("flat", "block", "balls")}


# ---------------------------------------------------------------- statistics


def test_summarize_example():
    s = summarize(ErrorSamples("length", [1.0, 5.0, 3.0]))
    assert s.range == 4.0 and s.mean == 3.0 and s.n == 3
    assert s.std == pytest.approx(np.sqrt(8 / 3), rel=1e-15)


def test_summarize_empty():
    with pytest.raises(EmptySamples):
        summarize(ErrorSamples("flatness", []))


def test_error_samples_validation():
    with pytest.raises(ValueError):
        ErrorSamples("roundness", [1.0])
    with pytest.raises(ValueError):
        ErrorSamples("length", [1.0, np.nan])


def test_aggregate_example():
    trials = [SummaryStats(2.0, 1.0, 0.5, 10), SummaryStats(4.0, -1.0, 1.5, 10)]
    with pytest.warns(UserWarning, match="50"):
        mt = aggregate(trials)
    assert (mt.mean_of_range, mt.std_of_range) == (3.0, 1.0)
    assert (mt.mean_of_mean, mt.std_of_mean) == (0.0, 1.0)
    assert (mt.mean_of_std, mt.std_of_std) == (1.0, 0.5)
    assert mt.trials == 2


def test_aggregate_no_warning_at_fifty():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        aggregate([SummaryStats(1.0, 0.0, 0.1, 5)] * 50)


def test_aggregate_empty():
    with pytest.raises(EmptyTrials):
        aggregate([])


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=200))
def test_summarize_matches_brute_force(values):
    s = summarize(ErrorSamples("height", values))
    r, m, sd = brute_stats(values)
    scale = max(1.0, max(abs(v) for v in values))
    assert s.range == pytest.approx(r, abs=1e-12 * scale)
    assert s.mean == pytest.approx(m, abs=1e-12 * scale)
    assert s.std == pytest.approx(sd, abs=1e-9 * scale)


@given(st.lists(st.lists(st.floats(-1, 1), min_size=1, max_size=20), min_size=1, max_size=30))
def test_aggregate_matches_brute_force(sets):
    stats = [summarize(ErrorSamples("length", s)) for s in sets]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mt = aggregate(stats)
    for attr, field in (("mean_of_range", "range"), ("mean_of_mean", "mean"), ("mean_of_std", "std")):
        _, m, _ = brute_stats([getattr(s, field) for s in stats])
        assert getattr(mt, attr) == pytest.approx(m, abs=1e-12)
    _, _, sd = brute_stats([s.mean for s in stats])
    assert mt.std_of_mean == pytest.approx(sd, abs=1e-9)


# ---------------------------------------------------------------- criteria on simulated scenes


def test_length_on_exact_grid(scenes, spec, calib):
    r = scenes["flat"]
    e = eval_length(r.grid, r.texture, spec, calib.camera)
    # 4 x 5 lattice: 4 * 4 horizontal + 3 * 5 vertical neighbours
    assert len(e) == 31
    assert abs(e.values.mean()) < 5e-3
    assert np.max(np.abs(e.values)) < 0.02


def test_markers_all_detected(scenes, spec, calib):
    r = scenes["flat"]
    circles = detect_markers(r.texture, r.grid, spec, calib)
    assert len(circles) == 20
    P, kept = marker_centers_3d(r.grid, circles)
    assert len(kept) == 20
    idx = match_marker_layout(P, spec)
    assert sorted(idx.max(axis=0) + 1) == [4, 5]


def test_flatness_on_exact_grid(scenes, spec, calib):
    r = scenes["flat"]
    circles = detect_markers(r.texture, r.grid, spec, calib)
    e = eval_flatness(r.grid, circles, spec)
    assert len(e) > 100_000
    assert np.max(e.values) < 1e-9


def test_height_and_sphericity_on_exact_grids(scenes, spec, calib):
    b = scenes["block"]
    circles = detect_markers(b.texture, b.grid, spec, calib)
    h = eval_height(b.grid, circles, spec)
    assert len(h) > 1000 and np.max(np.abs(h.values)) < 1e-9
    s = eval_sphericity(scenes["balls"].grid, spec)
    assert len(s) == 12 and np.max(np.abs(s.values)) < 1e-6


def test_blank_texture_has_no_markers(scenes, spec, calib):
    r = scenes["flat"]
    blank = np.full(r.texture.shape, 200.0)
    assert detect_markers(blank, r.grid, spec, calib) == []
    with pytest.raises(InsufficientMarkers):
        eval_length(r.grid, blank, spec, calib.camera)


def test_no_block_and_no_balls_on_flat(scenes, spec):
    g = scenes["flat"].grid
    with pytest.raises(NoBlockFound):
        eval_height(g, [], spec)
    with pytest.raises(NoBallsFound):
        eval_sphericity(g, spec)


def test_flatness_translation_invariant(scenes, spec, calib, rng):
    r = scenes["flat"]
    circles = detect_markers(r.texture, r.grid, spec, calib)
    noisy = PointGrid(r.grid.points + rng.normal(0, 2e-3, r.grid.points.shape), r.grid.valid)
    a = eval_flatness(noisy, circles)
    b = eval_flatness(noisy.transformed(np.eye(3), [3.0, -7.0, 12.0]), circles)
    c = eval_flatness(noisy.transformed(random_rotation(rng), [0.0, 0.0, 5.0]), circles)
    assert np.allclose(a.values, b.values, atol=1e-9)
    assert np.allclose(a.values, c.values, atol=1e-9)


def test_flatness_residuals_are_signed(scenes, spec, calib, rng):
    r = scenes["flat"]
    circles = detect_markers(r.texture, r.grid, spec, calib)
    noisy = PointGrid(r.grid.points + rng.normal(0, 5e-3, r.grid.points.shape), r.grid.valid)
    res, _ = flatness_residuals(noisy, circles)
    assert abs(res.mean()) < 1e-10 and (res < 0).any() and (res > 0).any()


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_layout_matching_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    spec = ArtifactSpec()
    R, t = random_rotation(rng), rng.uniform(-50, 50, 3)
    lat = np.column_stack([spec.marker_positions(), np.zeros(20)])
    idx = match_marker_layout(lat @ R.T + t, spec)
    assert len(adjacent_pairs(idx)) == 31


def test_match_layout_rejects_off_lattice(spec):
    P = np.column_stack([spec.marker_positions(), np.zeros(20)])
    P[3, :2] += 4.0
    with pytest.raises(InsufficientMarkers):
        match_marker_layout(P, spec)
    with pytest.raises(InsufficientMarkers):
        match_marker_layout(P[:1], spec)


def test_match_layout_partial_grid(spec):
    P = np.column_stack([spec.marker_positions(), np.zeros(20)])[[0, 1, 2, 5, 6]]
    idx = match_marker_layout(P, spec)
    assert len(adjacent_pairs(idx)) == 5


# ---------------------------------------------------------------- coplanarity


def test_coplanarity_examples():
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    assert coplanarity_range(P)[0] == pytest.approx(0.0, abs=1e-15)
    Q = P.copy()
    Q[:, 2] = [0.01, -0.01, -0.01, 0.01]
    assert coplanarity_range(Q)[0] == pytest.approx(0.02, abs=1e-15)


@given(st.integers(0, 2**31))
def test_coplanarity_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    P = np.column_stack([rng.uniform(-10, 10, (24, 2)), rng.uniform(-0.02, 0.02, 24)])
    R, t = random_rotation(rng), rng.uniform(-100, 100, 3)
    assert coplanarity_range(P @ R.T + t)[0] == pytest.approx(coplanarity_range(P)[0], abs=1e-9)


def test_pass_rule():
    assert passes_coplanarity(0.005)
    assert not passes_coplanarity(0.025)
    assert not passes_coplanarity(0.010)
    assert passes_coplanarity(0.025, tolerance_um=30)


# ---------------------------------------------------------------- reports


def _report(decimals=2, skip=("sphericity",)):
    recs = []
    for i in range(3):
        st_ = {c: (None if c in skip else SummaryStats(0.01 + 0.001 * i, 0.002 * i, 0.001, 10)) for c in CRITERIA}
        recs.append({"trial": 2 - i, "stats": st_, "errors": {}})
    return report_from_trials(recs, decimals=decimals)


def test_report_skipped_rows():
    table, csv = render_report(_report())
    assert table_row_cells(table, "E_s")[1:] == ["skipped"] * 4
    assert "E_s,skipped,skipped,skipped,skipped,0" in csv
    assert table_row_cells(table, "E_d")[1] == "11.00 μm"


def test_report_csv_and_table_agree():
    table, csv = render_report(_report())
    rows = {line.split(",")[0]: line.split(",")[1:] for line in csv.splitlines()[1:]}
    for label in ("E_d", "E_p", "E_h"):
        cells = [c.replace(" μm", "") for c in table_row_cells(table, label)[1:]]
        assert cells == rows[label][:4]
        assert rows[label][4] == "3"


def test_report_headers_and_units():
    table, _ = render_report(_report())
    header = [c.strip() for c in table.splitlines()[0].split("|")]
    assert header[1:] == ["μ(R)", "σ(R)", "μ(μ)", "σ(μ)"]
    cells = table_row_cells(table, "E_p")
    assert cells[1].endswith(" μm") and cells[3].endswith(" μm")
    assert "μm" not in cells[2] and "μm" not in cells[4]


def test_report_round_trip_json():
    rep = _report()
    back = BenchmarkReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert render_report(back) == render_report(rep)
    assert [r["trial"] for r in back.per_trial] == [0, 1, 2]
    assert is_finite_report(back)


def test_non_finite_report_detected():
    rep = _report()
    rep.metrics["length"] = MetricTuple(float("nan"), 0, 0, 0, 0, 0, 3)
    assert not is_finite_report(rep)
