import cmath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mplc.errors import DegenerateFieldError, FileFormatError, GridMismatchError, PreconditionError
from mplc.field import ComplexField
from mplc.modes import ModeSpec, Superposition, gaussian, mode_field
from mplc.projector import (
    CrosstalkMatrix,
    DesignStore,
    ThroughputModel,
    crosstalk_matrix,
    efficiency_csv,
    project,
    throughput,
    visibility,
)
from mplc.wfm import WfmConfig, fiber_target

W0 = 0.94e-3
SPACINGS = [0.8] * 3


@pytest.fixture(scope="module")
def lg10_design(grid, store):
    return store.get(ModeSpec("LG", 1, 0), grid, WfmConfig(), SPACINGS, W0)


def test_visibility_examples():
    assert visibility(np.eye(5)) == 1.0
    assert visibility(np.ones((4, 4))) == pytest.approx(0.25)
    C = np.full((3, 3), 0.045 / 6)
    np.fill_diagonal(C, 0.955 / 3)
    assert visibility(C) == pytest.approx(0.955)
    with pytest.raises(DegenerateFieldError):
        visibility(np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_visibility_scale_invariant(seed, k):
    C = np.random.default_rng(seed).uniform(0, 1, (5, 5))
    assert visibility(k * C) == pytest.approx(visibility(C), rel=1e-12)


def test_throughput_examples():
    assert throughput(ThroughputModel(0.75, 3, 0.60)) == pytest.approx(0.253, abs=5e-4)
    assert throughput(ThroughputModel(1.0, 3, 1.0)) == 1.0
    assert throughput(ThroughputModel(0.75, 3, 0.72)) == pytest.approx(0.304, abs=5e-4)
    with pytest.raises(ValueError):
        ThroughputModel(0.0)
    with pytest.raises(ValueError):
        ThroughputModel(0.75, 3, 1.2)


def test_design_projects_its_own_mode(grid, lg10_design):
    f = mode_field(ModeSpec("LG", 1, 0), grid)
    assert project(lg10_design, f) >= 0.999
    assert project(lg10_design, f) == pytest.approx(lg10_design.achieved_overlap, abs=1e-12)


def test_opposite_charge_is_rejected(grid, lg10_design):
    assert project(lg10_design, mode_field(ModeSpec("LG", -1, 0), grid)) <= 0.02


def test_empty_field_projects_to_zero(grid, lg10_design):
    assert project(lg10_design, ComplexField.zeros(grid)) == 0.0


def test_project_global_phase_invariant(grid, lg10_design):
    f = mode_field(ModeSpec("LG", 1, 1), grid)
    base = project(lg10_design, f)
    for phi in (0.3, 2.0, -2.9):
        rotated = ComplexField(grid, cmath.exp(1j * phi) * f.amplitude)
        assert project(lg10_design, rotated) == pytest.approx(base, abs=1e-12)


def test_misalignment_lowers_coupling(grid, lg10_design):
    f = mode_field(ModeSpec("LG", 1, 0), grid)
    aligned = project(lg10_design, f)
    assert project(lg10_design, f, shift_px=(1, 0)) < aligned
    assert project(lg10_design, f, waist_scale=1.1) < aligned


def test_project_grid_mismatch(small_grid, lg10_design):
    with pytest.raises(GridMismatchError):
        project(lg10_design, gaussian(small_grid))


def test_gaussian_crosstalk_is_trivial(grid, store):
    C = crosstalk_matrix([ModeSpec("LG", 0, 0)], grid=grid, store=store)
    assert C.values.shape == (1, 1) and C.values[0, 0] >= 0.999
    assert C.converged == [True]


def test_crosstalk_pair_rows_bounded(grid, store):
    specs = [ModeSpec("LG", 1, 0), ModeSpec("LG", -1, 0), ModeSpec("LG", 0, 0)]
    C = crosstalk_matrix(specs, grid=grid, store=store)
    assert C.labels == ["LG(1,0)", "LG(-1,0)", "LG(0,0)"]
    assert np.all(C.values >= 0) and np.all(C.values <= 1 + 1e-6)
    # each projector is a unit vector, so its couplings to orthonormal inputs sum to <= 1
    assert np.all(C.values.sum(axis=1) <= 1 + 1e-6)
    assert np.all(np.diag(C.values) >= 0.999)


def test_crosstalk_rejects_non_orthogonal_set(grid):
    specs = [ModeSpec("LG", 0, 0), ModeSpec("LG", 0, 0, 1.0e-3)]
    with pytest.raises(PreconditionError):
        crosstalk_matrix(specs, grid=grid)


def test_crosstalk_groups_need_only_be_orthogonal_within(small_grid):
    # two mutually unbiased pairs: orthogonal within each pair, not across
    a, b = ModeSpec("LG", 1, 0), ModeSpec("LG", -1, 0)
    plus = Superposition((1, 1), (a, b))
    minus = Superposition((1, -1), (a, b))
    cfg = WfmConfig(max_sweeps=1)
    with pytest.raises(PreconditionError):
        crosstalk_matrix([a, b, plus, minus], cfg, grid=small_grid)
    C = crosstalk_matrix([a, b, plus, minus], cfg, grid=small_grid, groups=2)
    assert C.values.shape == (4, 4)
    with pytest.raises(ValueError):
        crosstalk_matrix([a, b, plus], cfg, grid=small_grid, groups=2)


def test_unconverged_rows_are_flagged(small_grid):
    specs = [ModeSpec("LG", 1, 0), ModeSpec("LG", -1, 0)]
    C = crosstalk_matrix(specs, WfmConfig(max_sweeps=1), grid=small_grid, store=DesignStore())
    assert C.converged == [False, False]
    assert C.values.shape == (2, 2)


def test_design_store_reuses_files(tmp_path, small_grid):
    spec = ModeSpec("LG", 1, 0)
    cfg = WfmConfig(max_sweeps=2)
    first = DesignStore(tmp_path)
    d1 = first.get(spec, small_grid, cfg, SPACINGS, W0)
    assert len(first.timings) == 1 and len(list(tmp_path.glob("*.mplc"))) == 1
    assert first.get(spec, small_grid, cfg, SPACINGS, W0) is d1
    second = DesignStore(tmp_path)
    d2 = second.get(spec, small_grid, cfg, SPACINGS, W0)
    assert second.timings == {}
    assert np.array_equal(d1.masks[0].phase, d2.masks[0].phase)
    other = DesignStore.key(spec, small_grid, WfmConfig(max_sweeps=3), SPACINGS, W0)
    assert other != DesignStore.key(spec, small_grid, cfg, SPACINGS, W0)


def test_crosstalk_csv_round_trip(tmp_path):
    C = CrosstalkMatrix(["LG(1,0)", "LG(-1,0)"], [[0.9991, 1.23456789012e-5], [2e-6, 0.999]])
    text = C.to_csv(tmp_path / "c.csv")
    lines = text.splitlines()
    # labels contain commas, so they are quoted
    assert lines[0] == ',"LG(1,0)","LG(-1,0)"'
    assert lines[1] == '"LG(1,0)",0.9991,1.23456789e-05'
    assert lines[-1].startswith("# visibility=")
    assert float(lines[-1].split("=")[1]) == pytest.approx(C.visibility, rel=1e-8)
    back = CrosstalkMatrix.from_csv(tmp_path / "c.csv")
    assert back.labels == C.labels
    assert np.allclose(back.values, C.values, rtol=1e-8)
    assert CrosstalkMatrix.from_csv(text).labels == C.labels


def test_crosstalk_csv_errors(tmp_path):
    with pytest.raises(FileFormatError):
        CrosstalkMatrix.from_csv(",a,b\na,1,0\n")
    with pytest.raises(FileFormatError):
        CrosstalkMatrix.from_csv(",a\na,x\n")
    with pytest.raises(ValueError):
        CrosstalkMatrix(["a"], np.eye(2))


def test_efficiency_csv():
    C = CrosstalkMatrix(["a", "b"], [[0.9, 0.0], [0.0, 0.8]])
    lines = efficiency_csv(C).splitlines()
    assert lines[0] == "mode,coupling,detected_fraction"
    assert lines[1] == f"a,0.9,{0.9 * 0.75**3:.9g}"


def test_fiber_target_scaled_waist_differs(grid):
    a = fiber_target(grid, W0, SPACINGS)
    b = fiber_target(grid, 1.1 * W0, SPACINGS)
    assert abs(np.vdot(a.amplitude, b.amplitude) * grid.pitch**2) < 1
