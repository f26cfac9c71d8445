import numpy as np
import pytest
from scipy import optimize

from sonoholo.analysis import (
    METRICS,
    AnalysisError,
    GridSpec,
    bench_gorkov,
    force,
    gorkov,
    laplacian_fd,
    propagate,
    read_ppm,
    sample_grid,
    stiffness,
    write_field_csv,
    write_ppm,
)
from sonoholo.core import MediumConfig, ParticleConfig
from sonoholo.geometry import PointSet, board_midplane, plate_mesh, preset_board
from sonoholo.propagators import BemModel, PistonModel, bem_build
from sonoholo.solvers import ObjectiveSpec, gradient_descent_solve, naive, split_roles

CFG = MediumConfig()
LAM = CFG.wavelength
MID = board_midplane()
FOCUS = np.array([-0.02, 0.0, MID])
TRAP = np.array([0.02, 0.0, MID])
AXES = np.vstack([np.eye(3), -np.eye(3)])


@pytest.fixture(scope="module")
def opposed():
    return PistonModel(preset_board("two-opposed"), CFG)


@pytest.fixture(scope="module")
def twin(opposed):
    pts = PointSet([FOCUS, TRAP])
    A, G = opposed.evaluate(pts, 1)
    spec = ObjectiveSpec("pressure-plus-trap", roles=("focus", "trap"), coupling=1.32e10, learning_rate=0.01, iterations=1000)
    return gradient_descent_solve(spec, *split_roles(spec.roles, A, G))


@pytest.fixture(scope="module")
def trap_center(twin, opposed):
    res = optimize.minimize(lambda q: 1e6 * gorkov(twin, [q], opposed)[0], TRAP, method="Nelder-Mead",
                            options=dict(xatol=1e-9, fatol=1e-15, maxiter=4000))
    return res.x


@pytest.fixture(scope="module")
def focus_holo(bottom_model):
    return naive(bottom_model.transfer([[0.0, 0.0, 0.1]]))


# --------------------------------------------------------------- propagate


def test_zero_hologram(bottom_model):
    A = bottom_model.transfer([[0, 0, 0.1], [0.01, 0, 0.05]])
    assert np.array_equal(propagate(np.zeros(256), A), np.zeros(2))


def test_linearity(bottom_model, rng):
    A = bottom_model.transfer(rng.uniform(-0.05, 0.05, (5, 3)) + [0, 0, 0.1])
    x1 = rng.normal(size=256) + 1j * rng.normal(size=256)
    x2 = rng.normal(size=256) + 1j * rng.normal(size=256)
    lhs = propagate(x1 + x2, A)
    assert np.max(np.abs(lhs - propagate(x1, A) - propagate(x2, A))) <= 1e-12 * np.max(np.abs(lhs))


def test_naive_identity(bottom_model):
    A = bottom_model.transfer([[0.02, -0.01, 0.07]])
    assert abs(propagate(naive(A), A)[0]) == pytest.approx(np.abs(A.entries).sum(), rel=1e-9)


def test_conjugate_symmetry(bottom_model, rng):
    # conjugating both drive and propagator conjugates the field
    A = bottom_model.transfer([[0.0, 0.01, 0.09]]).entries
    x = np.exp(1j * rng.uniform(-np.pi, np.pi, 256))
    assert np.allclose(propagate(np.conj(x), np.conj(A)), np.conj(propagate(x, A)), rtol=1e-13)


def test_shape_mismatch(bottom_model):
    with pytest.raises(AnalysisError):
        propagate(np.ones(3), bottom_model.transfer([[0, 0, 0.1]]))


# ----------------------------------------------------------------- gorkov


def test_gorkov_analytic_vs_fd(bottom_model, focus_holo, rng):
    pts = rng.uniform([-0.05, -0.05, 0.03], [0.05, 0.05, 0.15], (100, 3))
    a = gorkov(focus_holo, pts, bottom_model)
    f = gorkov(focus_holo, pts, bottom_model, "finite-difference", step=1e-6)
    assert np.max(np.abs(a - f) / np.abs(a)) < 1e-3


def test_matched_particle_gives_zero(bottom_model, focus_holo):
    p = ParticleConfig(1e-3, CFG.sound_speed_medium, CFG.density_medium)
    assert np.all(gorkov(focus_holo, [[0, 0, 0.1], [0.01, 0, 0.08]], bottom_model, particle=p) == 0.0)


def test_step_floor(bottom_model, focus_holo):
    with pytest.raises(AnalysisError):
        gorkov(focus_holo, [[0, 0, 0.1]], bottom_model, "finite-difference", step=1e-10)
    with pytest.raises(AnalysisError):
        force(focus_holo, [[0, 0, 0.1]], bottom_model, step=1e-12)


def test_unknown_mode(bottom_model, focus_holo):
    with pytest.raises(AnalysisError):
        gorkov(focus_holo, [[0, 0, 0.1]], bottom_model, "symbolic")


def test_twin_trap_potential_minimum(twin, opposed):
    u0 = gorkov(twin, [TRAP], opposed)[0]
    around = gorkov(twin, TRAP + LAM / 10 * AXES, opposed)
    assert u0 < 0
    assert np.all(around > u0)


# ------------------------------------------------------------------ force


def test_force_matches_potential_differences(bottom_model, focus_holo, rng):
    pts = rng.uniform([-0.02, -0.02, 0.05], [0.02, 0.02, 0.12], (6, 3))
    F = force(focus_holo, pts, bottom_model)
    h = 1e-6
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        fd = -(gorkov(focus_holo, pts + e, bottom_model) - gorkov(focus_holo, pts - e, bottom_model)) / (2 * h)
        assert np.max(np.abs(F[:, a] - fd)) / np.max(np.abs(fd)) < 1e-3


def test_force_fd_mode_agrees(bottom_model, focus_holo):
    pts = [[0.004, 0.0, 0.1], [0.0, 0.003, 0.095]]
    a = force(focus_holo, pts, bottom_model)
    f = force(focus_holo, pts, bottom_model, "finite-difference", step=1e-6)
    assert np.max(np.abs(a - f)) / np.max(np.abs(a)) < 1e-3


def test_bem_force_matches_potential_differences(quiet):
    arr = preset_board("top")
    op = bem_build(plate_mesh(0.1, 0.1, 16, 16, z=MID), arr, CFG)
    model = BemModel(op)
    x = naive(model.transfer([[0.0, 0.0, MID + 0.03]]))
    pts = np.array([[0.003, 0.002, MID + 0.02], [-0.01, 0.0, MID + 0.04]])
    F = force(x, pts, model)
    h = 1e-6
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        fd = -(gorkov(x, pts + e, model) - gorkov(x, pts - e, model)) / (2 * h)
        assert np.max(np.abs(F[:, a] - fd)) / np.max(np.abs(fd)) < 1e-3


def test_force_vanishes_at_trap_center(twin, opposed, trap_center, rng):
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    shell = np.linalg.norm(force(twin, trap_center + LAM / 2 * dirs, opposed), axis=1)
    assert np.linalg.norm(force(twin, [trap_center], opposed)[0]) < 1e-3 * shell.max()


def test_force_points_inward(twin, opposed, trap_center):
    probes = LAM / 10 * AXES
    F = force(twin, trap_center + probes, opposed)
    assert np.all(np.einsum("ij,ij->i", F, probes) < 0)


# -------------------------------------------------------------- stiffness


def test_quadratic_laplacian():
    c = 3.5
    func = lambda pts: c * np.sum(pts.positions**2, axis=1)
    out = laplacian_fd(func, [[0.1, -0.2, 0.3], [0.0, 0.0, 0.0]], step=1e-3)
    assert np.allclose(out, 6 * c, rtol=1e-8)


def test_stiffness_positive_at_trap(twin, opposed, trap_center):
    k0 = stiffness(twin, [trap_center], opposed)[0]
    assert k0 > 0
    assert np.all(stiffness(twin, trap_center + LAM / 2 * np.eye(3), opposed) < k0)


def test_stiffness_modes_agree(twin, opposed, trap_center):
    a = stiffness(twin, [trap_center], opposed)[0]
    f = stiffness(twin, [trap_center], opposed, "finite-difference", step=1e-4)[0]
    assert f == pytest.approx(a, rel=1e-3)


# ------------------------------------------------------------------ grids


def test_zero_hologram_grid(bottom_model):
    g = sample_grid(np.zeros(256), bottom_model, GridSpec.plane("xz", (0, 0, 0.1), 0.02, 2))
    assert g.metrics["pressure"].shape == (4,)
    assert np.all(g.metrics["pressure"] == 0)


def test_grid_row_major(bottom_model):
    spec = GridSpec.plane("xz", (0.0, 0.0, 0.1), (0.04, 0.02), (4, 2))
    pos = spec.positions()
    assert np.allclose(pos[:4, 2], pos[0, 2]) and np.all(np.diff(pos[:4, 0]) > 0)
    assert pos[4, 2] > pos[0, 2]
    assert np.allclose(pos[:, 1], 0.0)


def test_grid_spec_validation():
    with pytest.raises(AnalysisError):
        GridSpec.plane("xz", (0, 0, 0), 0.1, 1)
    with pytest.raises(AnalysisError):
        GridSpec((0, 0, 0), (1, 0, 0), (1, 1, 0), (0.1, 0.1), (4, 4))
    with pytest.raises(AnalysisError):
        GridSpec.plane("xw", (0, 0, 0), 0.1, 4)


def test_arbitrary_plane():
    u = np.array([1, 1, 0]) / np.sqrt(2)
    spec = GridSpec((0, 0, 0.1), tuple(u), (0, 0, 1), (0.02, 0.02), (3, 3))
    pos = spec.positions()
    assert np.allclose(pos[:, 0], pos[:, 1])


def test_grid_deterministic(bottom_model, focus_holo, tmp_path):
    spec = GridSpec.plane("xz", (0, 0, 0.1), 0.04, 16)
    out = []
    for i in range(2):
        g = sample_grid(focus_holo, bottom_model, spec, METRICS)
        write_field_csv(g, tmp_path / f"f{i}.csv")
        write_ppm(g, "gorkov", tmp_path / f"f{i}.ppm")
        out.append(((tmp_path / f"f{i}.csv").read_bytes(), (tmp_path / f"f{i}.ppm").read_bytes()))
    assert out[0] == out[1]


def test_focus_grid_argmax(bottom_model, focus_holo):
    g = sample_grid(focus_holo, bottom_model, GridSpec.plane("xz", (0, 0, 0.1), 0.1, 64))
    peak = g.positions[np.argmax(g.metrics["pressure"])]
    assert np.linalg.norm(peak - [0, 0, 0.1]) < LAM / 2


def test_twin_trap_topology(twin, opposed):
    spec = GridSpec.plane("xz", (0.0, 0.0, MID), (0.08, LAM * 1.6), (81, 41))
    g = sample_grid(twin, opposed, spec)
    img = g.image_values("pressure")
    zs = spec.positions()[::81, 2]
    col = lambda x: int(np.argmin(np.abs(spec.positions()[:81, 0] - x)))
    mid = int(np.argmin(np.abs(zs - MID)))
    trap = img[:, col(TRAP[0])]
    # trap: a low cell flanked above and below by lobes at least 3x stronger
    lo = trap[mid - 2 : mid + 3].min()
    assert trap[:mid].max() > 3 * lo and trap[mid + 1 :].max() > 3 * lo
    # focus: a single high-pressure peak at the target height
    focus = img[:, col(FOCUS[0])]
    assert abs(int(np.argmax(focus)) - mid) <= 1


def test_csv_layout(bottom_model, focus_holo, tmp_path):
    g = sample_grid(focus_holo, bottom_model, GridSpec.plane("xy", (0, 0, 0.1), 0.02, 3), ("pressure", "force"))
    path = tmp_path / "f.csv"
    write_field_csv(g, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,pressure,fx,fy,fz"
    assert len(lines) == 10
    assert np.allclose(np.loadtxt(path, delimiter=",", skiprows=1)[:, 3], g.metrics["pressure"])


def test_ppm_and_sidecar(bottom_model, focus_holo, tmp_path):
    spec = GridSpec.plane("xz", (0, 0, 0.1), (0.04, 0.02), (8, 4))
    g = sample_grid(focus_holo, bottom_model, spec, ("pressure", "gorkov"))
    path = tmp_path / "f.ppm"
    write_ppm(g, "pressure", path)
    img = read_ppm(path)
    assert path.read_bytes().startswith(b"P6\n8 4\n255\n")
    assert img.shape == (4, 8, 3)
    side = (tmp_path / "f.ppm.txt").read_text()
    assert "metric=pressure" in side and "sequential" in side
    write_ppm(g, "gorkov", path)
    assert "diverging" in (tmp_path / "f.ppm.txt").read_text()


def test_unknown_metric(bottom_model, focus_holo):
    with pytest.raises(AnalysisError):
        sample_grid(focus_holo, bottom_model, GridSpec.plane("xy", (0, 0, 0.1), 0.02, 2), ("loudness",))


def test_samples_consistent(bottom_model, focus_holo):
    g = sample_grid(focus_holo, bottom_model, GridSpec.plane("xy", (0, 0, 0.1), 0.02, 2), ("pressure", "gorkov"))
    for s in g.samples():
        assert s.amplitude == pytest.approx(abs(s.pressure), rel=1e-14)
        assert s.gorkov is not None and s.force is None


# ------------------------------------------------------------------ bench


def test_bench_report(bottom_model, focus_holo):
    r = bench_gorkov(bottom_model, focus_holo, n_points=200, repetitions=3)
    d = r.as_dict()
    assert len(r.analytic_times) == 3 and len(r.fd_times) == 3
    assert {"best", "median"} <= set(d["analytic_solutions_per_s"])
    assert d["analytic_min_s"] <= d["analytic_median_s"]
    # six offset evaluations plus the centre, within a factor of two
    assert 3.5 <= r.fd_cost_ratio <= 14.0


def test_bench_validation(bottom_model, focus_holo):
    with pytest.raises(AnalysisError):
        bench_gorkov(bottom_model, focus_holo, n_points=0)
