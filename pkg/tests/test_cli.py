import json
from pathlib import Path

import numpy as np
import pytest

from sonoholo.cli import COMMANDS, help_text, main
from sonoholo.geometry import board_midplane, plate_mesh, write_stl

GOLDEN = Path(__file__).parent / "golden"
MID = board_midplane()


@pytest.fixture
def run(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SONOHOLO_CONFIG", raising=False)

    def _run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    return _run


@pytest.fixture
def focus_json(run):
    assert run("solve", "--points", "0,0,0.1", "--solver", "wgs", "--iters", 100, "--out", "h.json")[0] == 0
    return Path("h.json")


def _activations(path):
    doc = json.loads(Path(path).read_text())
    return np.array([complex(*a) for a in doc["activations"]]), doc


def test_solve_wgs_unit_activations(run, focus_json):
    x, doc = _activations(focus_json)
    assert x.shape == (256,)
    assert np.allclose(np.abs(x), 1.0, atol=1e-12)
    assert doc["solver"] == "wgs" and doc["board"] == {"preset": "bottom"}
    assert doc["frequency"] == 40000.0


def test_field_sizes(run, focus_json):
    code, out, _ = run("field", "--holo", focus_json, "--plane", "xz", "--center", "0,0,0.1",
                       "--size", "0.1,0.1", "--res", 128, "--metric", "pressure", "--out", "f.csv", "--img", "f.ppm")
    assert code == 0
    lines = Path("f.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,pressure"
    assert len(lines) == 1 + 16384
    assert Path("f.ppm").read_bytes().startswith(b"P6\n128 128\n255\n")
    assert len(Path("f.ppm").read_bytes()) == len(b"P6\n128 128\n255\n") + 3 * 128 * 128


def test_field_focus_peak(run, focus_json):
    run("field", "--holo", focus_json, "--plane", "xz", "--center", "0,0,0.1", "--size", "0.1,0.1",
        "--res", 64, "--out", "f.csv")
    data = np.loadtxt("f.csv", delimiter=",", skiprows=1)
    peak = data[np.argmax(data[:, 3]), :3]
    assert np.linalg.norm(peak - [0, 0, 0.1]) < 343 / 40000 / 2


def test_analyze_reports_every_metric(run, focus_json):
    code, out, _ = run("analyze", "--holo", focus_json, "--points", "0,0,0.1", "--points", "0.01,0,0.1")
    assert code == 0
    rows = out.strip().splitlines()
    assert rows[0] == "x,y,z,pressure,phase,gorkov,fx,fy,fz,stiffness"
    assert len(rows) == 3
    assert float(rows[1].split(",")[3]) > float(rows[2].split(",")[3])


def test_stream_file_sink(run, focus_json):
    code, out, _ = run("stream", "--holo", focus_json, "--sink", "file:frames.bin", "--frames", 20,
                       "--rate", 2000, "--report", "r.json")
    assert code == 0
    assert Path("frames.bin").stat().st_size == 20 * 523
    report = json.loads(Path("r.json").read_text())
    assert report["frames"] == 20


def test_mesh_info(run, tmp_path):
    write_stl(tmp_path / "p.stl", plate_mesh(0.1, 0.05, 4, 2))
    code, out, _ = run("mesh-info", "p.stl", "--translate", "0,0,-0.01")
    info = json.loads(out)
    assert code == 0
    assert info["triangles"] == 16
    assert info["total_area_m2"] == pytest.approx(0.005)
    assert info["bounds_min"][2] == pytest.approx(-0.01)
    assert info["meets_quarter_wavelength"] is False


def test_bench(run):
    code, out, _ = run("bench", "--n-points", 50, "--repetitions", 3, "--out", "b.json")
    assert code == 0
    report = json.loads(Path("b.json").read_text())
    assert report["n_points"] == 50 and report["repetitions"] == 3


def test_points_file_and_roles(run):
    Path("pts.csv").write_text("x,y,z,role\n-0.02,0,0.12,focus\n0.02,0,0.12,trap\n")
    code, _, _ = run("solve", "--board", "two-opposed", "--points-file", "pts.csv", "--objective",
                     "pressure-plus-trap", "--lambda", 1.32e10, "--iters", 50, "--out", "t.json",
                     "--loss-trace", "loss.csv")
    assert code == 0
    _, doc = _activations("t.json")
    assert doc["roles"] == ["focus", "trap"]
    # header, the starting iterate, then one row per iteration
    assert len(Path("loss.csv").read_text().splitlines()) == 2 + 50


@pytest.mark.filterwarnings("ignore:mesh edge")
def test_dual_trap_target(run, tmp_path):
    write_stl(tmp_path / "reflector.stl", plate_mesh(0.16, 0.16, 32, 32, z=MID))
    code, out, err = run("solve", "--board", "top", "--bem", "reflector.stl", "--objective", "dual-trap-target",
                         "--points", f"trap:-0.02,0,{MID + 0.03}", "--points", f"target:0.02,0,{MID + 0.03}",
                         "--utarget", -1e-7, "--lambda", 7e8, "--lr", 1, "--iters", 1000, "--out", "d.json",
                         "--loss-trace", "loss.csv")
    assert code == 0, err
    _, doc = _activations("d.json")
    u_trap, u_target = doc["achieved"]["gorkov"]
    assert abs(u_target - -1e-7) <= 0.05e-7
    assert u_trap < u_target
    assert doc["propagator"]["kind"] == "bem"
    assert len(Path("loss.csv").read_text().splitlines()) == 1002


@pytest.mark.filterwarnings("ignore:mesh edge")
def test_propagator_swap_only_changes_flag(run, tmp_path):
    write_stl(tmp_path / "plate.stl", plate_mesh(0.1, 0.1, 8, 8, z=MID))
    common = ["solve", "--board", "top", "--points", f"0,0,{MID + 0.05}", "--bem", "plate.stl"]
    assert run(*common, "--propagator", "piston", "--out", "p.json")[0] == 0
    assert run(*common, "--propagator", "bem", "--out", "b.json")[0] == 0
    assert json.loads(Path("p.json").read_text())["propagator"] == {"kind": "piston"}
    assert json.loads(Path("b.json").read_text())["propagator"]["kind"] == "bem"


def test_determinism(run, focus_json):
    outputs = []
    for i in range(2):
        run("solve", "--points", "0,0,0.1", "--points", "0.01,0,0.08", "--objective", "focus-pressure",
            "--iters", 100, "--seed", 3, "--out", f"h{i}.json")
        run("field", "--holo", f"h{i}.json", "--plane", "xy", "--center", "0,0,0.1", "--size", 0.05,
            "--res", 24, "--metric", "pressure,gorkov,force", "--out", f"f{i}.csv", "--img", f"f{i}.ppm")
        outputs.append([Path(f"{n}{i}.{e}").read_bytes() for n, e in (("h", "json"), ("f", "csv"), ("f", "ppm"))])
    assert outputs[0] == outputs[1]


def test_seed_changes_result(run):
    for seed in (1, 2):
        run("solve", "--points", "0,0,0.1", "--points", "0.01,0,0.08", "--objective", "focus-pressure",
            "--iters", 5, "--seed", seed, "--out", f"s{seed}.json")
    assert Path("s1.json").read_bytes() != Path("s2.json").read_bytes()


def test_config_env(run, tmp_path, monkeypatch):
    (tmp_path / "medium.cfg").write_text("c0 = 346\n")
    monkeypatch.setenv("SONOHOLO_CONFIG", str(tmp_path / "medium.cfg"))
    assert run("solve", "--points", "0,0,0.1", "--out", "e.json")[0] == 0
    monkeypatch.delenv("SONOHOLO_CONFIG")
    assert run("solve", "--points", "0,0,0.1", "--out", "d.json")[0] == 0
    assert Path("e.json").read_bytes() != Path("d.json").read_bytes()


# ----------------------------------------------------------------- errors


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["solve", "--points", "0,0,0.1", "--solver", "wgs", "--iters", 0, "--out", "x.json"],
        ["stream", "--holo", "h.json", "--rate", 20000],
        ["solve", "--points", "0,0,0.1", "--propagator", "bem", "--out", "x.json"],
        ["frobnicate"],
        ["solve", "--points", "0,0,0.1"],
        ["solve", "--points", "0,0", "--out", "x.json"],
        ["solve", "--points", "0,0,0.1", "--out", "x.json", "--unknown"],
        ["field", "--holo", "h.json", "--plane", "xq", "--out", "f.csv"],
    ],
)
def test_usage_errors_exit_1(run, argv):
    code, _, err = run(*argv)
    assert code == 1
    assert err


@pytest.mark.parametrize(
    "argv,category",
    [
        (["field", "--holo", "missing.json", "--out", "f.csv"], "file-not-found"),
        (["mesh-info", "missing.stl"], "file-not-found"),
        (["mesh-info", "junk.stl"], "parse"),
        (["solve", "--points", "0,0,0.1", "--config", "bad.cfg", "--out", "x.json"], "config"),
        (["solve", "--points-file", "bad.csv", "--out", "x.json"], "parse"),
        (["solve", "--points", "0.00525,0.00525,0", "--out", "x.json"], "field"),
        (["stream", "--holo", "h.json", "--sink", "file:no/such/dir/f.bin", "--retries", 0], "device-link"),
    ],
)
def test_runtime_errors_exit_2(run, focus_json, argv, category):
    Path("junk.stl").write_bytes(b"solid nothing\nfacet normal\n")
    Path("bad.cfg").write_text("c0 = -1\n")
    Path("bad.csv").write_text("x,y,z\n0,0,zero\n")
    code, _, err = run(*argv)
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith(f"sonoholo-error: {category}: ")


# ------------------------------------------------------------------- help


@pytest.mark.parametrize("command", [None, *COMMANDS])
def test_help_golden(monkeypatch, command):
    monkeypatch.setenv("COLUMNS", "100")
    expected = (GOLDEN / f"help_{command or 'main'}.txt").read_text()
    assert help_text(command) == expected


@pytest.mark.parametrize("command", list(COMMANDS))
def test_help_documents_every_flag(command):
    from sonoholo.cli import build_parser

    parser = build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction").choices[command]
    text = sub.format_help()
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        if action.option_strings:
            assert action.help
