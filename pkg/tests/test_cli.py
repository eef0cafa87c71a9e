import csv
import io
import json
import subprocess
import sys

import pytest

from atomtunnel import cli

BUNDLED = cli.bundled()


def run(*args):
    err = io.StringIO()
    code = cli.run(*args, stream=err)
    return code, err.getvalue()


def test_list_shows_every_bundled_scenario(capsys):
    assert cli.main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == len(BUNDLED) == 7
    assert not any("invalid" in ln for ln in lines)


@pytest.mark.parametrize("name", sorted(BUNDLED))
def test_bundled_scenarios_validate(name):
    code, msg = run(name, None, None, 1, True)
    assert code == 0, msg


def test_missing_unit_is_rejected(tmp_path):
    text = BUNDLED["hartman_scan"].read_text().replace("width = 3 iu", "width = 20")
    p = tmp_path / "bad.scn"
    p.write_text(text)
    code, msg = run(str(p), str(tmp_path / "out"))
    assert code == 2
    assert "barrier.width" in msg and "length" in msg and "um" in msg
    assert f"{p}:" in msg
    assert not (tmp_path / "out").exists()


def test_unknown_key_is_rejected(tmp_path):
    p = tmp_path / "bad.scn"
    text = BUNDLED["hartman_scan"].read_text().replace("width = 3 iu", "width = 3 iu\ncolour = red")
    p.write_text(text)
    code, msg = run(str(p))
    assert code == 2 and "barrier.colour" in msg


def test_missing_file(tmp_path):
    code, msg = run(str(tmp_path / "nope.scn"))
    assert code == 2 and "cannot read" in msg


def test_bad_jobs():
    code, msg = run("hartman_scan", None, None, 0)
    assert code == 2 and "--jobs" in msg


def test_numerical_failure_exit_code(tmp_path):
    text = (BUNDLED["eq1_causality"].read_text()
            .replace("order_low = 2", "order_low = 0").replace("order_high = 6", "order_high = 0")
            .replace("n_omega = 65536", "n_omega = 4096"))
    p = tmp_path / "acausal.scn"
    p.write_text(text)
    code, msg = run(str(p), str(tmp_path / "out"))
    assert code == 3 and "CausalityError" in msg


def read_csv(path):
    with open(path) as fh:
        meta = [ln for ln in fh if ln.startswith("#")]
    with open(path) as fh:
        rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
    return meta, rows[0], rows[1:]


@pytest.fixture(scope="module")
def hartman_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    outs = [base / "a", base / "b"]
    for o in outs:
        code, msg = run("hartman_scan", str(o))
        assert code == 0, msg
    return outs


def test_outputs_and_manifest(hartman_runs):
    out = hartman_runs[0]
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"] == "hartman_scan" and man["kind"] == "scatter_scan"
    assert man["backend"] in ("compiled", "python")
    assert len(man["scenario_hash"]) == 64
    names = [f["name"] for f in man["files"]]
    assert names == ["transfer_vs_E.csv", "hartman.csv"]
    meta, header, rows = read_csv(out / "hartman.csv")
    assert header == ["kappa_d[1]", "width[iu]", "T[1]", "group_delay[iu]", "opaque_limit[iu]",
                      "free_time[iu]"]
    assert len(rows) == 7
    # group delay saturates at the opaque limit for thick barriers
    last = rows[-1]
    assert float(last[3]) == pytest.approx(float(last[4]), rel=0.05)
    _, header, rows = read_csv(out / "transfer_vs_E.csv")
    assert header[0] == "E[iu]" and len(rows) == 291


def test_reruns_are_byte_identical(hartman_runs):
    a, b = hartman_runs
    for name in ("transfer_vs_E.csv", "hartman.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["files"] == mb["files"]


def test_seed_controls_sampling(tmp_path):
    outs = {}
    for tag, seed in (("a", 5), ("b", 5), ("c", 6)):
        code, msg = run("delta_kick_fig2", str(tmp_path / tag), seed)
        assert code == 0, msg
        outs[tag] = (tmp_path / tag / "kick_summary.csv").read_bytes()
    assert outs["a"] == outs["b"] != outs["c"]
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 5


def test_output_selection(tmp_path):
    text = BUNDLED["hartman_scan"].read_text() + "\n[output]\nfiles = hartman.csv\n"
    p = tmp_path / "one.scn"
    p.write_text(text)
    code, msg = run(str(p), str(tmp_path / "out"))
    assert code == 0, msg
    assert sorted(f.name for f in (tmp_path / "out").iterdir()) == ["hartman.csv", "manifest.json"]


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "atomtunnel.cli", "run", "hartman_scan",
                          "--validate-only"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "hartman_scan: ok" in out.stderr


def test_parallel_sweep_matches_serial(tmp_path):
    # a fast, two-height version of the bundled sweep
    text = BUNDLED["fig3_sweep"].read_text()
    text = (text.replace("speed = 0.5 mm/s", "speed = 5 mm/s")
            .replace("n_points = 1024", "n_points = 512"))
    text = "\n".join("heights = 250, 300 nK" if ln.startswith("heights") else ln
                     for ln in text.splitlines()) + "\n"
    p = tmp_path / "small.scn"
    p.write_text(text)
    for jobs in (1, 2):
        code, msg = run(str(p), str(tmp_path / f"j{jobs}"), None, jobs)
        assert code == 0, msg
    for name in ("depth_capture.csv", "transfer_vs_E.csv", "capture_summary.csv"):
        assert (tmp_path / "j1" / name).read_bytes() == (tmp_path / "j2" / name).read_bytes()
    _, header, rows = read_csv(tmp_path / "j1" / "depth_capture.csv")
    assert header == ["barrier_height[nK]", "depth[nK]", "capture_fraction[1]", "n_bound[1]",
                      "n_transferred[1]"]
    assert len(rows) == 2
