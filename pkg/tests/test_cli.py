import csv
import io
import xml.etree.ElementTree as ET

import pytest

from sigmastab import cli, tuning


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def table(out):
    rows = {}
    for line in out.splitlines():
        parts = line.split(None, 1)
        if len(parts) == 2:
            rows[parts[0]] = parts[1]
    return rows


def read_csv(path):
    lines = path.read_text().splitlines()
    manifest = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    return manifest, list(csv.DictReader(io.StringIO("\n".join(body))))


def manifest_params(manifest):
    out = {}
    for line in manifest[1:]:
        key, _, value = line.lstrip("# ").partition(" = ")
        out[key] = value
    return out


def test_tune_minimal_gains(capsys, tmp_path):
    code, out, _ = run(capsys, "tune", "--mode", "none", "--a", 1, "--b", 1, "--h", 0.1,
                       "--sigma", 3, "--out-dir", tmp_path)
    assert code == 0
    rows = table(out)
    assert float(rows["kp"]) == pytest.approx(3.2596, abs=1e-4)
    assert float(rows["ki"]) == pytest.approx(5.3339, abs=1e-4)
    assert rows["certified"] == "True"
    manifest, data = read_csv(tmp_path / "tuning.csv")
    assert manifest[0] == "# manifest:"
    assert float(data[0]["kp"]) == pytest.approx(3.2596, abs=1e-4)


def test_tune_defaults_to_the_maximal_decay(capsys, tmp_path):
    code, out, _ = run(capsys, "tune", "--h", 0.1, "--out-dir", tmp_path)
    assert code == 0
    assert float(table(out)["sigma"]) == pytest.approx(6.349, abs=1e-3)


def test_design_procedure(capsys, tmp_path):
    code, out, _ = run(capsys, "tune", "--procedure", "--h", 0.1, "--sigma", 20,
                       "--out-dir", tmp_path)
    assert code == 0
    rows = table(out)
    assert float(rows["zeta"]) == pytest.approx(0.83356, abs=1e-5)
    assert float(rows["kp"]) == pytest.approx(192.29, rel=1e-4)


def test_sigma_star_commands(capsys):
    code, out, _ = run(capsys, "sigma-star", "--mode", "fixed-d", "--d", 15, "--h", 0.1)
    assert code == 0 and float(table(out)["sigma_star"]) == pytest.approx(10.904, abs=1e-3)
    code, out, _ = run(capsys, "sigma-star", "--mode", "zeta", "--zeta", "min", "--h", 0.1)
    assert code == 0 and float(table(out)["sigma_star"]) == pytest.approx(23.99, abs=0.01)
    code, out, _ = run(capsys, "sigma-star", "--h", 0.1)
    assert code == 0 and float(table(out)["sigma_star"]) == pytest.approx(6.349, abs=1e-3)


def test_constants(capsys):
    code, out, _ = run(capsys, "constants", "--h", 0.1)
    rows = table(out)
    assert code == 0
    assert float(rows["eta_sup"]) == pytest.approx(2.3994, abs=1e-4)
    assert float(rows["zeta_min"]) == pytest.approx(0.8336, abs=1e-4)
    assert float(rows["sigma_sup"]) == pytest.approx(23.994, abs=1e-3)


def test_simulate_auto_tuned(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--mode", "zeta", "--zeta", "min", "--h", 0.1,
                       "--auto-tune", "--sigma", 10, "--out-dir", tmp_path)
    assert code == 0
    rows = table(out)
    assert 9.0 <= float(rows["sigma_hat"]) <= 10.5
    assert rows["multiplicity"] == "2"
    manifest, data = read_csv(tmp_path / "trace.csv")
    assert manifest_params(manifest)["command"] == "simulate"
    assert {"t", "x", "y1", "s_plus_0", "upsilon_1"} <= set(data[0])


def test_simulate_without_delay(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--h", 0, "--kp", 3, "--ki", 4,
                       "--out-dir", tmp_path)
    assert code == 0
    assert float(table(out)["sigma_hat"]) == pytest.approx(2.0, rel=0.05)


def test_map_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, "map", "--mode", "none", "--h", 0.1, "--sigmas", "0,3",
                       "--kp-range", "0,8", "--ki-range", "0,12", "--resolution", 16,
                       "--format", "svg", "--out-dir", tmp_path)
    assert code == 0
    manifest, bnd = read_csv(tmp_path / "boundaries.csv")
    assert manifest_params(manifest)["sigmas"] == "0.0,3.0"
    assert {r["kind"] for r in bnd} == {"RealRootLine", "ComplexPair"}
    assert {float(r["sigma"]) for r in bnd} == {0.0, 3.0}
    _, reg = read_csv(tmp_path / "regions.csv")
    assert len(reg) == 2 * 16 * 16
    assert any(r["root_count"] == "0" for r in reg if float(r["sigma"]) == 3.0)
    root = ET.parse(tmp_path / "map.svg").getroot()
    assert root.tag.endswith("svg")
    assert root.findall(".//{http://www.w3.org/2000/svg}polyline")


def test_map_is_reproducible(capsys, tmp_path):
    args = ["map", "--mode", "fixed-d", "--d", 15, "--h", 0.1, "--sigmas", "4",
            "--resolution", 16]
    assert run(capsys, *args, "--out-dir", tmp_path / "one")[0] == 0
    assert run(capsys, *args, "--out-dir", tmp_path / "two")[0] == 0
    for name in ("boundaries.csv", "regions.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


@pytest.mark.slow
@pytest.mark.parametrize("argv", [
    ("--mode", "none", "--sigmas", "0,2,4,6"),
    ("--mode", "fixed-d", "--d", 15, "--sigmas", "0,4,8,10.9"),
    ("--mode", "zeta", "--zeta", 0.8336, "--sigmas", "5,10,15,20"),
])
def test_reference_maps(capsys, tmp_path, argv):
    code, _, _ = run(capsys, "map", "--h", 0.1, *argv, "--out-dir", tmp_path)
    assert code == 0
    _, reg = read_csv(tmp_path / "regions.csv")
    sigmas = sorted({float(r["sigma"]) for r in reg})
    assert len(sigmas) == 4
    # the smallest abscissa always has a nonempty region
    assert any(r["root_count"] == "0" and r["mixed"] == "0"
               for r in reg if float(r["sigma"]) == sigmas[0])


def test_config_file_precedence(capsys, tmp_path):
    cfg = tmp_path / "loop.cfg"
    cfg.write_text("# plant\na = 2\nb = 0.5  # gain\nh = 0.2\nsigma = 1.5\n")
    code, _, _ = run(capsys, "tune", "--config", cfg, "--a", 1.5, "--out-dir", tmp_path)
    assert code == 0
    manifest, data = read_csv(tmp_path / "tuning.csv")
    params = manifest_params(manifest)
    assert params["a"] == "1.5" and params["b"] == "0.5"
    assert params["h1"] == params["h2"] == "0.1"
    g = tuning.minimal_gains_no_scatter(1.5, 0.5, 0.2, 1.5)
    assert float(data[0]["kp"]) == pytest.approx(g.kp, rel=1e-12)


@pytest.mark.parametrize("argv", [
    ("tune", "--sigma", "abc"),
    ("tune", "--h", 0.1, "--sigma", 0.2),
    ("tune", "--mode", "fixed-d", "--h", 0.1),
    ("simulate", "--kp", 1),
    ("map", "--kp-range", "5,1", "--ki-range", "0,1"),
    ("tune", "--config", "/nonexistent/loop.cfg"),
])
def test_invalid_input_exits_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert err.startswith("error:")


def test_parse_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["tune", "--mode", "bogus"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        cli.main(["no-such-command"])
    assert info.value.code == 1


def test_numerical_failure_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--h", 0.1, "--kp", 40, "--ki", 0,
                       "--t-end", 60, "--out-dir", tmp_path)
    assert code == 2
    assert "NumericalBlowup" in err


def test_verify_filter(capsys):
    code, out, _ = run(capsys, "verify", "--filter", "constants")
    assert code == 0
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert len(lines) == 1 and "constants" in lines[0]
    assert run(capsys, "verify", "--filter", "no-such-check")[0] == 1


def test_verify_catches_a_wrong_bound(capsys, monkeypatch):
    def flipped(a, h):
        lo, hi = orig(a, h)
        return hi, lo

    orig = tuning.sigma_star_branches
    monkeypatch.setattr(tuning, "sigma_star_branches", flipped)
    code, out, _ = run(capsys, "verify", "--filter", "max-decay-plain")
    assert code == 3
    assert out.startswith("FAIL")
