import csv

import numpy as np
import pytest

from stencilcomm.cli import main
from stencilcomm.config import ConfigError, load_config, parse_override
from stencilcomm.mhd import FieldState
from stencilcomm.snapshot import read_snapshot, write_snapshot


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config-sha256=")
    return list(csv.DictReader(lines[1:]))


def run(tmp_path, *args):
    return main([*args, "--output-dir", str(tmp_path)])


def test_decompose_inter(tmp_path):
    assert run(tmp_path, "decompose", "--set", "grid=[512,512,512]", "--set", 'counts="1..64"') == 0
    rows = read_csv(tmp_path / "decomposition.csv")
    assert len(rows) == 64
    last = rows[-1]
    assert (last["p1"], last["p2"], last["p3"]) == ("4", "4", "4")
    assert rows[2]["error"]


def test_decompose_intra_and_single(tmp_path):
    assert run(tmp_path, "decompose", "--set", "level='intra'", "--set", "counts=[2,4,8]",
               "--set", "grid=[512,512,512]") == 0
    rows = read_csv(tmp_path / "decomposition.csv")
    assert "C_M''-C_L''" in rows[0]
    assert [r["C_P"] for r in rows] == ["2", "4", "8"]
    assert run(tmp_path, "decompose", "--set", "counts=[1]") == 0
    rows = read_csv(tmp_path / "decomposition.csv")
    assert len(rows) == 1 and (rows[0]["p1"], rows[0]["p2"], rows[0]["p3"]) == ("1", "1", "1")


def test_predict(tmp_path):
    assert run(tmp_path, "predict", "--set", "grid=[1024,1024,1024]", "--set", "counts=[1,2,4,8,16,32,64]") == 0
    rows = read_csv(tmp_path / "scaling.csv")
    assert {r["bound"] for r in rows} == {"compute"}
    assert {float(r["device_time_per_cell_ns"]) for r in rows} == {2.2}
    assert run(tmp_path, "predict", "--set", "grid=[256,256,256]", "--set", "counts=[32,64]") == 0
    rows = read_csv(tmp_path / "scaling.csv")
    assert [r["bound"] for r in rows] == ["compute", "communication"]


def test_predict_tau0_offset(tmp_path):
    run(tmp_path, "predict", "--set", "counts=[1,8]", "--set", "grid=[64,64,64]")
    base = [float(r["time_per_step_ns"]) for r in read_csv(tmp_path / "scaling.csv")]
    run(tmp_path, "predict", "--set", "counts=[1,8]", "--set", "grid=[64,64,64]", "--set", "tau0=1e-6")
    off = [float(r["time_per_step_ns"]) for r in read_csv(tmp_path / "scaling.csv")]
    assert [b - a for a, b in zip(base, off)] == pytest.approx([1000.0, 1000.0])


def test_topology(tmp_path):
    assert run(tmp_path, "topology", "--set", "device_grid=[8,8,8]", "--set", "ranks_per_node=8") == 0
    rows = read_csv(tmp_path / "topology.csv")
    assert len(rows) == 512 and {r["inter_node_faces"] for r in rows} == {"3"}


def test_simulate_counts_and_determinism(tmp_path, capsys):
    args = ["simulate", "--ranks", "8", "--steps", "10", "--set", "grid=[32,32,32]", "--set", "corners=true",
            "--set", "order=2", "--seed", "3"]
    assert run(tmp_path / "a", *args) == 0
    out = capsys.readouterr().out
    assert "messages: 6240" in out  # 26 * 3 * 10 * 8
    assert run(tmp_path / "b", *args) == 0
    a = (tmp_path / "a" / "snapshot.bin").read_bytes()
    assert a == (tmp_path / "b" / "snapshot.bin").read_bytes()
    state, header = read_snapshot(tmp_path / "a" / "snapshot.bin")
    assert np.isfinite(state.interior).all() and header["steps"] == 10
    rows = read_csv(tmp_path / "a" / "timings.csv")
    assert set(rows[0]) == {"rank", "substep", "phase", "nanoseconds"}


def test_simulate_zero_steps_keeps_initial_state(tmp_path):
    assert run(tmp_path, "simulate", "--steps", "0", "--ranks", "2", "--set", "grid=[8,8,16]", "--seed", "5") == 0
    state, _ = read_snapshot(tmp_path / "snapshot.bin")
    assert np.array_equal(state.interior, FieldState.random((8, 8, 16), 3, seed=5).interior)


def test_warmup_steps_are_not_timed(tmp_path, capsys):
    args = ["simulate", "--set", "grid=[8,8,8]", "--set", "order=2", "--set", "warmup=2", "--steps", "1"]
    assert run(tmp_path, *args) == 0
    assert "messages: 54" in capsys.readouterr().out
    rows = read_csv(tmp_path / "timings.csv")
    assert {r["substep"] for r in rows} == {"6", "7", "8"}


def test_verify_live_run(tmp_path, capsys):
    assert run(tmp_path, "verify", "--ranks", "4", "--set", "grid=[16,16,16]") == 0
    out = capsys.readouterr().out
    assert "status: PASS" in out and "max_ulp: 0" in out


def test_verify_snapshots(tmp_path, capsys):
    a = FieldState.random((4, 4, 4), 1, seed=1)
    b = a.copy()
    b.data[2, 2, 2, 2] += 1e-3
    write_snapshot(tmp_path / "a.bin", a)
    write_snapshot(tmp_path / "b.bin", b)
    assert main(["verify", "--model", str(tmp_path / "a.bin"), "--candidate", str(tmp_path / "a.bin")]) == 0
    assert main(["verify", "--model", str(tmp_path / "a.bin"), "--candidate", str(tmp_path / "b.bin")]) == 1
    assert "status: FAIL" in capsys.readouterr().out
    c = FieldState.random((4, 4, 5), 1)
    write_snapshot(tmp_path / "c.bin", c)
    assert main(["verify", "--model", str(tmp_path / "a.bin"), "--candidate", str(tmp_path / "c.bin")]) == 2


def test_config_file_and_errors(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('grid = [16, 16, 16]\nranks = 2\nmapping = "rowwise"\n[physics]\nnu = 0.01\n')
    c = load_config(cfg, {"seed": 4})
    assert c.grid == (16, 16, 16) and c.ranks == 2 and c.physics.nu == 0.01 and c.seed == 4
    assert c.fingerprint() == load_config(cfg, {"seed": 4}).fingerprint()
    assert c.fingerprint() != load_config(cfg, {"seed": 5}).fingerprint()
    (tmp_path / "bad.toml").write_text("bogus = 1\n")
    assert main(["decompose", "--config", str(tmp_path / "bad.toml")]) == 2
    (tmp_path / "bad2.toml").write_text("[physics]\nviscosity = 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad2.toml")
    with pytest.raises(ConfigError):
        load_config(None, {"order": 5})
    with pytest.raises(ConfigError):
        load_config(None, {"mapping": "hilbert"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    assert main(["simulate", "--ranks", "3", "--set", "grid=[16,16,16]"]) == 2
    assert parse_override("physics.eta=0.1") == ("physics", {"eta": 0.1})
    assert parse_override("mapping=rowwise") == ("mapping", "rowwise")


@pytest.mark.parametrize("name", ["verify32.toml", "strong256.toml"])
def test_shipped_configs_load(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / name
    cfg = load_config(path)
    assert cfg.grid in ((32, 32, 32), (256, 256, 256))
