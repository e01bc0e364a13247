from __future__ import annotations

import subprocess
import sys
from pathlib import Path

from mcinverse.cli import EXIT_INVALID, EXIT_OK, EXIT_THRESHOLD, main
from mcinverse.imageio import load_pfm

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_config(tmp_path, extra=""):
    text = (CONFIGS / "sphere_kd.toml").read_text()
    text = text.replace("resolution = 24", "resolution = 8").replace("count = 8", "count = 2")
    text = text.replace("iterations = 40", "iterations = 3").replace("ref_spp = 256", "ref_spp = 16")
    p = tmp_path / "run.toml"
    p.write_text(text + extra)
    return p


def test_render_writes_aovs(tmp_path, capsys):
    cfg = small_config(tmp_path)
    rc = main(["render", "--scene", str(cfg), "--spp", "4", "--out", str(tmp_path / "r")])
    assert rc == EXIT_OK
    for name in ("cd", "cs", "albedo", "normal", "depth", "final"):
        img = load_pfm(tmp_path / f"r_{name}.pfm").data
        assert img.shape[:2] == (8, 8)
    assert (tmp_path / "r_final.png").exists()


def test_render_view_out_of_range(tmp_path, capsys):
    rc = main(["render", "--scene", str(small_config(tmp_path)), "--view", "5",
               "--out", str(tmp_path / "r")])
    assert rc == EXIT_INVALID
    assert "out of range" in capsys.readouterr().err


def test_optimize_rerun_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    for d in ("a", "b"):
        assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("kd.pfm", "korm.pfm", "normal.pfm", "probe.pfm", "log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_changes_result(tmp_path):
    cfg = small_config(tmp_path)
    main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["--seed", "5", "optimize", "--config", str(cfg), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "kd.pfm").read_bytes() != (tmp_path / "b" / "kd.pfm").read_bytes()


def test_optimize_from_reference_files(tmp_path):
    cfg = small_config(tmp_path)
    main(["render", "--scene", str(cfg), "--spp", "8", "--out", str(tmp_path / "v0")])
    main(["render", "--scene", str(cfg), "--spp", "8", "--view", "1", "--out",
          str(tmp_path / "v1")])
    extra = 'references = ["v0_final.pfm", "v1_final.pfm"]\n'
    text = cfg.read_text().split("[scene]")
    cfg.write_text(text[0] + extra + "[scene]" + text[1])
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert load_pfm(tmp_path / "o" / "kd.pfm").data.shape == (16, 16, 3)


def test_bad_config_key_exit_2(tmp_path, capsys):
    cfg = small_config(tmp_path, "\n[experiment]\nexperimnt = 1\n")
    assert main(["optimize", "--config", str(cfg)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "experimnt" in err and "line" in err


def test_missing_config_exit_2(tmp_path):
    assert main(["optimize", "--config", str(tmp_path / "nope.toml")]) == EXIT_INVALID


def test_bad_usage_exit_2():
    assert main(["render", "--sampling", "uniform"]) == EXIT_INVALID
    assert main(["--threads", "0", "render"]) == EXIT_INVALID


def test_gradcheck_pass_and_fail(tmp_path, capsys):
    assert main(["gradcheck", "--params", "kd", "--count", "2", "--spp", "2",
                 "--out", str(tmp_path)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert (tmp_path / "gradcheck.csv").read_text().startswith("param,index,adjoint,fd,rel_error")
    rc = main(["gradcheck", "--params", "probe", "--count", "2", "--spp", "2",
               "--tolerance", "0", "--out", str(tmp_path)])
    assert rc == EXIT_THRESHOLD
    assert "FAIL" in capsys.readouterr().out


def test_global_flags_after_subcommand(tmp_path):
    rc = main(["render", "--spp", "2", "--seed", "3", "--threads", "1",
               "--out", str(tmp_path / "x")])
    assert rc == EXIT_OK
    assert (tmp_path / "x_final.pfm").exists()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mcinverse.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    assert "optimize" in r.stdout
