from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcinverse.config import (ConfigError, ProbeSpec, RunConfig, TextureSpec, dumps,
                              parse_config, parse_text)
from mcinverse.optimize import OptimConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_example_configs_parse():
    cfg = parse_config(CONFIGS / "sphere_kd.toml")
    assert cfg.scene.resolution == 24
    assert cfg.target.kd.kind == "checker"
    assert cfg.optim.optimize == ("kd",)
    assert len(cfg.cameras()) == 8
    assert parse_config(CONFIGS / "mis_ablation.toml").experiment.spp == [32]


def test_defaults_build():
    cfg = parse_text("")
    scene = cfg.build_scene()
    assert scene.mesh.num_triangles > 0
    assert len(cfg.cameras()) == 16


def test_target_overrides_only_given_fields():
    cfg = parse_config(CONFIGS / "sphere_kd.toml")
    scene = cfg.build_scene()
    target = cfg.build_target(scene)
    assert not np.array_equal(target.materials.kd.data, scene.materials.kd.data)
    assert np.array_equal(target.materials.korm.data, scene.materials.korm.data)
    assert np.array_equal(target.probe.data, scene.probe.data)


def test_unknown_key_reports_line():
    text = "[scene]\nmesh = \"sphere\"\nresolutoin = 8\n"
    with pytest.raises(ConfigError, match="line 3") as exc:
        parse_text(text)
    assert exc.value.line == 3
    assert "resolutoin" in str(exc.value)


def test_unknown_top_level_table():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("\n[optimizer]\nlr = 1\n")


def test_wrong_type_reported():
    with pytest.raises(ConfigError, match="resolution"):
        parse_text("[scene]\nresolution = \"big\"\n")


def test_malformed_toml_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("[scene]\nmesh = \n")


@pytest.mark.parametrize("text, msg", [
    ("[scene]\nmesh = \"teapot.obj\"\n", "teapot"),
    ("[scene.kd]\nkind = \"noise\"\n", "kind"),
    ("[optim]\ndenoiser = \"nlm\"\n", "denoiser"),
    ("[experiment]\nexperiment = \"x\"\n", "experiment"),
    ("references = [\"missing.pfm\"]\n", "missing.pfm"),
    ("[optim.weights]\nlight = -1.0\n", "light"),
])
def test_invalid_values(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_text(text)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config("/nonexistent/run.toml")


def test_roundtrip_example():
    cfg = parse_config(CONFIGS / "sphere_kd.toml")
    again = parse_text(dumps(cfg), CONFIGS)
    assert again == cfg


colors = st.lists(st.floats(0, 1, allow_nan=False), min_size=3, max_size=3)


@given(kind=st.sampled_from(["constant", "checker", "random"]), value=colors,
       size=st.integers(1, 64), cells=st.integers(1, 8), seed=st.integers(0, 2**31),
       probe=st.sampled_from(["constant", "sky", "random"]), power=st.floats(0, 100),
       iters=st.integers(1, 5000), spp=st.integers(1, 512), lr=st.floats(1e-5, 1.0),
       denoiser=st.sampled_from(["none", "bilateral"]),
       params=st.lists(st.sampled_from(["kd", "korm", "normal", "probe"]), min_size=1,
                       max_size=4, unique=True))
def test_roundtrip_property(kind, value, size, cells, seed, probe, power, iters, spp, lr,
                            denoiser, params):
    cfg = RunConfig()
    cfg.scene.kd = TextureSpec(kind=kind, value=value, size=size, cells=cells, seed=seed)
    cfg.scene.probe = ProbeSpec(kind=probe, sun_power=power, seed=seed)
    cfg.optim = OptimConfig(iterations=iters, spp=spp, lr_material=lr, denoiser=denoiser,
                            optimize=tuple(params), seed=seed)
    assert parse_text(dumps(cfg)) == cfg


def test_minimal_config_fills_defaults():
    cfg = parse_text('[scene]\nmesh = "sphere"\n[scene.probe]\nkind = "sky"\n')
    assert cfg.optim == OptimConfig()
    assert cfg.scene.resolution == 32 and cfg.scene.kd.kind == "constant"
