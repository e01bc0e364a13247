"""TOML run configuration: scene description, optimizer settings, experiments.

A config file has up to five tables::

    [scene]            mesh, resolution, specular, kd/korm/normal/probe/cameras
    [target]           ground-truth kd/korm/normal/probe (missing ones copy [scene])
    [optim]            OptimConfig fields, plus [optim.weights]
    [experiment]       ExperimentSpec fields
    references = [...] PFM reference images, one per camera (instead of [target])

Unknown keys are rejected and reported with their line number.
"""

from __future__ import annotations

import re
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import fixtures, loss
from .envlight import EnvProbe
from .geometry import Camera
from .imageio import MeshData, Texture2D, load_obj, load_pfm
from .material import MaterialTextures
from .optimize import OptimConfig
from .render import Scene

BUILTIN_MESHES = {
    "sphere": fixtures.uv_sphere,
    "plane_with_blocker": fixtures.plane_with_blocker,
    "two_box": fixtures.two_box_scene,
    "ground": lambda: fixtures.merge([fixtures.ground(2.0)]),
}
TEXTURE_KINDS = ("constant", "checker", "random", "file")
PROBE_KINDS = ("constant", "sky", "random", "file")
EXPERIMENTS = ("mis_ablation", "correlation_study", "denoise_ablation", "gradcheck_suite")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class TextureSpec:
    kind: str = "constant"
    value: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    size: int = 8
    a: list = field(default_factory=lambda: [0.8, 0.8, 0.8])
    b: list = field(default_factory=lambda: [0.2, 0.2, 0.2])
    cells: int = 4
    lo: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    hi: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    seed: int = 0
    path: str = ""

    def validate(self, where: str) -> None:
        if self.kind not in TEXTURE_KINDS:
            raise ConfigError(f"{where}.kind must be one of {TEXTURE_KINDS}, got {self.kind!r}")
        if self.size < 1 or self.cells < 1:
            raise ConfigError(f"{where}: size and cells must be >= 1")
        if self.kind == "file" and not self.path:
            raise ConfigError(f"{where}: kind 'file' needs a path")

    def build(self, base: Path) -> np.ndarray:
        if self.kind == "constant":
            return fixtures.constant_texture(self.size, self.value)
        if self.kind == "checker":
            return fixtures.checker(self.size, self.cells, self.a, self.b)
        if self.kind == "random":
            return fixtures.random_texture(self.size, self.lo, self.hi, self.seed)
        return load_pfm(base / self.path).data.astype(np.float64)


@dataclass
class ProbeSpec:
    kind: str = "sky"
    value: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    height: int = 16
    width: int = 32
    sun_dir: list = field(default_factory=lambda: [0.4, 0.8, 0.3])
    sun_power: float = 40.0
    sun_width: float = 0.15
    seed: int = 0
    scale: float = 1.0
    path: str = ""

    def validate(self, where: str) -> None:
        if self.kind not in PROBE_KINDS:
            raise ConfigError(f"{where}.kind must be one of {PROBE_KINDS}, got {self.kind!r}")
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"{where}: height and width must be >= 1")
        if self.kind == "file" and not self.path:
            raise ConfigError(f"{where}: kind 'file' needs a path")

    def build(self, base: Path) -> EnvProbe:
        if self.kind == "constant":
            return EnvProbe.constant(self.value, self.height, self.width)
        if self.kind == "sky":
            return fixtures.sky_probe(self.height, self.width, self.sun_dir, self.sun_power,
                                      self.sun_width)
        if self.kind == "random":
            return fixtures.random_probe(self.height, self.width, self.seed, self.scale)
        data = load_pfm(base / self.path).data.astype(np.float64)
        return EnvProbe(Texture2D(data, address="wrap"))


@dataclass
class CameraSpec:
    """Orbit generator, or explicit cameras when ``views`` is non-empty."""

    count: int = 16
    radius: float = 3.2
    elevation: list = field(default_factory=lambda: [30.0, -30.0])
    fov: float = 40.0
    target: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    offset: float = 0.0
    views: list = field(default_factory=list)   # [{position, look_at, fov}]

    def validate(self, where: str) -> None:
        if not self.views and self.count < 1:
            raise ConfigError(f"{where}.count must be >= 1")
        for i, v in enumerate(self.views):
            extra = set(v) - {"position", "look_at", "fov"}
            if extra or "position" not in v or "look_at" not in v:
                raise ConfigError(f"{where}.views[{i}] needs position and look_at only "
                                  f"(plus optional fov); got {sorted(v)}")

    def build(self, resolution: int) -> list:
        if self.views:
            return [Camera(v["position"], v["look_at"], np.radians(v.get("fov", self.fov)),
                           resolution, resolution) for v in self.views]
        elev = (list(self.elevation) * self.count)[:self.count]
        return fixtures.orbit(self.count, self.radius, elev, resolution, self.fov,
                              self.target, self.offset)


@dataclass
class SceneConfig:
    mesh: str = "sphere"
    resolution: int = 32
    specular: bool = True
    kd: TextureSpec = field(default_factory=TextureSpec)
    korm: TextureSpec = field(default_factory=lambda: TextureSpec(value=[1.0, 0.5, 0.0]))
    normal: TextureSpec = field(default_factory=lambda: TextureSpec(value=[0.5, 0.5, 1.0]))
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    cameras: CameraSpec = field(default_factory=CameraSpec)

    def validate(self, base: Path) -> None:
        if self.resolution < 1:
            raise ConfigError("scene.resolution must be >= 1")
        if self.mesh not in BUILTIN_MESHES and not (base / self.mesh).is_file():
            raise ConfigError(f"scene.mesh: no builtin or file named {self.mesh!r}")
        for name in ("kd", "korm", "normal"):
            getattr(self, name).validate(f"scene.{name}")
        self.probe.validate("scene.probe")
        self.cameras.validate("scene.cameras")

    def build_mesh(self, base: Path) -> MeshData:
        if self.mesh in BUILTIN_MESHES:
            return BUILTIN_MESHES[self.mesh]()
        return load_obj(base / self.mesh)

    def build_materials(self, base: Path) -> MaterialTextures:
        tex = [Texture2D(getattr(self, k).build(base)) for k in ("kd", "korm", "normal")]
        return MaterialTextures(*tex, specular=self.specular)


@dataclass
class TargetConfig:
    """Ground-truth overrides; ``None`` entries reuse the scene's initializer."""

    kd: TextureSpec | None = None
    korm: TextureSpec | None = None
    normal: TextureSpec | None = None
    probe: ProbeSpec | None = None


@dataclass
class ExperimentSpec:
    experiment: str = "mis_ablation"
    spp: list = field(default_factory=lambda: [32])
    trials: int = 40
    iterations: int = 200
    output: str = "table.csv"

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment.experiment must be one of {EXPERIMENTS}, "
                              f"got {self.experiment!r}")
        if not self.spp or any(int(s) < 1 for s in self.spp):
            raise ConfigError("experiment.spp must be a nonempty list of positive counts")
        if self.trials < 1 or self.iterations < 1:
            raise ConfigError("experiment.trials and iterations must be >= 1")


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    target: TargetConfig | None = None
    references: list = field(default_factory=list)
    ref_spp: int = 2048
    optim: OptimConfig = field(default_factory=OptimConfig)
    experiment: ExperimentSpec | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def validate(self) -> None:
        self.scene.validate(self.base_dir)
        if self.target is not None:
            for name in ("kd", "korm", "normal"):
                spec = getattr(self.target, name)
                if spec is not None:
                    spec.validate(f"target.{name}")
            if self.target.probe is not None:
                self.target.probe.validate("target.probe")
        for p in self.references:
            if not (self.base_dir / p).is_file():
                raise ConfigError(f"references: file not found: {p}")
        if self.ref_spp < 1:
            raise ConfigError("ref_spp must be >= 1")
        if self.experiment is not None:
            self.experiment.validate()

    # ------------------------------------------------------------ builders

    def build_scene(self) -> Scene:
        s = self.scene
        return Scene(s.build_mesh(self.base_dir), s.build_materials(self.base_dir),
                     s.probe.build(self.base_dir))

    def build_target(self, scene: Scene) -> Scene:
        t = self.target or TargetConfig()
        s = self.scene
        tex = []
        for name in ("kd", "korm", "normal"):
            spec = getattr(t, name) or getattr(s, name)
            tex.append(Texture2D(spec.build(self.base_dir)))
        probe = (t.probe or s.probe).build(self.base_dir)
        return scene.with_params(MaterialTextures(*tex, specular=s.specular), probe)

    def cameras(self) -> list:
        return self.scene.cameras.build(self.scene.resolution)


# ------------------------------------------------------------------ parsing

def _line_of(text: str, key: str, section: str | None = None) -> int | None:
    """Best-effort line number of ``key = ...`` (inside ``[section]`` if given)."""
    lines = text.splitlines()
    start = 0
    if section:
        pat = re.compile(r"^\s*\[\[?\s*" + re.escape(section) + r"\s*\]\]?\s*(#.*)?$")
        for i, line in enumerate(lines):
            if pat.match(line):
                start = i
                break
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i in range(start, len(lines)):
        if pat.match(lines[i]):
            return i + 1
    return None


def _build(cls, data: dict, text: str, section: str):
    """Dataclass from a dict, rejecting unknown keys and checking basic types."""
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls) if f.init and f.name != "base_dir"}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]; expected one of "
                              f"{sorted(known)}", _line_of(text, key, section))
        f = known[key]
        default = f.default if f.default is not MISSING else (
            f.default_factory() if f.default_factory is not MISSING else None)
        kwargs[key] = _coerce(value, default, f"{section}.{key}", _line_of(text, key, section))
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}", _section_line(text, section)) from None


def _section_line(text: str, section: str) -> int | None:
    pat = re.compile(r"^\s*\[\[?\s*" + re.escape(section) + r"\s*\]\]?\s*(#.*)?$")
    for i, line in enumerate(text.splitlines()):
        if pat.match(line):
            return i + 1
    return None


def _coerce(value, default, where: str, line: int | None):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false", line)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer", line)
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where} must be a number", line)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string", line)
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array", line)
        return list(value)
    return value


_SUBTABLES = {"kd": TextureSpec, "korm": TextureSpec, "normal": TextureSpec,
              "probe": ProbeSpec, "cameras": CameraSpec}


def _scene_like(cls, data: dict, text: str, section: str):
    data = dict(data)
    sub = {}
    for key, spec_cls in _SUBTABLES.items():
        if key in data and key in {f.name for f in fields(cls)}:
            sub[key] = _build(spec_cls, data.pop(key), text, f"{section}.{key}")
    obj = _build(cls, data, text, section)
    for key, value in sub.items():
        setattr(obj, key, value)
    return obj


def _optim(data: dict, text: str) -> OptimConfig:
    data = dict(data)
    weights = data.pop("weights", None)
    for key in ("optimize",):
        if key in data and isinstance(data[key], list):
            data[key] = tuple(data[key])
    known = {f.name for f in fields(OptimConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [optim]; expected one of "
                              f"{sorted(known)}", _line_of(text, key, "optim"))
    if weights is not None:
        data["weights"] = _build(loss.LossWeights, weights, text, "optim.weights")
    if "sigma" in data and not isinstance(data["sigma"], (int, float)):
        raise ConfigError("optim.sigma must be a number", _line_of(text, "sigma", "optim"))
    try:
        return OptimConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[optim]: {exc}") from None


def parse_text(text: str, base_dir=".") -> RunConfig:
    """Parse and validate a TOML config given as a string."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", int(m.group(1)) if m else None) from None
    top = {"scene", "target", "references", "ref_spp", "optim", "experiment"}
    for key in raw:
        if key not in top:
            raise ConfigError(f"unknown top-level key {key!r}; expected one of {sorted(top)}",
                              _line_of(text, key) or _section_line(text, key))
    cfg = RunConfig(base_dir=Path(base_dir))
    if "scene" in raw:
        cfg.scene = _scene_like(SceneConfig, raw["scene"], text, "scene")
    if "target" in raw:
        cfg.target = _scene_like(TargetConfig, raw["target"], text, "target")
    if "references" in raw:
        cfg.references = _coerce(raw["references"], [], "references",
                                 _line_of(text, "references"))
    if "ref_spp" in raw:
        cfg.ref_spp = _coerce(raw["ref_spp"], 0, "ref_spp", _line_of(text, "ref_spp"))
    if "optim" in raw:
        cfg.optim = _optim(raw["optim"], text)
    if "experiment" in raw:
        cfg.experiment = _build(ExperimentSpec, raw["experiment"], text, "experiment")
    cfg.validate()
    return cfg


def parse_config(path) -> RunConfig:
    """Parse a TOML config file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, path.parent)


# ------------------------------------------------------------------ writing

def _plain(obj):
    if hasattr(obj, "__dataclass_fields__"):
        out = {}
        for f in fields(obj):
            if f.name == "base_dir":
                continue
            v = getattr(obj, f.name)
            if v is None:
                continue
            out[f.name] = _plain(v)
        return out
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def to_dict(cfg: RunConfig) -> dict:
    return _plain(cfg)


def dumps(cfg: RunConfig) -> str:
    """TOML text that :func:`parse_text` maps back to an equal config."""
    return tomli_w.dumps(to_dict(cfg))


def as_plain_dict(obj) -> dict:
    """Nested plain-data view of any config dataclass."""
    return asdict(obj)
