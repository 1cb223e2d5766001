"""On-disk formats: EGRID grids, RCI class images, scenario configs, CSV, PGM, manifest.

Binary payloads are little-endian float32; memory is float64. Byte layouts
are documented in FORMATS.md.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class FormatDescriptor:
    magic: str
    version: int
    endianness: str
    layers: tuple

    def header_magic(self) -> str:
        # version 1 is written as the bare magic word
        return self.magic if self.version == 1 else f"{self.magic}/{self.version}"

    def check_magic(self, token: str, path) -> None:
        name, _, ver = token.partition("/")
        if name != self.magic:
            raise FormatError(f"{path}: bad magic {name!r}, expected {self.magic!r}")
        version = 1
        if ver:
            try:
                version = int(ver)
            except ValueError:
                raise FormatError(f"{path}: bad version {ver!r}") from None
        if version != self.version:
            raise FormatError(f"{path}: unsupported {self.magic} version {version}")


GRID_LAYERS = ("height", "height_variance", "horizontal_variance",
               "fused_height", "h_min", "h_max", "observed")
EGRID = FormatDescriptor("EGRID", 1, "<", GRID_LAYERS)
RCI = FormatDescriptor("RCI", 1, "<", ("class-major probability planes",))
MAX_CELLS = 1 << 28


# grids -------------------------------------------------------------------

@dataclass
class Grid:
    """Layer set on a regular grid. Layers are ``(cells_y, cells_x)`` row-major."""

    cells_x: int
    cells_y: int
    resolution: float
    origin_x: float
    origin_y: float
    layers: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.cells_y, self.cells_x)
        for name in GRID_LAYERS:
            a = self.layers.get(name)
            if a is None:
                a = np.zeros(shape) if name == "observed" else np.full(shape, np.nan)
            a = np.asarray(a, dtype=np.float64)
            if a.shape != shape:
                raise FormatError(f"layer {name} has shape {a.shape}, expected {shape}")
            self.layers[name] = a

    @property
    def observed(self) -> np.ndarray:
        return self.layers["observed"] > 0.5

    def cell_centers(self):
        x = self.origin_x + (np.arange(self.cells_x) + 0.5) * self.resolution
        y = self.origin_y + (np.arange(self.cells_y) + 0.5) * self.resolution
        return x, y

    def same_geometry(self, other: "Grid") -> bool:
        return (self.cells_x, self.cells_y, self.resolution, self.origin_x, self.origin_y) == (
            other.cells_x, other.cells_y, other.resolution, other.origin_x, other.origin_y)


def grid_to_bytes(grid: Grid) -> bytes:
    head = (f"{EGRID.header_magic()} {grid.cells_x} {grid.cells_y} {grid.resolution!r} "
            f"{grid.origin_x!r} {grid.origin_y!r}\n").encode("ascii")
    obs = grid.observed
    parts = [head]
    for name in GRID_LAYERS:
        a = grid.layers[name].astype("<f4")
        if name == "observed":
            a = obs.astype("<f4")
        else:
            a = np.where(obs, a, np.float32(np.nan)).astype("<f4")
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def write_grid(grid: Grid, path) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def grid_from_bytes(data: bytes, path="<bytes>") -> Grid:
    nl = data.find(b"\n", 0, 256)
    if nl < 0:
        raise FormatError(f"{path}: missing EGRID header line")
    try:
        tokens = data[:nl].decode("ascii").split()
    except UnicodeDecodeError:
        raise FormatError(f"{path}: header is not ASCII") from None
    if not tokens:
        raise FormatError(f"{path}: empty header")
    EGRID.check_magic(tokens[0], path)
    if len(tokens) != 6:
        raise FormatError(f"{path}: EGRID header needs 6 fields, got {len(tokens)}")
    try:
        cx, cy = int(tokens[1]), int(tokens[2])
        res, ox, oy = (float(t) for t in tokens[3:6])
    except ValueError as e:
        raise FormatError(f"{path}: bad header value ({e})") from None
    if cx <= 0 or cy <= 0 or cx * cy > MAX_CELLS:
        raise FormatError(f"{path}: grid dimensions {cx}x{cy} out of range")
    if not (res > 0 and math.isfinite(res) and math.isfinite(ox) and math.isfinite(oy)):
        raise FormatError(f"{path}: resolution/origin must be finite, resolution positive")
    expected = len(GRID_LAYERS) * cx * cy * 4
    payload = data[nl + 1:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for {cx}x{cy}")
    with np.errstate(invalid="ignore"):  # signalling NaNs from foreign writers
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    layers = {name: flat[k * cx * cy:(k + 1) * cx * cy].reshape(cy, cx)
              for k, name in enumerate(GRID_LAYERS)}
    obs = layers["observed"]
    if not np.all((obs == 0.0) | (obs == 1.0)):
        raise FormatError(f"{path}: observed layer must be 0/1")
    return Grid(cx, cy, res, ox, oy, layers)


def read_grid(path) -> Grid:
    p = Path(path)
    return grid_from_bytes(p.read_bytes(), p)


# range-class images ------------------------------------------------------

def write_rci(image, path) -> None:
    probs = np.asarray(image.probs if hasattr(image, "probs") else image)
    c, h, w = probs.shape
    head = f"{RCI.header_magic()} {w} {h} {c}\n".encode("ascii")
    Path(path).write_bytes(head + np.ascontiguousarray(probs, dtype="<f4").tobytes())


def read_rci(path, tol: float = 1e-5):
    """Read an RCI file; float32 storage limits the normalisation tolerance."""
    from .rangesensor import RangeClassImage

    p = Path(path)
    data = p.read_bytes()
    nl = data.find(b"\n", 0, 128)
    if nl < 0:
        raise FormatError(f"{p}: missing RCI header line")
    tokens = data[:nl].decode("ascii", errors="replace").split()
    if not tokens:
        raise FormatError(f"{p}: empty header")
    RCI.check_magic(tokens[0], p)
    if len(tokens) != 4:
        raise FormatError(f"{p}: RCI header needs 4 fields, got {len(tokens)}")
    try:
        w, h, c = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{p}: bad RCI dimensions") from None
    if w <= 0 or h <= 0 or c < 2 or w * h * c > MAX_CELLS:
        raise FormatError(f"{p}: RCI dimensions {w}x{h}x{c} out of range")
    payload = data[nl + 1:]
    if len(payload) != w * h * c * 4:
        raise FormatError(f"{p}: payload is {len(payload)} bytes, expected {w * h * c * 4}")
    with np.errstate(invalid="ignore"):
        probs = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(c, h, w)
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise FormatError(f"{p}: probabilities must be finite and non-negative")
    err = np.abs(probs.sum(axis=0) - 1.0).max()
    if err > tol:
        raise FormatError(f"{p}: pixel probabilities do not sum to 1 (max error {err:.3g})")
    probs = probs / probs.sum(axis=0, keepdims=True)
    return RangeClassImage(probs)


# scenario config ---------------------------------------------------------

WORLD_KINDS = {
    "flat": {"height": 0.0},
    "wall": {"x0": 2.5, "height": 3.0, "base": 0.0},
    "plateau_gap": {
        "base": 0.0, "top": 1.6, "x_start": 2.0, "gap_start": 6.0, "gap_width": 0.5,
        "x_end": 10.0, "y_min": 0.9, "y_max": 3.0, "mirror": True,
        "gap_floor": None,
    },
    "undulating": {
        "base": 0.0, "amplitude": 0.2, "wavelength_x": 3.0, "wavelength_y": 5.0,
        "phase_x": 0.0, "phase_y": 0.0, "bumps": [],
    },
}


@dataclass
class TrajectoryConfig:
    kind: str = "transect"
    start_x: float = 0.0
    end_x: float = 12.0
    y: float = 0.0
    elevation: float = 1.0
    step: float = 0.1
    speed: float = 0.5


@dataclass
class CameraConfig:
    width: int = 512
    height: int = 384
    hfov_deg: float = 80.0
    tilt_deg: float = 15.0
    mount_x: float = 0.0
    max_range: float = 10.0
    march_step: float = 0.0  # 0: half the map resolution


@dataclass
class SchemeConfig:
    representative_ranges: list = field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0])
    min_detection: float = 0.45
    bin_edges: list = field(default_factory=list)  # empty: derived
    min_run: int = 2
    skip_border: bool = True


@dataclass
class DegradationConfig:
    epsilon: float = 0.0
    smear: int = 0
    seed: int = 0


@dataclass
class MapConfig:
    size_x: float = 5.0
    size_y: float = 5.0
    resolution: float = 0.02
    fuse_max_radius: float = 0.3


@dataclass
class NoiseConfig:
    translation_sigma: float = 0.01
    rotation_sigma_deg: float = 0.2


@dataclass
class SeedConfig:
    value: int = 0


@dataclass
class ScenarioConfig:
    world: dict = field(default_factory=lambda: {"kind": "flat", "height": 0.0})
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    map: MapConfig = field(default_factory=MapConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: SeedConfig = field(default_factory=SeedConfig)
    name: str = "scenario"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("name")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace_seed(self, seed: int) -> "ScenarioConfig":
        import copy
        out = copy.deepcopy(self)
        out.seed.value = int(seed)
        return out


_SECTIONS = {
    "trajectory": TrajectoryConfig, "camera": CameraConfig, "scheme": SchemeConfig,
    "degradation": DegradationConfig, "map": MapConfig, "noise": NoiseConfig,
    "seed": SeedConfig,
}


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    cur = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", s)
        if m:
            cur = m.group(1)
            if key is None and cur == section:
                return n
            continue
        if key is not None and cur == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return n
    return None


def _where(text, section, key=None) -> str:
    n = _line_of(text, section, key)
    loc = f"[{section}]" + (f".{key}" if key else "")
    return f"line {n}: {loc}" if n else loc


def _coerce(value, default, where):
    if default is None:  # optional number
        return _coerce(value, 0.0, where)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def parse_config(text: str, name: str = "scenario") -> ScenarioConfig:
    """Parse and validate scenario TOML; unknown sections or keys are errors."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from None
    cfg = ScenarioConfig(name=name)
    for section, body in raw.items():
        if section not in _SECTIONS and section != "world":
            raise ConfigError(f"{_where(text, section)}: unknown section")
        if not isinstance(body, dict):
            raise ConfigError(f"{_where(text, section)}: expected a table")
    world = dict(raw.get("world", {}))
    kind = world.pop("kind", "flat")
    if kind not in WORLD_KINDS:
        raise ConfigError(f"{_where(text, 'world', 'kind')}: unknown world kind {kind!r}"
                          f" (known: {', '.join(sorted(WORLD_KINDS))})")
    wparams = {"kind": kind}
    for key, default in WORLD_KINDS[kind].items():
        wparams[key] = _coerce(world.pop(key), default, _where(text, "world", key)) \
            if key in world else default
    for key in world:
        raise ConfigError(f"{_where(text, 'world', key)}: unknown key for world kind {kind!r}")
    cfg.world = wparams

    for section, cls in _SECTIONS.items():
        body = dict(raw.get(section, {}))
        obj = getattr(cfg, section)
        known = {f.name for f in fields(cls)}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"{_where(text, section, key)}: unknown key")
            setattr(obj, key, _coerce(value, getattr(obj, key), _where(text, section, key)))
    _validate(cfg, text)
    return cfg


def _validate(cfg: ScenarioConfig, text: str = "") -> None:
    def need(cond, section, key, msg):
        if not cond:
            raise ConfigError(f"{_where(text, section, key)}: {msg}")

    m = cfg.map
    need(m.resolution > 0, "map", "resolution", "resolution must be > 0")
    need(m.size_x > 0 and m.size_y > 0, "map", "size_x", "map sizes must be > 0")
    need(m.fuse_max_radius >= 0, "map", "fuse_max_radius", "must be >= 0")
    c = cfg.camera
    need(c.width > 0 and c.height > 0, "camera", "width", "image size must be positive")
    need(0 < c.hfov_deg < 180, "camera", "hfov_deg", "must lie in (0, 180)")
    need(-89 < c.tilt_deg < 89, "camera", "tilt_deg", "must lie in (-89, 89)")
    need(c.max_range > 0, "camera", "max_range", "must be > 0")
    need(c.march_step >= 0, "camera", "march_step", "must be >= 0")
    s = cfg.scheme
    r = [float(v) for v in s.representative_ranges]
    need(len(r) >= 2 and all(isinstance(v, (int, float)) for v in s.representative_ranges),
         "scheme", "representative_ranges", "need at least two numeric ranges")
    need(all(b > a for a, b in zip(r, r[1:])), "scheme", "representative_ranges",
         "must be strictly increasing")
    need(s.min_detection > 0 and r[0] > s.min_detection, "scheme", "min_detection",
         "must be positive and below the first representative range")
    if s.bin_edges:
        e = [float(v) for v in s.bin_edges]
        need(len(e) == len(r) + 1, "scheme", "bin_edges",
             f"need {len(r) + 1} edges for {len(r)} classes")
        need(all(b > a for a, b in zip(e, e[1:])), "scheme", "bin_edges",
             "must be strictly increasing")
    need(s.min_run >= 1, "scheme", "min_run", "must be >= 1")
    d = cfg.degradation
    need(0.0 <= d.epsilon <= 1.0, "degradation", "epsilon", "must lie in [0, 1]")
    need(d.smear >= 0, "degradation", "smear", "must be >= 0")
    t = cfg.trajectory
    need(t.kind == "transect", "trajectory", "kind", "only 'transect' is supported")
    need(t.step > 0, "trajectory", "step", "must be > 0")
    need(t.speed > 0, "trajectory", "speed", "must be > 0")
    need(t.end_x >= t.start_x, "trajectory", "end_x", "must be >= start_x")
    n = cfg.noise
    need(n.translation_sigma >= 0, "noise", "translation_sigma", "must be >= 0")
    need(n.rotation_sigma_deg >= 0, "noise", "rotation_sigma_deg", "must be >= 0")
    w = cfg.world
    if w["kind"] == "plateau_gap":
        need(w["x_start"] < w["gap_start"] and w["gap_width"] > 0
             and w["gap_start"] + w["gap_width"] < w["x_end"], "world", "gap_start",
             "need x_start < gap_start < gap_start + gap_width < x_end")
        need(w["y_min"] < w["y_max"], "world", "y_min", "need y_min < y_max")
    if w["kind"] == "undulating":
        need(w["wavelength_x"] > 0 and w["wavelength_y"] > 0, "world", "wavelength_x",
             "wavelengths must be > 0")
        for b in w["bumps"]:
            need(isinstance(b, list) and len(b) == 4 and b[3] > 0, "world", "bumps",
                 "each bump is [x, y, amplitude, sigma] with sigma > 0")


def read_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    try:
        return parse_config(text, name=p.stem)
    except ConfigError as e:
        raise ConfigError(f"{p}: {e}") from None


def bundled_config_path(name: str) -> Path:
    return Path(__file__).parent / "configs" / f"{name}.toml"


def bundled_configs() -> list:
    return sorted(p.stem for p in (Path(__file__).parent / "configs").glob("*.toml"))


# csv, pgm, manifest ------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def write_pgm16(path, values, vmin: float, vmax: float, note: str = "") -> None:
    """16-bit binary graymap; NaN maps to 0. A sidecar ``.txt`` records the scaling."""
    v = np.asarray(values, dtype=np.float64)
    h, w = v.shape
    span = vmax - vmin if vmax > vmin else 1.0
    g = np.clip((v - vmin) / span, 0.0, 1.0)
    g = np.where(np.isnan(v), 0.0, g)
    px = np.round(g * 65535).astype(">u2")
    # rows top-down with +y up
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + px[::-1].tobytes())
    side = Path(str(path)[: -len(Path(path).suffix)] + ".txt")
    side.write_text(f"gray 0 = {vmin!r}\ngray 65535 = {vmax!r}\nlinear scaling; "
                    f"NaN (unobserved) = 0\n{note}")


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: cannot read manifest ({e})") from None
