"""JSON run configuration: parsing, validation and hashing."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .geometry import InterconnectTree, Node, RandomTreeSpec, Segment, build_tree
from .neural import default_architecture
from .oracle import FdmConfig, Probes, default_times
from .physics import MaterialParams, ScalingFactors, TemperatureModel
from .trial import TrialConfig
from .training import TrainingConfig


class ParseError(ValueError):
    """Malformed configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class RunConfig:
    tree: InterconnectTree | None
    material: MaterialParams = field(default_factory=MaterialParams)
    temperature: TemperatureModel = field(default_factory=TemperatureModel)
    scaling: ScalingFactors = field(default_factory=ScalingFactors)
    trial: TrialConfig = field(default_factory=TrialConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    fdm: FdmConfig = field(default_factory=FdmConfig)
    probe_times: list[float] = field(default_factory=default_times)
    probe_points: list[tuple[int, float]] | None = None
    n_interior: int = 9
    hidden_layers: int = 5
    neurons: int = 50
    n_cases: int = 1000
    random_spec: RandomTreeSpec | None = None
    sweep: dict = field(default_factory=dict)
    output_dir: str = "."
    seed: int = 0
    raw: dict = field(default_factory=dict)

    def probes(self, tree: InterconnectTree | None = None) -> Probes:
        tree = tree or self.tree
        if self.probe_points is None:
            return Probes.default(tree, self.probe_times, self.n_interior)
        return Probes(list(self.probe_points), list(self.probe_times))

    def architecture(self) -> tuple[int, ...]:
        return default_architecture(self.training.mode, self.hidden_layers, self.neurons)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _num(value, path, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ParseError(path, f"expected a finite number, got {value!r}")
    if positive and not value > 0:
        raise ParseError(path, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        raise ParseError(path, f"must be non-negative, got {value!r}")
    return float(value)


def _int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(path, f"expected an integer, got {value!r}")
    return value


def _block(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ParseError(path, "expected an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ParseError(f"{path}.{key}", "unknown field")
    try:
        return cls.from_dict(data)
    except ParseError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(path, str(exc)) from exc


def parse_tree(data: dict, path: str = "") -> InterconnectTree:
    prefix = f"{path}." if path else ""
    nodes_raw = data.get("nodes")
    segs_raw = data.get("segments")
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise ParseError(f"{prefix}nodes", "expected a non-empty list")
    if not isinstance(segs_raw, list) or not segs_raw:
        raise ParseError(f"{prefix}segments", "expected a non-empty list")
    nodes = []
    for i, n in enumerate(nodes_raw):
        p = f"{prefix}nodes[{i}]"
        if not isinstance(n, dict):
            raise ParseError(p, "expected an object")
        for key in ("id", "x_m", "y_m"):
            if key not in n:
                raise ParseError(f"{p}.{key}", "missing")
        nodes.append(Node(_int(n["id"], f"{p}.id"), (_num(n["x_m"], f"{p}.x_m"), _num(n["y_m"], f"{p}.y_m"))))
    coords = {n.id: n.coord for n in nodes}
    segs = []
    for i, s in enumerate(segs_raw):
        p = f"{prefix}segments[{i}]"
        if not isinstance(s, dict):
            raise ParseError(p, "expected an object")
        for key in ("id", "prev", "next", "width_m", "j_A_per_m2"):
            if key not in s:
                raise ParseError(f"{p}.{key}", "missing")
        sid = _int(s["id"], f"{p}.id")
        prev, nxt = _int(s["prev"], f"{p}.prev"), _int(s["next"], f"{p}.next")
        width = _num(s["width_m"], f"{p}.width_m", positive=True)
        j = _num(s["j_A_per_m2"], f"{p}.j_A_per_m2")
        orient = s.get("orientation", "horizontal")
        if orient not in ("horizontal", "vertical"):
            raise ParseError(f"{p}.orientation", f"expected horizontal or vertical, got {orient!r}")
        if prev in coords and nxt in coords:
            (ax, ay), (bx, by) = coords[prev], coords[nxt]
            length = math.hypot(bx - ax, by - ay)
        else:
            length = 1.0  # dangling; reported by build_tree
        if "length_m" in s:
            declared = _num(s["length_m"], f"{p}.length_m", positive=True)
            if abs(declared - length) > 1e-9 * declared:
                raise ParseError(f"{p}.length_m", f"{declared!r} disagrees with node distance {length!r}")
        segs.append(Segment(sid, prev, nxt, length, width, j, orient))
    return build_tree(segs, nodes)


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ParseError("<root>", "expected a JSON object")
    base_dir = base_dir or Path(".")
    tree = None
    if "tree_file" in data:
        tree_path = base_dir / data["tree_file"]
        if not tree_path.exists():
            raise ParseError("tree_file", f"{tree_path} does not exist")
        tree = parse_tree(json.loads(tree_path.read_text()))
    elif "tree" in data:
        tree = parse_tree(data["tree"], "tree")
    elif "nodes" in data or "segments" in data:
        tree = parse_tree(data)

    cfg = RunConfig(tree=tree, raw=data)
    cfg.material = _block(MaterialParams, data.get("material"), "material")
    cfg.temperature = _block(TemperatureModel, data.get("temperature"), "temperature")
    cfg.scaling = _block(ScalingFactors, data.get("scaling"), "scaling")
    cfg.trial = _block(TrialConfig, data.get("trial"), "trial")
    cfg.training = _block(TrainingConfig, data.get("training"), "training")
    cfg.fdm = _block(FdmConfig, data.get("fdm"), "fdm")
    cfg.seed = _int(data.get("seed", cfg.training.seed), "seed")
    cfg.output_dir = str(data.get("output_dir", "."))

    model = data.get("model") or {}
    cfg.hidden_layers = _int(model.get("hidden_layers", 5), "model.hidden_layers")
    cfg.neurons = _int(model.get("neurons", 50), "model.neurons")
    if cfg.hidden_layers < 1 or cfg.neurons < 1:
        raise ParseError("model", "hidden_layers and neurons must be >= 1")

    probes = data.get("probes") or {}
    if "times" in probes:
        if not isinstance(probes["times"], list) or not probes["times"]:
            raise ParseError("probes.times", "expected a non-empty list")
        cfg.probe_times = [_num(t, f"probes.times[{i}]", nonneg=True) for i, t in enumerate(probes["times"])]
    horizon = cfg.training.t_steady
    for i, t in enumerate(cfg.probe_times):
        if t > horizon * (1 + 1e-12):
            raise ParseError(f"probes.times[{i}]", f"{t!r} exceeds the training horizon {horizon!r}")
    cfg.n_interior = _int(probes.get("n_interior", 9), "probes.n_interior")
    points = probes.get("points", "default")
    if points != "default":
        if not isinstance(points, list):
            raise ParseError("probes.points", "expected \"default\" or a list of [segment, fraction]")
        parsed = []
        for i, pt in enumerate(points):
            if not (isinstance(pt, list) and len(pt) == 2):
                raise ParseError(f"probes.points[{i}]", "expected [segment, fraction]")
            sid = _int(pt[0], f"probes.points[{i}][0]")
            frac = _num(pt[1], f"probes.points[{i}][1]")
            if not 0 <= frac <= 1:
                raise ParseError(f"probes.points[{i}][1]", "fraction must lie in [0, 1]")
            if tree is not None and not 0 <= sid < len(tree.segments):
                raise ParseError(f"probes.points[{i}][0]", f"no segment {sid}")
            parsed.append((sid, frac))
        cfg.probe_points = parsed

    param = data.get("parameterized")
    if param is not None:
        cfg.n_cases = _int(param.get("n_cases", 1000), "parameterized.n_cases")
        spec = dict(param.get("spec") or {})
        for key in ("length_range_m", "j_range_A_per_m2", "width_set_m"):
            if key in spec:
                spec[key] = tuple(spec[key])
        spec.setdefault("n_segments", 2)
        spec.setdefault("seed", cfg.seed)
        try:
            cfg.random_spec = RandomTreeSpec(**spec)
            cfg.random_spec.validate()
        except (TypeError, ValueError) as exc:
            raise ParseError("parameterized.spec", str(exc)) from exc
    cfg.sweep = dict(data.get("sweep") or {})
    if tree is None and cfg.random_spec is None:
        raise ParseError("tree", "config needs a tree (nodes/segments, tree or tree_file)")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}", exc.msg) from exc
    return parse_config(data, path.parent)
