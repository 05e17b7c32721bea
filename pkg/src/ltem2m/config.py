"""Run configuration: nested YAML sections with strict validation."""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import yaml

from .errors import ConfigError
from .utility import AppClass, UtilitySpec


class AllocationMode(str, enum.Enum):
    GRAPH_BASED = "GRAPH_BASED"
    FULL_REUSE = "FULL_REUSE"


class PairPower(str, enum.Enum):
    PER_SUBCHANNEL = "PER_SUBCHANNEL"  # full device power on every held subchannel
    SPLIT = "SPLIT"  # device power shared evenly across held subchannels


@dataclass(frozen=True)
class LayoutConfig:
    num_sites: int = 19
    isd: float = 500.0
    wraparound: bool = True
    block_distance: float = 0.3  # block centroid distance from its site, in ISDs
    block_azimuth: float = 30.0
    apartment_size: float = 10.0
    stripe_gap: float = 10.0


@dataclass(frozen=True)
class PopulationConfig:
    ues_per_sector: int = 5
    outdoor_mtcds_per_sector: int = 50
    indoor_pairs_per_block: int = 50
    mtcgs_per_sector: int = 1
    min_distance: float = 35.0


@dataclass(frozen=True)
class ChannelConfig:
    enb_tx_power_dbm: float = 46.0
    enb_antenna_gain_dbi: float = 14.0
    mtcd_tx_power_dbm: float = 14.0
    device_antenna_gain_dbi: float = 0.0
    mtcg_tx_power_dbm: float = 14.0
    mtcg_antenna_gain_dbi: float = 0.0
    shadowing_std_db: float = 8.0
    shadowing_inter_site_corr: float = 0.5
    noise_figure_db: float = 9.0
    thermal_noise_density_dbm_per_hz: float = -174.0
    rb_bandwidth_hz: float = 180e3
    num_rbs: int = 50
    penetration_loss_db: float = 20.0
    d2d_breakpoint_m: float = 0.3
    macro_floor_m: float = 10.0
    rate_alpha: float = 0.75
    rate_eta_max: float = 6.0
    sinr_min_db: float = -10.0


@dataclass(frozen=True)
class UtilityConfig:
    ue: UtilitySpec = UtilitySpec.elastic(r0=1e5, r_max=20e6)
    mtcd: UtilitySpec = UtilitySpec.rate_adaptive(a=3e-5, b=1e5)
    pair: UtilitySpec = UtilitySpec.rate_adaptive(a=3e-5, b=1e5)


@dataclass(frozen=True)
class SchedulerConfig:
    mtcd_demand_bps: float = 50e3


@dataclass(frozen=True)
class GraphConfig:
    threshold_db: float = 30.0
    p0: float = 0.5
    iterations: int = 50
    num_colors: Optional[int] = None  # default: access-slot RBs left after gateway reservation
    pair_power: PairPower = PairPower.PER_SUBCHANNEL


@dataclass(frozen=True)
class DropConfig:
    lam: float = 0.8
    duty: float = 0.1
    num_drops: int = 100
    seed: int = 1
    allocation_mode: AllocationMode = AllocationMode.GRAPH_BASED
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    graphalloc: GraphConfig = field(default_factory=GraphConfig)

    def replace(self, **changes) -> "DropConfig":
        return dataclasses.replace(self, **changes)


# config-file key -> dataclass field, where they differ
_KEY_ALIASES = {"lambda": "lam"}
_FIELD_KEYS = {v: k for k, v in _KEY_ALIASES.items()}
_SECTIONS = {"layout": LayoutConfig, "population": PopulationConfig, "channel": ChannelConfig,
             "scheduler": SchedulerConfig, "graphalloc": GraphConfig}
_UTILITY_KEYS = ("app_class", "r0", "r_max", "threshold", "a", "b")


def _coerce(key: str, value: Any, default: Any, typ: str) -> Any:
    if "Optional[int]" in typ:
        if value is None:
            return None
        typ = "int"
    if "AllocationMode" in typ or "PairPower" in typ:
        enum_cls = AllocationMode if "AllocationMode" in typ else PairPower
        try:
            return enum_cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"{key}: expected one of {[e.value for e in enum_cls]}, got {value!r}")
    if typ == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if typ == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if typ == "float":
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a sign (1e5) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    return value


def _build_section(name: str, cls, data: Mapping[str, Any]):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{name}: expected a section of key-value pairs")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {unknown}")
    kwargs = {k: _coerce(f"{name}.{k}", v, known[k].default, str(known[k].type)) for k, v in data.items()}
    return cls(**kwargs)


def _build_utility(name: str, data: Mapping[str, Any], default: UtilitySpec) -> UtilitySpec:
    """Only the parameters of the chosen class are accepted; the rest stay at defaults."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{name}: expected a section of key-value pairs")
    unknown = sorted(set(data) - set(_UTILITY_KEYS))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {unknown}")
    try:
        app = AppClass(str(data.get("app_class", default.app_class.value)).upper())
    except ValueError:
        raise ConfigError(f"{name}.app_class: expected one of {[c.value for c in AppClass]}, "
                          f"got {data['app_class']!r}")
    params = default.params() if app is default.app_class else UtilitySpec(app).params()
    for k, v in data.items():
        if k == "app_class":
            continue
        if k not in params:
            raise ConfigError(f"{name}.{k}: not a parameter of {app.value} (expects {sorted(params)})")
        params[k] = _coerce(f"{name}.{k}", v, None, "float")
        if not params[k] > 0:
            raise ConfigError(f"{name}.{k}: must be > 0")
    return UtilitySpec(app, **params)


def config_from_dict(data: Mapping[str, Any]) -> DropConfig:
    data = dict(data or {})
    base = DropConfig()
    top = {f.name: f for f in fields(DropConfig)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        name = _KEY_ALIASES.get(key, key)
        if key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value)
        elif key == "utility":
            if not isinstance(value, Mapping):
                raise ConfigError("utility: expected a section of key-value pairs")
            unknown = sorted(set(value) - {"ue", "mtcd", "pair"})
            if unknown:
                raise ConfigError(f"utility: unknown population(s) {unknown}")
            kwargs["utility"] = UtilityConfig(**{
                pop: _build_utility(f"utility.{pop}", value[pop], getattr(base.utility, pop))
                for pop in value})
        elif name in top and name not in ("layout", "population", "channel", "utility",
                                          "scheduler", "graphalloc") and key != "lam":
            kwargs[name] = _coerce(key, value, top[name].default, str(top[name].type))
        else:
            raise ConfigError(f"unknown key {key!r}")
    cfg = DropConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: DropConfig) -> None:
    def need(ok: bool, key: str, constraint: str):
        if not ok:
            raise ConfigError(f"{key}: must satisfy {constraint}")

    need(0.0 <= cfg.lam <= 1.0, "lambda", "0 <= lambda <= 1")
    need(0.0 <= cfg.duty <= 1.0, "duty", "0 <= duty <= 1")
    need(cfg.num_drops >= 1, "num_drops", "num_drops >= 1")
    need(cfg.seed >= 0, "seed", "seed >= 0")
    lay = cfg.layout
    need(lay.num_sites in (1, 7, 19), "layout.num_sites", "num_sites in {1, 7, 19}")
    need(lay.isd > 0, "layout.isd", "isd > 0")
    need(not (lay.wraparound and lay.num_sites == 1), "layout.wraparound", "wraparound needs 7 or 19 sites")
    need(lay.apartment_size > 0, "layout.apartment_size", "apartment_size > 0")
    need(lay.stripe_gap >= 0, "layout.stripe_gap", "stripe_gap >= 0")
    pop = cfg.population
    for k in ("ues_per_sector", "outdoor_mtcds_per_sector", "indoor_pairs_per_block", "mtcgs_per_sector"):
        need(getattr(pop, k) >= 0, f"population.{k}", f"{k} >= 0")
    need(pop.indoor_pairs_per_block <= 80, "population.indoor_pairs_per_block", "at most one pair per apartment (80)")
    need(pop.min_distance >= 0, "population.min_distance", "min_distance >= 0")
    ch = cfg.channel
    need(ch.shadowing_std_db >= 0, "channel.shadowing_std_db", "shadowing_std_db >= 0")
    need(0 <= ch.shadowing_inter_site_corr <= 1, "channel.shadowing_inter_site_corr", "0 <= corr <= 1")
    need(ch.rb_bandwidth_hz > 0, "channel.rb_bandwidth_hz", "rb_bandwidth_hz > 0")
    need(ch.num_rbs >= 1, "channel.num_rbs", "num_rbs >= 1")
    need(ch.macro_floor_m > 0, "channel.macro_floor_m", "macro_floor_m > 0")
    need(ch.d2d_breakpoint_m > 0, "channel.d2d_breakpoint_m", "d2d_breakpoint_m > 0")
    need(ch.rate_alpha > 0, "channel.rate_alpha", "rate_alpha > 0")
    need(ch.rate_eta_max > 0, "channel.rate_eta_max", "rate_eta_max > 0")
    need(cfg.scheduler.mtcd_demand_bps >= 0, "scheduler.mtcd_demand_bps", "mtcd_demand_bps >= 0")
    g = cfg.graphalloc
    need(g.iterations >= 1, "graphalloc.iterations", "iterations >= 1")
    need(0 <= g.p0 <= 1, "graphalloc.p0", "0 <= p0 <= 1")
    need(g.num_colors is None or g.num_colors >= 1, "graphalloc.num_colors", "num_colors >= 1")


def config_to_dict(cfg: DropConfig) -> dict[str, Any]:
    def plain(v):
        if isinstance(v, enum.Enum):
            return v.value
        return v

    out: dict[str, Any] = {}
    for f in fields(DropConfig):
        v = getattr(cfg, f.name)
        key = _FIELD_KEYS.get(f.name, f.name)
        if f.name == "utility":
            out[key] = {pop: {"app_class": getattr(v, pop).app_class.value, **getattr(v, pop).params()}
                        for pop in ("ue", "mtcd", "pair")}
        elif dataclasses.is_dataclass(v):
            out[key] = {k: plain(x) for k, x in dataclasses.asdict(v).items()}
        else:
            out[key] = plain(v)
    return out


def _parse_scalar(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override value {text!r}: {e}")


def apply_overrides(data: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``key=value`` overrides; ``key`` is dotted or an unambiguous leaf name."""
    data = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in data.items()}
    defaults = config_to_dict(DropConfig())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        value = _parse_scalar(text.strip())
        path = key.split(".")
        if len(path) == 1 and key not in defaults:
            hits = [(sec, key) for sec, body in defaults.items() if isinstance(body, dict) and key in body]
            if len(hits) != 1:
                raise ConfigError(f"override key {key!r} is unknown or ambiguous; use section.key")
            path = list(hits[0])
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} does not address a section")
        node[path[-1]] = value
    return data


def parse_config(path: Optional[Path | str] = None, overrides: Iterable[str] = ()) -> DropConfig:
    """Load a YAML config (defaults when ``path`` is None) and apply overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"{path}: parse error{where}: {getattr(e, 'problem', e)}")
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = dict(loaded)
    return config_from_dict(apply_overrides(data, overrides))


def dump_config(cfg: DropConfig, path: Path | str) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
