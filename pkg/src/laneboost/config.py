"""Scenario configuration: TOML parsing with strict keys and line-precise errors."""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field, fields, is_dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .agents import (
    AgentSpec,
    Competitive,
    FixedBidReseller,
    ResaleUser,
    Role,
    ValueTrackingReseller,
)
from .analytics import DEFAULT_FOCUS, KNOWN_CONTRACTS, ClassifierRules, LIQUID_ASSETS
from .market import (
    OBSERVED_SEGMENTATION,
    Amount,
    RegimeSegmentation,
    RoundSchedule,
    Unit,
    eth,
    format_utc,
    parse_utc,
)
from .reserve import Fixed, ReservePolicy, Schedule, VolIndexed
from .resale import Channel
from .sequencer import SequencerConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


# --- line index --------------------------------------------------------------

_HEADER = re.compile(r"^\s*(\[\[?)\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths like ``("agents", 1, "shade")`` to 1-based line numbers."""
    index: dict[tuple, int] = {}
    prefix: tuple = ()
    counts: dict[str, int] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        m = _HEADER.match(line)
        if m:
            name = m.group(2)
            if m.group(1) == "[[":
                i = counts.get(name, 0)
                counts[name] = i + 1
                prefix = (name, i)
            else:
                prefix = tuple(name.split("."))
            index.setdefault(prefix, no)
            continue
        k = _KEY.match(line)
        if k:
            index.setdefault(prefix + (k.group(1),), no)
    return index


class _Reader:
    """Pops keys from a table, tracking the path for error messages."""

    def __init__(self, table: dict, path: tuple, lines: dict, source: str):
        self.table = dict(table)
        self.path = path
        self.lines = lines
        self.source = source

    def line(self, key: Any = None) -> Optional[int]:
        p = self.path + ((key,) if key is not None else ())
        while p:
            if p in self.lines:
                return self.lines[p]
            p = p[:-1]
        return None

    def error(self, key: Any, msg: str) -> ConfigError:
        dotted = ".".join(str(x) for x in self.path + ((key,) if key is not None else ()))
        return ConfigError(f"{dotted}: {msg}" if dotted else msg, self.line(key), self.source)

    def get(self, key: str, default: Any = ..., types: tuple = ()) -> Any:
        if key not in self.table:
            if default is ...:
                raise self.error(key, "missing required key")
            return default
        v = self.table.pop(key)
        if types and not isinstance(v, types) or (types and isinstance(v, bool) and bool not in types):
            raise self.error(key, f"expected {'/'.join(t.__name__ for t in types)}, got {type(v).__name__}")
        return v

    def sub(self, key: str, required: bool = False) -> "_Reader":
        v = self.get(key, ... if required else {}, (dict,))
        return _Reader(v, self.path + (key,), self.lines, self.source)

    def finish(self) -> None:
        if self.table:
            k = sorted(self.table)[0]
            raise self.error(k, "unknown key")

    def amount(self, key: str, default: Any = ...) -> Any:
        v = self.get(key, default, (str, int, float))
        if v is None or v is default and not isinstance(v, (str, int, float)):
            return v
        try:
            a = eth(v)
        except ValueError as exc:
            raise self.error(key, str(exc)) from None
        if a.units < 0:
            raise self.error(key, "amount must be non-negative")
        return a

    def time(self, key: str, default: Any = ...) -> Any:
        v = self.get(key, default, (str, int))
        if isinstance(v, int):
            return v
        if not isinstance(v, str):
            return v
        try:
            return parse_utc(v)
        except ValueError as exc:
            raise self.error(key, str(exc)) from None


# --- config types ------------------------------------------------------------


@dataclass(frozen=True)
class PriceConfig:
    asset: str = "ETH"
    p0: float = 3000.0
    vol: tuple[tuple[int, float], ...] = ((0, 1e-4),)
    vol_of_vol: float = 0.0
    vol_persistence: float = 0.999
    reference_vol: float = 1e-4


@dataclass(frozen=True)
class TradingConfig:
    markout_ms: int = 5_000
    fee_usd: Amount = field(default_factory=lambda: Amount.of("0.05", Unit.USD))
    notional_usd: float = 50_000.0
    dislocation: float = 3.0  # DEX dislocation per unit of per-second vol
    dex_asset: str = "WETH"
    quote_asset: str = "USDC"


@dataclass(frozen=True)
class ResellerConfig:
    id: str = "kairos"
    window_ms: int = 100
    latency_ms: int = 80
    subscription_fee: Amount = field(default_factory=Amount.zero)  # flat, per controlled round


@dataclass(frozen=True)
class AnalyticsConfig:
    focus: tuple[tuple[str, str], ...] = DEFAULT_FOCUS
    reseller: str = "kairos"
    session_minutes: tuple[int, int] = (14 * 60 + 30, 21 * 60)
    classifier: Optional[ClassifierRules] = None


@dataclass(frozen=True)
class CalibrationConfig:
    windows_ms: tuple[int, ...] = tuple(w * 1000 for w in (30, 60, 120, 300, 600, 900, 1800, 3600))
    cs: tuple[float, ...] = tuple(float(c) for c in range(100_000, 2_100_000, 100_000))
    floor: Amount = field(default_factory=lambda: eth("0.001"))
    cap: Amount = field(default_factory=lambda: eth("1"))


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    rounds: int
    start: int
    schedule: RoundSchedule
    sequencer: SequencerConfig
    regimes: RegimeSegmentation
    reserve: ReservePolicy
    prices: PriceConfig
    valuation_window_ms: int
    trading: TradingConfig
    reseller: Optional[ResellerConfig]
    agents: tuple[AgentSpec, ...]
    analytics: AnalyticsConfig
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        from dataclasses import replace

        return replace(self, seed=seed)

    def canonical(self) -> dict:
        return _jsonable(self)

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _jsonable(o: Any) -> Any:
    if isinstance(o, Amount):
        return f"{o} {o.unit.value}"
    if is_dataclass(o):
        d = {f.name: _jsonable(getattr(o, f.name)) for f in fields(o)}
        d["type"] = type(o).__name__
        return d
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple, frozenset, set)):
        items = [_jsonable(v) for v in o]
        return sorted(items, key=repr) if isinstance(o, (set, frozenset)) else items
    if hasattr(o, "value") and hasattr(o, "name"):  # enums
        return o.value
    if isinstance(o, float):
        return repr(o)
    return o


# --- parsing -----------------------------------------------------------------


def _schedule(r: _Reader) -> RoundSchedule:
    try:
        s = RoundSchedule(
            r.get("round_length_ms", 60_000, (int,)),
            r.get("wall_clock_shift_ms", 9_000, (int,)),
            r.get("bid_close_offset_ms", 45_000, (int,)),
        )
    except ValueError as exc:
        raise r.error(None, str(exc)) from None
    r.finish()
    return s


def _sequencer(r: _Reader) -> SequencerConfig:
    try:
        s = SequencerConfig(r.get("regular_delay_ms", 200, (int,)), r.get("express_base_latency_ms", 0, (int,)))
    except ValueError as exc:
        raise r.error(None, str(exc)) from None
    r.finish()
    return s


def _regimes(r: _Reader) -> RegimeSegmentation:
    raw = r.get("boundaries", None, (list,))
    r.finish()
    if raw is None:
        return OBSERVED_SEGMENTATION
    try:
        pairs = []
        for item in raw:
            t, name = item
            pairs.append((parse_utc(t) if isinstance(t, str) else int(t), str(name)))
        return RegimeSegmentation(tuple(pairs))
    except (ValueError, TypeError) as exc:
        raise r.error("boundaries", str(exc)) from None


def _reserve(r: _Reader) -> ReservePolicy:
    kind = r.get("kind", "fixed", (str,))
    try:
        if kind == "fixed":
            p: ReservePolicy = Fixed(r.amount("amount_eth", "0.001"))
        elif kind == "schedule":
            steps = []
            for item in r.get("steps", ..., (list,)):
                t, a = item
                steps.append((parse_utc(t) if isinstance(t, str) else int(t), eth(a)))
            p = Schedule(tuple(steps))
        elif kind == "vol_indexed":
            p = VolIndexed(
                float(r.get("c", ..., (int, float))),
                int(round(float(r.get("window_s", ..., (int, float))) * 1000)),
                r.amount("floor_eth", "0.001"),
                r.amount("cap_eth", "1"),
            )
        else:
            raise r.error("kind", f"unknown reserve kind {kind!r}")
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise r.error(None, str(exc)) from None
    r.finish()
    return p


def _prices(r: _Reader, start: int) -> PriceConfig:
    vol_raw = r.get("vol", 1e-4, (list, int, float))
    if isinstance(vol_raw, (int, float)):
        vol = ((start, float(vol_raw)),)
    else:
        try:
            vol = tuple((parse_utc(t) if isinstance(t, str) else int(t), float(v)) for t, v in vol_raw)
        except (ValueError, TypeError) as exc:
            raise r.error("vol", str(exc)) from None
    if any(v <= 0 for _, v in vol):
        raise r.error("vol", "per-regime vol must be positive")
    cfg = PriceConfig(
        r.get("asset", "ETH", (str,)),
        float(r.get("p0", 3000.0, (int, float))),
        vol,
        float(r.get("vol_of_vol", 0.0, (int, float))),
        float(r.get("vol_persistence", 0.999, (int, float))),
        float(r.get("reference_vol", vol[0][1], (int, float))),
    )
    if not 0 <= cfg.vol_persistence < 1:
        raise r.error("vol_persistence", "must be in [0, 1)")
    r.finish()
    return cfg


def _trading(r: _Reader) -> TradingConfig:
    fee = r.get("fee_usd", "0.05", (str, int, float))
    cfg = TradingConfig(
        int(round(float(r.get("markout_s", 5, (int, float))) * 1000)),
        Amount.of(fee, Unit.USD),
        float(r.get("notional_usd", 50_000.0, (int, float))),
        float(r.get("dislocation", 3.0, (int, float))),
        r.get("dex_asset", "WETH", (str,)),
        r.get("quote_asset", "USDC", (str,)),
    )
    r.finish()
    return cfg


def _reseller(r: _Reader) -> Optional[ResellerConfig]:
    if not r.table:
        return None
    cfg = ResellerConfig(
        r.get("id", "kairos", (str,)),
        r.get("window_ms", 100, (int,)),
        r.get("latency_ms", 80, (int,)),
        r.amount("subscription_fee_eth", "0"),
    )
    if cfg.window_ms <= 0 or cfg.latency_ms < 0:
        raise r.error(None, "window_ms must be positive and latency_ms non-negative")
    r.finish()
    return cfg


_STRATEGY_KEYS = {"probe_bid_eth", "fixed_bid_eth", "markup"}


def _agent(r: _Reader) -> AgentSpec:
    ident = r.get("id", ..., (str,))
    kind = r.get("strategy", ..., (str,))
    if kind == "Competitive":
        strat: Any = Competitive()
    elif kind == "ResaleUser":
        strat = ResaleUser(r.amount("probe_bid_eth", None))
    elif kind == "FixedBidReseller":
        strat = FixedBidReseller(r.amount("fixed_bid_eth"))
    elif kind == "ValueTrackingReseller":
        strat = ValueTrackingReseller(float(r.get("markup", 0.0, (int, float))))
    else:
        raise r.error("strategy", f"unknown strategy {kind!r}")
    stray = _STRATEGY_KEYS & set(r.table)
    if stray:
        raise r.error(sorted(stray)[0], f"not valid for strategy {kind}")
    default_role = "Reseller" if "Reseller" in kind else "Searcher"
    try:
        role = Role(r.get("role", default_role, (str,)))
        channel = Channel(r.get("channel", "OnChain", (str,)))
    except ValueError as exc:
        raise r.error(None, str(exc)) from None
    react = r.get("reaction_ms", [0, 50], (list,))
    try:
        spec = AgentSpec(
            ident, role, strat,
            value_coeff=float(r.get("value_coeff", 0.0, (int, float))),
            shade=float(r.get("shade", 1.0, (int, float))),
            noise=float(r.get("noise", 0.0, (int, float))),
            opportunity_rate=float(r.get("opportunity_rate", 0.0, (int, float))),
            participation=float(r.get("participation", 1.0, (int, float))),
            detect_prob=float(r.get("detect_prob", 1.0, (int, float))),
            subscribes=r.get("subscribes", False, (bool,)),
            channel=channel,
            payment_fraction=float(r.get("payment_fraction", 0.0, (int, float))),
            reaction_ms=(int(react[0]), int(react[1])),
        )
    except (ValueError, IndexError, TypeError) as exc:
        raise r.error(None, str(exc)) from None
    r.finish()
    return spec


def _analytics(r: _Reader) -> AnalyticsConfig:
    focus = tuple((str(a), str(b)) for a, b in r.get("focus", [list(x) for x in DEFAULT_FOCUS], (list,)))
    reseller = r.get("reseller", "kairos", (str,))
    s0, s1 = r.get("session_utc", ["14:30", "21:00"], (list,))

    def minutes(s: str) -> int:
        h, m = s.split(":")
        return int(h) * 60 + int(m)

    contracts = r.get("target_contracts", None, (dict,))
    liquid = r.get("liquid_assets", sorted(LIQUID_ASSETS), (list,))
    rules = ClassifierRules(
        {k: frozenset(v) for k, v in (contracts or KNOWN_CONTRACTS).items()},
        frozenset(a.upper() for a in liquid),
        int(r.get("max_swap_events", 1, (int,))),
    )
    r.finish()
    return AnalyticsConfig(focus, reseller, (minutes(s0), minutes(s1)), rules)


def _calibration(r: _Reader) -> CalibrationConfig:
    d = CalibrationConfig()
    windows = r.get("windows_s", None, (list,))
    cs = r.get("c", None, (list,))
    try:
        cfg = CalibrationConfig(
            tuple(int(round(float(w) * 1000)) for w in windows) if windows is not None else d.windows_ms,
            tuple(float(c) for c in cs) if cs is not None else d.cs,
            r.amount("floor_eth", "0.001"),
            r.amount("cap_eth", "1"),
        )
    except (TypeError, ValueError) as exc:
        raise r.error(None, str(exc)) from None
    if not cfg.windows_ms or not cfg.cs:
        raise r.error(None, "calibration grids must be non-empty")
    if any(w < 2_000 for w in cfg.windows_ms):
        raise r.error("windows_s", "windows must be at least 2 s")
    if cfg.floor.units <= 0 or cfg.cap < cfg.floor:
        raise r.error(None, "need 0 < floor_eth <= cap_eth")
    r.finish()
    return cfg


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, source) from None
    lines = _line_index(text)
    top = _Reader(raw, (), lines, source)
    name = top.get("name", Path(source).stem, (str,))
    seed = top.get("seed", 0, (int,))
    if not 0 <= seed < 2**64:
        raise top.error("seed", "must be a 64-bit unsigned integer")
    rounds = top.get("rounds", ..., (int,))
    if rounds < 1:
        raise top.error("rounds", "must be >= 1")
    schedule = _schedule(top.sub("schedule"))
    start = top.time("start")
    if (start - schedule.phase) % schedule.round_length:
        raise top.error("start", f"{format_utc(start)} is not a round boundary")
    sequencer = _sequencer(top.sub("sequencer"))
    regimes = _regimes(top.sub("regimes"))
    reserve = _reserve(top.sub("reserve"))
    prices = _prices(top.sub("prices"), start)
    val = top.sub("valuation")
    window_ms = int(round(float(val.get("window_s", 300, (int, float))) * 1000))
    if window_ms < 2_000:
        raise val.error("window_s", "must be at least 2 s")
    val.finish()
    trading = _trading(top.sub("trading"))
    reseller = _reseller(top.sub("reseller"))
    agents_raw = top.get("agents", [], (list,))
    agents = tuple(_agent(_Reader(a, ("agents", i), lines, source)) for i, a in enumerate(agents_raw))
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate agent id", lines.get(("agents", len(ids) - 1)), source)
    if not agents:
        raise top.error("agents", "at least one agent required")
    if reseller is not None and reseller.id not in ids:
        raise top.error("reseller", f"reseller {reseller.id!r} is not among the agents")
    analytics = _analytics(top.sub("analytics"))
    calibration = _calibration(top.sub("calibration"))
    top.finish()
    if regimes.start > start:
        raise top.error("regimes", "first regime boundary must not be after the scenario start")
    return ScenarioConfig(name, seed, rounds, start, schedule, sequencer, regimes, reserve, prices,
                          window_ms, trading, reseller, agents, analytics, calibration)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("laneboost.presets").iterdir() if p.name.endswith(".toml"))


def load_config(path_or_preset: str | Path) -> tuple[ScenarioConfig, str]:
    """Load a config file, or a bundled preset by name. Returns (config, text)."""
    p = Path(path_or_preset)
    if p.exists():
        text = p.read_text()
        return parse_config(text, str(p)), text
    name = str(path_or_preset).removesuffix(".toml")
    res = resources.files("laneboost.presets") / f"{name}.toml"
    if not res.is_file():
        raise ConfigError(f"no such config file or preset (presets: {', '.join(preset_names())})",
                          source=str(path_or_preset))
    text = res.read_text()
    return parse_config(text, f"preset:{name}"), text
