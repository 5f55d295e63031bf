"""Flat ``key = value`` configuration files.

Each key names a field of one of the configuration dataclasses. A key
declared by several of them (``lookback``, ``epsilon``, ``spike_period``)
sets all of them; ``section.key`` targets one section. Unknown keys are
errors. Lines starting with ``#`` are comments.

Tuple fields take comma-separated items; ``a:b`` inside an integer tuple
expands to ``range(a, b)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .evalkit import BacktestConfig
from .forecaster import ConfigurationError, ForecasterConfig
from .hybrid import RouterConfig, VnngpFitConfig
from .simlab import SimConfig
from .vnngp import KernelParams
from .zinb import ZinbHeadConfig


@dataclass
class RunConfig:
    train_end: int = -1  # negative counts back from the panel end, -1 = last step
    log_level: str = "WARNING"

    def resolve_train_end(self, panel) -> int:
        return self.train_end if self.train_end >= 0 else panel.end_index + 1 + self.train_end


SECTIONS = {
    "forecaster": ForecasterConfig,
    "kernel": KernelParams,
    "router": RouterConfig,
    "vnngp": VnngpFitConfig,
    "zinb": ZinbHeadConfig,
    "sim": SimConfig,
    "backtest": BacktestConfig,
    "run": RunConfig,
}


@dataclass
class PipelineConfig:
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    kernel: KernelParams = field(default_factory=KernelParams)
    router: RouterConfig = field(default_factory=RouterConfig)
    vnngp: VnngpFitConfig = field(default_factory=VnngpFitConfig)
    zinb: ZinbHeadConfig = field(default_factory=ZinbHeadConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            for k, v in asdict(getattr(self, name)).items():
                if isinstance(v, (tuple, list)):
                    v = ",".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = str(v).lower()
                lines.append(f"{name}.{k} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _owners() -> dict[str, list[str]]:
    owners: dict[str, list[str]] = {}
    for section, cls in SECTIONS.items():
        for f in fields(cls):
            owners.setdefault(f.name, []).append(section)
    return owners


def _parse_scalar(text: str, like, key: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {type(like).__name__}") from None
    return text


def _parse_item(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_tuple(text: str, key: str) -> tuple:
    out = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        if ":" in item:
            a, b = item.split(":", 1)
            try:
                out.extend(range(int(a), int(b)))
            except ValueError:
                raise ConfigurationError(f"{key}: bad range {item!r}") from None
        else:
            out.append(_parse_item(item))
    return tuple(out)


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    owners = _owners()
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS or name not in owners or section not in owners[name]:
                raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
            targets = [section]
        else:
            if key not in owners:
                raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
            name, targets = key, owners[key]
        for section in targets:
            default = getattr(SECTIONS[section](), name)
            parsed = _parse_tuple(value, key) if isinstance(default, tuple) else _parse_scalar(value, default, key)
            values[section][name] = parsed
    try:
        return PipelineConfig(**{s: SECTIONS[s](**values[s]) for s in SECTIONS})
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(), str(path))
