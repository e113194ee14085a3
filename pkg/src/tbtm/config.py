"""Flat ``key=value`` configuration files.

Recognized keys: alpha, beta, gamma, delta, t0, mu, nu, epsilon, tau, ratio.
Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

from tbtm.control import Thresholds
from tbtm.errors import ConfigError
from tbtm.trust import OffsetRatio, WeightParams

WEIGHT_KEYS = ("alpha", "beta", "gamma", "delta", "t0")
THRESHOLD_KEYS = ("mu", "nu", "epsilon", "tau")
KNOWN_KEYS = (*WEIGHT_KEYS, *THRESHOLD_KEYS, "ratio")


def parse_config(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in KNOWN_KEYS:
            raise ConfigError(f"config line {lineno}: expected one of {', '.join(KNOWN_KEYS)} as key=value")
        values[key] = value.strip()
    return values


def load_config(path: str | Path | None) -> tuple[WeightParams, Thresholds, OffsetRatio]:
    values = parse_config(Path(path).read_text(encoding="utf-8")) if path else {}
    return build(values)


def build(values: dict[str, str]) -> tuple[WeightParams, Thresholds, OffsetRatio]:
    try:
        params = WeightParams(**{**asdict(WeightParams()), **{k: float(values[k]) for k in WEIGHT_KEYS if k in values}})
        th_defaults = asdict(Thresholds())
        th_values = {k: float(values[k]) for k in ("mu", "nu", "epsilon") if k in values}
        if "tau" in values:
            th_values["tau"] = int(values["tau"])
        thresholds = Thresholds(**{**th_defaults, **th_values})
        ratio = OffsetRatio.parse(values["ratio"]) if "ratio" in values else OffsetRatio()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return params, thresholds, ratio


def dump(params: WeightParams, thresholds: Thresholds, ratio: OffsetRatio) -> str:
    lines = [f"{k}={getattr(params, k)!r}" for k in WEIGHT_KEYS]
    lines += [f"{k}={getattr(thresholds, k)!r}" for k in THRESHOLD_KEYS]
    lines.append(f"ratio={ratio}")
    return "\n".join(lines) + "\n"
