"""Fully resolved hardware configuration shared by the emitter, simulator,
validator and dataset tooling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .arith import ArithParamError, MacConfig, Unit, acc_width_for, parse_unit
from .spec_parser import (DATA_WIDTHS, SUPPORTED_SIZES, WEIGHT_WIDTHS, DesignSpec,
                          canonicalize)

__all__ = ["ConfigError", "TpuConfig", "HEADER_TAG", "config_from_spec", "spec_from_config"]

HEADER_TAG = "// TPUGEN "


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TpuConfig:
    """One square output-stationary TPU.

    ``mult`` is evaluated at the operand width ``max(dw, ww)``; ``adder`` is
    the accumulator adder, evaluated at ``acc_width``.
    """

    S: int
    dw: int
    ww: int
    mult: Unit = field(default_factory=lambda: Unit("mult", "exact"))
    adder: Unit = field(default_factory=lambda: Unit("adder", "exact"))
    acc_width: int = 0
    fifo_depth: int = 0
    clock_period_ns: float = 2.0
    dataflow: str = "OS"

    def __post_init__(self):
        if self.S not in SUPPORTED_SIZES:
            raise ConfigError(f"array size {self.S} not in {SUPPORTED_SIZES}")
        if self.dw not in DATA_WIDTHS:
            raise ConfigError(f"data width {self.dw} not in {DATA_WIDTHS}")
        if self.ww not in WEIGHT_WIDTHS:
            raise ConfigError(f"weight width {self.ww} outside [3, 32]")
        if self.dataflow != "OS":
            raise ConfigError(f"only output-stationary dataflow is supported, got {self.dataflow!r}")
        w = self.width
        try:
            object.__setattr__(self, "mult", self.mult.resolved(w))
            object.__setattr__(self, "adder", self.adder.resolved(w))
        except ArithParamError as e:
            raise ConfigError(str(e)) from None
        if not self.acc_width:
            object.__setattr__(self, "acc_width", acc_width_for(w))
        if not self.fifo_depth:
            object.__setattr__(self, "fifo_depth", 2 * self.S)
        object.__setattr__(self, "clock_period_ns", float(self.clock_period_ns))
        if self.acc_width < 2 * w or self.acc_width < self.dw + self.ww:
            raise ConfigError(f"acc_width {self.acc_width} below product width {2 * w}")
        if not self.clock_period_ns > 0:
            raise ConfigError("clock period must be positive")
        try:
            self.mac_config()
        except ArithParamError as e:
            raise ConfigError(str(e)) from None

    @property
    def width(self) -> int:
        """Multiplier operand width."""
        return max(self.dw, self.ww)

    def mac_config(self) -> MacConfig:
        return MacConfig(self.mult, self.adder, self.width, self.acc_width)

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "dw": self.dw,
            "ww": self.ww,
            "mult": str(self.mult),
            "adder": str(self.adder),
            "acc_width": self.acc_width,
            "fifo_depth": self.fifo_depth,
            "clock_period_ns": self.clock_period_ns,
            "dataflow": self.dataflow,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TpuConfig":
        known = {"S", "dw", "ww", "mult", "adder", "acc_width", "fifo_depth", "clock_period_ns", "dataflow"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        try:
            return cls(
                S=int(d["S"]),
                dw=int(d["dw"]),
                ww=int(d["ww"]),
                mult=parse_unit(d.get("mult", "exact"), "mult"),
                adder=parse_unit(d.get("adder", "exact"), "adder"),
                acc_width=int(d.get("acc_width", 0)),
                fifo_depth=int(d.get("fifo_depth", 0)),
                clock_period_ns=float(d.get("clock_period_ns", 2.0)),
                dataflow=d.get("dataflow", "OS"),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad config: {e}") from None

    def header_line(self) -> str:
        return HEADER_TAG + json.dumps(self.to_dict(), sort_keys=True)

    def sort_key(self) -> tuple:
        return (self.S, self.dw, self.ww, str(self.mult), str(self.adder),
                self.acc_width, self.fifo_depth, self.clock_period_ns)

    def with_size(self, S: int) -> "TpuConfig":
        return replace(self, S=S, fifo_depth=0)


def config_from_spec(spec: DesignSpec) -> TpuConfig:
    spec = canonicalize(spec)
    if spec.rows != spec.cols:
        raise ConfigError(f"the systolic template is square; got {spec.rows}x{spec.cols}")
    return TpuConfig(S=spec.rows, dw=spec.dw, ww=spec.ww, mult=spec.mult, adder=spec.adder,
                     clock_period_ns=spec.clock_period_ns)


def spec_from_config(cfg: TpuConfig, label: str | None = None, budget=None) -> DesignSpec:
    return canonicalize(DesignSpec(rows=cfg.S, cols=cfg.S, dw=cfg.dw, ww=cfg.ww, mult=cfg.mult,
                                   adder=cfg.adder, budget=budget, label=label,
                                   clock_period_ns=cfg.clock_period_ns))
