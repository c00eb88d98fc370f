"""Willingness-to-pay models mapping conversion probability to price."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol


class WTPModel(Protocol):
    """Inverse demand: the price that converts a fraction ``lam`` of arrivals."""

    def price(self, lam: float) -> float: ...

    def conversion(self, price: float) -> float: ...


@dataclass(frozen=True)
class UniformWTP:
    """Willingness to pay uniform on ``[low, high]`` (per unit distance by default)."""

    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("UniformWTP needs high > low")

    def price(self, lam: float) -> float:
        return self.high - lam * (self.high - self.low)

    def conversion(self, price: float) -> float:
        return min(1.0, max(0.0, (self.high - price) / (self.high - self.low)))


@dataclass(frozen=True)
class ExponentialWTP:
    """Exponential willingness to pay with mean ``scale``; lam * p(lam) is concave."""

    scale: float = 1.0

    def price(self, lam: float) -> float:
        if lam <= 0.0:
            return math.inf
        return -self.scale * math.log(lam)

    def conversion(self, price: float) -> float:
        return math.exp(-max(price, 0.0) / self.scale)


@dataclass(frozen=True)
class CustomWTP:
    """Wraps arbitrary inverse-demand callables (``conversion`` optional)."""

    price_fn: Callable[[float], float]
    conversion_fn: Callable[[float], float] | None = None

    def price(self, lam: float) -> float:
        return self.price_fn(lam)

    def conversion(self, price: float) -> float:
        if self.conversion_fn is None:
            raise NotImplementedError("no conversion function supplied")
        return self.conversion_fn(price)


def wtp_from_dict(spec: dict | None) -> WTPModel:
    """Build a WTP model from a config mapping such as ``{"kind": "uniform"}``."""
    if not spec:
        return UniformWTP()
    spec = dict(spec)
    kind = spec.pop("kind", "uniform")
    if kind == "uniform":
        return UniformWTP(**spec)
    if kind == "exponential":
        return ExponentialWTP(**spec)
    raise ValueError(f"unknown wtp kind {kind!r}")


def wtp_to_dict(model: WTPModel) -> dict:
    if isinstance(model, UniformWTP):
        return {"kind": "uniform", "low": model.low, "high": model.high}
    if isinstance(model, ExponentialWTP):
        return {"kind": "exponential", "scale": model.scale}
    raise ValueError(f"cannot serialise {type(model).__name__}")
