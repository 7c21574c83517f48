"""Named registries for drifts, diffusions, drivers and path functionals.

Experiment configs select entries by name plus a parameter map; custom
entries register through the `register` decorator.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .engine import PathFunctional
from .errors import UnknownRegistryName
from .generators import canonical_nonconvex_driver, quadratic_driver

_REGISTRIES: dict[str, dict[str, Callable]] = {
    "drift": {},
    "sigma": {},
    "f": {},
    "g": {},
    "h": {},
    "xi": {},
}


def register(kind: str, name: str):
    def deco(factory):
        _REGISTRIES[kind][name] = factory
        return factory
    return deco


def resolve(kind: str, name: str, params: dict | None = None):
    reg = _REGISTRIES[kind]
    if name not in reg:
        raise UnknownRegistryName(kind, name, list(reg))
    return reg[name](**(params or {}))


def available(kind: str | None = None) -> dict[str, list[str]]:
    if kind is not None:
        return {kind: sorted(_REGISTRIES[kind])}
    return {k: sorted(v) for k, v in _REGISTRIES.items()}


# ---------------------------------------------------------------- drifts

@register("drift", "zero")
def _drift_zero():
    fn = lambda x: np.zeros_like(x)
    jac = lambda x: np.zeros((x.shape[0], x.shape[1], x.shape[1]))
    return fn, jac


@register("drift", "linear")
def _drift_linear(coef: float = 1.0):
    fn = lambda x: coef * x
    jac = lambda x: coef * np.broadcast_to(
        np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy()
    return fn, jac


@register("drift", "ou")
def _drift_ou(kappa: float = 1.0):
    fn = lambda x: -kappa * x
    jac = lambda x: -kappa * np.broadcast_to(
        np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy()
    return fn, jac


@register("drift", "sin")
def _drift_sin(scale: float = 1.0):
    # componentwise sin drift, smooth bounded test model
    fn = lambda x: scale * np.sin(x)
    def jac(x):
        P, d = x.shape
        out = np.zeros((P, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = scale * np.cos(x)
        return out
    return fn, jac


# ------------------------------------------------------------- diffusions

@register("sigma", "constant")
def _sigma_constant(value: float = 1.0, mode: str = "F1"):
    if mode == "F1":
        return (lambda t: value), None
    return (lambda x: np.full(x.shape[0], value)), None


@register("sigma", "tanh_bounded")
def _sigma_tanh(base: float = 1.0, amplitude: float = 0.5):
    # sigma(x) = base + amplitude*tanh(x_1): bounded, Lipschitz (F2)
    fn = lambda x: base + amplitude * np.tanh(x[:, 0])
    def jac(x):
        P, d = x.shape
        out = np.zeros((P, d, d, d))
        out[:, 0, 0, 0] = amplitude / np.cosh(x[:, 0]) ** 2
        return out
    return fn, jac


# ---------------------------------------------------------------- drivers f

@register("f", "zero")
def _f_zero():
    return None


@register("f", "constant")
def _f_constant(c: float = 1.0):
    return lambda t, y, z: np.full(np.shape(y), c, dtype=float)


@register("f", "linear_y")
def _f_linear_y(a: float = 1.0):
    return lambda t, y, z: a * np.asarray(y, float)


@register("f", "scaled_tanh_y")
def _f_scaled_tanh(c: float = 0.5):
    return lambda t, y, z: c * np.tanh(np.asarray(y, float))


# ---------------------------------------------------------------- drivers g

@register("g", "zero")
def _g_zero():
    return None, None


@register("g", "half_square")
def _g_half_square():
    return quadratic_driver()


@register("g", "canonical_nonconvex")
def _g_canonical(gamma: float = 2.0):
    return canonical_nonconvex_driver(gamma)


# -------------------------------------------------------- path functionals

@register("h", "zero")
def _h_zero():
    return None


@register("h", "terminal_value")
def _h_terminal(component: int = 0, scale: float = 1.0):
    return PathFunctional(
        lambda times, X, node: scale * X[:, node, component],
        adapted=True, name="terminal_value")


@register("h", "terminal_abs")
def _h_terminal_abs(scale: float = 1.0):
    return PathFunctional(
        lambda times, X, node: scale * np.linalg.norm(X[:, node, :], axis=1),
        adapted=True, name="terminal_abs")


@register("h", "sup_norm")
def _h_sup(scale: float = 1.0):
    return PathFunctional(
        lambda times, X, node: scale * np.max(
            np.linalg.norm(X[:, : node + 1, :], axis=2), axis=1),
        adapted=True, name="sup_norm")


@register("h", "sup_power")
def _h_sup_power(power: float = 1.5, scale: float = 1.0):
    # locally Lipschitz with growth exponent r = power - 1
    def fn(times, X, node):
        sup = np.max(np.linalg.norm(X[:, : node + 1, :], axis=2), axis=1)
        return scale * sup ** power / power
    return PathFunctional(fn, adapted=True, name="sup_power")


@register("xi", "zero")
def _xi_zero():
    return None


@register("xi", "constant")
def _xi_constant(c: float = 1.0):
    return PathFunctional(
        lambda times, X, node: np.full(X.shape[0], c, dtype=float),
        adapted=True, name="xi_constant")


@register("xi", "tanh_terminal")
def _xi_tanh(scale: float = 1.0, component: int = 0):
    return PathFunctional(
        lambda times, X, node: scale * np.tanh(X[:, node, component]),
        adapted=True, name="xi_tanh_terminal")
