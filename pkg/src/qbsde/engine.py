"""Time grids, Brownian sampling, forward SDE simulation and path functionals.

All randomness is counter-based: path ``i`` of a bundle draws from a Philox
stream at counter offset ``i << 128`` under the master seed, so regeneration
is bit-identical regardless of how paths are batched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    AdaptednessViolation,
    CapabilityMissing,
    InvalidArgument,
    ResourceLimit,
    SimulationDiverged,
)

Array = np.ndarray

# step used by all central finite-difference fallbacks, scaled by (1 + |x|)
FD_STEP = 1e-5


@dataclass(frozen=True)
class TimeGrid:
    """Partition 0 = t_0 < ... < t_n = T of the solve horizon."""

    nodes: Array

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgument("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise InvalidArgument("first node must be exactly 0")
        steps = np.diff(nodes)
        if np.any(steps <= 0):
            raise InvalidArgument("nodes must be strictly increasing")

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> Array:
        return np.diff(self.nodes)


def make_grid(T: float, n_steps: int) -> TimeGrid:
    """Uniform grid on [0, T] with n_steps steps."""
    if not (T > 0):
        raise InvalidArgument(f"T must be positive, got {T}")
    if not (isinstance(n_steps, (int, np.integer)) and n_steps >= 1):
        raise InvalidArgument(f"n_steps must be a positive integer, got {n_steps}")
    return TimeGrid(np.linspace(0.0, float(T), int(n_steps) + 1))


@dataclass(frozen=True)
class BrownianBundle:
    """Simulated Brownian increments, shape (paths, steps, d)."""

    grid: TimeGrid
    increments: Array
    seed: int
    stream_ids: Array  # per-path stream id; counter offset is id << 128

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[2]


def sample_brownian(grid: TimeGrid, d: int, n_paths: int, seed: int) -> BrownianBundle:
    """Draw centered Gaussian increments with per-step variance Delta_i.

    Deterministic in (grid, d, n_paths, seed); path i uses its own Philox
    counter block so the result does not depend on batching or thread count.
    """
    if d < 1 or n_paths < 1:
        raise InvalidArgument("d and n_paths must be positive")
    n = grid.n_steps
    scale = np.sqrt(grid.steps)[:, None]  # (n, 1)
    out = np.empty((n_paths, n, d))
    for i in range(n_paths):
        gen = np.random.Generator(np.random.Philox(key=seed, counter=i << 128))
        out[i] = gen.standard_normal((n, d)) * scale
    out.setflags(write=False)
    return BrownianBundle(grid, out, int(seed), np.arange(n_paths))


def bernoulli_bundle(grid: TimeGrid, depth: int | None = None) -> BrownianBundle:
    """Enumerate all 2^n Bernoulli paths with increments +-sqrt(Delta), d=1.

    Path p takes the up branch at step j iff bit (n-1-j) of p is 0, so paths
    sharing the first i steps form contiguous blocks of size 2^(n-i).
    """
    n = grid.n_steps if depth is None else depth
    if n != grid.n_steps:
        raise InvalidArgument("depth must match the grid step count")
    if n > 22:
        raise ResourceLimit("tree depth limited to 22")
    p_count = 1 << n
    idx = np.arange(p_count)[:, None]
    bits = (idx >> (n - 1 - np.arange(n))[None, :]) & 1
    signs = 1.0 - 2.0 * bits
    inc = signs * np.sqrt(grid.steps)[None, :]
    inc = inc[:, :, None]
    inc.setflags(write=False)
    return BrownianBundle(grid, inc, 0, np.arange(p_count))


@dataclass(frozen=True)
class ModelSpec:
    """Forward SDE data: dX = b(X) dt + sigma dW.

    mode "F1": sigma = sigma(t), additive noise; mode "F2": sigma = sigma(x).
    Derivative evaluators db/dsigma are optional; central differences with
    step FD_STEP*(1+|x|) are used when fd_fallback is enabled.
    """

    x0: Array
    drift: Callable[[Array], Array]  # (P, d) -> (P, d)
    sigma: Callable  # F1: t -> (d, d); F2: (P, d) -> (P, d, d)
    mode: str = "F1"
    K_b: float = 1.0
    K_sigma: float = 0.0
    sigma_sup: float = np.inf
    drift_jac: Callable[[Array], Array] | None = None  # (P,d) -> (P,d,d)
    sigma_jac: Callable[[Array], Array] | None = None  # (P,d) -> (P,d,d,d)
    fd_fallback: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, float)))
        if self.mode not in ("F1", "F2"):
            raise InvalidArgument(f"mode must be 'F1' or 'F2', got {self.mode!r}")

    @property
    def dim(self) -> int:
        return self.x0.size


@dataclass(frozen=True)
class PathBundle:
    """Forward trajectories on a grid, with running sup and optional tangent."""

    grid: TimeGrid
    states: Array  # (P, n+1, d)
    running_sup: Array  # (P, n+1), sup over nodes <= i of |X|
    model: ModelSpec
    noise: BrownianBundle
    tangent: Array | None = None  # (P, n+1, d, d)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def with_tangent(self, tangent: Array) -> "PathBundle":
        return PathBundle(self.grid, self.states, self.running_sup,
                          self.model, self.noise, tangent)


def _sigma_at(model: ModelSpec, t: float, x: Array) -> Array:
    """Diffusion matrix per path, broadcast shape (P, d, d) or (d, d)."""
    if model.mode == "F1":
        s = np.asarray(model.sigma(t), float)
    else:
        s = np.asarray(model.sigma(x), float)
    d = model.dim
    if s.ndim == 0:
        s = s * np.eye(d)
    elif s.ndim == 1 and model.mode == "F2":  # per-path scalar sigma
        s = s[:, None, None] * np.eye(d)[None, :, :]
    return s


def simulate_forward(model: ModelSpec, noise: BrownianBundle,
                     grid: TimeGrid | None = None) -> PathBundle:
    """Euler-Maruyama trajectories X_{i+1} = X_i + b(X_i) Dt + sigma_i DW_i."""
    grid = noise.grid if grid is None else grid
    if grid.n_steps != noise.grid.n_steps or not np.array_equal(grid.nodes, noise.grid.nodes):
        raise InvalidArgument("noise grid does not match the requested grid")
    if noise.dim != model.dim:
        raise InvalidArgument(
            f"noise dimension {noise.dim} != model dimension {model.dim}")
    P, n, d = noise.increments.shape
    X = np.empty((P, n + 1, d))
    X[:, 0, :] = model.x0
    for i in range(n):
        x = X[:, i, :]
        drift = np.asarray(model.drift(x), float)
        sig = _sigma_at(model, grid.nodes[i], x)
        dw = noise.increments[:, i, :]
        if sig.ndim == 2:
            dX = drift * grid.steps[i] + dw @ sig.T
        else:
            dX = drift * grid.steps[i] + np.einsum("pij,pj->pi", sig, dw)
        X[:, i + 1, :] = x + dX
        if not np.all(np.isfinite(X[:, i + 1, :])):
            bad = int(np.argwhere(~np.isfinite(X[:, i + 1, :]))[0][0])
            raise SimulationDiverged(
                f"non-finite state at step {i + 1}", path_index=bad)
    sup = np.maximum.accumulate(np.linalg.norm(X, axis=2), axis=1)
    X.setflags(write=False)
    sup.setflags(write=False)
    return PathBundle(grid, X, sup, model, noise)


def _jacobian_fd(fn: Callable[[Array], Array], x: Array) -> Array:
    """Central-difference Jacobian of a (P,d)->(P,m) map, shape (P,m,d)."""
    P, d = x.shape
    probe = np.asarray(fn(x), float)
    m = probe.shape[1] if probe.ndim > 1 else 1
    jac = np.empty((P, m, d))
    for j in range(d):
        h = FD_STEP * (1.0 + np.abs(x[:, j]))
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        diff = (np.asarray(fn(xp), float) - np.asarray(fn(xm), float))
        jac[:, :, j] = diff.reshape(P, m) / (2 * h)[:, None]
    return jac


def _sigma_jac_fd(model: ModelSpec, x: Array) -> Array:
    """Jacobian of x -> sigma(x), shape (P, d, d, d): d sigma_{kl} / d x_j."""
    P, d = x.shape
    jac = np.empty((P, d, d, d))
    for j in range(d):
        h = FD_STEP * (1.0 + np.abs(x[:, j]))
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        sp = _sigma_at(model, 0.0, xp)
        sm = _sigma_at(model, 0.0, xm)
        if sp.ndim == 2:  # state-independent, zero jacobian
            jac[:, :, :, j] = 0.0
        else:
            jac[:, :, :, j] = (sp - sm) / (2 * h)[:, None, None]
    return jac


def simulate_tangent(model: ModelSpec, noise: BrownianBundle,
                     paths: PathBundle) -> PathBundle:
    """Fill the first-variation process along each path.

    F1: dDX = db(X) DX dt.  F2 additionally carries the dsigma(X) DX dW term.
    """
    P, n, d = noise.increments.shape
    if model.drift_jac is None and not model.fd_fallback:
        raise CapabilityMissing("no drift jacobian and finite differences disabled")
    grad = np.empty((P, n + 1, d, d))
    grad[:, 0] = np.eye(d)
    for i in range(n):
        x = paths.states[:, i, :]
        if model.drift_jac is not None:
            db = np.asarray(model.drift_jac(x), float)
        else:
            db = _jacobian_fd(model.drift, x)
        g = grad[:, i]
        step = np.einsum("pij,pjk->pik", db, g) * grid_step(paths.grid, i)
        if model.mode == "F2":
            if model.sigma_jac is not None:
                ds = np.asarray(model.sigma_jac(x), float)
            elif model.fd_fallback:
                ds = _sigma_jac_fd(model, x)
            else:
                raise CapabilityMissing(
                    "no sigma jacobian and finite differences disabled")
            dw = noise.increments[:, i, :]
            # sum_l dsigma_{kl}/dx_j DX_{jm} dW_l
            step = step + np.einsum("pklj,pjm,pl->pkm", ds, g, dw)
        grad[:, i + 1] = g + step
    grad.setflags(write=False)
    return paths.with_tangent(grad)


def grid_step(grid: TimeGrid, i: int) -> float:
    return float(grid.nodes[i + 1] - grid.nodes[i])


@dataclass(frozen=True)
class PathFunctional:
    """Grid-sampled path functional, one value per path.

    fn(times, states, node) -> (P,) where states is the full (P, n+1, d)
    tensor; an adapted functional must only read columns <= node.
    """

    fn: Callable[[Array, Array, int], Array]
    adapted: bool = True
    name: str = ""

    def __call__(self, times: Array, states: Array, node: int) -> Array:
        return np.asarray(self.fn(times, states, node), float)


def evaluate_functional(func: PathFunctional, paths: PathBundle, node: int,
                        probe_adaptedness: bool = False,
                        probe_seed: int = 0) -> Array:
    """Evaluate a path functional at a grid node.

    When probe_adaptedness is set and the functional is flagged adapted,
    post-node path values are perturbed and the value must not move.
    """
    n = paths.grid.n_steps
    if not (0 <= node <= n):
        raise InvalidArgument(f"node {node} outside [0, {n}]")
    X = paths.states
    value = func(paths.grid.nodes, X, node)
    if value.shape != (paths.n_paths,):
        raise InvalidArgument(
            f"functional returned shape {value.shape}, expected ({paths.n_paths},)")
    if probe_adaptedness and func.adapted and node < n:
        rng = np.random.Generator(np.random.Philox(key=probe_seed))
        Xp = np.array(X)
        Xp[:, node + 1:, :] += rng.standard_normal(Xp[:, node + 1:, :].shape)
        perturbed = func(paths.grid.nodes, Xp, node)
        if not np.allclose(value, perturbed, rtol=0, atol=1e-12):
            raise AdaptednessViolation(
                f"functional {func.name or '<anonymous>'} reads past node {node}")
    return value
