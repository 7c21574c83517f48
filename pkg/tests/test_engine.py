"""Grids, noise, forward simulation, tangent processes, path functionals."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbsde import (
    AdaptednessViolation,
    InvalidArgument,
    ModelSpec,
    PathFunctional,
    SimulationDiverged,
    bernoulli_bundle,
    evaluate_functional,
    make_grid,
    sample_brownian,
    simulate_forward,
    simulate_tangent,
)
from qbsde.errors import CapabilityMissing, ResourceLimit
from qbsde.solvers import MAX_TREE_DEPTH


# ------------------------------------------------------------------ grids

def test_grid_uniform_partition():
    g = make_grid(1.0, 4)
    np.testing.assert_allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_grid_single_step():
    g = make_grid(2.0, 1)
    np.testing.assert_allclose(g.nodes, [0.0, 2.0])


@pytest.mark.parametrize("T,n", [(1.0, 0), (0.0, 4), (-1.0, 3)])
def test_grid_rejects_bad_arguments(T, n):
    with pytest.raises(InvalidArgument):
        make_grid(T, n)


@given(T=st.floats(1e-3, 1e3), n=st.integers(1, 200))
@settings(max_examples=50, deadline=None)
def test_grid_invariants(T, n):
    g = make_grid(T, n)
    assert g.nodes[0] == 0.0
    assert np.isclose(g.nodes[-1], T)
    steps = np.diff(g.nodes)
    assert np.all(steps > 0)
    np.testing.assert_allclose(steps, T / n, rtol=1e-12)


# ------------------------------------------------------------------ noise

def test_brownian_deterministic():
    g = make_grid(1.0, 10)
    a = sample_brownian(g, 2, 50, seed=42)
    b = sample_brownian(g, 2, 50, seed=42)
    np.testing.assert_array_equal(a.increments, b.increments)
    c = sample_brownian(g, 2, 50, seed=43)
    assert not np.array_equal(a.increments, c.increments)


def test_brownian_path_streams_are_prefix_stable():
    # path i's stream depends only on (seed, i): a larger batch reproduces
    # the smaller batch's leading block, so worker partitioning is irrelevant
    g = make_grid(1.0, 10)
    small = sample_brownian(g, 1, 8, seed=9)
    large = sample_brownian(g, 1, 64, seed=9)
    np.testing.assert_array_equal(small.increments, large.increments[:8])


def test_brownian_moments():
    g = make_grid(1.0, 20)
    P = 100_000
    dw = sample_brownian(g, 1, P, seed=1).increments[:, :, 0]
    dt = 1.0 / 20
    assert np.all(np.abs(dw.mean(axis=0)) <= 3.0 * np.sqrt(dt / P))
    assert np.all(np.abs(dw.var(axis=0) / dt - 1.0) <= 0.05)


def test_bernoulli_bundle_structure():
    g = make_grid(1.0, 4)
    b = bernoulli_bundle(g)
    dw = b.increments[:, :, 0]
    step = np.sqrt(0.25)
    assert dw.shape == (16, 4)
    assert set(np.unique(dw)) == {-step, step}
    # bit-ordered enumeration: the first increment is constant on each half
    assert np.all(dw[:8, 0] == dw[0, 0])
    assert np.all(dw[8:, 0] == -dw[0, 0])
    # all 2^4 sign patterns appear exactly once
    codes = ((dw < 0) * (2 ** np.arange(3, -1, -1))).sum(axis=1)
    assert sorted(codes) == list(range(16))


def test_bernoulli_depth_limit():
    with pytest.raises(ResourceLimit):
        bernoulli_bundle(make_grid(1.0, MAX_TREE_DEPTH + 1))


# ------------------------------------------------------------ forward SDE

def test_forward_identity_scheme(bm_model):
    g = make_grid(1.0, 30)
    noise = sample_brownian(g, 1, 100, seed=2)
    paths = simulate_forward(bm_model, noise, g)
    w = np.concatenate([np.zeros((100, 1, 1)),
                        np.cumsum(noise.increments, axis=1)], axis=1)
    np.testing.assert_array_equal(paths.states, w)
    # running sup at the final node is the max over nodes of |X|
    np.testing.assert_allclose(paths.running_sup[:, -1],
                               np.abs(w[:, :, 0]).max(axis=1))


def test_forward_deterministic_ode_limit():
    # b(x) = -x, sigma = 0: Euler approximates e^{-T}
    g = make_grid(1.0, 1000)
    noise = sample_brownian(g, 1, 3, seed=0)
    model = ModelSpec(x0=np.ones(1), drift=lambda x: -x,
                      sigma=lambda t: 0.0, mode="F1")
    paths = simulate_forward(model, noise, g)
    assert abs(paths.states[0, -1, 0] - np.exp(-1.0)) <= 2e-3


def test_forward_running_sup_monotone(bm_paths):
    sup = bm_paths.running_sup
    assert np.all(np.diff(sup, axis=1) >= 0)
    np.testing.assert_allclose(sup[:, 0],
                               np.abs(bm_paths.states[:, 0, 0]))


def test_forward_weak_error_first_order():
    # E[X_T] vs x e^{-T}: bias at least roughly halves as the step halves
    model = ModelSpec(x0=np.ones(1), drift=lambda x: -x,
                      sigma=lambda t: 1.0, mode="F1")
    biases = []
    for n in (8, 16, 32):
        g = make_grid(1.0, n)
        noise = sample_brownian(g, 1, 400_000, seed=3)
        paths = simulate_forward(model, noise, g)
        m = paths.states[:, -1, 0].mean()
        se = paths.states[:, -1, 0].std() / np.sqrt(paths.n_paths)
        biases.append((abs(m - np.exp(-1.0)), se))
    # each refinement keeps the bias within 3 se + C*dt with a first-order C
    for (bias, se), n in zip(biases, (8, 16, 32)):
        assert bias <= 3 * se + 0.5 / n
    assert biases[-1][0] <= biases[0][0] + 3 * (biases[0][1] + biases[-1][1])


def test_forward_divergence_reports_path_index():
    g = make_grid(1.0, 40)
    noise = sample_brownian(g, 1, 4, seed=5)
    model = ModelSpec(x0=np.ones(1), drift=lambda x: x ** 9,
                      sigma=lambda t: 0.0, mode="F1")
    with pytest.raises(SimulationDiverged) as e:
        simulate_forward(model, noise, g)
    assert e.value.path_index is not None


# ---------------------------------------------------------------- tangent

def test_tangent_constant_coefficients_is_identity(bm_model, noise25, grid25):
    paths = simulate_forward(bm_model, noise25, grid25)
    tp = simulate_tangent(bm_model, noise25, paths)
    np.testing.assert_allclose(tp.tangent, 1.0)


def test_tangent_linear_drift_closed_form():
    g = make_grid(1.0, 1000)
    noise = sample_brownian(g, 1, 5, seed=6)
    model = ModelSpec(x0=np.ones(1), drift=lambda x: 0.5 * x,
                      sigma=lambda t: 1.0, mode="F1")
    tp = simulate_tangent(model, noise, simulate_forward(model, noise, g))
    assert np.all(np.abs(tp.tangent[:, -1, 0, 0] - np.exp(0.5)) <= 1e-3)


@pytest.mark.parametrize("which", ["f1", "f2"])
def test_tangent_vs_bump(which, ou_model, f2_model):
    model = ou_model if which == "f1" else f2_model
    model = ModelSpec(x0=np.array([0.4]), drift=model.drift,
                      sigma=model.sigma, mode=model.mode,
                      drift_jac=model.drift_jac, sigma_jac=model.sigma_jac)
    g = make_grid(1.0, 100)
    noise = sample_brownian(g, 1, 200, seed=8)
    tp = simulate_tangent(model, noise, simulate_forward(model, noise, g))
    h = 1e-5 * (1 + abs(model.x0[0]))
    bumped = []
    for s in (+h, -h):
        m = ModelSpec(x0=model.x0 + s, drift=model.drift, sigma=model.sigma,
                      mode=model.mode, drift_jac=model.drift_jac,
                      sigma_jac=model.sigma_jac)
        bumped.append(simulate_forward(m, noise, g).states)
    fd = (bumped[0] - bumped[1]) / (2 * h)
    rel = np.abs(tp.tangent[:, :, 0, 0] - fd[:, :, 0])
    rel /= np.maximum(np.abs(tp.tangent[:, :, 0, 0]), 1e-8)
    assert rel.max() <= 1e-3


def test_tangent_fd_fallback_and_capability(f2_model, noise25, grid25):
    paths = simulate_forward(f2_model, noise25, grid25)
    exact = simulate_tangent(f2_model, noise25, paths)
    bare = ModelSpec(x0=f2_model.x0, drift=f2_model.drift,
                     sigma=f2_model.sigma, mode="F2")
    fd = simulate_tangent(bare, noise25, paths)
    assert np.max(np.abs(exact.tangent - fd.tangent)) <= 1e-4
    no_fb = ModelSpec(x0=f2_model.x0, drift=f2_model.drift,
                      sigma=f2_model.sigma, mode="F2", fd_fallback=False)
    with pytest.raises(CapabilityMissing):
        simulate_tangent(no_fb, noise25, paths)


# ------------------------------------------------------- path functionals

def test_functional_terminal_projection(bm_paths, grid25):
    func = PathFunctional(lambda t, X, n: X[:, n, 0], adapted=True)
    vals = evaluate_functional(func, bm_paths, grid25.n_steps)
    np.testing.assert_array_equal(vals, bm_paths.states[:, -1, 0])


def test_functional_sup_on_monotone_path(grid25):
    g = make_grid(1.0, 4)
    noise = sample_brownian(g, 1, 1, seed=0)
    model = ModelSpec(x0=np.zeros(1), drift=lambda x: np.ones_like(x),
                      sigma=lambda t: 0.0, mode="F1")
    paths = simulate_forward(model, noise, g)
    func = PathFunctional(
        lambda t, X, n: np.max(np.abs(X[:, : n + 1, 0]), axis=1))
    vals = evaluate_functional(func, paths, g.n_steps)
    np.testing.assert_allclose(vals, np.abs(paths.states[:, -1, 0]))


def test_functional_lipschitz_transport(bm_paths):
    # |h(A) - h(B)| <= K_h * sup-node distance for h = K_h * sup|x|
    K_h = 0.7
    func = PathFunctional(
        lambda t, X, n: K_h * np.max(np.abs(X[:, : n + 1, 0]), axis=1))
    n = bm_paths.grid.n_steps
    vals = evaluate_functional(func, bm_paths, n)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        i, j = rng.integers(0, bm_paths.n_paths, size=2)
        dist = np.max(np.abs(bm_paths.states[i, :, 0]
                             - bm_paths.states[j, :, 0]))
        assert abs(vals[i] - vals[j]) <= K_h * dist + 1e-12


def test_functional_adaptedness_probe(bm_paths):
    peeking = PathFunctional(lambda t, X, n: X[:, -1, 0], adapted=True)
    with pytest.raises(AdaptednessViolation):
        evaluate_functional(peeking, bm_paths, 3, probe_adaptedness=True)
    honest = PathFunctional(lambda t, X, n: X[:, n, 0], adapted=True)
    evaluate_functional(honest, bm_paths, 3, probe_adaptedness=True)
