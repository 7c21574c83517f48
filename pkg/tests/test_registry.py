"""Registry lookups, parameterization and custom registration."""

import numpy as np
import pytest

from qbsde.errors import UnknownRegistryName
from qbsde.registry import available, register, resolve


def test_available_covers_all_kinds():
    table = available()
    assert set(table) == {"drift", "sigma", "f", "g", "h", "xi"}
    assert "ou" in table["drift"]
    assert "canonical_nonconvex" in table["g"]
    assert "sup_power" in table["h"]


def test_unknown_name_lists_alternatives():
    with pytest.raises(UnknownRegistryName) as e:
        resolve("drift", "does_not_exist")
    assert "does_not_exist" in str(e.value)
    assert "ou" in str(e.value)


def test_resolve_with_params():
    fn, jac = resolve("drift", "ou", {"kappa": 2.0})
    x = np.array([[1.0], [2.0]])
    np.testing.assert_allclose(fn(x), -2.0 * x)
    np.testing.assert_allclose(jac(x)[:, 0, 0], -2.0)


def test_sup_power_growth_exponent():
    h = resolve("h", "sup_power", {"power": 1.5, "scale": 2.0})
    X = np.zeros((3, 4, 1))
    X[:, :, 0] = [[0, 1, -2, 0.5], [0, 0, 0, 0], [1, 1, 1, 1]]
    vals = h(np.linspace(0, 1, 4), X, 3)
    np.testing.assert_allclose(vals, 2.0 * np.array([2.0, 0.0, 1.0]) ** 1.5 / 1.5)


def test_custom_registration():
    @register("f", "test_only_cubic")
    def _make(c: float = 1.0):
        return lambda t, y, z: c * np.asarray(y) ** 3

    f = resolve("f", "test_only_cubic", {"c": 2.0})
    np.testing.assert_allclose(f(0.0, np.array([2.0]), None), 16.0)
