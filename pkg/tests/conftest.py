import numpy as np
import pytest

from fairmargin.data import DatasetSpec, generate_synthetic


def small_spec(seed=0, **overrides):
    kwargs = dict(
        n_groups=4,
        identities_per_group=(4, 2, 2, 2),
        samples_per_identity=5,
        d_in=8,
        group_concentration=(50.0, 50.0, 50.0, 50.0),
        group_center_spread=(1.0, 1.0, 1.0, 1.0),
        seed=seed,
    )
    kwargs.update(overrides)
    return DatasetSpec(**kwargs)


@pytest.fixture
def small_ds():
    return generate_synthetic(small_spec())


def rel_error(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) / denom


def finite_difference(fun, arr, step=1e-5):
    """Central finite differences of a scalar function w.r.t. one array."""
    arr = np.asarray(arr, dtype=np.float64)
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + step
        hi = fun()
        arr[idx] = orig - step
        lo = fun()
        arr[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return grad
