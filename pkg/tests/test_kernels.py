import numpy as np
import pytest

from fairmargin import kernels
from fairmargin.bench import run_benchmark
from fairmargin.data import generate_synthetic
from fairmargin.errors import ConfigurationError
from fairmargin.losses import LossConfig, LossKind
from fairmargin.model import OptimizerConfig, init_model, train_epochs

from conftest import small_spec

BOTH = len(kernels.available_backends()) == 2
needs_both = pytest.mark.skipif(not BOTH, reason="compiled backend not built")


def step_args(seed=0, batch=9, n_ids=6, n_groups=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, 5))
    y = rng.integers(0, n_ids, size=batch)
    groups = rng.integers(0, n_groups, size=batch)
    margins = np.asarray([0.0, 0.3, 0.55])
    return x, y, groups, margins


class TestBackendSelection:
    def test_python_always_available(self):
        assert "python" in kernels.available_backends()

    def test_set_backend_round_trip(self):
        active = kernels.active_backend()
        for name in kernels.available_backends():
            kernels.set_backend(name)
            assert kernels.active_backend() == name
        kernels.set_backend(active)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ConfigurationError):
            kernels.set_backend("gpu")


@needs_both
class TestBackendAgreement:
    @pytest.mark.parametrize("mode", [0, 1, 2])
    def test_single_step(self, mode):
        results = {}
        for backend in ("python", "compiled"):
            model = init_model(5, [7], 4, 6, seed=1)
            x, y, groups, margins = step_args()
            loss = kernels.sgd_batch_step(model, x, y, groups, margins, mode, 22.0,
                                          0.05, 0.9, 5e-4, backend=backend)
            results[backend] = (loss, model)
        loss_p, model_p = results["python"]
        loss_c, model_c = results["compiled"]
        assert loss_p == pytest.approx(loss_c, rel=1e-12, abs=1e-14)
        for wp, wc in zip(model_p.enc_weights, model_c.enc_weights):
            np.testing.assert_allclose(wp, wc, rtol=1e-12, atol=1e-14)
        for bp, bc in zip(model_p.enc_biases, model_c.enc_biases):
            np.testing.assert_allclose(bp, bc, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(model_p.identity_weights, model_c.identity_weights,
                                   rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(model_p.vel_identity, model_c.vel_identity,
                                   rtol=1e-9, atol=1e-14)

    def test_whole_epoch(self):
        ds = generate_synthetic(small_spec())
        cfg = LossConfig(kind=LossKind.ADAPTIVE_ARC, scale=16.0, base_margin=0.0,
                         group_margins=(0.0, 0.2, 0.4, 0.6))
        losses = {}
        models = {}
        active = kernels.active_backend()
        try:
            for backend in ("python", "compiled"):
                kernels.set_backend(backend)
                model = init_model(ds.d_in, [16], 4, ds.n_identities, seed=2)
                opt = OptimizerConfig(learning_rate=0.1, batch_size=16, seed=2)
                _, epoch_losses = train_epochs(model, ds, cfg, opt, 3)
                losses[backend] = epoch_losses
                models[backend] = model
        finally:
            kernels.set_backend(active)
        np.testing.assert_allclose(losses["python"], losses["compiled"],
                                   rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(models["python"].identity_weights,
                                   models["compiled"].identity_weights,
                                   rtol=1e-8, atol=1e-11)

    def test_zero_norm_raises_on_both(self):
        for backend in ("python", "compiled"):
            model = init_model(5, [], 4, 6, seed=1)
            x = np.zeros((3, 5))
            y = np.zeros(3, dtype=np.int64)
            groups = np.zeros(3, dtype=np.int64)
            margins = np.zeros(1)
            from fairmargin.errors import NumericDomainError
            with pytest.raises(NumericDomainError):
                kernels.sgd_batch_step(model, x, y, groups, margins, 1, 22.0,
                                       0.05, 0.9, 5e-4, backend=backend)


class TestBenchmark:
    def test_runs_and_reports_all_backends(self):
        lines = []
        results = run_benchmark(emit=lines.append, steps=20)
        assert set(results) == set(kernels.available_backends())
        assert all(v > 0 for v in results.values())
        assert len(lines) >= len(results)
