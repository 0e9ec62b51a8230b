import math

import numpy as np
import pytest

from pearl.data import SyntheticConfig, generate_synthetic
from pearl.model import (
    ForwardPass,
    NonFiniteLossError,
    PearlConfig,
    compute_gradients,
    forward,
    init_params,
    loss_terms,
    train,
    transform,
)
from pearl.preprocessing import standardizer_apply, standardizer_fit
from pearl.prototypes import PrototypeSet, compute_prototypes


def unit_protos(matrix):
    m = np.asarray(matrix, dtype=np.float64)
    return PrototypeSet(means=m, unit=m / np.linalg.norm(m, axis=1, keepdims=True),
                        support=np.ones(m.shape[0], dtype=np.int64))


def random_protos(rng, C, d):
    return unit_protos(rng.normal(size=(C, d)))


class TestInit:
    def test_deterministic(self):
        cfg = PearlConfig(seed=11)
        a = init_params(cfg, 6, 3)
        b = init_params(cfg, 6, 3)
        assert a.layers.keys() == b.layers.keys()
        for k in a.layers:
            assert np.array_equal(a.layers[k], b.layers[k])

    def test_biases_zero_and_shapes(self):
        cfg = PearlConfig(d_s=3, d_r=2, hidden=5, seed=0)
        p = init_params(cfg, 7, 4)
        expect = {
            "enc_s.W1": (7, 5), "enc_s.W2": (5, 3),
            "enc_r.W1": (7, 5), "enc_r.W2": (5, 2),
            "dec_s.W1": (3, 5), "dec_s.W2": (5, 7),
            "dec_f.W1": (5, 5), "dec_f.W2": (5, 7),
            "proj.W": (3, 7), "cls.W": (3, 4),
        }
        for name, shape in expect.items():
            assert p.layers[name].shape == shape
            bias = p.layers[name.replace(".W", ".b")]
            assert bias.shape == (shape[1],)
            assert np.all(bias == 0.0)

    def test_derived_widths(self):
        cfg = PearlConfig(seed=0).resolved(9)
        assert (cfg.d_s, cfg.d_r, cfg.hidden) == (3, 3, 9)
        assert cfg.w_align == cfg.w_contrast == cfg.w_cls == 4.5

    def test_glorot_bounds(self):
        cfg = PearlConfig(seed=3)
        p = init_params(cfg, 8, 2)
        w = p.layers["enc_s.W1"]
        limit = math.sqrt(6.0 / (8 + 8))
        assert np.abs(w).max() <= limit


class TestForward:
    def test_zero_params_give_zero_outputs(self):
        cfg = PearlConfig(d_s=2, d_r=2, hidden=3, seed=0)
        p = init_params(cfg, 4, 2)
        for k in p.layers:
            p.layers[k][...] = 0.0
        fwd = forward(p, cfg, np.ones((3, 4)))
        assert np.all(fwd.x_tilde == 0.0)
        assert np.all(fwd.logits == 0.0)
        assert np.all(fwd.proj_out == 0.0)  # zero-row guard

    def test_single_row_shapes(self):
        cfg = PearlConfig(d_s=3, d_r=2, hidden=4, seed=1)
        p = init_params(cfg, 5, 2)
        fwd = forward(p, cfg, np.random.default_rng(0).normal(size=(1, 5)))
        assert fwd.z_s.shape == (1, 3)
        assert fwd.z_r.shape == (1, 2)
        assert fwd.x_tilde.shape == (1, 5)
        assert fwd.x_hat_full.shape == (1, 5)
        assert fwd.proj_out.shape == (1, 5)
        assert fwd.logits.shape == (1, 2)

    def test_proj_rows_unit(self):
        rng = np.random.default_rng(2)
        cfg = PearlConfig(seed=2)
        p = init_params(cfg, 6, 3)
        fwd = forward(p, cfg.resolved(6), rng.normal(size=(10, 6)))
        norms = np.linalg.norm(fwd.proj_out, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6

    def test_width_mismatch(self):
        cfg = PearlConfig(seed=0)
        p = init_params(cfg, 4, 2)
        with pytest.raises(ValueError):
            forward(p, cfg, np.zeros((2, 5)))


class TestLossClosedForms:
    def test_align_bounds_at_aligned_and_antialigned(self):
        protos = unit_protos(np.eye(3)[:2])
        cfg = PearlConfig(d_s=1, d_r=1, tau=0.1, seed=0)
        x = np.zeros((2, 3))
        y = np.array([0, 1])
        z = np.ones((2, 1))
        aligned = ForwardPass(z_s=z, z_r=z, x_tilde=x, x_hat_full=x,
                              proj_out=protos.unit[y], logits=np.zeros((2, 2)))
        assert loss_terms(aligned, x, y, protos, cfg).align == pytest.approx(0.0, abs=1e-9)
        anti = ForwardPass(z_s=z, z_r=z, x_tilde=x, x_hat_full=x,
                           proj_out=-protos.unit[y], logits=np.zeros((2, 2)))
        assert loss_terms(anti, x, y, protos, cfg).align == pytest.approx(2.0, abs=1e-9)

    @pytest.mark.parametrize("C", [2, 4, 10])
    def test_uniform_cosines_give_log_C_contrast(self, C):
        d = C + 1
        protos = unit_protos(np.eye(d)[:C])
        cfg = PearlConfig(d_s=1, d_r=1, tau=0.1, seed=0)
        x = np.zeros((3, d))
        y = np.array([0, 1 % C, (C - 1)])
        proj = np.tile(np.eye(d)[C], (3, 1))  # orthogonal to every prototype
        fwd = ForwardPass(z_s=np.ones((3, 1)), z_r=np.ones((3, 1)), x_tilde=x,
                          x_hat_full=x, proj_out=proj, logits=np.zeros((3, C)))
        assert loss_terms(fwd, x, y, protos, cfg).contrast == pytest.approx(
            math.log(C), abs=1e-9)

    def test_two_class_confident_contrast(self):
        protos = unit_protos(np.eye(2))
        cfg = PearlConfig(d_s=1, d_r=1, tau=0.1, seed=0)
        x = np.zeros((1, 2))
        y = np.array([0])
        fwd = ForwardPass(z_s=np.ones((1, 1)), z_r=np.ones((1, 1)), x_tilde=x,
                          x_hat_full=x, proj_out=np.array([[1.0, 0.0]]),
                          logits=np.zeros((1, 2)))
        expected = math.log(1.0 + math.exp(-10.0))  # about 4.54e-5
        assert loss_terms(fwd, x, y, protos, cfg).contrast == pytest.approx(
            expected, abs=1e-9)

    def test_ortho_cancellation(self):
        protos = unit_protos(np.eye(2))
        cfg = PearlConfig(d_s=1, d_r=1, tau=0.1, seed=0)
        x = np.zeros((2, 2))
        y = np.array([0, 1])
        fwd = ForwardPass(
            z_s=np.array([[1.0], [1.0]]), z_r=np.array([[1.0], [-1.0]]),
            x_tilde=x, x_hat_full=x, proj_out=protos.unit[y],
            logits=np.zeros((2, 2)),
        )
        assert loss_terms(fwd, x, y, protos, cfg).ortho == pytest.approx(0.0, abs=1e-12)

    def test_loss_bounds_on_random_inputs(self):
        rng = np.random.default_rng(5)
        cfg = PearlConfig(seed=5)
        for _ in range(20):
            d, C, B = 6, 3, 8
            p = init_params(cfg, d, C)
            for k in p.layers:
                p.layers[k] = p.layers[k] + 0.5 * rng.normal(size=p.layers[k].shape)
            x = rng.normal(size=(B, d))
            y = rng.integers(0, C, size=B)
            fwd = forward(p, cfg.resolved(d), x)
            terms = loss_terms(fwd, x, y, random_protos(rng, C, d), cfg)
            assert 0.0 <= terms.align <= 2.0
            assert terms.contrast >= 0.0
            assert 0.0 <= terms.ortho <= 1.0
            assert terms.recon >= 0.0 and terms.full >= 0.0 and terms.cls >= 0.0


def fd_check(cfg, params, x, y, protos, h=1e-5):
    grads, _, _ = compute_gradients(params, cfg, x, y, protos)
    worst = 0.0
    for name, arr in params.layers.items():
        g = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            keep = arr[ix]
            arr[ix] = keep + h
            up = loss_terms(forward(params, cfg, x), x, y, protos, cfg).total
            arr[ix] = keep - h
            dn = loss_terms(forward(params, cfg, x), x, y, protos, cfg).total
            arr[ix] = keep
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - g[ix]) / max(abs(fd), abs(g[ix]), 1e-6))
    return worst


class TestGradients:
    def _tiny_problem(self, seed, **weights):
        rng = np.random.default_rng(seed)
        d, C, B = 5, 2, 3
        cfg = PearlConfig(d_s=3, d_r=2, hidden=4, tau=0.1, seed=seed, **weights)
        params = init_params(cfg, d, C)
        for k in params.layers:
            params.layers[k] = params.layers[k] + 0.3 * rng.normal(size=params.layers[k].shape)
        x = rng.normal(size=(B, d))
        y = rng.integers(0, C, size=B)
        return cfg, params, x, y, random_protos(rng, C, d)

    @pytest.mark.parametrize("term", ["w_recon", "w_full", "w_align",
                                      "w_contrast", "w_cls", "w_ortho"])
    def test_each_term_in_isolation(self, term):
        zeros = {w: 0.0 for w in ("w_recon", "w_full", "w_align",
                                  "w_contrast", "w_cls", "w_ortho")}
        zeros[term] = 1.3
        cfg, params, x, y, protos = self._tiny_problem(17, **zeros)
        assert fd_check(cfg, params, x, y, protos) < 1e-4

    def test_all_terms_together(self):
        cfg, params, x, y, protos = self._tiny_problem(23)
        assert fd_check(cfg, params, x, y, protos) < 1e-4

    def test_zero_weights_zero_gradients(self):
        zeros = {w: 0.0 for w in ("w_recon", "w_full", "w_align",
                                  "w_contrast", "w_cls", "w_ortho")}
        cfg, params, x, y, protos = self._tiny_problem(29, **zeros)
        grads, terms, _ = compute_gradients(params, cfg, x, y, protos)
        assert terms.total == 0.0
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_recon_gradient_zero_at_minimum(self):
        # x = 0 with zero biases: every code and reconstruction is 0
        rng = np.random.default_rng(31)
        cfg = PearlConfig(d_s=2, d_r=2, hidden=3, w_full=0, w_align=0,
                          w_contrast=0, w_cls=0, w_ortho=0, seed=31)
        params = init_params(cfg, 4, 2)
        x = np.zeros((3, 4))
        y = np.array([0, 1, 0])
        grads, terms, _ = compute_gradients(params, cfg, x, y,
                                            random_protos(rng, 2, 4))
        assert terms.recon == 0.0
        for g in grads.values():
            assert np.abs(g).max() == 0.0


class TestTraining:
    def _standardized_synthetic(self, seed=0, C=5, d=32, n_per_class=30):
        ds = generate_synthetic(SyntheticConfig(
            C=C, d=d, n_per_class=n_per_class, separation=1.0,
            noise_sigma=0.4, confounder_gamma=0.8, seed=seed))
        x = ds.embeddings.values
        n = ds.n
        rng = np.random.default_rng(seed)
        order = rng.permutation(n)
        cut = int(0.85 * n)
        tr, va = order[:cut], order[cut:]
        scaler = standardizer_fit(x[tr])
        return (standardizer_apply(scaler, x[tr]), ds.labels[tr],
                standardizer_apply(scaler, x[va]), ds.labels[va], ds.C)

    def test_patience_zero_runs_one_epoch(self):
        x_tr, y_tr, x_va, y_va, C = self._standardized_synthetic()
        protos = compute_prototypes(x_tr, y_tr, C)
        cfg = PearlConfig(patience=0, max_epochs=50, seed=1)
        _, trace = train(cfg, x_tr, y_tr, x_va, y_va, protos)
        assert len(trace.epochs) == 1
        assert trace.stop_reason == "early_stop"

    def test_best_snapshot_contract(self):
        x_tr, y_tr, x_va, y_va, C = self._standardized_synthetic(seed=3)
        protos = compute_prototypes(x_tr, y_tr, C)
        cfg = PearlConfig(max_epochs=25, patience=5, seed=2)
        params, trace = train(cfg, x_tr, y_tr, x_va, y_va, protos)
        vals = trace.val_losses()
        assert trace.epochs[trace.best_epoch]["val_total"] == pytest.approx(min(vals))
        returned = loss_terms(forward(params, cfg.resolved(x_tr.shape[1]), x_va),
                              x_va, y_va, protos, cfg).total
        assert returned <= min(vals) + 1e-9

    def test_training_descends(self):
        x_tr, y_tr, x_va, y_va, C = self._standardized_synthetic(seed=4)
        protos = compute_prototypes(x_tr, y_tr, C)
        cfg = PearlConfig(max_epochs=40, patience=40, seed=3)
        _, trace = train(cfg, x_tr, y_tr, x_va, y_va, protos)
        assert trace.epochs[-1]["total"] < trace.epochs[0]["total"]

    def test_deterministic(self):
        x_tr, y_tr, x_va, y_va, C = self._standardized_synthetic(seed=5)
        protos = compute_prototypes(x_tr, y_tr, C)
        cfg = PearlConfig(max_epochs=5, patience=5, seed=4)
        a, _ = train(cfg, x_tr, y_tr, x_va, y_va, protos)
        b, _ = train(cfg, x_tr, y_tr, x_va, y_va, protos)
        for k in a.layers:
            assert np.array_equal(a.layers[k], b.layers[k])

    def test_val_labels_only_affect_stopping(self):
        x_tr, y_tr, x_va, y_va, C = self._standardized_synthetic(seed=6)
        protos = compute_prototypes(x_tr, y_tr, C)
        cfg = PearlConfig(max_epochs=6, patience=6, seed=5)
        rng = np.random.default_rng(0)
        _, trace_a = train(cfg, x_tr, y_tr, x_va, y_va, protos)
        _, trace_b = train(cfg, x_tr, y_tr, x_va, rng.permutation(y_va), protos)
        for ea, eb in zip(trace_a.epochs, trace_b.epochs):
            assert ea["total"] == pytest.approx(eb["total"], abs=0.0)

    def test_divergence_aborts_with_trace(self):
        x_tr, y_tr, x_va, y_va, C = self._standardized_synthetic(seed=7)
        protos = compute_prototypes(x_tr, y_tr, C)
        cfg = PearlConfig(max_epochs=60, patience=60, seed=6, lr=1e40)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteLossError) as info:
            train(cfg, x_tr, y_tr, x_va, y_va, protos)
        assert info.value.trace is not None


class TestTransform:
    def test_width_preserved(self):
        cfg = PearlConfig(seed=0)
        for d in (3, 8, 17):
            params = init_params(cfg.resolved(d), d, 2)
            out = transform(params, cfg, np.random.default_rng(d).normal(size=(4, d)))
            assert out.shape == (4, d)
            assert out.dtype == np.float32

    def test_empty_matrix(self):
        cfg = PearlConfig(seed=0)
        params = init_params(cfg.resolved(6), 6, 2)
        out = transform(params, cfg, np.empty((0, 6)))
        assert out.shape == (0, 6)

    def test_bit_identical(self):
        cfg = PearlConfig(seed=1)
        params = init_params(cfg.resolved(5), 5, 3)
        x = np.random.default_rng(9).normal(size=(12, 5))
        assert np.array_equal(transform(params, cfg, x), transform(params, cfg, x))

    def test_dimension_mismatch(self):
        cfg = PearlConfig(seed=0)
        params = init_params(cfg.resolved(4), 4, 2)
        with pytest.raises(ValueError):
            transform(params, cfg, np.zeros((2, 5)))
