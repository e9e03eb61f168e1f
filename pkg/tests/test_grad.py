"""Analytic gradients against central finite differences (float64)."""

import numpy as np
import pytest

from fedmt.model import Batch, ModelConfig, build_model, grad, loss

SMOOTH = ModelConfig(vocab_size=19, model_dim=8, num_heads=2, ffn_dim=16,
                     enc_layers=1, dec_layers=1, adapter_bottleneck=4,
                     max_seq_len=12, adapter_nonlinearity="gelu", dtype="float64")

EPS = 1e-4


def randomized_model(seed, trainable_backbone=True):
    model = build_model(SMOOTH, seed, freeze_backbone=not trainable_backbone)
    rng = np.random.default_rng(seed + 100)
    # zero-init up-projections get generic values so every path carries signal
    updates = {
        t.name: rng.normal(0, 0.3, t.values.shape)
        for t in model.params
        if t.name.endswith("up.weight") or t.name.endswith("up.bias")
    }
    return model.with_params(model.params.replace_values(updates))


def random_batch(seed):
    rng = np.random.default_rng(seed)
    bsz, s_len, t_len = 2, 5, 5
    src = rng.integers(4, SMOOTH.vocab_size, size=(bsz, s_len))
    src_mask = np.ones((bsz, s_len), bool)
    src_mask[0, 3:] = False
    tgt_in = rng.integers(4, SMOOTH.vocab_size, size=(bsz, t_len))
    tgt_in[:, 0] = 1
    tgt_gold = rng.integers(4, SMOOTH.vocab_size, size=(bsz, t_len))
    tgt_mask = np.ones((bsz, t_len), bool)
    tgt_mask[1, 4:] = False
    return Batch(src, src_mask, tgt_in, tgt_gold, tgt_mask, tgt_mask.sum(1))


def fd_max_rel_error(model, batch, coords_per_tensor=25, seed=0):
    _, grads = grad(model, batch)
    picker = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(grads):
        flat = model.params.values(name).reshape(-1)
        analytic = grads[name].reshape(-1)
        if flat.size <= coords_per_tensor:
            idxs = np.arange(flat.size)
        else:
            idxs = picker.choice(flat.size, coords_per_tensor, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + EPS
            up = loss(model, batch).total
            flat[i] = orig - EPS
            down = loss(model, batch).total
            flat[i] = orig
            fd = (up - down) / (2 * EPS)
            denom = max(abs(fd), abs(analytic[i]), 1e-6)
            worst = max(worst, abs(fd - analytic[i]) / denom)
    return worst


class TestGradients:
    def test_all_paths_against_finite_differences(self):
        # trainable backbone + adapters covers every gradient path
        model = randomized_model(3)
        assert fd_max_rel_error(model, random_batch(1)) < 1e-3

    def test_multiple_batches(self):
        model = randomized_model(7)
        for batch_seed in range(3):
            assert fd_max_rel_error(
                model, random_batch(batch_seed), coords_per_tensor=6, seed=batch_seed
            ) < 1e-3

    def test_frozen_tensors_get_no_gradient(self):
        model = randomized_model(5, trainable_backbone=False)
        _, grads = grad(model, random_batch(2))
        frozen = {t.name for t in model.params if not t.trainable}
        assert frozen and not (set(grads) & frozen)
        trainable = {t.name for t in model.params if t.trainable}
        assert set(grads) == trainable

    def test_linearity_in_loss_scale(self):
        # duplicating every sentence duplicates the summed loss and gradients
        model = randomized_model(9)
        batch = random_batch(4)
        doubled = Batch(
            np.concatenate([batch.src] * 2),
            np.concatenate([batch.src_mask] * 2),
            np.concatenate([batch.tgt_in] * 2),
            np.concatenate([batch.tgt_gold] * 2),
            np.concatenate([batch.tgt_mask] * 2),
            np.concatenate([batch.lengths] * 2),
        )
        res1, g1 = grad(model, batch)
        res2, g2 = grad(model, doubled)
        assert res2.total == pytest.approx(2 * res1.total, rel=1e-12)
        for name in g1:
            assert np.allclose(g2[name], 2 * g1[name], rtol=1e-9, atol=1e-12)

    def test_needed_filter_restricts_outputs(self):
        model = randomized_model(11)
        wanted = {"enc.layer0.attn_adapter.up.weight"}
        _, grads = grad(model, random_batch(5), needed=wanted)
        assert set(grads) == wanted
