"""Module plumbing, layer shapes, freezing, and Adam behavior."""

import numpy as np
import pytest

import voicemorph.autograd as ag
import voicemorph.nn as nn
from voicemorph.autograd import Tensor
from voicemorph.errors import ShapeError

from _gradcheck import assert_grad_close, numeric_gradient, sample_indices


class TinyNet(nn.Module):
    def __init__(self, rng):
        super().__init__()
        self.conv = nn.Conv2d(2, 3, 3, rng, stride=1, padding=1)
        self.bn = nn.BatchNorm(3)
        self.blocks = [nn.Linear(12, 4, rng), nn.Linear(4, 2, rng)]

    def forward(self, x):
        h = ag.relu(self.bn(self.conv(x)))
        h = ag.reshape(ag.mean_axis(ag.reshape(h, (1, 3, 16)), 2), (1, 3))
        return h


def test_named_parameters_cover_nested_and_listed_children():
    net = TinyNet(np.random.default_rng(0))
    names = [n for n, _ in net.named_parameters()]
    assert "conv.weight" in names and "conv.bias" in names
    assert "bn.gamma" in names and "bn.beta" in names
    assert "blocks.0.weight" in names and "blocks.1.bias" in names
    buffers = dict(net.named_buffers())
    assert "bn.running_mean" in buffers and "bn.running_var" in buffers


def test_state_dict_round_trip_is_exact():
    rng = np.random.default_rng(1)
    net = TinyNet(rng)
    net(Tensor(rng.normal(size=(1, 2, 4, 4))))  # move BN stats off init
    state = net.state_dict()
    other = TinyNet(np.random.default_rng(99))
    other.load_state_dict(state)
    assert nn.fingerprint(net, include_buffers=True) == nn.fingerprint(other, include_buffers=True)
    bad = dict(state)
    bad.pop("param.conv.weight")
    with pytest.raises(ShapeError):
        other.load_state_dict(bad)


def test_train_eval_mode_propagates():
    net = TinyNet(np.random.default_rng(2))
    net.eval()
    assert not net.bn.training
    net.train()
    assert net.bn.training


def test_frozen_context_restores_flags():
    net = TinyNet(np.random.default_rng(3))
    with nn.frozen(net):
        assert all(not p.requires_grad for p in net.parameters())
        x = Tensor(np.random.default_rng(4).normal(size=(1, 2, 4, 4)))
        out = ag.sum_all(net(x))
        out.backward()
        assert all(p.grad is None for p in net.parameters())
    assert all(p.requires_grad for p in net.parameters())


def test_fingerprint_tracks_parameter_changes():
    net = TinyNet(np.random.default_rng(5))
    before = nn.fingerprint(net)
    net.conv.weight.data[0, 0, 0, 0] += 1e-12
    assert nn.fingerprint(net) != before


def test_conv1d_shapes_follow_stride2_recurrence():
    rng = np.random.default_rng(6)
    layer = nn.Conv1d(4, 6, rng)
    for t in [1, 2, 7, 57, 298]:
        out = layer(Tensor(rng.normal(size=(1, 4, t))))
        assert out.shape == (1, 6, (t - 1) // 2 + 1)


def test_conv1d_gradients():
    rng = np.random.default_rng(7)
    layer = nn.Conv1d(3, 2, rng)
    x = rng.normal(size=(1, 3, 9))
    w = Tensor(np.random.default_rng(8).normal(size=(1, 2, 5)))

    def forward():
        return ag.sum_all(ag.mul(layer(Tensor(x)), w)).item()

    loss = ag.sum_all(ag.mul(layer(Tensor(x)), w))
    loss.backward()
    idx = sample_indices(rng, layer.weight.size, 5)
    assert_grad_close(layer.weight.grad.flat[idx],
                      numeric_gradient(forward, layer.weight.data, idx))


def test_conv_transpose_doubles_spatial_size():
    rng = np.random.default_rng(9)
    up = nn.ConvTranspose2d(4, 2, rng)
    out = up(Tensor(rng.normal(size=(1, 4, 8, 8))))
    assert out.shape == (1, 2, 16, 16)


def test_linear_bias_broadcasts_over_batch():
    rng = np.random.default_rng(10)
    lin = nn.Linear(3, 2, rng)
    lin.bias.data[:] = [1.0, -1.0]
    out = lin(Tensor(np.zeros((4, 3))))
    np.testing.assert_allclose(out.data, np.tile([1.0, -1.0], (4, 1)))


def test_adam_matches_hand_computed_first_step():
    p = nn.Parameter(np.array([1.0, 2.0]))
    opt = nn.Adam([p], lr=0.1, betas=(0.5, 0.9))
    p.grad = np.array([0.5, -1.0])
    opt.step()
    # bias-corrected first step is lr * g / (|g| + eps)
    expected = np.array([1.0, 2.0]) - 0.1 * np.array([0.5, -1.0]) / (np.abs([0.5, -1.0]) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-7)


def test_adam_state_round_trip_preserves_trajectory():
    rng = np.random.default_rng(11)

    def run(steps, carry_from=None):
        p = nn.Parameter(np.ones(4))
        opt = nn.Adam([p], lr=0.05)
        grads = np.random.default_rng(42).normal(size=(steps, 4))
        if carry_from is not None:
            p.data = carry_from[0].copy()
            opt.load_state_dict(carry_from[1])
            grads = grads[carry_from[2]:]
        for g in grads:
            p.grad = g.copy()
            opt.step()
        return p.data.copy(), opt.state_dict()

    full, _ = run(10)
    half_p, half_state = run(5)
    resumed, _ = run(10, carry_from=(half_p, half_state, 5))
    np.testing.assert_array_equal(full, resumed)


def test_zero_grad_clears_gradients():
    p = nn.Parameter(np.ones(3))
    opt = nn.Adam([p], lr=0.1)
    p.grad = np.ones(3)
    opt.zero_grad()
    assert p.grad is None
