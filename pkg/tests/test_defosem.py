import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from helpers import defosem_case, loop_enhance, randomize
from osagdo.core import FeatureMap, ShapeError
from osagdo.defosem import DefoSEM, enhance, gate_ranges
from osagdo.gradcheck import check_gradients


def _module(C=8, grid=(4, 4), seed=0):
    p = DefoSEM(C, grid).double()
    randomize(p, seed)
    return p


def _feat(C=8, grid=(4, 4), seed=0):
    return FeatureMap(np.random.default_rng(seed).normal(size=(grid[0] * grid[1], C)), grid)


@pytest.mark.parametrize("with_label", [True, False])
def test_matches_scalar_reference(with_label):
    p, f = _module(), _feat(seed=3)
    label = np.random.default_rng(4).random((16, 16)) if with_label else None
    out = enhance(f, label, p).values
    assert np.abs(out - loop_enhance(p, f.values, label)).max() < 1e-10


def test_zero_gate_weights_give_identity_multiplier():
    p = _module()
    with torch.no_grad():
        for conv in (p.spatial_gate, p.channel_gate):
            conv.weight.zero_()
            conv.bias.zero_()
    f = _feat()
    w_c, w_s = gate_ranges(p, f)
    assert np.all(w_c == 0.5) and np.all(w_s == 0.5)
    adjusted = p.gates(torch.as_tensor(f.values))[0].reshape(8, -1).T.detach().numpy()
    assert np.array_equal(enhance(f, None, p).values, adjusted)


def test_hand_example_084():
    # adjusted value 1.0 with W_c = 0.9 and W_s = 0.1
    p = DefoSEM(1, (1, 1)).double()
    logit = lambda v: np.log(v / (1 - v))
    with torch.no_grad():
        for prm in p.parameters():
            prm.zero_()
        p.visual_adjust.bias.fill_(1.0)
        p.channel_gate.bias.fill_(logit(0.9))
        p.spatial_gate.bias.fill_(logit(0.1))
    out = enhance(FeatureMap(np.zeros((1, 1)), (1, 1)), None, p).values
    assert out[0, 0] == pytest.approx(0.84, abs=1e-12)


def test_absent_label_equals_default_label():
    p, f = _module(seed=2), _feat()
    with torch.no_grad():
        p.default_label.copy_(torch.rand(1, 4, 4, dtype=torch.float64))
    explicit = p.default_label.detach().numpy()[0]
    assert np.array_equal(enhance(f, None, p).values, enhance(f, explicit, p).values)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gates_in_open_unit_interval_and_bounded(seed):
    p, f = _module(seed=seed % 7), _feat(seed=seed)
    label = np.random.default_rng(seed).random((8, 8))
    w_c, w_s = gate_ranges(p, f, label)
    assert np.all((w_c > 0) & (w_c < 1)) and np.all((w_s > 0) & (w_s < 1))
    mult = (0.5 + w_c)[None, None, :] * (0.5 + w_s)[:, :, None]
    assert np.all((mult > 0.25) & (mult < 2.25))
    adjusted = p.gates(torch.as_tensor(f.values))[0].reshape(8, -1).T.detach().numpy()
    out = enhance(f, label, p).values
    assert out.shape == f.values.shape
    assert np.all(np.abs(out) <= 2.25 * np.abs(adjusted))


def test_spatial_gate_ignores_label():
    p, f = _module(seed=5), _feat()
    rng = np.random.default_rng(0)
    wc1, ws1 = gate_ranges(p, f, rng.random((8, 8)))
    wc2, ws2 = gate_ranges(p, f, rng.random((8, 8)))
    assert np.array_equal(ws1, ws2)
    assert not np.array_equal(wc1, wc2)


def test_gate_toggles():
    p, f = _module(seed=1), _feat()
    adjusted = p.gates(torch.as_tensor(f.values))[0].reshape(8, -1).T.detach().numpy()
    p.channel_gate_on = p.spatial_gate_on = False
    assert np.array_equal(enhance(f, None, p).values, adjusted)
    p.spatial_gate_on = True
    _, w_s = gate_ranges(p, f)
    assert np.allclose(enhance(f, None, p).values, adjusted * (0.5 + w_s.reshape(-1, 1)), atol=1e-14)


def test_grid_mismatch_raises():
    with pytest.raises(ShapeError):
        enhance(_feat(grid=(2, 8)), None, _module())


@pytest.mark.parametrize("with_label", [True, False])
def test_gradients(with_label):
    errs = check_gradients(*defosem_case(0, with_label))
    assert max(errs.values()) < 1e-4, errs
