import numpy as np
import pytest

from snapvit import autodiff as ad
from snapvit.curvature import (accumulate_squared_gradients, aggregate_to_structures,
                               local_diag_hessian, local_scores)
from snapvit.errors import CensusError, ContractError, DataError
from snapvit.ssl import CropSpec, SslHead, cross_entropy_loss
from snapvit.vit import ModelWeights, structure_census

from conftest import TINY

SPEC = CropSpec(global_size=16, local_size=8)


def linear_grad(theta):
    def grad_fn(batch):
        x, y = batch
        tape = ad.GradTape()
        t = tape.param("theta", np.array(theta))
        r = t * float(x) - float(y)
        return tape.backward(r * r)
    return grad_fn


def test_one_parameter_closed_form():
    # d/dθ (θx - y)^2 at θ=1, x=2, y=0 is 8, squared 64
    out = accumulate_squared_gradients(linear_grad(1.0), [(2.0, 0.0)])
    assert out["theta"] == pytest.approx(64.0)


def test_constant_loss_gives_zero():
    def grad_fn(_):
        tape = ad.GradTape()
        tape.param("w", np.ones(3))
        return tape.backward(ad.Node(np.array(5.0)))
    np.testing.assert_array_equal(accumulate_squared_gradients(grad_fn, [0, 1])["w"], 0.0)


def test_batches_are_squared_then_summed():
    g = linear_grad(1.0)
    both = accumulate_squared_gradients(g, [(2.0, 0.0), (1.0, 3.0)])
    # per-batch gradients 8 and 2*1*(1-3) = -4
    assert both["theta"] == pytest.approx(64.0 + 16.0)


def test_loss_scale_squares_scores():
    def scaled(k):
        def grad_fn(batch):
            return {n: k * v for n, v in linear_grad(1.0)(batch).items()}
        return grad_fn
    a = accumulate_squared_gradients(scaled(1.0), [(2.0, 1.0)])["theta"]
    b = accumulate_squared_gradients(scaled(3.0), [(2.0, 1.0)])["theta"]
    assert b == pytest.approx(9.0 * a)


def uniform_scores(weights, value):
    return {k: np.full(weights[k].shape, value) for k in weights.prunable_names()}


def test_uniform_scores_and_linearity(tiny_weights):
    c = structure_census(TINY)
    s = aggregate_to_structures(uniform_scores(tiny_weights, 2.5), c)
    np.testing.assert_allclose(s.score, 2.5)
    ps = {k: np.random.default_rng(0).random(v.shape)
          for k, v in uniform_scores(tiny_weights, 0).items()}
    a = aggregate_to_structures(ps, c).score
    b = aggregate_to_structures({k: 2 * v for k, v in ps.items()}, c).score
    np.testing.assert_allclose(b, 2 * a)


def test_hand_aggregation_of_one_neuron(tiny_weights):
    c = structure_census(TINY)
    ps = uniform_scores(tiny_weights, 0.0)
    # neuron 1 of layer 0 owns in-row (16), in-bias (1) and out-column (16)
    ps["blocks.0.ffn.in.weight"][1] = 4.0
    ps["blocks.0.ffn.in.bias"][1] = 1.0
    ps["blocks.0.ffn.out.weight"][:, 1] = 0.0
    s = aggregate_to_structures(ps, c).score
    idx = c.index()[c.structures[TINY.n_heads + 1]]
    assert s[idx] == pytest.approx((16 * 4.0 + 1.0) / 33)
    assert s[idx - 1] == 0.0
    # head 1 owns rows 8..15 of q, k, v and columns 8..15 of proj
    ps["blocks.0.attn.k.weight"][8:16] = 3.0
    assert aggregate_to_structures(ps, c).score[1] == pytest.approx(3.0 / 4)


def test_missing_scores_raise(tiny_weights):
    c = structure_census(TINY)
    ps = uniform_scores(tiny_weights, 1.0)
    del ps["blocks.1.attn.v.weight"]
    with pytest.raises(CensusError):
        aggregate_to_structures(ps, c)


def test_ce_scores_match_recomputation(tiny_weights):
    rng = np.random.default_rng(0)
    x = rng.random((4, 3, 16, 16))
    y = np.array([0, 1, 2, 3])
    head = SslHead.from_weights(tiny_weights)
    got = local_diag_hessian(tiny_weights, head, x, 4, batch_size=2, loss_kind="ce", labels=y)
    expect = {}
    for lo in (0, 2):
        tape = ad.GradTape()
        g = tape.backward(cross_entropy_loss(tiny_weights, x[lo:lo + 2], y[lo:lo + 2], tape=tape))
        for k in got:
            expect[k] = expect.get(k, 0.0) + g[k] ** 2
    for k in got:
        np.testing.assert_allclose(got[k], expect[k], rtol=1e-12, atol=1e-300)


def test_dead_head_scores_zero(tiny_weights):
    p = dict(tiny_weights.params)
    for m in ("q", "k", "v"):
        w = p[f"blocks.0.attn.{m}.weight"].copy()
        w[8:16] = 0
        p[f"blocks.0.attn.{m}.weight"] = w
    proj = p["blocks.0.attn.proj.weight"].copy()
    proj[:, 8:16] = 0
    p["blocks.0.attn.proj.weight"] = proj
    w = ModelWeights(TINY, p)
    x = np.random.default_rng(1).random((4, 3, 16, 16))
    s = local_scores(w, x, 4, batch_size=2, loss_kind="ce", labels=np.arange(4))
    assert s.score[1] == 0.0
    assert s.score[0] > 0.0


def test_ssl_scores_nonnegative_finite_deterministic(tiny_weights):
    x = np.random.default_rng(2).random((6, 3, 16, 16))
    a = local_scores(tiny_weights, x, 6, batch_size=3, seed=4, crop_spec=SPEC)
    b = local_scores(tiny_weights, x, 6, batch_size=3, seed=4, crop_spec=SPEC)
    assert np.all(a.score >= 0) and np.all(np.isfinite(a.score))
    np.testing.assert_array_equal(a.score, b.score)
    assert a.n_samples_used == 6 and a.loss_kind == "ssl"


def test_input_errors(tiny_weights):
    head = SslHead.from_weights(tiny_weights)
    x = np.zeros((2, 3, 16, 16))
    with pytest.raises(DataError):
        local_diag_hessian(tiny_weights, head, x[:0], 1)
    with pytest.raises(DataError):
        local_diag_hessian(tiny_weights, head, x, 3)
    with pytest.raises(DataError):
        local_diag_hessian(tiny_weights, head, x, 2, loss_kind="ce")
    with pytest.raises(ContractError):
        local_diag_hessian(tiny_weights, head, x, 0)
