import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semges.core import ShapeError, Tensor
from semges.semantic import (
    DegenerateInputError,
    SemanticEncoder,
    coherence_loss,
    psi,
    relevance_loss,
)

ALPHA = 0.01


def test_encoder_shapes_and_determinism(rng):
    enc = SemanticEncoder(text_dim=300)
    x = rng.normal(size=(34, 300))
    z = enc(x)
    assert z.shape == (17, 32)
    assert np.array_equal(enc(x).data, z.data)
    assert np.all(np.isfinite(enc(np.zeros((34, 300))).data))
    with pytest.raises(ShapeError):
        enc(np.zeros((34, 10)))


def test_coherence_closed_forms():
    z = Tensor([[1.0, 2.0], [0.5, -1.0]])
    assert coherence_loss(z, z, z).item() == 0.0
    zs = Tensor([[1.0, 0.0]])
    assert coherence_loss(Tensor([[0.0, 3.0]]), zs, zs).item() == 1.0
    assert coherence_loss(-1.0 * zs, -1.0 * zs, zs).item() == 4.0


def test_coherence_rejects_zero_norm():
    with pytest.raises(DegenerateInputError):
        coherence_loss(Tensor(np.zeros((2, 2))), Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_coherence_bounded_and_scale_free(seed, c):
    rng = np.random.default_rng(seed)
    zh, zb, zs = (Tensor(rng.normal(size=(3, 4))) for _ in range(3))
    base = coherence_loss(zh, zb, zs).item()
    assert 0.0 <= base <= 4.0
    assert abs(coherence_loss(zh, zb, zs * c).item() - base) < 1e-12
    assert abs(coherence_loss(zh * c, zb, zs).item() - base) < 1e-12


def test_psi_branches():
    assert abs(psi(Tensor([0.005])).data[0] - 1.25e-5) < 1e-12
    assert abs(psi(Tensor([0.02])).data[0] - 1.5e-4) < 1e-12


def test_psi_is_c1_at_the_knee():
    left, right = ALPHA - 1e-9, ALPHA + 1e-9
    vals = psi(Tensor([left, right])).data
    assert abs(vals[0] - vals[1]) < 1e-10
    x = Tensor([left, right], requires_grad=True)
    psi(x).sum().backward()
    assert abs(x.grad[0] - x.grad[1]) < 1e-8


def test_relevance_single_element_contributions():
    g = np.zeros((2, 6))
    for err, contribution in ((0.005, 1.25e-5), (0.02, 1.5e-4)):
        gen = g.copy()
        gen[1, 3] = err
        loss = relevance_loss(g, Tensor(gen), np.array([0.0, 1.0]), ALPHA).item()
        assert abs(loss * g.size - contribution) < 1e-12


def test_relevance_zero_when_exact(rng):
    g = rng.normal(size=(4, 6))
    assert relevance_loss(g, Tensor(g), np.ones(4)).item() == 0.0


def test_relevance_validation():
    with pytest.raises(ValueError):
        relevance_loss(np.zeros((2, 3)), Tensor(np.ones((2, 3))), np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        relevance_loss(np.zeros((2, 3)), Tensor(np.ones((2, 3))), np.ones(2), alpha=0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_relevance_linear_in_lambda_and_masked(seed):
    rng = np.random.default_rng(seed)
    g, gen = rng.normal(size=(5, 6)), Tensor(rng.normal(size=(5, 6)))
    lam = rng.random(5) * (rng.random(5) < 0.6)
    base = relevance_loss(g, gen, lam).item()
    assert abs(relevance_loss(g, gen, 2 * lam).item() - 2 * base) < 1e-15
    wild = gen.data.copy()
    wild[lam == 0] += 1e3  # unannotated frames never count
    assert abs(relevance_loss(g, Tensor(wild), lam).item() - base) < 1e-15


def test_frozen_encoder_gets_no_gradient(small_priors, small_data):
    hands, body = small_priors
    s = small_data.samples[0]
    enc = SemanticEncoder(text_dim=small_data.manifest.text_dim)
    loss = coherence_loss(hands.encode(s.hands), body.encode(s.body), enc(s.features.text))
    loss.backward()
    assert all(p.grad is None for p in hands.parameters() + body.parameters())
    assert all(p.grad is not None for p in enc.parameters())
