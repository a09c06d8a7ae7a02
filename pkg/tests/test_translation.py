import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from ssrl_depth.translation import (
    Discriminator,
    Generator,
    adv_loss_discriminator,
    adv_loss_generator,
    cycle_loss,
    identity_loss,
    translate,
)


class ConstD(nn.Module):
    """Stub critic with a constant score map."""

    def __init__(self, value):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(0.0))
        self.value = value

    def forward(self, x):
        return torch.full((x.shape[0], 1, 2, 2), self.value) + 0 * self.w


class Shift(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.c = c

    def forward(self, x):
        return x + self.c


def test_identity_generator_returns_input_exactly():
    g = Generator.identity()
    x = torch.rand(2, 3, 8, 12)
    assert torch.equal(translate(g, x), x)
    assert torch.equal(translate(g, x[0]), x[0])


def test_generator_shape_and_range():
    g = Generator("S->T", channels=4, n_res_blocks=2)
    x = torch.rand(3, 3, 16, 32)
    y = translate(g, x)
    assert y.shape == x.shape
    assert y.min() >= 0 and y.max() <= 1


def test_generator_rejects_bad_shapes():
    g = Generator("S->T", channels=4)
    with pytest.raises(ValueError):
        g(torch.rand(1, 3, 10, 10))
    with pytest.raises(ValueError):
        g(torch.rand(1, 1, 8, 8))
    with pytest.raises(ValueError):
        Generator("X->Y")


def test_discriminator_deterministic_in_eval():
    d = Discriminator("T", channels=4).eval()
    x = torch.rand(2, 3, 16, 16)
    assert torch.equal(d(x), d(x))
    assert d(x).dim() == 4 and d(x).shape[1] == 1


def test_perfect_discriminator_loss_zero():
    class Perfect(nn.Module):
        def forward(self, x):
            return (x.mean(dim=(1, 2, 3), keepdim=True) > 0.5).float()
    real, fake = torch.ones(2, 3, 4, 4), torch.zeros(2, 3, 4, 4)
    assert float(adv_loss_discriminator(Perfect(), real, fake)) == 0.0


def test_half_scores_give_half():
    x = torch.rand(2, 3, 4, 4)
    assert float(adv_loss_discriminator(ConstD(0.5), x, x)) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("value,expected", [(1.0, 0.0), (0.0, 1.0)])
def test_generator_side_values(value, expected):
    assert float(adv_loss_generator(ConstD(value), torch.rand(2, 3, 4, 4))) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_adversarial_losses_nonnegative(seed):
    torch.manual_seed(seed)
    d = Discriminator("S", channels=2)
    real, fake = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
    assert float(adv_loss_discriminator(d, real, fake)) >= 0
    assert float(adv_loss_generator(d, fake)) >= 0


def test_generator_loss_gives_discriminator_zero_gradient():
    g = Generator("S->T", channels=2, n_res_blocks=1)
    d = Discriminator("T", channels=2)
    adv_loss_generator(d, g(torch.rand(2, 3, 8, 8))).backward()
    assert all(p.grad is None or torch.count_nonzero(p.grad) == 0 for p in d.parameters())
    assert any(p.grad is not None and torch.count_nonzero(p.grad) > 0 for p in g.parameters())


def test_discriminator_loss_gives_generator_zero_gradient():
    g = Generator("S->T", channels=2, n_res_blocks=1)
    d = Discriminator("T", channels=2)
    adv_loss_discriminator(d, torch.rand(2, 3, 8, 8), g(torch.rand(2, 3, 8, 8))).backward()
    assert all(p.grad is None for p in g.parameters())
    assert any(p.grad is not None for p in d.parameters())


def test_discriminator_loss_decreases_on_fixed_stubs():
    torch.manual_seed(0)
    d = nn.Sequential(nn.Flatten(), nn.Linear(3 * 4 * 4, 1))
    real, fake = torch.rand(6, 3, 4, 4) + 0.5, torch.rand(6, 3, 4, 4) - 0.5
    opt = torch.optim.SGD(d.parameters(), lr=1e-3)
    values = []
    for _ in range(5):
        loss = ((d(real) - 1) ** 2).mean() + (d(fake.detach()) ** 2).mean()
        assert float(loss) == pytest.approx(float(adv_loss_discriminator(d, real, fake)))
        opt.zero_grad()
        adv_loss_discriminator(d, real, fake).backward()
        opt.step()
        values.append(float(loss))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_cycle_identity_generators_zero():
    g_st, g_ts = Generator.identity("S->T"), Generator.identity("T->S")
    xs, xt = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
    assert float(cycle_loss(g_st, g_ts, xs, xt)) == 0.0
    assert float(identity_loss(g_st, g_ts, xs, xt)) == 0.0


def test_cycle_shift_stub():
    xs, xt = torch.rand(2, 3, 8, 8, dtype=torch.float64), torch.rand(2, 3, 8, 8, dtype=torch.float64)
    # g_ts o g_st shifts by +0.1; the second direction also composes to +0.1.
    loss = cycle_loss(Shift(0.04), Shift(0.06), xs, xt)
    assert float(loss) == pytest.approx(0.1 + 0.1, abs=1e-12)


def test_cycle_precomputed_translations_match():
    g_st, g_ts = Generator("S->T", 4, 1), Generator("T->S", 4, 1)
    xs, xt = torch.rand(2, 3, 16, 16), torch.rand(2, 3, 16, 16)
    ref = cycle_loss(g_st, g_ts, xs, xt)
    assert torch.equal(ref, cycle_loss(g_st, g_ts, xs, xt, g_st(xs), g_ts(xt)))


@pytest.mark.parametrize("c", [0.2, -0.05])
def test_identity_constant_shift(c):
    xs, xt = torch.rand(2, 3, 8, 8, dtype=torch.float64), torch.rand(2, 3, 8, 8, dtype=torch.float64)
    assert float(identity_loss(Shift(c), Shift(c), xs, xt)) == pytest.approx(2 * abs(c), abs=1e-12)


def test_identity_loss_batch_order_symmetric():
    g_st, g_ts = Generator("S->T", channels=2), Generator("T->S", channels=2)
    xs, xt = torch.rand(4, 3, 8, 8), torch.rand(4, 3, 8, 8)
    perm = torch.tensor([2, 0, 3, 1])
    g_st.eval(), g_ts.eval()
    a = identity_loss(g_st, g_ts, xs, xt)
    b = identity_loss(g_st, g_ts, xs[perm], xt[perm])
    assert float(a) == pytest.approx(float(b), rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_reconstruction_losses_nonnegative(seed):
    torch.manual_seed(seed)
    g_st, g_ts = Generator("S->T", channels=2, n_res_blocks=1), Generator("T->S", channels=2, n_res_blocks=1)
    xs, xt = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
    assert 0 <= float(cycle_loss(g_st, g_ts, xs, xt)) < float("inf")
    assert 0 <= float(identity_loss(g_st, g_ts, xs, xt)) < float("inf")


def test_empty_batches_rejected():
    d = Discriminator("T", channels=2)
    with pytest.raises(ValueError):
        adv_loss_discriminator(d, torch.rand(0, 3, 8, 8), torch.rand(1, 3, 8, 8))
    with pytest.raises(ValueError):
        adv_loss_generator(d, torch.rand(0, 3, 8, 8))
