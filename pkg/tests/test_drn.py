import math

import numpy as np
import pytest
import torch
from torch.func import functional_call
from hypothesis import given, settings, strategies as st

from amirnet import autonn as ann
from amirnet.drn import (
    DRN,
    classification_loss,
    compose_representation,
    detail_energy,
    hard_mask,
    mask_project,
    to_image,
    to_tensor,
)
from amirnet.hierarchy import DegTree, check_flat, flatten
from oracles import grad_rel_error, probe

TREE = DegTree()


@pytest.fixture(scope="module")
def drn():
    m = DRN()
    ann.init_params(m, 0)
    return m


def test_tensor_round_trip(rng):
    img = rng.random((9, 7, 3)).astype(np.float32)
    t = to_tensor(img)
    assert t.shape == (1, 3, 9, 7)
    assert np.array_equal(to_image(t[0]), img)


def test_encode_contract(drn, rng):
    x = torch.from_numpy(rng.random((2, 3, 64, 64)).astype(np.float32))
    z = drn.encode(x)
    assert z.shape == (2, 128)
    assert torch.equal(drn.encode(x[:1]), drn.encode(x[:1].clone()))
    assert drn.encode(torch.rand(1, 3, 96, 96)).shape == (1, 128)
    with pytest.raises(ValueError):
        drn.encode(torch.rand(1, 3, 15, 32))


def test_detail_energy_orders_by_high_frequency():
    flat = torch.full((1, 1, 16, 16), 0.5)
    noisy = flat + 0.1 * torch.randn(1, 1, 16, 16, generator=torch.Generator().manual_seed(0))
    assert detail_energy(noisy).mean() > detail_energy(flat).mean() + 5
    assert torch.allclose(detail_energy(flat), torch.full_like(flat, math.log(1e-5)))


def test_mask_project_normalization():
    logits = torch.randn(3, 30)
    assert torch.all(mask_project(logits, 0) == 0)
    r1 = mask_project(logits, 1)
    assert torch.allclose(r1[:, :2].sum(1), torch.ones(3)) and torch.all(r1[:, 2:] == 0)
    r4 = mask_project(logits, 4)
    for sl in TREE.level_slices():
        assert torch.allclose(r4[:, sl].sum(1), torch.ones(3), atol=1e-6)
    with pytest.raises(ValueError):
        mask_project(logits, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 4))
def test_representation_invariants(seed, built):
    g = torch.Generator().manual_seed(seed)
    logits, r_a = torch.randn(2, 30, generator=g), torch.randn(2, 30, generator=g)
    r_m = mask_project(logits, built)
    assert torch.all(r_m >= 0)
    r = compose_representation(r_m, r_a, 1)
    cut = TREE.offset(built + 1)
    assert torch.all(r[:, cut:] == 0) and torch.all(r_m[:, cut:] == 0)
    hm = hard_mask(r_m, built)
    for row in hm.numpy():
        check_flat(row, built)


def test_compose_rules():
    r_m, r_a = torch.rand(30), torch.rand(30)
    assert torch.equal(compose_representation(r_m, torch.ones(30), 1), r_m)
    assert torch.equal(compose_representation(r_m, r_a, 2), r_m)
    assert torch.equal(compose_representation(r_m, r_a, 2, attr_in_stage2=True), r_m * r_a)
    with pytest.raises(ValueError):
        compose_representation(r_m, r_a, 3)


def test_classification_loss_analytic():
    lab = torch.from_numpy(flatten((1, 0, 1, 1)))[None]
    expected = sum(math.log(2 ** i) for i in range(1, 5))
    assert classification_loss(torch.zeros(1, 30), lab, 4).item() == pytest.approx(expected, rel=1e-6)
    assert classification_loss((lab * 2 - 1) * 50, lab, 4).item() < 1e-12


def test_forward_stages(drn):
    x = torch.rand(2, 3, 32, 32)
    rep1 = drn(x, 2, stage=1)
    rep2 = drn(x, 2, stage=2)
    assert rep1.r.shape == (2, 30)
    assert torch.equal(rep2.r, rep2.r_m)
    assert torch.all(rep1.r[:, 6:] == 0)


def test_tiny_encoder_gradient():
    tiny = DRN(widths=(8, 8, 8, 8), hidden=8).double()
    ann.init_params(tiny, 1)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    params = dict(tiny.named_parameters())
    names = ["stages.0.inp.weight", "stages.2.res.bias", "stages.3.inp.weight"]

    for name in names:
        def z_of(p, name=name):
            return functional_call(tiny, {**params, name: p}, (x, 0)).z

        assert grad_rel_error(probe(z_of), [params[name].detach()], 0) <= 1e-4, name


def test_overfit_eight_samples():
    torch.manual_seed(0)
    m = DRN(widths=(8, 16, 16, 16), hidden=32)
    ann.init_params(m, 3)
    x = torch.rand(8, 3, 16, 16, generator=torch.Generator().manual_seed(4))
    paths = [(i % 2, (i // 2) % 2, (i // 4) % 2, i % 2) for i in range(8)]
    labels = torch.from_numpy(np.stack([flatten(p) for p in paths]))
    opt = torch.optim.AdamW(m.parameters(), lr=3e-3, weight_decay=0)
    losses = []
    for _ in range(100):
        loss = classification_loss(m(x, 4).logits, labels, 4)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < 0.05
    assert losses[-1] < losses[0]


def test_hard_mask_greedy_path():
    r = torch.zeros(2, 30)
    r[0, [1, 4, 11, 25]] = 1.0  # consistent path 1,0,1,1
    r[1, [0, 5, 7, 17]] = 1.0   # level-2 argmax (node 3) is not a child of node 0
    r[1, 2] = 0.4
    hm = hard_mask(r, 4)
    assert hm[0].nonzero().flatten().tolist() == [1, 4, 11, 25]
    assert hm[1].nonzero().flatten().tolist() == [0, 2, 7, 17]
