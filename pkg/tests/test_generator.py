import itertools

import pytest
import torch

from tdsr.errors import ConfigError, InputContractError, ShapeError
from tdsr.generator import (GeneratorConfig, ResidualBlock, build_generator,
                            count_parameters, pixel_shuffle, pixel_unshuffle, residual_block_apply,
                            to_signed, to_unit)


def hand_parameter_count(n_res, c, k=9, bn=True):
    conv = lambda cin, cout, ks: cin * cout * ks * ks + cout
    bn_p = 2 * c if bn else 0
    total = conv(3, c, k) + 1                                   # head + PReLU slope
    total += n_res * (2 * conv(c, c, 3) + 2 * bn_p + 1)            # residual blocks
    total += conv(c, c, 3) + bn_p                                # merge
    total += 2 * (conv(c, 4 * c, 3) + 1)                         # two x2 upsample stages
    total += conv(c, 3, k)                                       # tail
    return total


def test_build_is_deterministic():
    cfg = GeneratorConfig(num_residual_blocks=1, trunk_channels=8)
    a, b = build_generator(cfg, 0), build_generator(cfg, 0)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)
    c = build_generator(cfg, 1)
    assert not torch.equal(a.head.weight, c.head.weight)


@pytest.mark.parametrize("n_res,c", [(16, 64), (4, 32), (1, 8)])
def test_parameter_count_closed_form(n_res, c):
    model = build_generator(GeneratorConfig(num_residual_blocks=n_res, trunk_channels=c))
    assert count_parameters(model) == hand_parameter_count(n_res, c)


def test_paper_config_count_pinned():
    # 15617 head + 16 * 74113 blocks + 37056 merge + 2 * 147713 upsample + 15555 tail
    assert count_parameters(build_generator(GeneratorConfig.paper())) == 1_549_462


@pytest.mark.parametrize("field,kwargs", [
    ("scale_factor", {"scale_factor": 3}),
    ("num_residual_blocks", {"num_residual_blocks": 0}),
    ("trunk_channels", {"trunk_channels": 0}),
    ("input_channels", {"input_channels": 1}),
    ("head_kernel", {"head_kernel": 4}),
])
def test_invalid_config_names_field(field, kwargs):
    with pytest.raises(ConfigError) as err:
        build_generator(GeneratorConfig(**kwargs))
    assert err.value.field == field


def test_forward_shape_and_range():
    model = build_generator(GeneratorConfig(num_residual_blocks=1, trunk_channels=8)).eval()
    x = torch.rand(3, 64, 64) * 2 - 1
    with torch.no_grad():
        y = model(x)
    assert y.shape == (3, 256, 256)
    assert float(y.abs().max()) <= 1.0


def test_range_law_under_extreme_weights():
    model = build_generator(GeneratorConfig(num_residual_blocks=1, trunk_channels=4))
    with torch.no_grad():
        for p in model.parameters():
            p.mul_(50.0)
        y = model(torch.ones(2, 3, 5, 7))
    assert y.shape == (2, 3, 20, 28)
    assert float(y.abs().max()) <= 1.0


def test_input_contract():
    model = build_generator(GeneratorConfig(num_residual_blocks=1, trunk_channels=4))
    with pytest.raises(InputContractError):
        model(torch.zeros(1, 8, 8))
    with pytest.raises(InputContractError):
        model(torch.full((3, 8, 8), 1.5))
    model(torch.full((3, 8, 8), 1.0 + 5e-7))  # inside the boundary tolerance


def test_same_seed_same_output():
    cfg = GeneratorConfig(num_residual_blocks=2, trunk_channels=8)
    x = torch.rand(1, 3, 8, 8) * 2 - 1
    a = build_generator(cfg, 3).eval()(x)
    b = build_generator(cfg, 3).eval()(x)
    assert torch.equal(a, b)


def test_gradient_matches_finite_differences():
    torch.manual_seed(0)
    model = build_generator(GeneratorConfig(num_residual_blocks=1, trunk_channels=4), 0).double()
    x = (torch.rand(1, 3, 8, 8, dtype=torch.float64) * 2 - 1)
    model(x).sum().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in model.parameters()])
    numeric = []
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + 1e-4
                up = model(x).sum().item()
                flat[i] = old - 1e-4
                down = model(x).sum().item()
                flat[i] = old
                numeric.append((up - down) / 2e-4)
    numeric = torch.tensor(numeric, dtype=torch.float64)
    rel = (analytic - numeric).norm() / numeric.norm()
    assert rel < 1e-3


def test_pixel_shuffle_examples():
    x = torch.arange(4.0).reshape(4, 1, 1)
    assert pixel_shuffle(x, 2).tolist() == [[[0.0, 1.0], [2.0, 3.0]]]
    y = torch.rand(5, 3, 4)
    assert torch.equal(pixel_shuffle(y, 1), y)
    assert pixel_shuffle(torch.rand(8, 3, 5), 2).shape == (2, 6, 10)
    with pytest.raises(ShapeError):
        pixel_shuffle(torch.rand(6, 2, 2), 2)


def test_pixel_shuffle_index_formula_brute_force():
    r, c, h, w = 3, 2, 2, 4
    x = torch.rand(c * r * r, h, w)
    out = pixel_shuffle(x, r)
    for ch, i, j, a, b in itertools.product(range(c), range(h), range(w), range(r), range(r)):
        assert out[ch, r * i + a, r * j + b] == x[ch * r * r + a * r + b, i, j]


def test_pixel_shuffle_matches_torch_and_inverts():
    x = torch.rand(2, 12, 5, 6)
    assert torch.equal(pixel_shuffle(x, 2), torch.nn.functional.pixel_shuffle(x, 2))
    assert torch.equal(pixel_unshuffle(pixel_shuffle(x, 2), 2), x)


def test_residual_block_zero_kernels_is_identity():
    block = ResidualBlock(6)
    with torch.no_grad():
        block.conv1.weight.zero_(); block.conv1.bias.zero_()
        block.conv2.weight.zero_(); block.conv2.bias.zero_()
    block.eval()
    x = torch.randn(2, 6, 5, 5)
    assert torch.equal(residual_block_apply(block, x), x)


def test_residual_block_hand_computed_single_pixel():
    block = ResidualBlock(1, batch_norm=False)
    with torch.no_grad():
        block.conv1.weight.zero_(); block.conv2.weight.zero_()
        block.conv1.weight[0, 0, 1, 1] = 2.0
        block.conv1.bias.fill_(-1.0)
        block.conv2.weight[0, 0, 1, 1] = 3.0
        block.conv2.bias.fill_(0.5)
        block.act.weight.fill_(0.25)
    x = torch.full((1, 1, 1, 1), 0.2)
    # conv1: 2*0.2-1 = -0.6; PReLU: -0.15; conv2: 3*-0.15+0.5 = 0.05; add: 0.25
    assert residual_block_apply(block, x).item() == pytest.approx(0.25, abs=1e-7)


def test_residual_block_shape_checks():
    block = ResidualBlock(4)
    assert residual_block_apply(block, torch.rand(1, 4, 3, 7)).shape == (1, 4, 3, 7)
    with pytest.raises(ShapeError):
        residual_block_apply(block, torch.rand(1, 3, 4, 4))


def test_range_maps_roundtrip():
    x = torch.rand(3, 4, 4)
    assert torch.allclose(to_unit(to_signed(x)), x)
