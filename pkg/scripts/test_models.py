#!/usr/bin/env python3
"""
Ψ-DiT / ControlNet structure: zero-init equivalence, init policies, masking, freezing
and parameter counts.
"""
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "psidit"))

from psidit.diffusion import to_tokens  # noqa: E402
from psidit.models import (  # noqa: E402
    ParamStore,
    PsiDitConfig,
    count_params,
    default_config,
    get_base,
    get_sr_model,
    init_base,
)
from psidit.modules.tokens import gather_tokens  # noqa: E402


def tiny(**kw) -> PsiDitConfig:
    return PsiDitConfig(**{"depth": 2, "width": 16, "num_heads": 2, "patch": 4, "image_size": 16, **kw})


def _inputs(config: PsiDitConfig, seed: int, batch: int = 2):
    g = torch.Generator().manual_seed(seed)
    captions = torch.randint(0, config.vocab_size, (batch, config.text_len), generator=g)
    x = torch.randn(batch, config.num_tokens, config.token_dim, generator=g)
    lr = torch.rand(batch, 3, config.image_size, config.image_size, generator=g)
    tau = torch.rand(batch, generator=g)
    return captions, x, to_tokens(lr, config.patch), tau


@pytest.mark.parametrize("architecture", ["psi_dit", "controlnet"])
def test_zero_init_reproduces_base(architecture):
    config = tiny()
    base = get_base(config=config, seed=3)
    model = get_sr_model(base, architecture, seed=3)
    for draw in range(10):
        captions, x, lr, tau = _inputs(config, draw)
        with torch.no_grad():
            ref = base(captions, x, tau)
            out = model(captions, x, tau, lr)
        assert (out - ref).abs().max().item() < 1e-6


def test_nlb_copy_and_teb_copy_policies():
    for policy, source in (("nlb_copy", "noise"), ("teb_copy", "text")):
        config = tiny(sscm_init_policy=policy)
        base = get_base(config=config, seed=0)
        model = get_sr_model(base, "psi_dit", seed=0)
        for block, sscm in zip(base.blocks, model.sscm):
            expected = getattr(block, source).state_dict()
            for name, tensor in sscm.lr.state_dict().items():
                assert torch.equal(tensor, expected[name]), f"{policy}: {name}"
            assert torch.equal(sscm.noise_qkv.weight, getattr(block, source).qkv.weight)
            assert torch.equal(sscm.noise_qkv.bias, getattr(block, source).qkv.bias)
            assert torch.count_nonzero(sscm.merge.weight) == 0
        store = ParamStore.of(model)
        assert store.provenance("sscm.0.lr.qkv.weight") == f"copy:blocks.0.{source}.qkv.weight"
        assert store.provenance("sscm.1.noise_qkv.weight") == f"copy:blocks.1.{source}.qkv.weight"
        assert store.provenance("sscm.1.merge.weight") == "zero"


def test_random_policy_does_not_copy():
    config = tiny(sscm_init_policy="random", enable_zero_init=False)
    base = get_base(config=config, seed=0)
    model = get_sr_model(base, "psi_dit", seed=0)
    assert not torch.equal(model.sscm[0].lr.qkv.weight, base.blocks[0].noise.qkv.weight)
    assert torch.count_nonzero(model.sscm[0].merge.weight) > 0


@pytest.mark.parametrize("architecture", ["psi_dit", "controlnet"])
def test_full_mask_ignores_lr_content(architecture):
    config = tiny(enable_zero_init=False, sscm_init_policy="random")
    model = get_sr_model(get_base(config=config, seed=1), architecture, seed=1)
    captions, x, lr_a, tau = _inputs(config, 0)
    _, _, lr_b, _ = _inputs(config, 1)
    nothing = torch.zeros(2, 0, dtype=torch.long)
    with torch.no_grad():
        a = model(captions, x, tau, lr_a, nothing)
        b = model(captions, x, tau, lr_b, nothing)
        c = model(captions, x, tau, lr_b)
    assert torch.equal(a, b)
    assert not torch.allclose(a, c)


def test_masked_tokens_are_dropped_not_replaced():
    config = tiny()
    model = get_sr_model(get_base(config=config, seed=0), "psi_dit")
    captions, x, lr, _ = _inputs(config, 0)
    kept = torch.tensor([[0, 5, 9], [1, 2, 15]])
    streams = model.make_streams(captions, x, lr, kept)
    assert streams.lr.shape == (2, 3, config.width)
    full = model.make_streams(captions, x, lr).lr
    assert torch.equal(streams.lr, gather_tokens(full, kept))


def test_freeze_flags_after_attaching_branch():
    config = tiny()
    base = get_base(config=config)
    assert all(p.requires_grad for p in base.parameters())
    model = get_sr_model(base, "psi_dit")
    store = ParamStore.of(model)
    for name, _ in store.items():
        assert store.is_trainable(name) == name.startswith("sscm.")
    ctrl = get_sr_model(get_base(config=config), "controlnet")
    store = ParamStore.of(ctrl)
    for name, _ in store.items():
        assert store.is_trainable(name) == name.startswith(("replica.", "inject."))


def test_trainable_counts_default_config():
    config = default_config()
    psi = get_sr_model(get_base(config=config), "psi_dit")
    ctrl = get_sr_model(get_base(config=config), "controlnet")
    n_psi = count_params(psi, trainable_only=True)
    n_ctrl = count_params(ctrl, trainable_only=True)
    assert n_psi == sum(p.numel() for p in psi.sscm.parameters()) == 365312
    assert n_ctrl == 614144
    assert n_psi < n_ctrl
    print(f"trainable ratio psi_dit / controlnet = {n_psi / n_ctrl:.4f}")


def _closed_form_base_count(config: PsiDitConfig) -> int:
    D, T, M = config.width, config.token_dim, int(config.width * config.mlp_ratio)

    def linear(i, o):
        return i * o + o

    stream = linear(D, 6 * D) + linear(D, 3 * D) + linear(D, D) + linear(D, M) + linear(M, D)
    embeddings = linear(T, D) + (config.num_tokens + config.vocab_size + config.text_len) * D
    conditioning = 3 * linear(D, D)  # two timestep layers and the caption pool
    head = linear(D, 2 * D) + linear(D, T)
    return embeddings + conditioning + config.depth * 2 * stream + head


def test_init_base_is_seeded_and_counted():
    config = tiny()
    a = init_base(config, torch.Generator().manual_seed(5))
    b = init_base(config, torch.Generator().manual_seed(5))
    c = init_base(config, torch.Generator().manual_seed(6))
    assert ParamStore.of(a).digest() == ParamStore.of(b).digest()
    assert ParamStore.of(a).digest() != ParamStore.of(c).digest()
    assert count_params(a) == count_params(a, trainable_only=True) == _closed_form_base_count(config)
    assert count_params(get_base(config=default_config())) == _closed_form_base_count(default_config()) == 631216


@pytest.mark.parametrize("architecture", ["psi_dit", "controlnet"])
def test_forward_keeps_no_hidden_state(architecture):
    config = tiny(enable_zero_init=False, sscm_init_policy="random")
    model = get_sr_model(get_base(config=config, seed=2), architecture, seed=2)
    before = ParamStore.of(model).digest()
    captions, x, lr, tau = _inputs(config, 0)
    other_captions, other_x, other_lr, other_tau = _inputs(config, 1)
    kept = torch.tensor([[0, 3, 7], [2, 4, 15]])
    with torch.no_grad():
        first = model(captions, x, tau, lr, kept)
        model(other_captions, other_x, other_tau, other_lr)
        second = model(captions, x, tau, lr, kept)
    assert torch.equal(first, second)
    assert ParamStore.of(model).digest() == before
    assert torch.equal(x, _inputs(config, 0)[1])


def test_missing_sscm_block_is_reported():
    config = tiny()
    model = get_sr_model(get_base(config=config), "psi_dit")
    del model.sscm[1]
    captions, x, lr, tau = _inputs(config, 0)
    with pytest.raises(ValueError, match="missing SSCM parameters"):
        model(captions, x, tau, lr)


def test_text_reaches_noise_only_through_keys_values_and_conditioning():
    config = tiny()
    base = init_base(config, torch.Generator().manual_seed(0))
    D = config.width
    captions, x, _, tau = _inputs(config, 0, batch=1)
    other = (captions + 1) % config.vocab_size
    with torch.no_grad():
        base.caption_pool.weight.zero_()
        base.caption_pool.bias.zero_()
        for block in base.blocks:
            block.text.qkv.weight[2 * D:].zero_()
            block.text.qkv.bias[2 * D:].zero_()
        values_zeroed = (base(captions, x, tau), base(other, x, tau))
        for block in base.blocks:
            block.text.qkv.weight[D:2 * D].zero_()
            block.text.qkv.bias[D:2 * D].zero_()
        both_zeroed = (base(captions, x, tau), base(other, x, tau))
    assert not torch.equal(*values_zeroed)
    assert torch.equal(*both_zeroed)


def test_joint_attention_map_rows_sum_to_one():
    config = tiny()
    base = init_base(config, torch.Generator().manual_seed(0))
    captions, x, _, tau = _inputs(config, 0)
    streams = base.make_streams(captions, x)
    weights = base.blocks[0].attention_map(streams.text, streams.noise, base.condition(streams, tau))
    n = config.text_len + config.num_tokens
    assert weights.shape == (2, config.num_heads, n, n)
    assert torch.allclose(weights.sum(-1), torch.ones(2, config.num_heads, n), atol=1e-6)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
