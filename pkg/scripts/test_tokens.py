#!/usr/bin/env python3
"""
Token codec: patch grid layout, caption lookup and flow-time embedding.
"""
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "psidit"))

from psidit.models import PsiDitConfig, get_base  # noqa: E402
from psidit.modules.tokens import (  # noqa: E402
    PAD_ID,
    PatchGeometry,
    TimestepEmbedder,
    TokenStreams,
    embed_caption,
    gather_tokens,
    patchify,
    timestep_embed,
    timestep_features,
    unpatchify,
)


def test_patchify_shapes_and_inverse():
    image = torch.rand(3, 32, 32)
    tokens = patchify(image, 4)
    assert tokens.shape == (64, 48)
    assert torch.equal(unpatchify(tokens, PatchGeometry(32, 32, 4)), image)
    batch = torch.rand(2, 3, 16, 8)
    assert torch.equal(unpatchify(patchify(batch, 4), PatchGeometry(16, 8, 4)), batch)


def test_patch_index_is_row_major_grid_position():
    image = torch.zeros(3, 16, 16)
    row, col = 2, 1
    image[:, row * 4 + 1, col * 4 + 3] = 1.0
    tokens = patchify(image, 4)
    touched = tokens.abs().sum(-1).nonzero().flatten().tolist()
    assert touched == [row * 4 + col]


def test_patchify_rejects_indivisible_image():
    with pytest.raises(ValueError):
        patchify(torch.zeros(3, 10, 12), 4)
    with pytest.raises(ValueError):
        unpatchify(torch.zeros(5, 48), PatchGeometry(16, 16, 4))


def test_embed_caption_lookup_and_range():
    table = torch.arange(12, dtype=torch.float32).view(4, 3)
    ids = torch.tensor([[0, 3, 1]])
    out = embed_caption(ids, table)
    assert torch.equal(out[0, 1], table[3])
    with pytest.raises(ValueError):
        embed_caption(torch.tensor([[4]]), table)
    with pytest.raises(ValueError):
        embed_caption(torch.tensor([[0.0]]), table)


def test_embed_caption_padding_and_distinct_rows():
    g = torch.Generator().manual_seed(0)
    table = torch.randn(6, 4, generator=g)
    pad = torch.full((1, 8), PAD_ID, dtype=torch.long)
    out = embed_caption(pad, table)
    assert torch.equal(out, table[PAD_ID].expand(1, 8, 4))
    every_id = torch.arange(6)[None]
    rows = embed_caption(every_id, table)[0]
    assert torch.equal(rows, table)
    assert len({tuple(r.tolist()) for r in rows}) == 6
    assert torch.equal(embed_caption(every_id, table), embed_caption(every_id.clone(), table))


def test_positions_separate_identical_content():
    config = PsiDitConfig(depth=1, width=16, num_heads=2, patch=4, image_size=16)
    base = get_base(config=config, seed=0)
    same = torch.full((1, config.num_tokens, config.token_dim), 0.25)
    with torch.no_grad():
        streams = base.make_streams(torch.full((1, config.text_len), PAD_ID), same, same)
    for tokens in (streams.noise[0], streams.text[0]):
        dist = torch.cdist(tokens, tokens)
        off_diagonal = dist[~torch.eye(len(tokens), dtype=torch.bool)]
        assert off_diagonal.min().item() > 0
    assert torch.equal(streams.lr, streams.noise)


def test_timestep_features_range_and_shape():
    feats = timestep_features(torch.tensor([0.0, 0.5, 1.0]), 16)
    assert feats.shape == (3, 16)
    assert torch.equal(feats[0, :8], torch.ones(8))
    with pytest.raises(ValueError):
        timestep_features(torch.tensor([1.5]), 16)


def test_timestep_embedder_separates_endpoints():
    torch.manual_seed(0)
    emb = TimestepEmbedder(32, freq_dim=16)
    a, b = timestep_embed(0.0, emb), timestep_embed(1.0, emb)
    assert a.shape == (32,)
    assert not torch.allclose(a, b)
    assert a.norm() != b.norm()


def test_token_streams_validation():
    text, noise = torch.zeros(2, 8, 16), torch.zeros(2, 4, 16)
    kept = torch.tensor([[0, 2], [1, 3]])
    lr = gather_tokens(torch.arange(2 * 4 * 16, dtype=torch.float32).view(2, 4, 16), kept)
    streams = TokenStreams(text, noise, lr, kept)
    assert streams.batch_size == 2
    assert torch.equal(lr[1, 0], torch.arange(5 * 16, 6 * 16, dtype=torch.float32))
    with pytest.raises(ValueError):
        TokenStreams(text, noise, lr, torch.tensor([[2, 0], [1, 3]]))
    with pytest.raises(ValueError):
        TokenStreams(text, noise, torch.zeros(2, 2, 8), kept)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
