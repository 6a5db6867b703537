#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/backbone.py

"""The restoration transformer.

Double-stream blocks keep separate text and image weights and attend
jointly; single-stream blocks share one set of weights. Each block gets
six adaptive-norm values (shift, scale, gate for attention and MLP) from
the noise level. Identity deltas are added to the image tokens' values
only, and the degraded memory is read by image tokens only, right after
self-attention.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import logging
from dataclasses import dataclass

import numpy as np

from anchorflow.config import BackboneConfig, Config
from anchorflow.errors import ShapeError
from anchorflow.flow import Conditioning
from anchorflow.identity import (
    IdentityAnchor, IdentityPathway, ModulationDeltas, StubIdentityEncoder,
    canonical_order, select_anchor,
)
from anchorflow.layers import Linear, Mlp, normal_init, sinusoidal_embedding
from anchorflow.numerics import (
    ArrayLike, ParameterRegistry, Tensor, as_tensor, attention, concat, gelu,
    normalize, reshape,
)
from anchorflow.structure import (
    DegradedCrossAttention, DegradedMemory, StructurePathway, resize_to_scene,
)
from anchorflow.tokens import (
    SCENE, TEXT, TokenBlock, TokenSequence, apply_rope, assemble_sequence,
    encode_latent, patchify, rope_tables, unpatchify,
)

__all__ = ['modulate', 'DoubleStreamBlock', 'SingleStreamBlock',
           'PreparedConditioning', 'RestorationModel']

SIGMA_SCALE = 1000.0

logger = logging.getLogger(__name__)

Trace = List[Dict[str, np.ndarray]]


def modulate(x: ArrayLike, shift: Tensor, scale: Tensor) -> Tensor:
    return as_tensor(x) * (scale + 1.0) + shift


class _Rope:
    """Per-sequence cos/sin tables and head split/merge."""

    def __init__(self, cfg: BackboneConfig, seq: TokenSequence) -> None:
        self.n_heads, self.head_dim = cfg.n_heads, cfg.head_dim
        self.cos, self.sin = rope_tables(seq.ids, cfg.rope)

    def heads(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return x.reshape(n, self.n_heads, self.head_dim).transpose(1, 0, 2)

    def attend(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        n = q.shape[0]
        out = attention(apply_rope(self.heads(q), self.cos, self.sin),
                        apply_rope(self.heads(k), self.cos, self.sin),
                        self.heads(v))
        return out.transpose(1, 0, 2).reshape(n, self.n_heads * self.head_dim)


def _qkv(linear: Linear, hidden: Tensor, d: int) -> Tuple[Tensor, Tensor, Tensor]:
    packed = linear(hidden)
    return packed[:, :d], packed[:, d:2 * d], packed[:, 2 * d:]


class _Stream:
    """Weights of one token stream inside a block."""

    def __init__(self, registry: ParameterRegistry, name: str,
                 cfg: BackboneConfig, rng: np.random.Generator) -> None:
        d = cfg.d_model
        self.d = d
        self.mod = Linear(registry, name + '.mod', d, 6 * d, rng)
        self.qkv = Linear(registry, name + '.qkv', d, 3 * d, rng)
        self.out = Linear(registry, name + '.out', d, d, rng)
        self.mlp = Mlp(registry, name + '.mlp', d, cfg.mlp_ratio * d, d, rng)

    def modulation(self, cond: Tensor, delta: Optional[Tensor] = None) -> Tensor:
        mod = reshape(self.mod(cond), (6, self.d))
        return mod if delta is None else mod + delta

    def mlp_residual(self, x: Tensor, mod: Tensor) -> Tensor:
        return x + mod[5] * self.mlp(modulate(normalize(x), mod[3], mod[4]))


def _record(trace: Optional[Trace], entry: Dict[str, Tensor]) -> None:
    if trace is not None:
        trace.append({key: value.numpy() for key, value in entry.items()})


class DoubleStreamBlock:

    def __init__(self, registry: ParameterRegistry, name: str,
                 cfg: BackboneConfig, rng: np.random.Generator) -> None:
        self.txt = _Stream(registry, name + '.txt', cfg, rng)
        self.img = _Stream(registry, name + '.img', cfg, rng)
        self.d = cfg.d_model

    def __call__(self, txt: Tensor, img: Tensor, cond: Tensor, rope: _Rope,
                 delta: Tensor = None, cross: DegradedCrossAttention = None,
                 memory: DegradedMemory = None, trace: Trace = None
                 ) -> Tuple[Tensor, Tensor]:
        n_text, d = txt.shape[0], self.d
        mod_t = self.txt.modulation(cond)
        mod_i = self.img.modulation(cond, delta)
        h_t = modulate(normalize(txt), mod_t[0], mod_t[1])
        h_i = modulate(normalize(img), mod_i[0], mod_i[1])
        q_t, k_t, v_t = _qkv(self.txt.qkv, h_t, d)
        q_i, k_i, v_i = _qkv(self.img.qkv, h_i, d)
        att = rope.attend(concat([q_t, q_i]), concat([k_t, k_i]),
                          concat([v_t, v_i]))
        txt = txt + mod_t[2] * self.txt.out(att[:n_text])
        img = img + mod_i[2] * self.img.out(att[n_text:])
        before = txt
        if memory is not None:
            img = cross(img, memory)
        _record(trace, {'text_modulated': h_t, 'text_before_hook': before,
                        'text_after_hook': txt})
        return (self.txt.mlp_residual(txt, mod_t),
                self.img.mlp_residual(img, mod_i))


class SingleStreamBlock:
    """One weight set; text rows use the base modulation, image rows
    base plus delta."""

    def __init__(self, registry: ParameterRegistry, name: str,
                 cfg: BackboneConfig, rng: np.random.Generator) -> None:
        self.stream = _Stream(registry, name, cfg, rng)
        self.d = cfg.d_model

    def __call__(self, x: Tensor, n_text: int, cond: Tensor, rope: _Rope,
                 delta: Tensor = None, cross: DegradedCrossAttention = None,
                 memory: DegradedMemory = None, trace: Trace = None) -> Tensor:
        stream, d = self.stream, self.d
        mod_t = stream.modulation(cond)
        mod_i = mod_t if delta is None else mod_t + delta
        txt, img = x[:n_text], x[n_text:]
        h_t = modulate(normalize(txt), mod_t[0], mod_t[1])
        h_i = modulate(normalize(img), mod_i[0], mod_i[1])
        q, k, v = _qkv(stream.qkv, concat([h_t, h_i]), d)
        att = stream.out(rope.attend(q, k, v))
        txt = txt + mod_t[2] * att[:n_text]
        img = img + mod_i[2] * att[n_text:]
        before = txt
        if memory is not None:
            img = cross(img, memory)
        _record(trace, {'text_modulated': h_t, 'text_before_hook': before,
                        'text_after_hook': txt})
        return concat([stream.mlp_residual(txt, mod_t),
                       stream.mlp_residual(img, mod_i)])


@dataclass(frozen=True)
class PreparedConditioning:
    """Noise-level independent inputs of one restoration."""
    degraded_tokens: np.ndarray
    references: Tuple[np.ndarray, ...]
    anchor: Optional[IdentityAnchor]
    deltas: Optional[ModulationDeltas]
    memory: Optional[DegradedMemory]


class RestorationModel:
    """Toy restoration backbone with both side pathways.

    Every variant builds the same parameters, so one checkpoint loads
    under any variant; the variant only decides which pathways run.
    """

    def __init__(self, config: Config = None) -> None:
        self.config = config or Config()
        cfg = self.cfg = self.config.backbone()
        rng = np.random.default_rng(cfg.init_seed)
        d = cfg.d_model
        self.registry = ParameterRegistry()
        registry = self.registry
        self.patch_embed = Linear(registry, 'patch_embed', cfg.patch_dim, d, rng)
        self.text = registry.create('text', normal_init(rng, (cfg.n_text_tokens, d)))
        self.sigma_mlp = Mlp(registry, 'sigma_mlp', cfg.freq_dim, d, d, rng)
        self.double_blocks = [
            DoubleStreamBlock(registry, 'double.{0}'.format(i), cfg, rng)
            for i in range(cfg.n_double_blocks)]
        self.single_blocks = [
            SingleStreamBlock(registry, 'single.{0}'.format(i), cfg, rng)
            for i in range(cfg.n_single_blocks)]
        self.final_mod = Linear(registry, 'final.mod', d, 2 * d, rng)
        self.final_out = Linear(registry, 'final.out', d, cfg.patch_dim, rng)
        self.identity = IdentityPathway(registry, cfg, rng)
        self.structure = StructurePathway(registry, cfg, rng)
        self.encoder = StubIdentityEncoder(
            (cfg.image_channels, cfg.image_size, cfg.image_size), cfg.id_dim,
            cfg.stub_grid, cfg.stub_seed)
        logger.debug('built %s model with %d parameters', cfg.variant,
                     registry.size())

    def __repr__(self) -> str:
        return '<RestorationModel variant={0} d_model={1} params={2}>'.format(
            self.cfg.variant, self.cfg.d_model, self.registry.size())

    @property
    def latent_shape(self) -> Tuple[int, int, int]:
        return self.cfg.latent_shape

    def sigma_embedding(self, sigma: float) -> Tensor:
        code = sinusoidal_embedding(float(sigma) * SIGMA_SCALE, self.cfg.freq_dim)
        return self.sigma_mlp(code[None, :])

    def embed(self, latent: ArrayLike) -> TokenBlock:
        tokens, grid = patchify(latent, self.cfg.patch)
        return TokenBlock(self.patch_embed(tokens), grid)

    def forward(self, seq: TokenSequence, sigma: float,
                deltas: ModulationDeltas = None, memory: DegradedMemory = None,
                trace: Trace = None) -> Tensor:
        """Flow prediction for the scene tokens, ``(n_scene, patch_dim)``."""
        cfg = self.cfg
        if seq.features.shape[1] != cfg.d_model:
            raise ShapeError('sequence width {0} does not match d_model {1}'
                             .format(seq.features.shape[1], cfg.d_model))
        if seq.n_text != cfg.n_text_tokens or seq.rows(TEXT).start != 0:
            raise ShapeError('sequence must open with {0} text tokens'
                             .format(cfg.n_text_tokens))
        n_text = seq.n_text
        n_double = len(self.double_blocks)
        block_deltas = deltas.blocks() if deltas is not None else ()
        cond = gelu(self.sigma_embedding(sigma))
        rope = _Rope(cfg, seq)

        def hook(index: int) -> dict:
            return {
                'delta': block_deltas[index] if block_deltas else None,
                'cross': self.structure.cross[index] if memory is not None else None,
                'memory': memory,
                'trace': trace,
            }

        txt, img = seq.features[:n_text], seq.features[n_text:]
        for index, block in enumerate(self.double_blocks):
            txt, img = block(txt, img, cond, rope, **hook(index))
        x = concat([txt, img])
        for index, block in enumerate(self.single_blocks):
            x = block(x, n_text, cond, rope, **hook(n_double + index))

        final = reshape(self.final_mod(cond), (2, cfg.d_model))
        scene = x[seq.rows(SCENE)]
        return self.final_out(modulate(normalize(scene), final[0], final[1]))

    def degraded_latent(self, degraded: np.ndarray) -> np.ndarray:
        latent = encode_latent(degraded, self.cfg.latent_factor)
        return resize_to_scene(latent, self.cfg.latent_shape[1:])

    def anchor(self, degraded: np.ndarray,
               references: Sequence[np.ndarray] = ()) -> IdentityAnchor:
        return select_anchor(list(references), degraded, self.encoder,
                             self.cfg.temperature)

    def prepare(self, degraded: np.ndarray,
                references: Sequence[np.ndarray] = (),
                unconditional: bool = False,
                adapters: bool = True) -> PreparedConditioning:
        """Everything the sampler can reuse across noise levels.
        The unconditional branch keeps the degraded and reference
        tokens and drops identity deltas and the degraded memory.
        """
        cfg = self.cfg
        deg_latent = self.degraded_latent(degraded)
        deg_tokens, _ = patchify(deg_latent, cfg.patch)
        references = tuple(canonical_order(list(references), self.encoder))
        anchor = deltas = memory = None
        if adapters and not unconditional:
            if cfg.uses_identity:
                anchor = self.anchor(degraded, references)
                deltas = self.identity.deltas(anchor)
            if cfg.memory_routes:
                memory = self.structure.build_memory(deg_latent,
                                                     cfg.memory_routes)
        return PreparedConditioning(deg_tokens, references, anchor, deltas,
                                    memory)

    def predict_flow(self, z_sigma: np.ndarray, degraded: np.ndarray,
                     references: Sequence[np.ndarray] = (), sigma: float = 1.0,
                     unconditional: bool = False, adapters: bool = True,
                     prepared: PreparedConditioning = None,
                     trace: Trace = None) -> Tensor:
        """Predicted flow for `z_sigma` as a differentiable latent grid.
        ``adapters=False`` runs the bare backbone on the same sequence.
        """
        cfg = self.cfg
        z_sigma = np.asarray(z_sigma, dtype=float)
        if z_sigma.shape != cfg.latent_shape:
            raise ShapeError('noised latent {0} does not match the model '
                             'latent {1}'.format(z_sigma.shape,
                                                 cfg.latent_shape))
        if prepared is None:
            prepared = self.prepare(degraded, references, unconditional,
                                    adapters)
        scene = self.embed(z_sigma)
        if adapters and cfg.uses_residual:
            scene = TokenBlock(self.structure.input_residual(
                scene.features, prepared.degraded_tokens), scene.grid)
        degraded_block = TokenBlock(self.patch_embed(prepared.degraded_tokens),
                                    scene.grid)
        ref_blocks = [self.embed(encode_latent(ref, cfg.latent_factor))
                      for ref in prepared.references]
        seq = assemble_sequence(scene, degraded_block, ref_blocks, self.text)
        out = self.forward(seq, sigma, prepared.deltas, prepared.memory, trace)
        return unpatchify(out, scene.grid, cfg.latent_channels, cfg.patch)

    def __call__(self, z_sigma: np.ndarray, sigma: float,
                 conditioning: Conditioning,
                 unconditional: bool = False) -> np.ndarray:
        return self.predict_flow(z_sigma, conditioning.degraded,
                                 conditioning.references, sigma,
                                 unconditional=unconditional).data


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
