"""Asymmetric encoder-decoder for through-plane super-resolution

The encoder embeds every voxel and runs STL2 blocks along the in-plane axes of
each slice. The decoder stacks feature interaction modules (a through-plane
attention block followed by an in-plane STL2), widens the channels by the
upsampling factor and folds them into depth, then projects to one channel.

Public entry points take and return channel-first tensors ``[B, C, D, H, W]``;
internally activations are kept channels-last ``[B, D, H, W, d]`` so every
linear layer acts on the trailing axis.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from errors import CheckpointError, ShapeError
from network.attention import (
    Stl2Params,
    VitBlockParams,
    dense_attention_map,
    sinusoidal_positions,
    stl2_block,
    vit_block,
)
from network.config import ModelConfig
from network.layers import LinearLayer, WindowSpec, depth_subpixel, linear
from network.params import ParameterFactory, Parameters, StoreLookup
from tensor_core.tensor import Tensor, no_grad, permute, reshape

logger = logging.getLogger(__name__)

# Token axes of a channels-last activation [B, D, H, W, d]
DEPTH_AXIS = 1
HEIGHT_AXIS = 2
WIDTH_AXIS = 3


@dataclass
class TabPathway:
    """Projection in, four STL2 stages, projection back out"""

    in_proj: LinearLayer
    blocks: List[Stl2Params]
    out_proj: LinearLayer


@dataclass
class TabParams:
    """Through-plane attention block: a sagittal and a coronal pathway"""

    sagittal: TabPathway
    coronal: TabPathway


@dataclass
class FimParams:
    tab: Optional[TabParams]
    refine: Stl2Params


@dataclass
class ModelLayout:
    """Every layer of one network, bound to tensors in a Parameters store"""

    embed: Optional[LinearLayer] = None
    encoder_blocks: List[Stl2Params] = field(default_factory=list)
    patch_embed: Optional[LinearLayer] = None
    vit_blocks: List[VitBlockParams] = field(default_factory=list)
    unpatch: Optional[LinearLayer] = None
    fims: List[FimParams] = field(default_factory=list)
    expand: Optional[LinearLayer] = None
    out: Optional[LinearLayer] = None


def _stl2(factory, name, config: ModelConfig):
    return Stl2Params.create(
        factory, name, config.embed_dim, config.heads,
        mlp_ratio=config.mlp_ratio, bias_hidden=config.bias_hidden, tau_min=config.tau_min,
    )


def _declare_pathway(factory, name, config: ModelConfig):
    d = config.embed_dim
    return TabPathway(
        in_proj=LinearLayer.create(factory, f"{name}.in_proj", d, d),
        blocks=[_stl2(factory, f"{name}.blocks.{j}", config) for j in range(config.stl_per_tab)],
        out_proj=LinearLayer.create(factory, f"{name}.out_proj", d, d, zero=True),
    )


def declare_layout(factory, config: ModelConfig):
    """
    Declare every parameter of ``config`` on ``factory`` in a fixed order

    The same walk initializes fresh weights (ParameterFactory) and binds
    loaded ones (StoreLookup), so names and shapes cannot drift apart.
    """
    d = config.embed_dim
    layout = ModelLayout()
    if config.variant == "vit_encoder":
        p = config.vit_patch
        layout.patch_embed = LinearLayer.create(factory, "encoder.patch_embed", p * p, d)
        layout.vit_blocks = [
            VitBlockParams.create(factory, f"encoder.vit.{i}", d, config.heads, config.mlp_ratio)
            for i in range(config.encoder_depth)
        ]
        layout.unpatch = LinearLayer.create(factory, "encoder.unpatch", d, p * p * d)
    else:
        layout.embed = LinearLayer.create(factory, "encoder.embed", 1, d)
        layout.encoder_blocks = [_stl2(factory, f"encoder.blocks.{i}", config) for i in range(config.encoder_depth)]

    if config.variant in ("full", "no_tab"):
        for i in range(config.n_fim):
            tab = None
            if config.variant == "full":
                tab = TabParams(
                    sagittal=_declare_pathway(factory, f"decoder.fims.{i}.tab.sag", config),
                    coronal=_declare_pathway(factory, f"decoder.fims.{i}.tab.cor", config),
                )
            layout.fims.append(FimParams(tab=tab, refine=_stl2(factory, f"decoder.fims.{i}.refine", config)))

    layout.expand = LinearLayer.create(factory, "head.expand", d, config.upsample * d)
    layout.out = LinearLayer.create(factory, "head.out", d, 1)
    return layout


def init_parameters(config: ModelConfig, seed=0):
    """Fresh parameters for ``config``; the same seed gives bit-identical weights"""
    config.validate()
    store = Parameters()
    declare_layout(ParameterFactory(store, np.random.default_rng(seed)), config)
    return store


def expected_shapes(config: ModelConfig):
    """Ordered name -> shape of every parameter ``config`` declares"""
    store = Parameters()
    declare_layout(ParameterFactory(store, rng=None), config)
    return {name: t.shape for name, t in store.items()}


def bind_parameters(params: Parameters, config: ModelConfig):
    """Bind a loaded store to the layer structure of ``config``"""
    try:
        return declare_layout(StoreLookup(params), config)
    except KeyError as e:
        raise CheckpointError(f"missing parameter {e.args[0]!r}") from None
    except ValueError as e:
        raise CheckpointError(str(e)) from None


# Axis plumbing


def pathway_view(z, axis):
    """
    Flatten a channels-last activation into token sequences along ``axis``

    Returns:
        (sequences ``[N, L, d]``, moved shape, axis order) for restore_view
    """
    order = [0] + [a for a in (DEPTH_AXIS, HEIGHT_AXIS, WIDTH_AXIS) if a != axis] + [axis, 4]
    moved = z if order == list(range(5)) else permute(z, order)
    shape = moved.shape
    return reshape(moved, (-1, shape[3], shape[4])), shape, order


def restore_view(sequences, shape, order):
    """Inverse of pathway_view"""
    moved = reshape(sequences, shape)
    if order == list(range(5)):
        return moved
    return permute(moved, tuple(int(i) for i in np.argsort(order)))


def _along_axis(z, axis, fn):
    sequences, shape, order = pathway_view(z, axis)
    return restore_view(fn(sequences), shape, order)


def _shifted(window, shifted):
    return WindowSpec(window, window // 2 if shifted else 0)


def _run_pathway(sequences, pathway: TabPathway, window):
    s = linear(sequences, pathway.in_proj)
    for j, block in enumerate(pathway.blocks):
        s = stl2_block(s, block, _shifted(window, j % 2 == 1))
    return linear(s, pathway.out_proj)


def _tab(z, tab: TabParams, window):
    h_sag = _along_axis(z, DEPTH_AXIS, lambda s: _run_pathway(s, tab.sagittal, window))
    h_cor = _along_axis(z, HEIGHT_AXIS, lambda s: _run_pathway(s, tab.coronal, window))
    return z + h_sag + h_cor


def _to_channels_last(x):
    return permute(x, (0, 2, 3, 4, 1))


def _to_channels_first(x):
    return permute(x, (0, 4, 1, 2, 3))


def tab_forward(z_in, tab: TabParams, window=8):
    """
    Through-plane attention on a channel-first latent ``[B, d, D, H, W]``

    The sagittal pathway attends along depth, the coronal pathway along
    height; both outputs are added to the input. Shape is preserved.
    """
    if z_in.ndim != 5:
        raise ShapeError(f"tab_forward expects [B, d, D, H, W], got {z_in.shape}")
    return _to_channels_first(_tab(_to_channels_last(z_in), tab, window))


def l1_loss(y_hat, y):
    """Mean absolute error over every voxel"""
    target = y if isinstance(y, Tensor) else Tensor(y)
    if y_hat.shape != target.shape:
        raise ShapeError(f"l1_loss: prediction {y_hat.shape} and target {target.shape} differ")
    return (y_hat - target).abs().mean()


class TVSRNv2:
    """
    The network bound to a parameter store

    Forward passes only read the parameters, so one instance can serve
    several inference threads at once. Training mutates the store in place.
    """

    def __init__(self, config: ModelConfig, params: Optional[Parameters] = None, seed=0):
        """
        Initialize the model

        Args:
            config: Model hyperparameters
            params: Loaded parameters, or None to initialize from ``seed``
            seed: Seed for fresh weights
        """
        self.config = config.validate()
        self.params = params if params is not None else init_parameters(config, seed)
        self.layout = bind_parameters(self.params, config)

    def parameter_count(self):
        return self.params.count()

    def _check_input(self, x_lr):
        if x_lr.ndim != 5 or x_lr.shape[1] != 1:
            raise ShapeError(f"expected input [B, 1, D, H, W], got {x_lr.shape}")
        if self.config.variant == "vit_encoder":
            p = self.config.vit_patch
            if x_lr.shape[3] % p or x_lr.shape[4] % p:
                raise ShapeError(f"vit_encoder needs H and W divisible by {p}, got {x_lr.shape[3:]}")

    def _encode(self, x):
        if self.config.variant == "vit_encoder":
            return self._vit_encode(x)
        window = self.config.window
        z = linear(x, self.layout.embed)
        for i, block in enumerate(self.layout.encoder_blocks):
            axis = WIDTH_AXIS if i % 2 == 0 else HEIGHT_AXIS
            spec = _shifted(window, (i // 2) % 2 == 1)
            z = _along_axis(z, axis, lambda s, b=block, sp=spec: stl2_block(s, b, sp))
        return z

    def _vit_tokens(self, x):
        batch, depth, height, width, _ = x.shape
        p = self.config.vit_patch
        t = reshape(x, (batch, depth, height // p, p, width // p, p))
        t = permute(t, (0, 1, 2, 4, 3, 5))
        t = reshape(t, (batch, depth * (height // p) * (width // p), p * p))
        z = linear(t, self.layout.patch_embed)
        return z + Tensor(sinusoidal_positions(z.shape[1], z.shape[2])[None])

    def _vit_encode(self, x):
        batch, depth, height, width, _ = x.shape
        p = self.config.vit_patch
        d = self.config.embed_dim
        z = self._vit_tokens(x)
        for block in self.layout.vit_blocks:
            z = vit_block(z, block)
        z = linear(z, self.layout.unpatch)
        z = reshape(z, (batch, depth, height // p, width // p, p, p, d))
        z = permute(z, (0, 1, 2, 4, 3, 5, 6))
        return reshape(z, (batch, depth, height, width, d))

    def _decode(self, z):
        window = self.config.window
        for i, fim in enumerate(self.layout.fims):
            if fim.tab is not None:
                z = _tab(z, fim.tab, window)
            axis = WIDTH_AXIS if i % 2 == 0 else HEIGHT_AXIS
            z = _along_axis(z, axis, lambda s, b=fim.refine: stl2_block(s, b, WindowSpec(window)))
        z = linear(z, self.layout.expand)
        z = depth_subpixel(z, self.config.upsample)
        return _to_channels_first(linear(z, self.layout.out))

    def encode(self, x_lr):
        """``[B, 1, D, H, W]`` -> latent ``[B, d, D, H, W]``"""
        self._check_input(x_lr)
        return _to_channels_first(self._encode(_to_channels_last(x_lr)))

    def decode(self, latent):
        """latent ``[B, d, D, H, W]`` -> ``[B, 1, r*D, H, W]``"""
        if latent.ndim != 5 or latent.shape[1] != self.config.embed_dim:
            raise ShapeError(f"expected latent [B, {self.config.embed_dim}, D, H, W], got {latent.shape}")
        return self._decode(_to_channels_last(latent))

    def forward(self, x_lr):
        """``[B, 1, D, H, W]`` -> ``[B, 1, r*D, H, W]``"""
        self._check_input(x_lr)
        return self._decode(self._encode(_to_channels_last(x_lr)))

    __call__ = forward

    def tab_forward(self, z_in, fim_index=0):
        fim = self.layout.fims[fim_index]
        if fim.tab is None:
            raise ShapeError(f"variant {self.config.variant!r} has no through-plane attention")
        return tab_forward(z_in, fim.tab, self.config.window)

    def predict(self, window):
        """Super-resolve one ``[d, H, W]`` array without recording gradients"""
        with no_grad():
            y = self.forward(Tensor(np.asarray(window)[None, None]))
        return y.data[0, 0].copy()

    def attention_probe(self, x_lr):
        """
        Attention weights of the first encoder attention layer

        For the windowed variants this is the dense ``[B*D*H, heads, W, W]``
        map of the first in-plane block; for vit_encoder it is the global
        ``[B, heads, N, N]`` map over every patch token of the volume.
        """
        self._check_input(x_lr)
        with no_grad():
            x = _to_channels_last(x_lr)
            if self.config.variant == "vit_encoder":
                if not self.layout.vit_blocks:
                    raise ShapeError("vit_encoder with encoder_depth 0 has no attention to probe")
                _, weights = vit_block(self._vit_tokens(x), self.layout.vit_blocks[0], return_weights=True)
                return weights.data.copy()
            if not self.layout.encoder_blocks:
                raise ShapeError("encoder_depth 0 has no attention to probe")
            z = linear(x, self.layout.embed)
            sequences, _, _ = pathway_view(z, WIDTH_AXIS)
            return dense_attention_map(sequences, self.layout.encoder_blocks[0], WindowSpec(self.config.window))


def encode(x_lr, params: Parameters, config: ModelConfig):
    return TVSRNv2(config, params).encode(x_lr)


def decode(latent, params: Parameters, config: ModelConfig):
    return TVSRNv2(config, params).decode(latent)


def forward(x_lr, params: Parameters, config: ModelConfig):
    return TVSRNv2(config, params).forward(x_lr)
