"""Binary parameter checkpoints.

Shared little-endian layout (magic ``PMPW``): a fixed header identifying
the section (VAE, velocity field, or direct regressor) and its
architecture, the layer dims of every contained network, then all float64
parameters in declaration order (per network: weight row-major, then bias,
layer by layer).
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor
from .baselines import DirectRegressorParams
from .errors import FormatError
from .latentflow import VelocityFieldParams
from .mmvae import MultimodalVaeParams
from .nn import Mlp
from .phantom import Modality

MAGIC = b"PMPW"
VERSION = 1

TAG_VAE = 1
TAG_VELOCITY = 2
TAG_DIRECT = 3

_ACT_CODES = {"tanh": 0, "relu": 1}
_ACT_NAMES = {code: name for name, code in _ACT_CODES.items()}


def _net_dims_blob(net: Mlp) -> bytes:
    dims = net.dims
    return struct.pack(f"<I{len(dims)}I", len(dims), *dims)


def _net_floats(net: Mlp) -> bytes:
    chunks = []
    for w, b in net.layers:
        chunks.append(np.ascontiguousarray(w.data, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b.data, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.blob):
            raise FormatError(f"{self.path}: truncated checkpoint")
        values = struct.unpack_from(fmt, self.blob, self.offset)
        self.offset += size
        return values


def _read_net(reader: "_Reader", activation: str) -> Mlp:
    (ndims,) = reader.take("<I")
    dims = reader.take(f"<{ndims}I")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.array(reader.take(f"<{fan_in * fan_out}d")).reshape(fan_out, fan_in)
        b = np.array(reader.take(f"<{fan_out}d"))
        layers.append(
            (Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))
        )
    return Mlp(layers=layers, activation=activation)


def _write_header(handle, tag: int):
    handle.write(MAGIC)
    handle.write(struct.pack("<II", VERSION, tag))


def _read_header(reader: "_Reader", expected_tag: int):
    magic = reader.blob[:4]
    if magic != MAGIC:
        raise FormatError(f"{reader.path}: bad magic {magic!r}")
    reader.offset = 4
    version, tag = reader.take("<II")
    if version != VERSION:
        raise FormatError(f"{reader.path}: unsupported version {version}")
    if tag != expected_tag:
        raise FormatError(
            f"{reader.path}: section tag {tag}, expected {expected_tag}"
        )


def save_vae(path, params: MultimodalVaeParams):
    with open(path, "wb") as handle:
        _write_header(handle, TAG_VAE)
        m = params.n_modalities
        handle.write(
            struct.pack(
                f"<IIII{m}I", m, params.latent_dim, params.image_dim,
                _ACT_CODES[params.encoders[0].activation],
                *(int(mod) for mod in params.modalities),
            )
        )
        for enc in params.encoders:
            handle.write(_net_dims_blob(enc))
        handle.write(_net_dims_blob(params.decoder))
        for enc in params.encoders:
            handle.write(_net_floats(enc))
        handle.write(_net_floats(params.decoder))


def load_vae(path) -> MultimodalVaeParams:
    with open(path, "rb") as handle:
        reader = _Reader(handle.read(), path)
    _read_header(reader, TAG_VAE)
    m, latent_dim, image_dim, act_code = reader.take("<IIII")
    if act_code not in _ACT_NAMES:
        raise FormatError(f"{path}: unknown activation code {act_code}")
    activation = _ACT_NAMES[act_code]
    codes = reader.take(f"<{m}I")
    try:
        modalities = tuple(Modality(code) for code in codes)
    except ValueError as exc:
        raise FormatError(f"{path}: unknown modality code in {codes}") from exc
    dims_blobs = []
    for _ in range(m + 1):
        (ndims,) = reader.take("<I")
        dims_blobs.append(reader.take(f"<{ndims}I"))
    nets = []
    for dims in dims_blobs:
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.array(reader.take(f"<{fan_in * fan_out}d")).reshape(fan_out, fan_in)
            b = np.array(reader.take(f"<{fan_out}d"))
            layers.append(
                (Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))
            )
        nets.append(Mlp(layers=layers, activation=activation))
    return MultimodalVaeParams(
        modalities=modalities, image_dim=image_dim, latent_dim=latent_dim,
        encoders=nets[:m], decoder=nets[m],
    )


def save_velocity(path, vparams: VelocityFieldParams):
    with open(path, "wb") as handle:
        _write_header(handle, TAG_VELOCITY)
        handle.write(
            struct.pack(
                "<II", vparams.latent_dim, _ACT_CODES[vparams.net.activation]
            )
        )
        handle.write(_net_dims_blob(vparams.net))
        handle.write(_net_floats(vparams.net))


def load_velocity(path) -> VelocityFieldParams:
    with open(path, "rb") as handle:
        reader = _Reader(handle.read(), path)
    _read_header(reader, TAG_VELOCITY)
    _, act_code = reader.take("<II")
    if act_code not in _ACT_NAMES:
        raise FormatError(f"{path}: unknown activation code {act_code}")
    net = _read_net(reader, _ACT_NAMES[act_code])
    return VelocityFieldParams(net=net)


def save_direct(path, params: DirectRegressorParams):
    with open(path, "wb") as handle:
        _write_header(handle, TAG_DIRECT)
        m = params.n_modalities
        handle.write(
            struct.pack(
                f"<III{m}I", m, params.image_dim,
                _ACT_CODES[params.net.activation],
                *(int(mod) for mod in params.modalities),
            )
        )
        handle.write(_net_dims_blob(params.net))
        handle.write(_net_floats(params.net))


def load_direct(path) -> DirectRegressorParams:
    with open(path, "rb") as handle:
        reader = _Reader(handle.read(), path)
    _read_header(reader, TAG_DIRECT)
    m, image_dim, act_code = reader.take("<III")
    if act_code not in _ACT_NAMES:
        raise FormatError(f"{path}: unknown activation code {act_code}")
    codes = reader.take(f"<{m}I")
    try:
        modalities = tuple(Modality(code) for code in codes)
    except ValueError as exc:
        raise FormatError(f"{path}: unknown modality code in {codes}") from exc
    net = _read_net(reader, _ACT_NAMES[act_code])
    return DirectRegressorParams(
        modalities=modalities, image_dim=image_dim, net=net
    )
