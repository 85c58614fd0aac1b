"""Two-pathway embedding network.

One convolutional pathway per modality (sheet-image and spectrogram),
each built from four conv blocks followed by a linear 1x1 projection,
global average pooling and L2 normalization, ending in a shared
32-dimensional embedding space. The pathways share the architecture
family but no parameters.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm2d,
    Conv2d,
    ELU,
    GlobalAvgPool,
    L2Normalize,
    MaxPool2x2,
    ShapeError,
)

EMBED_DIM = 32
BASE_BLOCK_CHANNELS = (12, 24, 48, 48)
IMAGE_INPUT_SHAPE = (1, 180, 200)
AUDIO_INPUT_SHAPE = (1, 92, 42)

_MAGIC = b"CMSCKPT\x00"
_FORMAT_VERSION = 1


class CheckpointError(IOError):
    """Checkpoint file is missing, malformed, truncated or incompatible."""


@dataclass(frozen=True)
class PathwaySpec:
    """Geometry of one embedding pathway."""

    input_shape: tuple  # (channels, height, width)
    block_channels: tuple
    embed_dim: int = EMBED_DIM

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "block_channels": list(self.block_channels),
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_shape=tuple(d["input_shape"]),
            block_channels=tuple(d["block_channels"]),
            embed_dim=int(d["embed_dim"]),
        )


def build_pathways(kappa=1.0):
    """Image and audio pathway specs with conv-block channels scaled by kappa.

    kappa scales only the four conv blocks; the embedding stays 32-d.
    """
    channels = tuple(int(round(kappa * c)) for c in BASE_BLOCK_CHANNELS)
    if min(channels) < 1:
        raise ValueError(f"kappa={kappa} leaves a conv block with no channels: {channels}")
    image = PathwaySpec(input_shape=IMAGE_INPUT_SHAPE, block_channels=channels)
    audio = PathwaySpec(input_shape=AUDIO_INPUT_SHAPE, block_channels=channels)
    return image, audio


class Pathway:
    """Sequential stack: 4 x [2 x (conv3x3-BN-ELU), maxpool] -> conv1x1-BN -> GAP -> L2 norm."""

    def __init__(self, spec, dtype=np.float32, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.spec = spec
        self.layers = []
        prev = spec.input_shape[0]
        for ch in spec.block_channels:
            for _ in range(2):
                self.layers.append(Conv2d(prev, ch, kernel=3, bias=False, dtype=dtype, rng=rng))
                self.layers.append(BatchNorm2d(ch, dtype=dtype))
                self.layers.append(ELU())
                prev = ch
            self.layers.append(MaxPool2x2())
        self.layers.append(Conv2d(prev, spec.embed_dim, kernel=1, bias=False, dtype=dtype, rng=rng))
        self.layers.append(BatchNorm2d(spec.embed_dim, dtype=dtype))
        self.layers.append(GlobalAvgPool())
        self.layers.append(L2Normalize())

    def forward(self, x, train=False):
        x = np.asarray(x)
        expect = self.spec.input_shape
        if x.ndim != 4 or x.shape[1:] != expect:
            raise ShapeError(
                f"pathway expects input of shape (batch, {expect[0]}, {expect[1]}, {expect[2]}), got {x.shape}"
            )
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.parameters():
                out.append((f"{i}.{name}", arr))
        return out

    def gradients(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.gradients():
                out.append((f"{i}.{name}", arr))
        return out

    def variables(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.variables():
                out.append((f"{i}.{name}", arr))
        return out


class EmbeddingModel:
    """The pair of pathways plus the training epoch counter."""

    def __init__(self, image_spec, audio_spec, dtype=np.float32, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.image_spec = image_spec
        self.audio_spec = audio_spec
        self.f = Pathway(image_spec, dtype=dtype, rng=rng)
        self.g = Pathway(audio_spec, dtype=dtype, rng=rng)
        self.epoch = 0

    @classmethod
    def build(cls, kappa=1.0, dtype=np.float32, rng=None):
        image_spec, audio_spec = build_pathways(kappa)
        return cls(image_spec, audio_spec, dtype=dtype, rng=rng)

    def embed_image(self, snippets, train=False):
        """Embed a batch of sheet snippets into unit-norm 32-d vectors.

        Accepts (B, H, W) or (B, 1, H, W).
        """
        x = np.asarray(snippets)
        if x.ndim == 3:
            x = x[:, None, :, :]
        return self.f.forward(x, train=train)

    def embed_audio(self, excerpts, train=False):
        x = np.asarray(excerpts)
        if x.ndim == 3:
            x = x[:, None, :, :]
        return self.g.forward(x, train=train)

    def variables(self):
        out = [("f/" + n, a) for n, a in self.f.variables()]
        out += [("g/" + n, a) for n, a in self.g.variables()]
        return out

    def state_arrays(self):
        """Copies of every persistent array, keyed by name."""
        return {name: arr.copy() for name, arr in self.variables()}

    def load_state_arrays(self, state):
        for name, arr in self.variables():
            arr[...] = state[name]


def save_checkpoint(model, path):
    """Write a versioned binary checkpoint.

    Layout: magic, format version, JSON header (pathway specs, epoch,
    array manifest), then the parameter arrays in declaration order as
    little-endian 32-bit floats.
    """
    variables = model.variables()
    header = {
        "format_version": _FORMAT_VERSION,
        "epoch": int(model.epoch),
        "image_spec": model.image_spec.to_dict(),
        "audio_spec": model.audio_spec.to_dict(),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in variables],
    }
    hj = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _FORMAT_VERSION))
        fh.write(struct.pack("<I", len(hj)))
        fh.write(hj)
        for _, arr in variables:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(_MAGIC) + 8 or blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != _FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version} (expected {_FORMAT_VERSION})")
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    if off + hlen > len(blob):
        raise CheckpointError(f"{path} is truncated (header)")
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    off += hlen

    model = EmbeddingModel(
        PathwaySpec.from_dict(header["image_spec"]),
        PathwaySpec.from_dict(header["audio_spec"]),
        dtype=np.float32,
    )
    model.epoch = int(header["epoch"])
    variables = model.variables()
    manifest = header["arrays"]
    if len(manifest) != len(variables):
        raise CheckpointError(f"{path} declares {len(manifest)} arrays, model has {len(variables)}")
    for (name, arr), entry in zip(variables, manifest):
        if entry["name"] != name or tuple(entry["shape"]) != arr.shape:
            raise CheckpointError(
                f"array mismatch in {path}: expected {name}{arr.shape}, found {entry['name']}{tuple(entry['shape'])}"
            )
        nbytes = arr.size * 4
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path} is truncated (array {name})")
        arr[...] = np.frombuffer(blob, dtype="<f4", count=arr.size, offset=off).reshape(arr.shape)
        off += nbytes
    if off != len(blob):
        raise CheckpointError(f"{path} has {len(blob) - off} trailing bytes")
    return model
