"""Encoder, decoder and multi-stream discriminator as dense ReLU networks.

The encoder maps ``x`` to a Gaussian latent (mean, log-variance, sample) and
one prediction per label task. The decoder maps ``(y0, labels)`` back to input
space. The discriminator runs one stream per variable, scores each stream's
embedding on its own (marginal scores) and scores the concatenated embeddings
(joint score).
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _container
from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .objectives import Scores

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0

CHECKPOINT_MAGIC = "NOISYJOINT-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TaskSpec:
    kind: str  # "discrete" | "continuous"
    size: int  # K classes or d dimensions
    name: str = ""

    def __post_init__(self):
        if self.kind == "discrete" and self.size < 2:
            raise ValueError(f"discrete task needs K >= 2, got {self.size}")
        if self.kind == "continuous" and self.size < 1:
            raise ValueError(f"continuous task needs d >= 1, got {self.size}")
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown task kind {self.kind!r}")


@dataclass
class ModelShapes:
    input_dim: int
    tasks: list[TaskSpec]
    latent_dim: int = 8
    enc_hidden: list[int] = field(default_factory=lambda: [64, 64])
    dec_hidden: list[int] = field(default_factory=lambda: [64, 64])
    stream_hidden: list[int] = field(default_factory=lambda: [64, 64])
    joint_hidden: list[int] = field(default_factory=lambda: [64])
    # decoder output range per input dimension
    x_low: list[float] | None = None
    x_high: list[float] | None = None

    def __post_init__(self):
        self.tasks = [t if isinstance(t, TaskSpec) else TaskSpec(**t) for t in self.tasks]
        widths = [self.input_dim, self.latent_dim, *self.enc_hidden, *self.dec_hidden,
                  *self.stream_hidden, *self.joint_hidden]
        if any(int(w) <= 0 for w in widths):
            raise ValueError("all widths must be positive")
        if not self.tasks:
            raise ValueError("at least one task is required")
        if not self.stream_hidden:
            raise ValueError("discriminator streams need at least one hidden layer")
        if self.x_low is None:
            self.x_low = [-1.0] * self.input_dim
        if self.x_high is None:
            self.x_high = [1.0] * self.input_dim
        if len(self.x_low) != self.input_dim or len(self.x_high) != self.input_dim:
            raise ValueError("x_low/x_high must have input_dim entries")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelShapes":
        return cls(**d)

    @property
    def label_dim(self) -> int:
        return sum(t.size for t in self.tasks)


def dense_count(sizes: list[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def expected_parameter_counts(shapes: ModelShapes) -> dict[str, int]:
    """Closed-form parameter counts of the three networks."""
    h_enc = [shapes.input_dim, *shapes.enc_hidden]
    head_out = 2 * shapes.latent_dim + shapes.label_dim
    enc = dense_count(h_enc) + dense_count([h_enc[-1], head_out])
    dec = dense_count([shapes.latent_dim + shapes.label_dim, *shapes.dec_hidden, shapes.input_dim])
    e = shapes.stream_hidden[-1]
    streams = [shapes.input_dim, shapes.latent_dim] + [t.size for t in shapes.tasks]
    disc = sum(dense_count([s, *shapes.stream_hidden]) + e + 1 for s in streams)
    disc += dense_count([e * len(streams), *shapes.joint_hidden, 1])
    return {"encoder": enc, "decoder": dec, "discriminator": disc}


class Dense:
    """Fully connected layer with Glorot-uniform weights and zero bias."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        a = math.sqrt(6.0 / (n_in + n_out))
        self.W = Parameter(Tensor(rng.uniform(-a, a, size=(n_in, n_out))), name=f"{name}.W")
        self.b = Parameter(Tensor(np.zeros(n_out)), name=f"{name}.b")

    def __call__(self, x: Tensor, activation: str | None = None) -> Tensor:
        return ad.linear(x, self.W.tensor, self.b.tensor, activation)

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]


class MLP:
    """Stack of Dense layers; ReLU after every layer except (optionally) the last."""

    def __init__(self, sizes: list[int], rng, name: str, final_relu: bool = False):
        self.layers = [Dense(a, b, rng, f"{name}.{i}") for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x, "relu" if i < last or self.final_relu else None)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


class Network:
    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.tensor.grad = None


@contextlib.contextmanager
def frozen(*networks: Network):
    """Stop gradients from being recorded for the given networks' parameters."""
    params = [p for net in networks for p in net.parameters()]
    for p in params:
        p.tensor.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.tensor.requires_grad = True


@dataclass
class EncoderOutput:
    y0_mean: Tensor
    y0_logvar: Tensor
    y0_sample: Tensor
    predictions: list[Tensor]


def _check_input(x: Tensor, dim: int, who: str) -> None:
    if x.ndim != 2 or x.shape[1] != dim:
        raise ad.ShapeError(f"{who} input", x.shape, ("m", dim))


class Encoder(Network):
    """G_Y: x -> (mu, logvar, y0, per-task predictions).

    All heads share one output matmul, sliced per head, so the trunk gradient
    is a single product regardless of which heads the loss reaches.
    """

    def __init__(self, shapes: ModelShapes, rng: np.random.Generator):
        self.shapes = shapes
        sizes = [shapes.input_dim, *shapes.enc_hidden]
        self.trunk = MLP(sizes, rng, "enc.trunk", final_relu=True)
        head_out = 2 * shapes.latent_dim + shapes.label_dim
        self.head = Dense(sizes[-1], head_out, rng, "enc.head")
        l = shapes.latent_dim
        self._slices = [(0, l), (l, 2 * l)]
        off = 2 * l
        for t in shapes.tasks:
            self._slices.append((off, off + t.size))
            off += t.size

    def parameters(self):
        return self.trunk.parameters() + self.head.parameters()

    def __call__(self, x, rng: np.random.Generator | None = None) -> EncoderOutput:
        x = x if isinstance(x, Tensor) else Tensor(x)
        _check_input(x, self.shapes.input_dim, "encoder")
        out = self.head(self.trunk(x))
        mu = ad.slice_last_axis(out, *self._slices[0])
        logvar = ad.clip(ad.slice_last_axis(out, *self._slices[1]), LOGVAR_MIN, LOGVAR_MAX)
        # rng=None is the sigma = 0 evaluation mode
        y0 = mu if rng is None else ad.gaussian_reparameterize(mu, logvar, rng)
        preds = []
        for task, sl in zip(self.shapes.tasks, self._slices[2:]):
            raw = ad.slice_last_axis(out, *sl)
            preds.append(ad.softmax_last_axis(raw) if task.kind == "discrete" else ad.tanh(raw))
        return EncoderOutput(mu, logvar, y0, preds)

    def predict(self, x: np.ndarray) -> list[np.ndarray]:
        with ad.no_grad():
            return [p.data for p in self(Tensor(x)).predictions]


class Decoder(Network):
    """G_X: (y0, labels) -> x, squashed by tanh and mapped onto [x_low, x_high]."""

    def __init__(self, shapes: ModelShapes, rng: np.random.Generator):
        self.shapes = shapes
        sizes = [shapes.latent_dim + shapes.label_dim, *shapes.dec_hidden, shapes.input_dim]
        self.net = MLP(sizes, rng, "dec")
        lo, hi = np.asarray(shapes.x_low), np.asarray(shapes.x_high)
        self._mid = Tensor((hi + lo) / 2.0)
        self._half = Tensor((hi - lo) / 2.0)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, y0, labels) -> Tensor:
        y0 = y0 if isinstance(y0, Tensor) else Tensor(y0)
        labels = [l if isinstance(l, Tensor) else Tensor(l) for l in labels]
        if len(labels) != len(self.shapes.tasks):
            raise ValueError(f"decoder expects {len(self.shapes.tasks)} label inputs, got {len(labels)}")
        for lab, task in zip(labels, self.shapes.tasks):
            if lab.ndim != 2 or lab.shape[1] != task.size:
                raise ad.ShapeError(f"decoder label {task.name or task.kind}", lab.shape, ("m", task.size))
        _check_input(y0, self.shapes.latent_dim, "decoder latent")
        h = self.net(ad.concat_last_axis([y0, *labels]))
        return ad.add(ad.mul(ad.tanh(h), self._half), self._mid)


class Discriminator(Network):
    """One stream per variable (x, y0, y1..yT), a linear marginal score per stream, and a joint head."""

    def __init__(self, shapes: ModelShapes, rng: np.random.Generator):
        self.shapes = shapes
        dims = [shapes.input_dim, shapes.latent_dim] + [t.size for t in shapes.tasks]
        names = ["x", "y0"] + [f"y{i + 1}" for i in range(len(shapes.tasks))]
        e = shapes.stream_hidden[-1]
        self.dims = dims
        self.streams = [MLP([d, *shapes.stream_hidden], rng, f"disc.{n}", final_relu=True)
                        for d, n in zip(dims, names)]
        self.marginal = [Dense(e, 1, rng, f"disc.{n}.score") for n in names]
        self.joint = MLP([e * len(dims), *shapes.joint_hidden, 1], rng, "disc.joint")

    def parameters(self):
        out = []
        for s, m in zip(self.streams, self.marginal):
            out += s.parameters() + m.parameters()
        return out + self.joint.parameters()

    def __call__(self, x, y0, labels) -> Scores:
        inputs = [x, y0, *labels]
        if len(inputs) != len(self.dims):
            raise ValueError(f"discriminator expects {len(self.dims)} variables, got {len(inputs)}")
        embeddings, marginals = [], []
        for v, d, stream, head in zip(inputs, self.dims, self.streams, self.marginal):
            v = v if isinstance(v, Tensor) else Tensor(v)
            if v.ndim != 2 or v.shape[1] != d:
                raise ad.ShapeError("discriminator stream", v.shape, ("m", d))
            e = stream(v)
            embeddings.append(e)
            marginals.append(head(e))
        joint = self.joint(ad.concat_last_axis(embeddings))
        return Scores(ad.concat_last_axis([joint, *marginals]))


@dataclass
class Models:
    shapes: ModelShapes
    encoder: Encoder
    decoder: Decoder | None = None
    discriminator: Discriminator | None = None

    def networks(self) -> dict[str, Network]:
        out = {"encoder": self.encoder}
        if self.decoder is not None:
            out["decoder"] = self.decoder
        if self.discriminator is not None:
            out["discriminator"] = self.discriminator
        return out


def build_models(shapes: ModelShapes, seed_seq: np.random.SeedSequence, adversarial: bool = True) -> Models:
    """Initialise the networks from independent child streams of ``seed_seq``."""
    enc_ss, dec_ss, disc_ss = seed_seq.spawn(3)
    enc = Encoder(shapes, np.random.default_rng(enc_ss))
    if not adversarial:
        return Models(shapes, enc)
    return Models(shapes, enc, Decoder(shapes, np.random.default_rng(dec_ss)),
                  Discriminator(shapes, np.random.default_rng(disc_ss)))


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path, models: Models, meta: dict) -> None:
    arrays = {}
    steps = {}
    for net_name, net in models.networks().items():
        for p in net.parameters():
            key = f"{net_name}/{p.name}"
            arrays[f"{key}#value"] = p.data
            arrays[f"{key}#adam_m"] = p.adam_m
            arrays[f"{key}#adam_v"] = p.adam_v
            steps[key] = p.step_count
    full_meta = dict(meta)
    full_meta["shapes"] = models.shapes.to_dict()
    full_meta["networks"] = sorted(models.networks())
    full_meta["step_counts"] = steps
    _container.write(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, full_meta, arrays)


def load_checkpoint(path) -> tuple[Models, dict]:
    meta, arrays = _container.read(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    shapes = ModelShapes.from_dict(meta["shapes"])
    # weights are overwritten below; the seed only fixes construction
    models = build_models(shapes, np.random.SeedSequence(0), adversarial="decoder" in meta["networks"])
    for net_name, net in models.networks().items():
        for p in net.parameters():
            key = f"{net_name}/{p.name}"
            value = arrays.get(f"{key}#value")
            if value is None or value.shape != p.shape:
                got = None if value is None else value.shape
                raise ad.ShapeError(f"checkpoint parameter {key}", p.shape, got)
            p.tensor.data = value.copy()
            p.adam_m = arrays[f"{key}#adam_m"].copy()
            p.adam_v = arrays[f"{key}#adam_v"].copy()
            p.step_count = int(meta["step_counts"][key])
    return models, meta
