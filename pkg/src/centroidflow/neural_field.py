"""Dynamic-weight pixel neural field decoding with analytic backprop.

A backbone MLP turns per-patch context into a feature vector; an affine
generator expands that feature into the two weight matrices of a tiny
per-patch MLP (rows L2-normalized); each pixel is decoded from DCT positional
encoding concatenated with its noisy state. Everything is plain numpy with
hand-written gradients, so training never touches an autograd engine and the
stop-gradient contract of the reshaped targets is structural.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# rows with norm below this stay zero instead of being normalized
_ZERO_ROW_GUARD = 1e-30

CHECKPOINT_FORMAT = "centroidflow-checkpoint-v1"


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def silu_prime(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


# ---------------------------------------------------------------------------
# DCT positional encoding

@dataclass(frozen=True)
class DctConfig:
    """Separable cosine encoding of intra-patch pixel coordinates."""

    patch_size: int = 8
    freqs: int = 8

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValidationError(f"patch size must be >= 1, got {self.patch_size}")
        if not 1 <= self.freqs <= self.patch_size:
            raise ValidationError(
                f"freqs must be in [1, {self.patch_size}], got {self.freqs}"
            )

    @property
    def enc_dim(self) -> int:
        return self.freqs * self.freqs


def dct_encode(i: int, j: int, cfg: DctConfig) -> np.ndarray:
    """Encoding of pixel (i, j): entry (u, v) is the DCT-II basis value
    cos(pi (2i+1) u / 2P) * cos(pi (2j+1) v / 2P), flattened row-major."""
    if not (0 <= i < cfg.patch_size and 0 <= j < cfg.patch_size):
        raise ValidationError(
            f"pixel ({i}, {j}) outside patch of size {cfg.patch_size}"
        )
    u = np.arange(cfg.freqs)
    ci = np.cos(np.pi * (2 * i + 1) * u / (2 * cfg.patch_size))
    cj = np.cos(np.pi * (2 * j + 1) * u / (2 * cfg.patch_size))
    return np.outer(ci, cj).reshape(-1)


def dct_table(cfg: DctConfig) -> np.ndarray:
    """All P^2 pixel encodings stacked row-major: shape (P^2, F^2)."""
    rows = [
        dct_encode(i, j, cfg)
        for i in range(cfg.patch_size)
        for j in range(cfg.patch_size)
    ]
    return np.stack(rows)


# ---------------------------------------------------------------------------
# generated per-patch decoder weights

@dataclass
class PatchField:
    """Row-normalized weights of one patch's pixel decoder."""

    w1: np.ndarray  # (hidden_dim, in_dim)
    w2: np.ndarray  # (out_dim, hidden_dim)

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]


@dataclass
class AffineGenerator:
    """Single affine map from patch features to the flattened decoder weights."""

    weight: np.ndarray  # (hidden*in + out*hidden, feature_dim)
    bias: np.ndarray    # (hidden*in + out*hidden,)
    hidden_dim: int
    in_dim: int
    out_dim: int

    def __post_init__(self):
        expected = self.hidden_dim * self.in_dim + self.out_dim * self.hidden_dim
        if self.weight.shape[0] != expected or self.bias.shape != (expected,):
            raise ValidationError(
                f"generator outputs {self.weight.shape[0]} values, decoder needs {expected}"
            )

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init(cls, feature_dim, hidden_dim, in_dim, out_dim, rng) -> "AffineGenerator":
        total = hidden_dim * in_dim + out_dim * hidden_dim
        return cls(
            weight=rng.normal(scale=1.0 / np.sqrt(feature_dim), size=(total, feature_dim)),
            bias=np.zeros(total),
            hidden_dim=hidden_dim,
            in_dim=in_dim,
            out_dim=out_dim,
        )


def _normalize_rows(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm rows; rows at (numerical) zero stay zero."""
    norms = np.sqrt((w ** 2).sum(axis=-1, keepdims=True))
    safe = np.where(norms > _ZERO_ROW_GUARD, norms, 1.0)
    out = np.where(norms > _ZERO_ROW_GUARD, w / safe, 0.0)
    return out, norms


def _normalize_rows_backward(
    d_normed: np.ndarray, normed: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    """Backprop through row normalization: project out the radial component."""
    inner = (d_normed * normed).sum(axis=-1, keepdims=True)
    safe = np.where(norms > _ZERO_ROW_GUARD, norms, 1.0)
    return np.where(norms > _ZERO_ROW_GUARD, (d_normed - inner * normed) / safe, 0.0)


def generate_weights(patch_feature: np.ndarray, generator: AffineGenerator) -> PatchField:
    """Expand one patch feature into L2-row-normalized decoder weights."""
    f = np.asarray(patch_feature, dtype=np.float64)
    if f.shape != (generator.feature_dim,):
        raise ValidationError(
            f"patch feature must have shape ({generator.feature_dim},), got {f.shape}"
        )
    flat = generator.weight @ f + generator.bias
    h, i, o = generator.hidden_dim, generator.in_dim, generator.out_dim
    w1 = flat[: h * i].reshape(h, i)
    w2 = flat[h * i:].reshape(o, h)
    return PatchField(w1=_normalize_rows(w1)[0], w2=_normalize_rows(w2)[0])


def decode_velocity(
    field: PatchField, i: int, j: int, x_t_pixel: np.ndarray, cfg: DctConfig
) -> np.ndarray:
    """Pixel-wise decode: v = W2n silu(W1n [DCT(i,j); x_t])."""
    x = np.asarray(x_t_pixel, dtype=np.float64)
    enc = dct_encode(i, j, cfg)
    if enc.size + x.size != field.in_dim:
        raise ValidationError(
            f"decoder expects {field.in_dim} inputs, got {enc.size} encoding + {x.size} state"
        )
    h = np.concatenate([enc, x])
    return field.w2 @ silu(field.w1 @ h)


# ---------------------------------------------------------------------------
# toy backbone MLP

@dataclass
class ToyMlp:
    """Plain fully connected net, SiLU on hidden layers, linear output."""

    sizes: tuple[int, ...]
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @classmethod
    def init(cls, sizes, rng) -> "ToyMlp":
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2:
            raise ValidationError("need at least input and output sizes")
        weights = [
            rng.normal(scale=1.0 / np.sqrt(m), size=(n, m))
            for m, n in zip(sizes[:-1], sizes[1:])
        ]
        biases = [np.zeros(n) for n in sizes[1:]]
        return cls(sizes=sizes, weights=weights, biases=biases)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward_cached(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]

    def _forward_cached(self, x: np.ndarray):
        pre = []
        act = x
        acts = [act]
        last = len(self.weights) - 1
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = act @ w.T + b
            pre.append(z)
            act = z if li == last else silu(z)
            acts.append(act)
        return act, (pre, acts)

    def backward(self, cache, upstream: np.ndarray):
        """Gradients of sum(upstream * output) w.r.t. parameters and input."""
        pre, acts = cache
        grads = {}
        delta = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        last = len(self.weights) - 1
        for li in range(last, -1, -1):
            if li != last:
                delta = delta * silu_prime(pre[li])
            grads[f"W{li}"] = delta.T @ acts[li]
            grads[f"b{li}"] = delta.sum(axis=0)
            delta = delta @ self.weights[li]
        return grads, delta


def toy_mlp_forward_backward(mlp: ToyMlp, x, upstream_residual):
    """Forward pass plus analytic gradients against the given residual.

    Returns (output, parameter gradients keyed W0/b0/W1/b1/..., input
    gradient). The residual plays the role of dLoss/dOutput.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    upstream = np.atleast_2d(np.asarray(upstream_residual, dtype=np.float64))
    if x.shape[1] != mlp.sizes[0]:
        raise ValidationError(f"input width {x.shape[1]} != mlp input {mlp.sizes[0]}")
    if upstream.shape[1] != mlp.sizes[-1]:
        raise ValidationError(
            f"residual width {upstream.shape[1]} != mlp output {mlp.sizes[-1]}"
        )
    if x.shape[0] != upstream.shape[0]:
        raise ValidationError("batch size mismatch between input and residual")
    out, cache = mlp._forward_cached(x)
    grads, dx = mlp.backward(cache, upstream)
    return out, grads, dx


# ---------------------------------------------------------------------------
# full model: backbone -> generator -> per-pixel decode

@dataclass(frozen=True)
class FieldModelConfig:
    """Dimensions of the toy velocity-field model."""

    context_dim: int
    backbone_hidden: tuple[int, ...]
    feature_dim: int
    hidden_dim: int
    out_dim: int
    dct: DctConfig

    @property
    def in_dim(self) -> int:
        return self.dct.enc_dim + self.out_dim


class NeuralFieldModel:
    """Velocity field v(x_t, t, context) over patches, with manual backprop.

    ``forward`` maps per-patch contexts (B, context_dim) and per-pixel states
    (B, P^2, out_dim) to velocities of the same shape; ``backward`` takes
    dLoss/dv and returns gradients for every named parameter.
    """

    def __init__(self, cfg: FieldModelConfig, mlp: ToyMlp, gen: AffineGenerator):
        self.cfg = cfg
        self.mlp = mlp
        self.gen = gen
        self._dct = dct_table(cfg.dct)

    @classmethod
    def create(cls, cfg: FieldModelConfig, seed: int) -> "NeuralFieldModel":
        rng = np.random.default_rng(seed)
        sizes = (cfg.context_dim, *cfg.backbone_hidden, cfg.feature_dim)
        mlp = ToyMlp.init(sizes, rng)
        gen = AffineGenerator.init(
            cfg.feature_dim, cfg.hidden_dim, cfg.in_dim, cfg.out_dim, rng
        )
        return cls(cfg, mlp, gen)

    # -- parameter plumbing ------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            out[f"mlp.W{i}"] = w
            out[f"mlp.b{i}"] = b
        out["gen.weight"] = self.gen.weight
        out["gen.bias"] = self.gen.bias
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        current = self.params()
        if set(values) != set(current):
            raise ValidationError(
                f"parameter names mismatch: {sorted(set(values) ^ set(current))}"
            )
        for name, arr in values.items():
            target = current[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != target.shape:
                raise ValidationError(
                    f"parameter {name} has shape {arr.shape}, expected {target.shape}"
                )
            target[...] = arr

    # -- forward / backward -------------------------------------------------

    def forward(self, contexts: np.ndarray, xt: np.ndarray):
        """Returns (velocities (B, P^2, out_dim), cache for backward)."""
        contexts = np.asarray(contexts, dtype=np.float64)
        xt = np.asarray(xt, dtype=np.float64)
        b = contexts.shape[0]
        m = self.cfg.dct.patch_size ** 2
        if contexts.shape != (b, self.cfg.context_dim):
            raise ValidationError(
                f"contexts must be (B, {self.cfg.context_dim}), got {contexts.shape}"
            )
        if xt.shape != (b, m, self.cfg.out_dim):
            raise ValidationError(
                f"states must be ({b}, {m}, {self.cfg.out_dim}), got {xt.shape}"
            )
        features, mlp_cache = self.mlp._forward_cached(contexts)
        flat = features @ self.gen.weight.T + self.gen.bias
        h, i, o = self.gen.hidden_dim, self.gen.in_dim, self.gen.out_dim
        w1 = flat[:, : h * i].reshape(b, h, i)
        w2 = flat[:, h * i:].reshape(b, o, h)
        w1n, n1 = _normalize_rows(w1)
        w2n, n2 = _normalize_rows(w2)
        hin = np.concatenate(
            [np.broadcast_to(self._dct, (b, m, self._dct.shape[1])), xt], axis=2
        )
        pre = np.einsum("bhi,bmi->bmh", w1n, hin)
        act = silu(pre)
        v = np.einsum("boh,bmh->bmo", w2n, act)
        cache = (mlp_cache, features, w1n, n1, w2n, n2, hin, pre, act)
        return v, cache

    def backward(self, cache, dv: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(dv * v) for every parameter, chained end to end."""
        mlp_cache, features, w1n, n1, w2n, n2, hin, pre, act = cache
        dv = np.asarray(dv, dtype=np.float64)
        d_w2n = np.einsum("bmo,bmh->boh", dv, act)
        d_act = np.einsum("boh,bmo->bmh", w2n, dv)
        d_pre = d_act * silu_prime(pre)
        d_w1n = np.einsum("bmh,bmi->bhi", d_pre, hin)
        d_w1 = _normalize_rows_backward(d_w1n, w1n, n1)
        d_w2 = _normalize_rows_backward(d_w2n, w2n, n2)
        b = dv.shape[0]
        d_flat = np.concatenate(
            [d_w1.reshape(b, -1), d_w2.reshape(b, -1)], axis=1
        )
        grads = {
            "gen.weight": d_flat.T @ features,
            "gen.bias": d_flat.sum(axis=0),
        }
        d_features = d_flat @ self.gen.weight
        mlp_grads, _ = self.mlp.backward(mlp_cache, d_features)
        for name, g in mlp_grads.items():
            grads[f"mlp.{name}"] = g
        return grads

    # -- checkpoints ---------------------------------------------------------

    def to_checkpoint(self, meta: dict | None = None) -> str:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "config": {
                "context_dim": self.cfg.context_dim,
                "backbone_hidden": list(self.cfg.backbone_hidden),
                "feature_dim": self.cfg.feature_dim,
                "hidden_dim": self.cfg.hidden_dim,
                "out_dim": self.cfg.out_dim,
                "patch_size": self.cfg.dct.patch_size,
                "freqs": self.cfg.dct.freqs,
            },
            "meta": meta or {},
            "params": {
                name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
                for name, arr in self.params().items()
            },
        }
        return json.dumps(doc)

    @classmethod
    def from_checkpoint(cls, text: str) -> "NeuralFieldModel":
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(
                f"unsupported checkpoint format: {doc.get('format')!r}"
            )
        c = doc["config"]
        cfg = FieldModelConfig(
            context_dim=c["context_dim"],
            backbone_hidden=tuple(c["backbone_hidden"]),
            feature_dim=c["feature_dim"],
            hidden_dim=c["hidden_dim"],
            out_dim=c["out_dim"],
            dct=DctConfig(patch_size=c["patch_size"], freqs=c["freqs"]),
        )
        model = cls.create(cfg, seed=0)
        values = {
            name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["params"].items()
        }
        model.set_params(values)
        return model
