"""Spikformer-style blocks with a selectable attention / positional-encoding variant."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .attention import Grid2D, complete_rpe_bias, grid_codes, log_pe_bias
from .bitcodec import gray_bits, min_bits
from .errors import ConfigError
from .neuron import LIFParams

PE_VARIANTS = ("none", "gray", "gray2d", "log", "crpe", "dot-baseline")
READOUTS = ("last", "mean", "flatten")


@dataclass(frozen=True)
class ModelConfig:
    length: int
    in_features: int
    n_outputs: int
    head: str = "classification"
    blocks: int = 2
    d_model: int = 32
    d_ffn: int = 64
    time_steps: int = 4
    pe_variant: str = "none"
    gray_bits: int | None = None
    grid_h: int | None = None
    grid_w: int | None = None
    gray_bits_h: int | None = None
    gray_bits_w: int | None = None
    sigma: str = "auto"
    readout: str | None = None
    tau: float = 2.0
    u_thr: float = 1.0
    u_reset: float = 0.0
    surrogate_alpha: float = 2.0
    precision: str = "float32"

    def __post_init__(self):
        for name in ("length", "in_features", "n_outputs", "blocks", "d_model", "d_ffn", "time_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.pe_variant not in PE_VARIANTS:
            raise ConfigError(f"pe_variant must be one of {PE_VARIANTS}, got {self.pe_variant!r}")
        if self.head not in ("classification", "regression"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.readout is not None and self.readout not in READOUTS:
            raise ConfigError(f"readout must be one of {READOUTS}")
        if self.pe_variant == "gray" and self.gray_bits is not None:
            if (1 << self.gray_bits) < self.length:
                raise ConfigError(f"{self.gray_bits} Gray bits cannot cover L={self.length}")
        if self.pe_variant == "gray2d":
            if self.grid_h is None or self.grid_w is None or self.grid_h * self.grid_w != self.length:
                raise ConfigError("gray2d needs grid_h * grid_w == length")
        if self.pe_variant in ("log", "crpe") and self.length < 2:
            raise ConfigError("log/crpe need length >= 2")
        if self.sigma not in ("auto", "learnable"):
            try:
                if float(self.sigma) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"sigma must be 'auto', 'learnable' or a positive number, got {self.sigma!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        LIFParams(self.tau, self.u_thr, self.u_reset)

    @property
    def lif(self) -> LIFParams:
        return LIFParams(self.tau, self.u_thr, self.u_reset)

    @property
    def resolved_readout(self) -> str:
        if self.readout is not None:
            return self.readout
        return "last" if self.head == "classification" else "flatten"

    @property
    def dtype(self):
        return np.dtype(self.precision)

    @property
    def pe_width(self) -> int:
        if self.pe_variant == "gray":
            return self.gray_bits if self.gray_bits is not None else min_bits(self.length)
        if self.pe_variant == "gray2d":
            bh = self.gray_bits_h if self.gray_bits_h is not None else min_bits(self.grid_h)
            bw = self.gray_bits_w if self.gray_bits_w is not None else min_bits(self.grid_w)
            return bh + bw
        return 0

    @property
    def d_effective(self) -> int:
        return self.d_model + self.pe_width

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


class SpikingTransformer:
    """Parameters, batch-norm states and the forward pass.

    Activations are laid out [T, B, L, D]. Residual connections add
    pre-spike currents; everything passed between blocks is binary.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.training = True
        rng = np.random.default_rng(seed)
        c = config
        dt = c.dtype
        self.params: dict[str, ag.DiffTensor] = {}
        self.norms: dict[str, ag.BatchNormState] = {}

        def dense(name, n_in, n_out):
            self.params[name] = ag.tensor(rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out)).astype(dt), True, name)

        dense("embed.w", c.in_features, c.d_model)
        self.norms["embed.bn"] = ag.BatchNormState.create(c.d_model, dtype=dt)
        for b in range(c.blocks):
            for nm in ("q", "k", "v", "o"):
                dense(f"b{b}.{nm}.w", c.d_model, c.d_model)
                self.norms[f"b{b}.{nm}.bn"] = ag.BatchNormState.create(c.d_model, dtype=dt)
            dense(f"b{b}.ffn1.w", c.d_model, c.d_ffn)
            self.norms[f"b{b}.ffn1.bn"] = ag.BatchNormState.create(c.d_ffn, dtype=dt)
            dense(f"b{b}.ffn2.w", c.d_ffn, c.d_model)
            self.norms[f"b{b}.ffn2.bn"] = ag.BatchNormState.create(c.d_model, dtype=dt)
        head_in = c.d_model * (c.length if c.resolved_readout == "flatten" else 1)
        dense("head.w", head_in, c.n_outputs)
        self.params["head.b"] = ag.tensor(np.zeros(c.n_outputs, dtype=dt), True, "head.b")
        if c.sigma == "learnable":
            self.params["sigma"] = ag.tensor(np.array(1.0 / math.sqrt(c.d_effective), dtype=dt), True, "sigma")
        for name, st in self.norms.items():
            st.gamma.name = f"{name}.gamma"
            st.beta.name = f"{name}.beta"
        self._pe_codes, self._pe_bias = self._positional()

    # -- positional constants ------------------------------------------------

    def _positional(self):
        c = self.config
        dt = c.dtype
        if c.pe_variant == "gray":
            return gray_bits(c.length, c.pe_width).astype(dt), None
        if c.pe_variant == "gray2d":
            return grid_codes(Grid2D(c.grid_h, c.grid_w), c.gray_bits_h, c.gray_bits_w).astype(dt), None
        if c.pe_variant == "log":
            return None, np.asarray(log_pe_bias(c.length), dtype=dt)
        if c.pe_variant == "crpe":
            return None, np.asarray(complete_rpe_bias(c.length), dtype=dt)
        return None, None

    def sigma(self):
        c = self.config
        if c.sigma == "learnable":
            return self.params["sigma"]
        if c.sigma == "auto":
            return 1.0 / math.sqrt(c.d_effective)
        return float(c.sigma)

    # -- bookkeeping ---------------------------------------------------------

    def parameters(self) -> list[ag.DiffTensor]:
        out = list(self.params.values())
        for st in self.norms.values():
            out += [st.gamma, st.beta]
        return out

    def n_parameters(self) -> int:
        return sum(p.values.size for p in self.parameters())

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.values for name, p in self.params.items()}
        for name, st in self.norms.items():
            arrays[f"{name}.gamma"] = st.gamma.values
            arrays[f"{name}.beta"] = st.beta.values
            arrays[f"{name}.running_mean"] = st.running_mean
            arrays[f"{name}.running_var"] = st.running_var
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        dt = self.config.dtype
        for name, p in self.params.items():
            p.values = np.array(arrays[name], dtype=dt).reshape(p.shape)
        for name, st in self.norms.items():
            st.gamma.values = np.array(arrays[f"{name}.gamma"], dtype=dt)
            st.beta.values = np.array(arrays[f"{name}.beta"], dtype=dt)
            st.running_mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64)
            st.running_var = np.array(arrays[f"{name}.running_var"], dtype=np.float64)

    # -- forward -------------------------------------------------------------

    def _snbn(self, x, name):
        c = self.config
        h = ag.batch_norm(ag.linear(x, self.params[f"{name}.w"]), self.norms[f"{name}.bn"], self.training)
        return ag.spike_layer(h, c.lif, c.surrogate_alpha)

    def _bn_lin(self, x, name):
        return ag.batch_norm(ag.linear(x, self.params[f"{name}.w"]), self.norms[f"{name}.bn"], self.training)

    def attention_scores(self, q, k):
        c = self.config
        if c.pe_variant == "dot-baseline":
            return ag.dot_scores(q, k)
        if self._pe_codes is not None:
            q = ag.concat_const(q, self._pe_codes)
            k = ag.concat_const(k, self._pe_codes)
        s = ag.xnor_scores(q, k)
        if self._pe_bias is not None:
            s = ag.add(s, self._pe_bias)
        return s

    def forward(self, x, record=None, zero_attention=False) -> ag.DiffTensor:
        """x: [B, L, F] real input -> logits [B, classes] or predictions [B, H*C].

        ``record`` (a list) receives each block's attention map [T, B, L, L];
        ``zero_attention`` forces every map to zero.
        """
        c = self.config
        x = np.asarray(x, dtype=c.dtype)
        if x.ndim != 3 or x.shape[1] != c.length or x.shape[2] != c.in_features:
            raise ConfigError(f"input shape {x.shape} does not match [B, {c.length}, {c.in_features}]")
        cur = ag.repeat_time(self._bn_lin(ag.tensor(x), "embed"), c.time_steps)
        spikes = ag.spike_layer(cur, c.lif, c.surrogate_alpha)
        for b in range(c.blocks):
            q = self._snbn(spikes, f"b{b}.q")
            k = self._snbn(spikes, f"b{b}.k")
            v = self._snbn(spikes, f"b{b}.v")
            scores = self.attention_scores(q, k)
            if zero_attention:
                scores = ag.mul(scores, 0.0)
            if record is not None:
                record.append(scores.values.copy())
            mixed = ag.attend(scores, v, self.sigma())
            cur = ag.add(cur, self._bn_lin(mixed, f"b{b}.o"))
            spikes = ag.spike_layer(cur, c.lif, c.surrogate_alpha)
            hidden = self._snbn(spikes, f"b{b}.ffn1")
            cur = ag.add(cur, self._bn_lin(hidden, f"b{b}.ffn2"))
            spikes = ag.spike_layer(cur, c.lif, c.surrogate_alpha)
        rate = ag.mean(spikes, axis=0)  # [B, L, D]
        readout = c.resolved_readout
        if readout == "last":
            feat = ag.select(rate, c.length - 1, axis=1)
        elif readout == "mean":
            feat = ag.mean(rate, axis=1)
        else:
            feat = ag.reshape(rate, (rate.shape[0], -1))
        return ag.linear(feat, self.params["head.w"], self.params["head.b"])

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            outs = [self.forward(x[i : i + batch_size]).values for i in range(0, len(x), batch_size)]
        finally:
            self.training = was
        return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# weight files
# ---------------------------------------------------------------------------

MAGIC = b"SPKR"
FORMAT_VERSION = 1


def save_weights(model: SpikingTransformer, path: str | Path):
    """Header (magic, u32 version, 32-byte config digest, u32 count), then
    per array: u16 name length, utf-8 name, u32 ndim, u32 dims, f32 LE data."""
    arrays = model.state_arrays()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(bytes.fromhex(model.config.digest()))
        f.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            a = np.asarray(arrays[name])
            raw = name.encode()
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.astype("<f4").tobytes())


def read_weights(path: str | Path):
    """Returns (config digest hex, {name: float32 array})."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a weight file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    digest = data[8:40].hex()
    (count,) = struct.unpack_from("<I", data, 40)
    pos = 44
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + n].decode()
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
    return digest, arrays


def load_weights(model: SpikingTransformer, path: str | Path):
    digest, arrays = read_weights(path)
    if digest != model.config.digest():
        raise ConfigError(f"{path}: weights were saved for a different model config")
    model.load_arrays(arrays)
