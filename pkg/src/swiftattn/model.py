"""SwiftFormer model assembly, parameter/MAC accounting and weight files."""

from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import blocks
from .blocks import BlockSpec, Prefixed
from .nnops import global_avg_pool
from .tensor import DimensionError

HEAD_MODES = ("single", "dual")
INIT_SCHEME = "fanin-uniform-v1"


@dataclass(frozen=True)
class ModelSpec:
    name: str
    stem: tuple[int, int]
    dims: tuple[int, int, int, int]
    depths: tuple[int, int, int, int]  # conv encoders per stage; one swiftformer encoder follows
    num_classes: int = 1000
    head: str = "dual"
    expansion_ratio: int = 4
    keep_value: bool = False
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stem) != 2 or len(self.dims) != 4 or len(self.depths) != 4:
            raise ValueError("spec needs 2 stem dims and 4 stage dims/depths")
        if any(c < 1 for c in (*self.stem, *self.dims)):
            raise ValueError("channel dims must be positive")
        if any(b <= a for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError(f"stage dims must strictly increase, got {self.dims}")
        if any(n < 0 for n in self.depths):
            raise ValueError("conv-encoder depths must be >= 0")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.head not in HEAD_MODES:
            raise ValueError(f"head must be one of {HEAD_MODES}")
        if self.stem[1] != self.dims[0]:
            raise ValueError("stem output width must equal the first stage width")

    def with_head(self, head: str) -> ModelSpec:
        return replace(self, head=head)


PRESETS = {
    "xs": ModelSpec("xs", (24, 48), (48, 56, 112, 220), (2, 2, 5, 3)),
    "s": ModelSpec("s", (24, 48), (48, 64, 168, 224), (2, 2, 8, 5)),
    "l1": ModelSpec("l1", (24, 48), (48, 96, 192, 384), (3, 2, 9, 4)),
    "l3": ModelSpec("l3", (32, 64), (64, 128, 320, 512), (3, 3, 11, 5)),
}


def layout(spec: ModelSpec) -> list[tuple[str, BlockSpec]]:
    """Ordered (name prefix, block spec) pairs from stem to last stage."""
    out = [("stem.", BlockSpec("patch_embed", spec.in_channels, spec.stem[1], channels_mid=spec.stem[0]))]
    prev = spec.stem[1]
    for s, (C, N) in enumerate(zip(spec.dims, spec.depths)):
        if s > 0:
            out.append((f"stages.{s}.down.", BlockSpec("downsample", prev, C)))
        for b in range(N):
            out.append((f"stages.{s}.blocks.{b}.", BlockSpec("conv_encoder", C, C, spec.expansion_ratio)))
        out.append((f"stages.{s}.blocks.{N}.",
                     BlockSpec("swiftformer_encoder", C, C, spec.expansion_ratio, keep_value=spec.keep_value)))
        prev = C
    return out


def head_names(spec: ModelSpec) -> list[str]:
    return ["head"] if spec.head == "single" else ["head", "head_dist"]


def param_shapes(spec: ModelSpec) -> dict[str, tuple[tuple[int, ...], int]]:
    shapes = {}
    for prefix, bspec in layout(spec):
        for name, sf in blocks.param_shapes(bspec).items():
            shapes[prefix + name] = sf
    C = spec.dims[-1]
    for h in head_names(spec):
        shapes[f"{h}.weight"] = ((C, spec.num_classes), C)
        shapes[f"{h}.bias"] = ((spec.num_classes,), C)
    return shapes


def spec_hash(spec: ModelSpec) -> int:
    """64-bit digest of the parameter layout (names and shapes)."""
    h = hashlib.blake2b(digest_size=8)
    for name, (shape, _) in param_shapes(spec).items():
        h.update(f"{name}:{','.join(map(str, shape))};".encode())
    return int.from_bytes(h.digest(), "little")


# --- weights --------------------------------------------------------------


@dataclass
class WeightBundle:
    tensors: dict[str, np.ndarray]
    seed: int | None = None
    init_scheme: str = INIT_SCHEME

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def identical(self, other: WeightBundle) -> bool:
        """Same names in the same order with bitwise-equal payloads."""
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def _init_tensor(name: str, shape, fan_in: int, seed: int, dtype) -> np.ndarray:
    # independent stream per tensor so values do not depend on construction order
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    if name.endswith(".gamma") or name.endswith(".running_var"):
        a = rng.uniform(0.5, 1.5, size=shape)
    elif name.endswith(".beta") or name.endswith(".running_mean"):
        a = rng.uniform(-0.1, 0.1, size=shape)
    else:
        bound = math.sqrt(1.0 / fan_in)
        a = rng.uniform(-bound, bound, size=shape)
    a = a.astype(dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Model:
    spec: ModelSpec
    weights: WeightBundle
    fused: bool = False


def build(spec: ModelSpec, seed: int = 0, dtype=np.float64) -> Model:
    """Deterministically initialise every parameter: uniform(-a, a), a = sqrt(1/fan_in).

    Batch-norm statistics and affine terms get non-trivial values around the
    identity so that folding and normalisation are actually exercised.
    """
    tensors = {name: _init_tensor(name, shape, fan_in, seed, dtype)
               for name, (shape, fan_in) in param_shapes(spec).items()}
    return Model(spec, WeightBundle(tensors, seed=seed))


def fuse(m: Model) -> Model:
    """Fold every conv -> BN pair; the linear-block BN (which precedes its conv) is kept."""
    tensors = {}
    for prefix, bspec in layout(m.spec):
        local = blocks.fold_batchnorms(bspec, Prefixed(m.weights.tensors, prefix))
        tensors.update({prefix + k: v for k, v in local.items()})
    for h in head_names(m.spec):
        for k in ("weight", "bias"):
            tensors[f"{h}.{k}"] = m.weights[f"{h}.{k}"]
    return Model(m.spec, WeightBundle(tensors, seed=m.weights.seed, init_scheme=m.weights.init_scheme), fused=True)


def stage_outputs(m: Model, img: np.ndarray, method: str = "im2col") -> list[np.ndarray]:
    """Feature maps after the stem and after each of the four stages."""
    spec = m.spec
    if img.ndim != 3 or img.shape[0] != spec.in_channels:
        raise DimensionError(f"expected {spec.in_channels} x H x W image, got {img.shape}")
    if img.shape[1] % 32 or img.shape[2] % 32:
        raise DimensionError(f"H and W must be divisible by 32, got {img.shape[1:]}")
    outs = []
    x = img
    last_stage = None
    for prefix, bspec in layout(spec):
        stage = prefix.split(".")[1] if prefix.startswith("stages.") else "stem"
        if stage != last_stage and last_stage is not None:
            outs.append(x)
        last_stage = stage
        x = blocks.apply(bspec, x, Prefixed(m.weights.tensors, prefix), method=method)
    outs.append(x)
    return outs


def forward(m: Model, img: np.ndarray, method: str = "im2col") -> np.ndarray:
    feats = global_avg_pool(stage_outputs(m, img, method)[-1])
    logits = [feats @ m.weights[f"{h}.weight"] + m.weights[f"{h}.bias"] for h in head_names(m.spec)]
    # dual head: inference averages the class and distillation heads
    return logits[0] if len(logits) == 1 else (logits[0] + logits[1]) / 2


# --- accounting -----------------------------------------------------------


@dataclass
class CountReport:
    total: int
    breakdown: dict[str, int] = field(default_factory=dict)
    head: int = 0

    @property
    def total_without_head(self) -> int:
        return self.total - self.head


def _group(prefix: str) -> str:
    parts = prefix.rstrip(".").split(".")
    return "stem" if parts[0] == "stem" else f"stage{int(parts[1]) + 1}"


def param_count(m: Model | ModelSpec) -> CountReport:
    """Exact learnable-parameter total (batch-norm running statistics excluded)."""
    spec = m.spec if isinstance(m, Model) else m
    rep = CountReport(0)
    for prefix, bspec in layout(spec):
        g = _group(prefix)
        rep.breakdown[g] = rep.breakdown.get(g, 0) + blocks.param_count(bspec)
    C = spec.dims[-1]
    rep.head = len(head_names(spec)) * (C * spec.num_classes + spec.num_classes)
    rep.breakdown["head"] = rep.head
    rep.total = sum(rep.breakdown.values())
    return rep


def buffer_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(s)) for n, (s, _) in param_shapes(spec).items() if blocks.is_buffer(n))


def mac_count(m: Model | ModelSpec, H: int = 224, W: int | None = None) -> CountReport:
    """Conv, linear and attention MACs; BN, activations and pooling excluded."""
    spec = m.spec if isinstance(m, Model) else m
    W = H if W is None else W
    if H % 32 or W % 32:
        raise DimensionError(f"H and W must be divisible by 32, got {H}x{W}")
    rep = CountReport(0)
    h, w = H, W
    for prefix, bspec in layout(spec):
        g = _group(prefix)
        rep.breakdown[g] = rep.breakdown.get(g, 0) + blocks.mac_count(bspec, h, w)
        _, h, w = blocks.output_shape(bspec, h, w)
    rep.head = len(head_names(spec)) * spec.dims[-1] * spec.num_classes
    rep.breakdown["head"] = rep.head
    rep.total = sum(rep.breakdown.values())
    return rep


def attention_token_counts(spec: ModelSpec, H: int = 224, W: int | None = None) -> list[int]:
    W = H if W is None else W
    return [(H // 4 >> s) * (W // 4 >> s) for s in range(4)]


# --- persistence ----------------------------------------------------------

MAGIC = b"SWFT"
FORMAT_VERSION = 1
DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


class WeightFileError(Exception):
    pass


class ChecksumError(WeightFileError):
    pass


class FormatError(WeightFileError):
    pass


class SpecMismatchError(WeightFileError):
    pass


def encode_weights(bundle: WeightBundle, spec_digest: int = 0) -> bytes:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<IQI", FORMAT_VERSION, spec_digest, len(bundle))
    for name, a in bundle.tensors.items():
        raw = name.encode("utf-8")
        a = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))
        if a.dtype not in DTYPE_TAGS:
            raise WeightFileError(f"{name}: unsupported dtype {a.dtype}")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
        buf += struct.pack("<B", DTYPE_TAGS[a.dtype])
        buf += a.tobytes()
    buf += struct.pack("<I", zlib.crc32(buf))
    return bytes(buf)


def decode_weights(data: bytes) -> tuple[WeightBundle, int]:
    if len(data) < 24:
        raise ChecksumError("file too short to carry a checksum")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("CRC32 mismatch: file is truncated or corrupt")
    if body[:4] != MAGIC:
        raise FormatError(f"bad magic {body[:4]!r}")
    version, digest, count = struct.unpack_from("<IQI", body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    off = 20
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            (tag,) = struct.unpack_from("<B", body, off)
            off += 1
            dt = TAG_DTYPES[tag]
            nbytes = int(np.prod(shape)) * dt.itemsize
            if off + nbytes > len(body):
                raise FormatError(f"{name}: payload runs past end of file")
            a = np.frombuffer(body, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape)
            off += nbytes
            a = a.astype(a.dtype.newbyteorder("="))
            a.setflags(write=False)
            if name in tensors:
                raise FormatError(f"duplicate parameter name {name!r}")
            tensors[name] = a
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed entry: {exc}") from exc
    if off != len(body):
        raise FormatError("trailing bytes after last parameter")
    return WeightBundle(tensors), digest


def check_against_spec(bundle: WeightBundle, spec: ModelSpec, digest: int | None = None) -> None:
    expected = param_shapes(spec)
    for name, a in bundle.tensors.items():
        if name not in expected:
            raise SpecMismatchError(f"unexpected parameter {name!r} for spec {spec.name}")
        if a.shape != expected[name][0]:
            raise SpecMismatchError(f"parameter {name!r} has shape {a.shape}, spec {spec.name} expects {expected[name][0]}")
    for name in expected:
        if name not in bundle:
            raise SpecMismatchError(f"missing parameter {name!r} for spec {spec.name}")
    if digest is not None and digest != spec_hash(spec):
        raise SpecMismatchError(f"spec hash {digest:#018x} does not match {spec.name}")


def save_weights(bundle: WeightBundle, path, spec: ModelSpec | None = None) -> None:
    if spec is not None:
        check_against_spec(bundle, spec)
    data = encode_weights(bundle, spec_hash(spec) if spec is not None else 0)
    Path(path).write_bytes(data)


def load_weights(path, spec: ModelSpec | None = None) -> WeightBundle:
    bundle, digest = decode_weights(Path(path).read_bytes())
    if spec is not None:
        check_against_spec(bundle, spec, digest)
    return bundle


def from_weights(spec: ModelSpec, bundle: WeightBundle) -> Model:
    check_against_spec(bundle, spec)
    return Model(spec, bundle)


# --- custom spec files ----------------------------------------------------


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(t) for t in v.replace(" ", "").split(",") if t)


def parse_spec_text(text: str, name: str = "custom") -> ModelSpec:
    """Parse the line-oriented key=value custom spec format.

    Keys: name, stem, dims, depths (comma lists), num_classes, head,
    expansion_ratio, keep_value.  Blank lines and ``#`` comments are ignored.
    """
    fields: dict = {"name": name}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in ("stem", "dims", "depths"):
            fields[key] = _ints(value)
        elif key in ("num_classes", "expansion_ratio"):
            fields[key] = int(value)
        elif key == "keep_value":
            fields[key] = value.lower() in ("1", "true", "yes")
        elif key in ("name", "head"):
            fields[key] = value
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    missing = {"stem", "dims", "depths"} - fields.keys()
    if missing:
        raise ValueError(f"custom spec missing keys: {sorted(missing)}")
    return ModelSpec(**fields)


def load_spec_file(path) -> ModelSpec:
    p = Path(path)
    return parse_spec_text(p.read_text(), name=p.stem)


def resolve_variant(variant: str) -> ModelSpec:
    """'xs' | 's' | 'l1' | 'l3' | 'custom:<spec-file>'."""
    if variant.startswith("custom:"):
        return load_spec_file(variant[len("custom:"):])
    key = variant.lower()
    if key not in PRESETS:
        raise KeyError(f"unknown variant {variant!r}; choose from {sorted(PRESETS)} or custom:<file>")
    return PRESETS[key]
