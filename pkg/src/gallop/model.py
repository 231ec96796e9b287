"""Full trainable state and its checkpoint format.

Checkpoint layout: u32 little-endian JSON header length, the UTF-8 JSON
header {version, m, n, V, d_prime, d, encoder_seed, scales{k1, delta_k},
tau}, then raw float32 little-endian blocks for global prompts, local
prompts and the alignment map, in that order.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoder import PromptSet, ToyTextEncoder, init_prompts, toy_class_tokens
from .errors import ConfigError, FormatError
from .head import AlignmentMap, ScaleSchedule, Temperature

CHECKPOINT_VERSION = 1


@dataclass
class GallopModel:
    """Prompt set + alignment map + scale schedule + temperature.

    ``num_classes`` binds the model to a class table (class tokens derive
    from the encoder seed and the class count); it is not persisted and is
    rebound from the dataset on load.
    """

    prompts: PromptSet
    alignment: AlignmentMap
    scales: ScaleSchedule
    tau: float
    encoder: ToyTextEncoder
    num_classes: int = None
    _token_cache: dict = field(default_factory=dict, repr=False)

    @property
    def m(self):
        return self.prompts.m

    @property
    def n(self):
        return self.prompts.n

    @property
    def d(self):
        return self.alignment.theta.shape[0]

    def class_tokens(self, num_classes=None):
        c = num_classes if num_classes is not None else self.num_classes
        if c is None:
            raise ConfigError("model is not bound to a class table; set num_classes")
        if c not in self._token_cache:
            self._token_cache[c] = toy_class_tokens(self.encoder, c)
        return self._token_cache[c]

    def validate(self):
        self.prompts.validate()
        self.alignment.validate()
        Temperature(self.tau)
        if self.scales.n != self.n:
            raise ConfigError(
                f"scale schedule covers {self.scales.n} prompts but model has {self.n} local"
            )
        if self.alignment.theta.shape[0] != self.encoder.d:
            raise ConfigError("alignment map dimension must match encoder output dimension")


def new_model(seed, m, n, V, d_prime, d, scales, tau=0.01, encoder_seed=None,
              num_classes=None):
    """Fresh model: seeded prompt init, identity alignment, frozen encoder."""
    enc_seed = seed if encoder_seed is None else encoder_seed
    model = GallopModel(
        prompts=init_prompts(seed, m, n, V, d_prime),
        alignment=AlignmentMap.identity(d),
        scales=scales if isinstance(scales, ScaleSchedule) else ScaleSchedule(*scales, n=n),
        tau=tau,
        encoder=ToyTextEncoder(seed=enc_seed, d_prime=d_prime, d=d),
        num_classes=num_classes,
    )
    model.validate()
    return model


def save_checkpoint(model, path):
    model.validate()
    header = {
        "version": CHECKPOINT_VERSION,
        "m": model.m,
        "n": model.n,
        "V": model.prompts.V,
        "d_prime": model.prompts.d_prime,
        "d": model.d,
        "encoder_seed": model.encoder.seed,
        "scales": {"k1": model.scales.k1, "delta_k": model.scales.delta_k},
        "tau": model.tau,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(model.prompts.global_prompts, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.prompts.local_prompts, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.alignment.theta, dtype="<f4").tobytes())


def read_checkpoint_header(path):
    with open(path, "rb") as f:
        raw = f.read(4)
        if len(raw) != 4:
            raise FormatError("checkpoint too short for header length", field="header")
        (hlen,) = struct.unpack("<I", raw)
        blob = f.read(hlen)
        if len(blob) != hlen:
            raise FormatError("checkpoint truncated inside JSON header", field="header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"checkpoint header is not valid JSON: {e}", field="header")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {header.get('version')}", field="version"
        )
    return header


def load_checkpoint(path, num_classes=None):
    header = read_checkpoint_header(path)
    m, n, V, d_prime, d = (header[k] for k in ("m", "n", "V", "d_prime", "d"))
    counts = (m * V * d_prime, n * V * d_prime, d * d)
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        f.seek(4 + hlen)
        blocks = []
        for count in counts:
            buf = f.read(4 * count)
            if len(buf) != 4 * count:
                raise FormatError("checkpoint truncated inside parameter blocks",
                                  field="blocks")
            blocks.append(np.frombuffer(buf, dtype="<f4").astype(np.float64))
    model = GallopModel(
        prompts=PromptSet(
            global_prompts=blocks[0].reshape(m, V, d_prime),
            local_prompts=blocks[1].reshape(n, V, d_prime),
        ),
        alignment=AlignmentMap(theta=blocks[2].reshape(d, d)),
        scales=ScaleSchedule(k1=header["scales"]["k1"], delta_k=header["scales"]["delta_k"],
                             n=n),
        tau=header["tau"],
        encoder=ToyTextEncoder(seed=header["encoder_seed"], d_prime=d_prime, d=d),
        num_classes=num_classes,
    )
    model.validate()
    return model
