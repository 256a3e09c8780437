"""Architecture descriptions for the image encoder and the text encoder-decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

PAD_ID = 0
EOS_ID = 1


@dataclass(frozen=True)
class ViTConfig:
    width: int
    depth: int
    mlp_dim: int
    heads: int
    patch_size: int = 14
    image_resolution: int = 224

    def __post_init__(self):
        if self.image_resolution % self.patch_size:
            raise ValueError(
                f"image_resolution {self.image_resolution} not divisible by patch_size {self.patch_size}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def grid(self) -> int:
        return self.image_resolution // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    def with_resolution(self, resolution: int) -> "ViTConfig":
        return replace(self, image_resolution=resolution)


# Shapes of the large backbones; only used to validate configs and count parameters.
VIT_PRESETS = {
    "g/14": ViTConfig(width=1408, depth=40, mlp_dim=6144, heads=16, patch_size=14),
    "G/14": ViTConfig(width=1664, depth=48, mlp_dim=8192, heads=16, patch_size=14),
    "e/14": ViTConfig(width=1792, depth=56, mlp_dim=15360, heads=16, patch_size=14),
    "toy": ViTConfig(width=64, depth=2, mlp_dim=128, heads=4, patch_size=14, image_resolution=56),
}


@dataclass(frozen=True)
class EncDecConfig:
    d_model: int
    enc_layers: int
    dec_layers: int
    heads: int
    ffn_dim: int
    vocab_size: int
    max_text_len: int = 64
    num_sentinels: int = 100
    tie_embeddings: bool = False
    rel_buckets: int = 32
    rel_max_distance: int = 128

    def __post_init__(self):
        if self.vocab_size <= self.num_sentinels + 2:
            raise ValueError(
                f"vocab_size {self.vocab_size} must exceed num_sentinels + 2 specials "
                f"({self.num_sentinels + 2})")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class ModelConfig:
    vit: ViTConfig
    encdec: EncDecConfig
    ln_eps: float = 1e-6
    dropout: float = 0.0
    dtype: str = "float64"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        return cls(vit=ViTConfig(**d.pop("vit")), encdec=EncDecConfig(**d.pop("encdec")), **d)

    def with_resolution(self, resolution: int) -> "ModelConfig":
        return replace(self, vit=self.vit.with_resolution(resolution))


def toy_config(vocab_size: int = 512, resolution: int = 56, d_model: int = 64, layers: int = 2,
               max_text_len: int = 64, dtype: str = "float64", **encdec) -> ModelConfig:
    """The desk-scale preset: ViT width 64 / depth 2 feeding a 64-wide encoder-decoder."""
    vit = replace(VIT_PRESETS["toy"], image_resolution=resolution)
    ed = EncDecConfig(d_model=d_model, enc_layers=layers, dec_layers=layers, heads=4,
                      ffn_dim=2 * d_model, vocab_size=vocab_size, max_text_len=max_text_len, **encdec)
    return ModelConfig(vit=vit, encdec=ed, dtype=dtype)
