"""All learnable weights of the encoder and both task heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .fusion import FusionParams, InitialFeatures
from .kgraph import NUMERIC_WIDTH
from .objectives import MlpHead, RelationSpace
from .rgat import ReadoutParams, RgatLayerParams
from .tensor import Tensor, load_checkpoint, save_checkpoint


@dataclass
class ModelParams:
    initial: InitialFeatures
    fusion: FusionParams
    layers: list
    readout: ReadoutParams
    space: RelationSpace
    head: MlpHead
    residual_alpha: float = 0.1
    gcn_step: bool = False

    @classmethod
    def init(cls, numeric: np.ndarray, *, hidden: int = 64, layers: int = 2, channels: int = 4,
             embed_dim: int | None = None, residual_alpha: float = 0.1, gcn_step: bool = False,
             seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        embed_dim = embed_dim or hidden
        numeric = np.asarray(numeric, dtype=np.float64)
        return cls(
            InitialFeatures.init(rng, numeric, embed_dim),
            FusionParams.init(rng, embed_dim, numeric.shape[1], hidden),
            [RgatLayerParams.init(rng, hidden, channels) for _ in range(layers)],
            ReadoutParams.init(rng, hidden, layers),
            RelationSpace.init(rng, hidden),
            MlpHead.init(rng, hidden),
            residual_alpha,
            gcn_step,
        )

    @property
    def hidden(self) -> int:
        return self.readout.W.shape[1]

    def named(self) -> dict[str, Tensor]:
        out = {"entity_embed": self.initial.entity_embed}
        out.update(self.fusion.named())
        for l, layer in enumerate(self.layers):
            out.update(layer.named(f"rgat.layer{l}"))
        out.update(self.readout.named())
        out.update(self.space.named())
        out.update(self.head.named())
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named().values())

    def encoder_parameters(self) -> list[Tensor]:
        return [t for name, t in self.named().items() if not name.startswith("mlp.")]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.named().items():
            if snap[name].shape != t.shape:
                raise ShapeMismatch(f"{name}: checkpoint {snap[name].shape} vs model {t.shape}")
            t.data = snap[name].copy()

    def copy(self) -> "ModelParams":
        clone = ModelParams.init(
            self.initial.numeric,
            hidden=self.hidden,
            layers=len(self.layers),
            channels=self.layers[0].channels,
            embed_dim=self.initial.entity_embed.shape[1],
            residual_alpha=self.residual_alpha,
            gcn_step=self.gcn_step,
        )
        clone.restore(self.snapshot())
        return clone

    def save(self, directory, meta: dict | None = None) -> None:
        info = {
            "hidden": self.hidden,
            "layers": len(self.layers),
            "channels": self.layers[0].channels,
            "embed_dim": self.initial.entity_embed.shape[1],
            "residual_alpha": self.residual_alpha,
            "gcn_step": self.gcn_step,
            "numeric_width": self.initial.numeric.shape[1],
        }
        info.update(meta or {})
        save_checkpoint(directory, self.named(), info)

    @classmethod
    def load(cls, directory, numeric: np.ndarray) -> tuple["ModelParams", dict]:
        arrays, meta = load_checkpoint(directory)
        params = cls.init(
            numeric,
            hidden=meta["hidden"],
            layers=meta["layers"],
            channels=meta["channels"],
            embed_dim=meta["embed_dim"],
            residual_alpha=meta["residual_alpha"],
            gcn_step=meta.get("gcn_step", False),
        )
        params.restore(arrays)
        return params, meta


__all__ = ["ModelParams", "NUMERIC_WIDTH"]
