"""Adapter interface shared by every detector backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, List, Optional

import numpy as np

from ..fusion import Detection, FusionError
from ..tiler import Frame, TileRegion


class DetectionError(RuntimeError):
    """A detector failed on one tile; ``tile_id`` says which."""

    def __init__(self, message: str, tile_id: Optional[str] = None):
        self.tile_id = tile_id
        prefix = f"[tile {tile_id}] " if tile_id else ""
        super().__init__(prefix + message)


class DetectorTimeout(DetectionError):
    pass


class ProtocolError(DetectionError):
    def __init__(self, message: str, tile_id: Optional[str] = None, payload: Any = None):
        self.payload = payload
        super().__init__(message, tile_id)


class AdapterDownError(DetectionError):
    pass


@dataclass
class TileRequest:
    """Everything a detector may use for one tile.

    ``pixels`` is the tile raster. ``image_id``, ``region`` and
    ``scale_factor`` locate the tile inside its source capture; only the
    ground-truth oracle looks at them.
    """

    pixels: np.ndarray
    image_id: Hashable = None
    region: Optional[TileRegion] = None
    scale_factor: float = 1.0

    @property
    def tile_id(self) -> str:
        if self.region is None:
            return f"{self.image_id}"
        return f"{self.image_id}:r{self.region.row}c{self.region.col}"

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


class DetectorAdapter:
    name = "adapter"
    max_concurrent_requests = 1

    def detect(self, request: TileRequest) -> List[Detection]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def detect(adapter: DetectorAdapter, request: TileRequest) -> List[Detection]:
    """Run one adapter on one tile and check what comes back."""
    try:
        dets = adapter.detect(request)
    except DetectionError as e:
        if e.tile_id is None:
            e.tile_id = request.tile_id
        raise
    except (FusionError, ValueError, OSError) as e:
        raise DetectionError(f"{adapter.name} failed: {e}", request.tile_id) from e
    out = list(dets)
    for d in out:
        if d.box.frame is not Frame.TILE:
            raise DetectionError(f"{adapter.name} returned a {d.box.frame.value}-frame box", request.tile_id)
    return out
