from .base import (
    AdapterDownError,
    DetectionError,
    DetectorAdapter,
    DetectorTimeout,
    ProtocolError,
    TileRequest,
    detect,
)
from .external import ExternalDetector, parse_response
from .oracle import GroundTruth, OracleConfig, OracleDetector, StubConfig, StubDetector

__all__ = [
    "AdapterDownError",
    "DetectionError",
    "DetectorAdapter",
    "DetectorTimeout",
    "ExternalDetector",
    "GroundTruth",
    "OracleConfig",
    "OracleDetector",
    "ProtocolError",
    "StubConfig",
    "StubDetector",
    "TileRequest",
    "detect",
    "parse_response",
]
