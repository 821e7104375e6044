"""Detector running in a child process, spoken to over JSON lines on stdio.

Request (one line on the child's stdin)::

    {"id": "t1", "image_path": "/tmp/.../t1.png", "width": 640, "height": 640}

Response (one line on the child's stdout)::

    {"id": "t1", "detections": [{"bbox": [x, y, w, h], "score": 0.9, "class_id": 2}]}

``bbox`` is in tile pixels. One request is in flight at a time.
"""

from __future__ import annotations

import collections
import json
import logging
import math
import os
import queue
import shlex
import shutil
import subprocess
import tempfile
import threading
from pathlib import Path
from typing import Any, Deque, List, Optional, Sequence, Union

from ..fusion import Detection
from ..tiler import BoxF, Frame, write_raster
from .base import AdapterDownError, DetectorAdapter, DetectorTimeout, ProtocolError, TileRequest

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 30.0
_EOF = object()


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_response(line: Union[str, bytes], expected_id: str) -> List[Detection]:
    """Decode and validate one response line; raises ProtocolError."""
    try:
        msg = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ProtocolError(f"response is not JSON: {e}", expected_id, line) from e
    if not isinstance(msg, dict):
        raise ProtocolError("response is not a JSON object", expected_id, line)
    if msg.get("id") != expected_id:
        raise ProtocolError(f"response id {msg.get('id')!r} != request id {expected_id!r}", expected_id, line)
    raw = msg.get("detections")
    if not isinstance(raw, list):
        raise ProtocolError("'detections' missing or not a list", expected_id, line)
    out = []
    for i, d in enumerate(raw):
        if not isinstance(d, dict):
            raise ProtocolError(f"detection {i} is not an object", expected_id, line)
        bbox, score, cls = d.get("bbox"), d.get("score"), d.get("class_id")
        if not (isinstance(bbox, list) and len(bbox) == 4 and all(_is_number(v) for v in bbox)):
            raise ProtocolError(f"detection {i}: bbox must be 4 finite numbers", expected_id, line)
        if bbox[2] < 0 or bbox[3] < 0:
            raise ProtocolError(f"detection {i}: negative bbox size", expected_id, line)
        if not _is_number(score) or not 0.0 <= score <= 1.0:
            raise ProtocolError(f"detection {i}: score {score!r} out of range", expected_id, line)
        if not isinstance(cls, int) or isinstance(cls, bool) or cls < 0:
            raise ProtocolError(f"detection {i}: class_id {cls!r} is not a non-negative int", expected_id, line)
        out.append(Detection(BoxF(*map(float, bbox), Frame.TILE), float(score), cls))
    return out


class ExternalDetector(DetectorAdapter):
    """Wraps a long-lived worker process.

    The process is started lazily and restarted after a timeout, since a late
    reply would otherwise be read as the answer to the next request.
    """

    name = "external"
    max_concurrent_requests = 1

    def __init__(
        self,
        command: Union[str, Sequence[str]],
        timeout_s: float = DEFAULT_TIMEOUT_S,
        workdir: Optional[Union[str, Path]] = None,
    ):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("empty detector command")
        self.timeout_s = timeout_s
        self._own_dir = workdir is None
        self._dir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="dyntile-tiles-"))
        self._dir.mkdir(parents=True, exist_ok=True)
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue" = queue.Queue()
        self._stderr: Deque[str] = collections.deque(maxlen=50)
        self._threads: List[threading.Thread] = []
        self._lock = threading.Lock()
        self._counter = 0

    # -- process lifecycle -------------------------------------------------

    def start(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        self._reap()
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise AdapterDownError(f"cannot launch {self.command!r}: {e}") from e
        self._lines = queue.Queue()
        proc = self._proc
        self._threads = [
            threading.Thread(target=self._pump_stdout, args=(proc, self._lines), daemon=True),
            threading.Thread(target=self._pump_stderr, args=(proc,), daemon=True),
        ]
        for t in self._threads:
            t.start()

    @staticmethod
    def _pump_stdout(proc: subprocess.Popen, lines: "queue.Queue") -> None:
        try:
            for line in proc.stdout:
                if line.strip():
                    lines.put(line)
        except (ValueError, OSError):
            pass
        finally:
            lines.put(_EOF)

    def _pump_stderr(self, proc: subprocess.Popen) -> None:
        try:
            for line in proc.stderr:
                self._stderr.append(line.rstrip())
        except (ValueError, OSError):
            pass

    def _reap(self, grace_s: float = 2.0) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.stdin and not proc.stdin.closed:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=grace_s)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        for t in self._threads:
            t.join(timeout=grace_s)
        for stream in (proc.stdout, proc.stderr):
            if stream and not stream.closed:
                stream.close()
        self._threads = []

    def close(self) -> None:
        with self._lock:
            self._reap()
            if self._own_dir:
                shutil.rmtree(self._dir, ignore_errors=True)

    @property
    def pid(self) -> Optional[int]:
        return self._proc.pid if self._proc is not None else None

    def stderr_tail(self) -> str:
        return "\n".join(self._stderr)

    # -- requests ----------------------------------------------------------

    def detect(self, request: TileRequest) -> List[Detection]:
        with self._lock:
            self.start()
            self._counter += 1
            req_id = f"t{self._counter}"
            path = self._dir / f"{req_id}.png"
            write_raster(request.pixels, path)
            try:
                return self._roundtrip(req_id, path, request)
            finally:
                try:
                    os.unlink(path)
                except OSError:
                    pass

    def _roundtrip(self, req_id: str, path: Path, request: TileRequest) -> List[Detection]:
        msg = {"id": req_id, "image_path": str(path), "width": request.width, "height": request.height}
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as e:
            code = self._proc.poll()
            self._reap()
            raise AdapterDownError(f"detector process gone (exit {code}): {e}", request.tile_id) from e
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            self._reap(grace_s=0.1)
            raise DetectorTimeout(f"no response within {self.timeout_s}s", request.tile_id)
        if line is _EOF:
            try:
                code = self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                code = None
            tail = self.stderr_tail()
            self._reap()
            raise AdapterDownError(f"detector process exited with {code}; stderr: {tail[-500:]}", request.tile_id)
        try:
            dets = parse_response(line, req_id)
        except ProtocolError as e:
            e.tile_id = request.tile_id
            log.warning("protocol error on %s: %s; payload=%r", request.tile_id, e, line.rstrip())
            raise
        return dets
