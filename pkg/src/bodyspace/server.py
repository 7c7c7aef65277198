"""HTTP render service over a trained checkpoint.

Endpoints:
    GET /api/meta                         model shape: S, N, labels, limits
    GET /api/render?a=&b=&c=&w=&h=        PNG with alpha in the alpha channel

The model snapshot is read-only; renders are cached keyed on the coordinate
quantized to 1e-4 (plus the raster size), so identical quantized requests
return byte-identical images. Requests arriving before the checkpoint
finishes loading get 503; malformed or out-of-range parameters get 400.
A static directory (the browser explorer build) can be mounted at /.
"""

from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .model import load_model
from .space import SpaceCoord, render_space_point

MIN_IMAGE_SIZE = 16
MAX_IMAGE_SIZE = 512
DEFAULT_IMAGE_SIZE = 128
COORD_QUANTUM = 1e-4

_MIME = {".html": "text/html", ".js": "text/javascript", ".css": "text/css",
         ".png": "image/png", ".svg": "image/svg+xml", ".map": "application/json",
         ".ico": "image/x-icon"}


class RenderService:
    """Checkpoint + render cache behind the HTTP handler (also usable
    directly in tests)."""

    def __init__(self, static_dir=None):
        self.loaded = None
        self.static_dir = Path(static_dir) if static_dir else None
        self._cache = {}
        self._lock = threading.Lock()

    def load(self, checkpoint_path):
        self.loaded = load_model(checkpoint_path)

    @property
    def ready(self) -> bool:
        return self.loaded is not None

    def meta(self) -> dict:
        lm = self.loaded
        sets = lm.model.sets
        return {
            "S": sets,
            "N": len(lm.frames),
            "appearance_labels": [f"set {i}" for i in range(sets)],
            "pose_source_sets": [fr.appearance_set for fr in lm.frames],
            "image_size_limits": {"min": MIN_IMAGE_SIZE, "max": MAX_IMAGE_SIZE,
                                  "default": DEFAULT_IMAGE_SIZE},
            "iteration": lm.iteration,
        }

    @staticmethod
    def quantize(a: float, b: float, c: float, w: int, h: int):
        q = 1.0 / COORD_QUANTUM
        return (int(round(a * q)), int(round(b * q)), int(round(c * q)), w, h)

    def render_png(self, a: float, b: float, c: float, w: int, h: int) -> bytes:
        key = self.quantize(a, b, c, w, h)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        qa, qb, qc = (k * COORD_QUANTUM for k in key[:3])
        out = render_space_point(self.loaded, SpaceCoord(qa, qb, qc), w, h)
        rgba = np.concatenate([np.clip(out.color, 0, 1), np.clip(out.alpha, 0, 1)[..., None]],
                              axis=-1)
        img = Image.fromarray(np.round(rgba * 255).astype(np.uint8), "RGBA")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        data = buf.getvalue()
        with self._lock:
            self._cache[key] = data
        return data


def parse_render_params(query: dict):
    """Validated (a, b, c, w, h) from a parsed query string; raises ValueError."""
    out = []
    for name in ("a", "b", "c"):
        raw = query.get(name, ["0"])[0]
        try:
            v = float(raw)
        except ValueError:
            raise ValueError(f"parameter {name}={raw!r} is not a number") from None
        if not np.isfinite(v) or v < 0.0 or v > 1.0:
            raise ValueError(f"parameter {name}={raw} outside [0, 1]")
        out.append(v)
    for name in ("w", "h"):
        raw = query.get(name, [str(DEFAULT_IMAGE_SIZE)])[0]
        try:
            v = int(raw)
        except ValueError:
            raise ValueError(f"parameter {name}={raw!r} is not an integer") from None
        if not (MIN_IMAGE_SIZE <= v <= MAX_IMAGE_SIZE):
            raise ValueError(f"parameter {name}={v} outside "
                             f"[{MIN_IMAGE_SIZE}, {MAX_IMAGE_SIZE}]")
        out.append(v)
    return tuple(out)


class _Handler(BaseHTTPRequestHandler):
    service: RenderService = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, content_type: str, body: bytes):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, payload: dict):
        self._send(code, "application/json", json.dumps(payload).encode())

    def do_GET(self):
        url = urlparse(self.path)
        try:
            if url.path == "/api/meta":
                if not self.service.ready:
                    return self._json(503, {"error": "model loading"})
                return self._json(200, self.service.meta())
            if url.path == "/api/render":
                if not self.service.ready:
                    return self._json(503, {"error": "model loading"})
                try:
                    a, b, c, w, h = parse_render_params(parse_qs(url.query))
                except ValueError as e:
                    return self._json(400, {"error": str(e)})
                return self._send(200, "image/png", self.service.render_png(a, b, c, w, h))
            return self._static(url.path)
        except BrokenPipeError:  # client went away mid-render
            pass

    def _static(self, path: str):
        root = self.service.static_dir
        if root is None:
            return self._json(404, {"error": f"no route {path}"})
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            return self._json(404, {"error": f"no route {path}"})
        mime = _MIME.get(target.suffix, "application/octet-stream")
        self._send(200, mime, target.read_bytes())


def make_server(bind: str, service: RenderService) -> ThreadingHTTPServer:
    host, _, port = bind.rpartition(":")
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host or "127.0.0.1", int(port)), handler)


def serve(checkpoint_path, bind: str = "127.0.0.1:8080", static_dir=None,
          ready_event: threading.Event = None):
    """Blocking server entry point; loads the checkpoint, then serves."""
    service = RenderService(static_dir=static_dir)
    httpd = make_server(bind, service)
    service.load(checkpoint_path)
    if ready_event is not None:
        ready_event.set()
    print(f"serving model on http://{httpd.server_address[0]}:{httpd.server_address[1]}/",
          flush=True)
    try:
        httpd.serve_forever()
    finally:
        httpd.server_close()
