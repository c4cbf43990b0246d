"""JSON-over-HTTP service exposing the trained model to interactive clients.

Endpoints
  GET  /health       -> {"status": "ok" | "loading"}
  GET  /model/info   -> dimensions, attribute names, class names, palette,
                        parameter ranges
  POST /generate     -> conditional/unconditional samples
  POST /edit         -> two-stage reconstruct-then-edit samples
  POST /render       -> render a latent through the frozen generator

Raster payloads are base64 of row-major u8 data with explicit width/height/
channels. Requests may supply a seed; otherwise the server draws one and
echoes it so sessions stay replayable. The checkpoint is read-only; sampling
is serialized behind a lock so concurrent requests match serial execution.
"""

from __future__ import annotations

import base64
import json
import secrets
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, Optional, Tuple

import numpy as np

from . import diffusion as df
from . import toygen
from .cli import build_conditions, measured_attributes

MAX_COUNT = 16


class RequestError(Exception):
    """HTTP error with a status code and a client-facing message."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _b64_raster(data: np.ndarray, channels: int) -> Dict:
    u8 = np.ascontiguousarray(data, dtype=np.uint8)
    h, w = u8.shape[-2:]
    return {"data": base64.b64encode(u8.tobytes()).decode("ascii"),
            "width": w, "height": h, "channels": channels}


def _decode_raster(payload, channels: int, size: int, what: str) -> np.ndarray:
    """Base64 raster payload -> (channels, H, W) or (H, W) uint8 array."""
    if not isinstance(payload, dict):
        raise RequestError(400, f"{what} must be an object")
    for key in ("data", "width", "height", "channels"):
        if key not in payload:
            raise RequestError(400, f"{what} missing field {key!r}")
    if payload["channels"] != channels:
        raise RequestError(422, f"{what} must have {channels} channel(s)")
    if payload["width"] != size or payload["height"] != size:
        raise RequestError(422, f"{what} must be {size}x{size}")
    try:
        raw = base64.b64decode(payload["data"], validate=True)
    except Exception:
        raise RequestError(400, f"{what} data is not valid base64")
    expected = channels * size * size
    if len(raw) != expected:
        raise RequestError(422, f"{what} data has {len(raw)} bytes, "
                           f"expected {expected}")
    arr = np.frombuffer(raw, np.uint8)
    if channels == 1:
        return arr.reshape(size, size).copy()
    return arr.reshape(channels, size, size).copy()


def _parse_conditions(body: Dict, model: df.DiffusionModel, what: str = ""):
    """Shared condition block of /generate and /edit reference payloads."""
    gen = model.cfg.gen
    size = gen.image_size
    prefix = f"{what}." if what else ""

    attrs = body.get("attrs") or {}
    if not isinstance(attrs, dict):
        raise RequestError(400, f"{prefix}attrs must be an object")
    names = toygen.attribute_names(gen)
    for name, value in attrs.items():
        if name not in names:
            raise RequestError(422, f"unknown attribute {name!r}")
        if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
            raise RequestError(422, f"attribute {name!r} must be in [0, 1]")

    rgb = seg = rgb_mask = seg_mask = None
    if body.get("rgb") is not None:
        rgb = _decode_raster(body["rgb"], 3, size, f"{prefix}rgb") \
            .astype(np.float32) / 255.0
    if body.get("seg") is not None:
        seg = _decode_raster(body["seg"], 1, size, f"{prefix}seg")
        if seg.max(initial=0) >= toygen.SEG_CLASSES:
            raise RequestError(422, f"{prefix}seg labels must be < "
                               f"{toygen.SEG_CLASSES}")
    if body.get("rgb_mask") is not None:
        rgb_mask = _decode_raster(body["rgb_mask"], 1, size,
                                  f"{prefix}rgb_mask") > 0
    if body.get("seg_mask") is not None:
        seg_mask = _decode_raster(body["seg_mask"], 1, size,
                                  f"{prefix}seg_mask") > 0
    try:
        return build_conditions(model.cfg.cond, dict(attrs), rgb, seg,
                                rgb_mask, seg_mask)
    except ValueError as exc:
        raise RequestError(422, str(exc))


def _sample_config(body: Dict, max_steps: int, seed: int) -> df.SampleConfig:
    def number(name, default, lo, hi):
        v = body.get(name, default)
        if not isinstance(v, (int, float)) or not lo <= v <= hi:
            raise RequestError(422, f"{name} must be a number in "
                               f"[{lo}, {hi}]")
        return v

    steps = body.get("steps", 100)
    if not isinstance(steps, int) or steps < 1:
        raise RequestError(422, "steps must be a positive integer")
    if steps > max_steps:
        raise RequestError(422, f"steps exceeds the server budget "
                           f"({max_steps})")
    try:
        return df.SampleConfig(
            ddim_steps=steps,
            eta=float(number("eta", 0.0, 0.0, 1.0)),
            omega_v=float(number("omega_v", 1.5, 0.0, 50.0)),
            omega_a=float(number("omega_a", 1.5, 0.0, 50.0)),
            seed=seed, count=1)
    except ValueError as exc:
        raise RequestError(422, str(exc))


class ModelServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, model: Optional[df.DiffusionModel],
                 max_steps: int = 1000):
        super().__init__(addr, Handler)
        self.model = model
        self.max_steps = max_steps
        self.sample_lock = threading.Lock()


class Handler(BaseHTTPRequestHandler):
    server: ModelServer

    # -- plumbing -----------------------------------------------------------

    def log_message(self, fmt, *args):   # quiet by default
        pass

    def _send_json(self, status: int, payload: Dict) -> None:
        raw = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(raw)

    def _error(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    def _model(self) -> df.DiffusionModel:
        model = self.server.model
        if model is None:
            raise RequestError(503, "model is still loading")
        return model

    def _read_body(self) -> Dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw.decode("utf-8")) if raw else {}
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise RequestError(400, "request body is not valid JSON")
        if not isinstance(body, dict):
            raise RequestError(400, "request body must be a JSON object")
        return body

    def do_OPTIONS(self):   # CORS preflight for the browser studio
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    # -- routes -------------------------------------------------------------

    def do_GET(self):
        try:
            if self.path == "/health":
                status = "ok" if self.server.model is not None else "loading"
                self._send_json(200 if status == "ok" else 503,
                                {"status": status})
            elif self.path == "/model/info":
                self._send_json(200, self._info(self._model()))
            else:
                self._error(404, f"no route for GET {self.path}")
        except RequestError as exc:
            self._error(exc.status, str(exc))

    def do_POST(self):
        try:
            body = self._read_body()
            if self.path == "/generate":
                self._send_json(200, self._generate(body, edit=False))
            elif self.path == "/edit":
                self._send_json(200, self._generate(body, edit=True))
            elif self.path == "/render":
                self._send_json(200, self._render(body))
            else:
                self._error(404, f"no route for POST {self.path}")
        except RequestError as exc:
            self._error(exc.status, str(exc))
        except Exception as exc:   # keep the server alive on internal faults
            self._error(500, f"internal error: {exc}")

    # -- handlers -----------------------------------------------------------

    def _info(self, model: df.DiffusionModel) -> Dict:
        gen = model.cfg.gen
        palette = {
            "background": toygen.BG_COLOR, "clothing": toygen.CLOTHING_COLOR,
            "eyes": toygen.EYE_COLOR, "glasses": toygen.GLASSES_COLOR,
            "hat": toygen.HAT_COLOR}
        return {
            "latent_shape": [gen.k, gen.d],
            "image_size": gen.image_size,
            "n_attr": gen.n_attr,
            "attribute_names": toygen.attribute_names(gen),
            "class_names": toygen.SEG_CLASS_NAMES,
            "palette": {k: [round(float(c), 4) for c in v]
                        for k, v in palette.items()},
            "timesteps": model.cfg.timesteps,
            "max_steps": self.server.max_steps,
            "max_count": MAX_COUNT,
            "train_steps_done": model.train_steps_done,
            "ranges": {"omega_v": [0.0, 50.0], "omega_a": [0.0, 50.0],
                       "eta": [0.0, 1.0], "attrs": [0.0, 1.0]},
        }

    def _sample_entry(self, model: df.DiffusionModel, latent: np.ndarray,
                      seed: int) -> Dict:
        gen = model.cfg.gen
        p = toygen.decode_params(latent, gen)
        image, seg = toygen.render(p, toygen.FRONTAL_VIEW, gen.image_size,
                                   mode="hard")
        u8 = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
        return {"latent": [[round(float(x), 6) for x in row]
                           for row in latent],
                "image": _b64_raster(u8, 3),
                "seg": _b64_raster(seg, 1),
                "measured_attrs": measured_attributes(latent, gen),
                "seed": seed}

    def _generate(self, body: Dict, edit: bool) -> Dict:
        model = self._model()
        count = body.get("count", 1)
        if not isinstance(count, int) or not 1 <= count <= MAX_COUNT:
            raise RequestError(422, f"count must be an integer in "
                               f"[1, {MAX_COUNT}]")
        seed = body.get("seed")
        if seed is None:
            seed = secrets.randbelow(2 ** 31)
        elif not isinstance(seed, int):
            raise RequestError(400, "seed must be an integer")

        attr, vis = _parse_conditions(body, model)
        plan_ref = None
        if edit:
            if "reference" not in body:
                raise RequestError(400, "/edit requires a reference block")
            if not isinstance(body["reference"], dict):
                raise RequestError(400, "reference must be an object")
            plan_ref = _parse_conditions(body["reference"], model,
                                         what="reference")
            t_rec = body.get("t_rec")
            if not isinstance(t_rec, int):
                raise RequestError(400, "/edit requires integer t_rec")

        samples = []
        for i in range(count):
            scfg = _sample_config(body, self.server.max_steps, seed + i)
            if edit and not 0 <= t_rec <= scfg.ddim_steps:
                raise RequestError(422, f"t_rec must lie in "
                                   f"[0, {scfg.ddim_steps}]")
            with self.server.sample_lock:
                if edit:
                    plan = df.EditPlan(reference=plan_ref,
                                       edit=(attr, vis), t_rec=t_rec,
                                       sample=scfg)
                    latent = df.edit(model, plan)[0]
                else:
                    latent = df.ddim_sample(model, scfg, attr, vis)[0]
            samples.append(self._sample_entry(model, latent, seed + i))

        echo = {"seed": seed, "count": count,
                "steps": body.get("steps", 100),
                "eta": body.get("eta", 0.0),
                "omega_v": body.get("omega_v", 1.5),
                "omega_a": body.get("omega_a", 1.5)}
        if edit:
            echo["t_rec"] = t_rec
        return {"samples": samples, "request": echo}

    def _render(self, body: Dict) -> Dict:
        model = self._model()
        gen = model.cfg.gen
        if "latent" not in body:
            raise RequestError(400, "/render requires a latent")
        latent = np.asarray(body["latent"], dtype=np.float64)
        if latent.shape != (gen.k, gen.d):
            raise RequestError(422, f"latent must have shape "
                               f"[{gen.k}, {gen.d}]")
        if not np.isfinite(latent).all():
            raise RequestError(422, "latent contains non-finite values")
        return self._sample_entry(model, latent, seed=0)


def make_server(host: str, port: int,
                model: Optional[df.DiffusionModel],
                max_steps: int = 1000) -> ModelServer:
    return ModelServer((host, port), model, max_steps=max_steps)
