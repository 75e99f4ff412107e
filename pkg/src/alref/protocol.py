"""Predictor wire protocol v1: newline-delimited JSON over a child process.

One JSON object per line on the child's stdin/stdout. Requests carry
``op`` (hello | train | predict | shutdown) and a correlation ``id``;
responses answer with ``ok`` or ``error`` and the same ``id``. Tensors
travel as {"shape": [...], "dtype": "f32"|"u8", "data": base64 of
little-endian bytes}. The client owns the child's lifecycle and keeps at
most one request in flight.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import sys
import threading

import numpy as np

from .predictor import ProbabilityMap
from .raster import LabelRaster, MultiBandRaster

PROTOCOL_VERSION = 1
_SIMPLEX_TOL = 1e-4
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class ProtocolError(RuntimeError):
    """Transport or framing failure; the child is no longer trusted."""


class RemoteError(RuntimeError):
    """Error reported by the server in a well-formed response."""


def encode_tensor(arr: np.ndarray) -> dict:
    if arr.dtype == np.uint8:
        dtype = "u8"
        payload = np.ascontiguousarray(arr)
    else:
        dtype = "f32"
        payload = np.ascontiguousarray(arr.astype("<f4"))
    return {
        "shape": list(arr.shape),
        "dtype": dtype,
        "data": base64.b64encode(payload.tobytes()).decode("ascii"),
    }


def decode_tensor(obj: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        dtype = _DTYPES[obj["dtype"]]
        raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed tensor: {exc}") from exc
    expected = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
    if len(raw) != expected:
        raise ProtocolError(f"tensor payload is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


class SidecarClient:
    """Spawns and drives a protocol-v1 predictor server."""

    def __init__(self, cmd: str | list[str], timeout: float = 600.0):
        self.timeout = timeout
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=None, text=True, bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 0
        self._closed = False
        resp = self._request({"op": "hello", "version": PROTOCOL_VERSION})
        if resp.get("version") != PROTOCOL_VERSION:
            self._kill()
            raise ProtocolError(f"server speaks version {resp.get('version')!r}, "
                                f"expected {PROTOCOL_VERSION}")

    def _pump(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        except ValueError:
            pass  # stdout closed during shutdown
        self._lines.put(None)

    def _kill(self) -> None:
        self._closed = True
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()

    def _request(self, payload: dict) -> dict:
        if self._closed:
            raise ProtocolError("client is closed")
        req_id = self._next_id
        self._next_id += 1
        payload = dict(payload, id=req_id)
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise ProtocolError(f"server pipe closed: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._kill()
            raise ProtocolError(f"no response within {self.timeout} s") from None
        if line is None:
            self._kill()
            raise ProtocolError("server exited without responding")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            self._kill()
            raise ProtocolError(f"malformed response line: {exc}") from exc
        if not isinstance(resp, dict) or resp.get("id") != req_id:
            self._kill()
            raise ProtocolError(f"response id {resp.get('id') if isinstance(resp, dict) else None!r} "
                                f"does not match request id {req_id}")
        if resp.get("op") == "error":
            raise RemoteError(str(resp.get("message", "unspecified server error")))
        if resp.get("op") != "ok":
            self._kill()
            raise ProtocolError(f"unexpected response op {resp.get('op')!r}")
        return resp

    def train(self, images: list[MultiBandRaster], labels: list[LabelRaster],
              config: dict) -> None:
        self._request({
            "op": "train",
            "images": [encode_tensor(img.values) for img in images],
            "labels": [encode_tensor(lab.labels) for lab in labels],
            "config": config,
        })

    def predict_proba(self, image: MultiBandRaster) -> ProbabilityMap:
        resp = self._request({"op": "predict", "image": encode_tensor(image.values)})
        if "probs" not in resp:
            self._kill()
            raise ProtocolError("predict response carries no probs tensor")
        probs = decode_tensor(resp["probs"]).astype(np.float64)
        if probs.ndim != 3 or probs.shape[1:] != (image.width, image.height):
            self._kill()
            raise ProtocolError(f"probability map shape {probs.shape} does not match "
                                f"image {image.width}x{image.height}")
        if float(probs.min()) < -_SIMPLEX_TOL:
            self._kill()
            raise ProtocolError("negative probabilities beyond tolerance")
        sums = probs.sum(axis=0)
        if float(np.abs(sums - 1.0).max()) > _SIMPLEX_TOL:
            self._kill()
            raise ProtocolError("per-pixel probabilities do not sum to 1 within tolerance")
        probs = np.maximum(probs, 0.0)
        probs /= probs.sum(axis=0, keepdims=True)
        return ProbabilityMap(probs)

    def shutdown(self) -> None:
        if self._closed:
            return
        try:
            self._request({"op": "shutdown"})
        except (ProtocolError, RemoteError):
            pass
        self._closed = True
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def close(self) -> None:
        self.shutdown()
        if self._proc.poll() is None:
            self._kill()

    def __enter__(self) -> "SidecarClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass


def run_server(handle_train, handle_predict, stdin=None, stdout=None) -> None:
    """Serve protocol v1 until shutdown or EOF.

    handle_train(images, labels, config_dict) -> None and
    handle_predict(image_array) -> probability array (num_classes, W, H).
    Handler exceptions become error responses; the loop never crashes on a
    bad request.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    def respond(obj: dict) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    for line in stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            req_id = req.get("id") if isinstance(req, dict) else None
        except json.JSONDecodeError:
            respond({"op": "error", "id": None, "message": "malformed JSON request"})
            continue
        if not isinstance(req, dict) or "op" not in req:
            respond({"op": "error", "id": req_id, "message": "request is not an op object"})
            continue
        op = req["op"]
        try:
            if op == "hello":
                respond({"op": "ok", "id": req_id, "version": PROTOCOL_VERSION})
            elif op == "train":
                images = [decode_tensor(t) for t in req["images"]]
                labels = [decode_tensor(t) for t in req["labels"]]
                handle_train(images, labels, req.get("config", {}))
                respond({"op": "ok", "id": req_id})
            elif op == "predict":
                probs = handle_predict(decode_tensor(req["image"]))
                respond({"op": "ok", "id": req_id, "probs": encode_tensor(np.asarray(probs))})
            elif op == "shutdown":
                respond({"op": "ok", "id": req_id})
                return
            else:
                respond({"op": "error", "id": req_id, "message": f"unknown op {op!r}"})
        except Exception as exc:
            respond({"op": "error", "id": req_id, "message": f"{type(exc).__name__}: {exc}"})


def conformance_check(cmd: str | list[str], timeout: float = 600.0) -> list[str]:
    """Golden transcript for protocol servers: hello, predict-before-train
    error, train, predict (shape + simplex), shutdown. Returns a list of
    failure descriptions, empty on full conformance."""
    from .synthdata import SceneSpec, generate_pool

    failures: list[str] = []
    pairs = generate_pool(seed=424242, n_images=2,
                          template=SceneSpec(seed=0, width=64, height=64))
    images = [img for img, _ in pairs]
    labels = [lab for _, lab in pairs]
    config = {
        "num_classes": 4, "epochs": 1, "chips_per_epoch": 2, "chip_size": 64,
        "window": 3, "learning_rate": 1e-2, "adam_beta1": 0.9, "adam_beta2": 0.999,
        "adam_eps": 1e-8, "augmentations": ["flip_h", "flip_v", "rotate90"],
        "class_weight_mode": "inverse_frequency", "warm_start": False, "seed": 7,
    }
    try:
        client = SidecarClient(cmd, timeout=timeout)
    except (ProtocolError, RemoteError, OSError) as exc:
        return [f"handshake failed: {exc}"]
    try:
        try:
            client.predict_proba(images[0])
            failures.append("predict before train did not produce a server error")
        except RemoteError:
            pass
        except ProtocolError as exc:
            failures.append(f"predict before train broke the transport: {exc}")
        try:
            client.train(images, labels, config)
        except (ProtocolError, RemoteError) as exc:
            failures.append(f"train failed: {exc}")
            return failures
        try:
            pm = client.predict_proba(images[0])
        except (ProtocolError, RemoteError) as exc:
            failures.append(f"predict failed: {exc}")
            return failures
        if pm.probs.shape != (4, images[0].width, images[0].height):
            failures.append(f"probability map shape {pm.probs.shape}, "
                            f"expected (4, {images[0].width}, {images[0].height})")
    finally:
        client.close()
    return failures
