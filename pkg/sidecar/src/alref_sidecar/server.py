"""Protocol-v1 predictor server on stdin/stdout.

One JSON object per line: requests carry op (hello | train | predict |
shutdown) and a correlation id; every request gets exactly one ok/error
response with the same id. Tensors are {"shape", "dtype": "f32"|"u8",
"data": base64 little-endian}. Handler failures (bad config, out of
memory, import errors) become error responses, never a silent crash.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys

import numpy as np

PROTOCOL_VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def decode_tensor(obj: dict) -> np.ndarray:
    shape = tuple(int(s) for s in obj["shape"])
    dtype = _DTYPES[obj["dtype"]]
    raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
    expected = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"tensor payload is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def encode_tensor(arr: np.ndarray) -> dict:
    if arr.dtype == np.uint8:
        dtype, payload = "u8", np.ascontiguousarray(arr)
    else:
        dtype, payload = "f32", np.ascontiguousarray(arr.astype("<f4"))
    return {"shape": list(arr.shape), "dtype": dtype,
            "data": base64.b64encode(payload.tobytes()).decode("ascii")}


class Trainer:
    """Owns the network and the training regime across requests."""

    def __init__(self, pretrained: bool = False):
        self.pretrained = pretrained
        self.model = None
        self.device = None

    def train(self, images: list[np.ndarray], labels: list[np.ndarray], config: dict) -> None:
        import torch

        from .model import DualBackboneSegmenter

        num_classes = int(config.get("num_classes", 4))
        epochs = int(config.get("epochs", 15))
        chips_per_epoch = int(config.get("chips_per_epoch", 64))
        chip_size = int(config.get("chip_size", 128))
        lr = float(config.get("learning_rate", 1e-3))
        seed = int(config.get("seed", 0))
        augmentations = set(config.get("augmentations", ["rotate90", "flip_h", "flip_v"]))
        warm_start = bool(config.get("warm_start", False))
        weight_mode = config.get("class_weight_mode", "inverse_frequency")

        if not images or len(images) != len(labels):
            raise ValueError("need matching non-empty image and label lists")
        if chip_size < 64:
            # backbone stride is 32; smaller chips leave batch norm with a
            # single value per channel at the deepest stage
            raise ValueError(f"chip_size must be >= 64, got {chip_size}")
        for img, lab in zip(images, labels):
            if img.ndim != 3 or img.shape[0] != 5:
                raise ValueError(f"expected (5, W, H) images, got {img.shape}")
            if lab.shape != img.shape[1:]:
                raise ValueError("label extent does not match image")
            if chip_size > min(img.shape[1:]):
                raise ValueError(f"chip_size {chip_size} exceeds image {img.shape[1:]}")

        self.device = torch.device("cuda" if torch.cuda.is_available() else "cpu")
        torch.manual_seed(seed)
        if self.model is None or not warm_start or self.model.num_classes != num_classes:
            self.model = DualBackboneSegmenter(num_classes, pretrained=self.pretrained)
        self.model.to(self.device).train()

        weights = self._class_weights(labels, num_classes, weight_mode)
        criterion = torch.nn.CrossEntropyLoss(weight=weights.to(self.device))
        optimizer = torch.optim.Adam(self.model.parameters(), lr=lr)
        rng = np.random.default_rng(seed)

        for _ in range(epochs):
            for _ in range(chips_per_epoch):
                idx = int(rng.integers(len(images)))
                w, h = images[idx].shape[1:]
                x0 = int(rng.integers(w - chip_size + 1))
                y0 = int(rng.integers(h - chip_size + 1))
                img = images[idx][:, x0:x0 + chip_size, y0:y0 + chip_size]
                lab = labels[idx][x0:x0 + chip_size, y0:y0 + chip_size]
                img, lab = self._augment(rng, img, lab, augmentations)
                xb = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
                yb = torch.from_numpy(np.ascontiguousarray(lab, dtype=np.int64))
                optimizer.zero_grad()
                logits = self.model(xb.unsqueeze(0).to(self.device))
                loss = criterion(logits, yb.unsqueeze(0).to(self.device))
                loss.backward()
                optimizer.step()

    @staticmethod
    def _class_weights(labels: list[np.ndarray], num_classes: int, mode: str):
        import torch

        if mode == "uniform":
            return torch.ones(num_classes)
        counts = np.zeros(num_classes, dtype=np.int64)
        for lab in labels:
            counts += np.bincount(lab.ravel(), minlength=num_classes)
        present = counts > 0
        w = np.zeros(num_classes)
        w[present] = counts.sum() / counts[present]
        w[present] *= present.sum() / w[present].sum()
        return torch.from_numpy(w.astype(np.float32))

    @staticmethod
    def _augment(rng: np.random.Generator, img: np.ndarray, lab: np.ndarray,
                 enabled: set) -> tuple[np.ndarray, np.ndarray]:
        if "rotate90" in enabled:
            k = int(rng.integers(4))
            if k:
                img = np.rot90(img, k, axes=(1, 2))
                lab = np.rot90(lab, k)
        if "flip_h" in enabled and rng.integers(2):
            img, lab = img[:, ::-1, :], lab[::-1, :]
        if "flip_v" in enabled and rng.integers(2):
            img, lab = img[:, :, ::-1], lab[:, ::-1]
        if "blur" in enabled and rng.integers(4) == 0:
            img = _box_blur3(img)
        return img, lab

    def predict(self, image: np.ndarray) -> np.ndarray:
        import torch

        if self.model is None:
            raise RuntimeError("not trained")
        self.model.eval()
        xb = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        with torch.no_grad():
            logits = self.model(xb.unsqueeze(0).to(self.device))
            probs = torch.softmax(logits, dim=1)[0]
        return probs.cpu().numpy().astype(np.float32)


def _box_blur3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for dx in range(3):
        for dy in range(3):
            out += padded[:, dx:dx + img.shape[1], dy:dy + img.shape[2]]
    return (out / 9.0).astype(img.dtype)


def serve(trainer: Trainer, stdin=None, stdout=None) -> None:
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
                trainer.train(images, labels, req.get("config", {}))
                respond({"op": "ok", "id": req_id})
            elif op == "predict":
                probs = trainer.predict(decode_tensor(req["image"]))
                respond({"op": "ok", "id": req_id, "probs": encode_tensor(probs)})
            elif op == "shutdown":
                respond({"op": "ok", "id": req_id})
                return
            else:
                respond({"op": "error", "id": req_id, "message": f"unknown op {op!r}"})
        except Exception as exc:
            respond({"op": "error", "id": req_id, "message": f"{type(exc).__name__}: {exc}"})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="alref-sidecar", description=__doc__)
    parser.add_argument("--pretrained", action="store_true",
                        help="load ImageNet backbone weights (needs network/cache); "
                             "default is random initialisation so the server runs offline")
    args = parser.parse_args(argv)
    serve(Trainer(pretrained=args.pretrained))
    return 0


if __name__ == "__main__":
    sys.exit(main())
