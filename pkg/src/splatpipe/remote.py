"""HTTP wire clients for remote edit oracles and embedding providers.

The edit-noise protocol is a single POST with a binary body:

    header: width u32 | height u32 | channels u32 | t f32 | s_T f32 |
            s_I f32 | prompt_len u32   (all little-endian)
    body:   UTF-8 prompt, then z_t and c_I as row-major f32 arrays

The response is the predicted noise as a row-major f32 array of the same
size as z_t. Embedding endpoints reuse the same framing with a zero
timestep and guidance fields.
"""

from __future__ import annotations

import struct

import numpy as np
import requests

from .core import ImageBuffer
from .edit import EditOracle, OracleError

HEADER_FORMAT = "<IIIfffI"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)


def pack_edit_request(
    z_t: np.ndarray, t: float, c_i: np.ndarray, prompt: str, s_text: float, s_image: float
) -> bytes:
    if z_t.shape != c_i.shape:
        raise ValueError(f"latent shape {z_t.shape} != condition shape {c_i.shape}")
    if z_t.ndim != 3:
        raise ValueError("latents must have shape (H, W, C)")
    h, w, c = z_t.shape
    prompt_bytes = prompt.encode("utf-8")
    header = struct.pack(HEADER_FORMAT, w, h, c, t, s_text, s_image, len(prompt_bytes))
    return (
        header
        + prompt_bytes
        + z_t.astype("<f4").tobytes()
        + c_i.astype("<f4").tobytes()
    )


def unpack_edit_request(body: bytes):
    """Server-side decode of an edit-noise request (used by tests and stubs)."""
    if len(body) < HEADER_SIZE:
        raise ValueError("truncated header")
    w, h, c, t, s_text, s_image, plen = struct.unpack(HEADER_FORMAT, body[:HEADER_SIZE])
    off = HEADER_SIZE
    prompt = body[off : off + plen].decode("utf-8")
    off += plen
    n = h * w * c
    arr = np.frombuffer(body, dtype="<f4", offset=off, count=2 * n)
    if arr.size != 2 * n:
        raise ValueError("truncated payload")
    z_t = arr[:n].reshape(h, w, c).astype(np.float64)
    c_i = arr[n:].reshape(h, w, c).astype(np.float64)
    return z_t, float(t), c_i, prompt, float(s_text), float(s_image)


class RemoteOracle(EditOracle):
    """Edit oracle backed by a POST /edit-noise service."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def predict_noise(self, z_t, t, c_i, prompt, s_text, s_image, noise=None):
        z_t = np.asarray(z_t, dtype=np.float64)
        c_i = np.asarray(c_i, dtype=np.float64)
        body = pack_edit_request(z_t, t, c_i, prompt, s_text, s_image)
        try:
            resp = requests.post(
                f"{self.url}/edit-noise",
                data=body,
                headers={"Content-Type": "application/octet-stream"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise OracleError(f"edit-noise request failed: {exc}") from exc
        expected = z_t.size
        eps_hat = np.frombuffer(resp.content, dtype="<f4")
        if eps_hat.size != expected:
            raise OracleError(
                f"edit-noise reply has {eps_hat.size} floats, expected {expected}"
            )
        return eps_hat.reshape(z_t.shape).astype(np.float64)


class RemoteEmbeddingProvider:
    """Embedding provider speaking the same wire framing as the edit oracle.

    POST /embed-image sends an RGB image as an edit-noise body with zeroed
    timestep/guidance and an empty prompt; POST /embed-text sends a zero
    1x1x1 latent with the text in the prompt field. Both return f32 vectors.
    """

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def _post(self, endpoint: str, body: bytes) -> np.ndarray:
        try:
            resp = requests.post(
                f"{self.url}/{endpoint}",
                data=body,
                headers={"Content-Type": "application/octet-stream"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise OracleError(f"{endpoint} request failed: {exc}") from exc
        vec = np.frombuffer(resp.content, dtype="<f4").astype(np.float64)
        if vec.size == 0 or not np.all(np.isfinite(vec)):
            raise OracleError(f"{endpoint} returned an invalid embedding")
        return vec

    def embed_image(self, image: ImageBuffer) -> np.ndarray:
        rgb = image.rgb()
        body = pack_edit_request(rgb, 0.0, np.zeros_like(rgb), "", 0.0, 0.0)
        return self._post("embed-image", body)

    def embed_text(self, text: str) -> np.ndarray:
        z = np.zeros((1, 1, 1))
        body = pack_edit_request(z, 0.0, z, text, 0.0, 0.0)
        return self._post("embed-text", body)
