"""Raw DEFLATE (RFC 1951) compress/decompress with backend selection.

The compiled ``_native`` core is used when it was built; otherwise the
pure-Python twin. ``VOLDEPTH_BACKEND=python`` forces the fallback. Both
backends emit identical bytes for identical input.
"""

from __future__ import annotations

import importlib
import logging
import os
from types import ModuleType

from voldepth import _deflate_py
from voldepth.errors import DeflateError, ParameterError

__all__ = ["BACKEND", "DeflateError", "available_backends", "compress", "decompress", "get_backend", "use_backend"]

log = logging.getLogger(__name__)


def _load_native() -> ModuleType | None:
    try:
        return importlib.import_module("voldepth._native")
    except ImportError:
        return None


_native = _load_native()


def available_backends() -> list[str]:
    return (["native"] if _native is not None else []) + ["python"]


def get_backend(name: str) -> ModuleType:
    """Module exposing ``compress(bytes)`` and ``decompress(bytes)``."""
    if name == "python":
        return _deflate_py
    if name == "native":
        if _native is None:
            raise ImportError("voldepth._native is not built")
        return _native
    raise ValueError(f"unknown DEFLATE backend {name!r}")


def _select() -> str:
    wanted = os.environ.get("VOLDEPTH_BACKEND", "").strip().lower()
    if wanted in ("python", "native"):
        if wanted == "native" and _native is None:
            log.warning("VOLDEPTH_BACKEND=native but the extension is not built; using python")
            return "python"
        return wanted
    return "native" if _native is not None else "python"


BACKEND = _select()
_impl = get_backend(BACKEND)


def use_backend(name: str) -> str:
    """Switch the process-wide backend; returns the previous name."""
    global BACKEND, _impl
    try:
        impl = get_backend(name)
    except (ImportError, ValueError) as exc:
        raise ParameterError(str(exc)) from exc
    previous, BACKEND, _impl = BACKEND, name, impl
    return previous


def _as_bytes(data) -> bytes:
    if isinstance(data, bytes):
        return data
    return bytes(memoryview(data).cast("B"))


def compress(data) -> bytes:
    """Compress any bytes-like object into a raw DEFLATE stream."""
    return _impl.compress(_as_bytes(data))


def decompress(data) -> bytes:
    """Inflate a raw DEFLATE stream.

    Raises:
        DeflateError: the stream is malformed, truncated, or followed by
            trailing bytes.
    """
    return _impl.decompress(_as_bytes(data))
