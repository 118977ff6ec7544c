#!/usr/bin/env python3
"""
Content-addressed blob store for model files.

Blobs are keyed by their SHA-256 digest, so writes are idempotent and a reader
can check that the bytes it got back are the bytes the key names.
"""

import logging
import os
import tempfile
import threading
from typing import Dict, Iterator, Optional

from .encoding import Hash32, digest
from .errors import StoreError

logger = logging.getLogger(__name__)


class ContentKey(Hash32):
    """Digest of a blob"""


def content_key(blob: bytes) -> ContentKey:
    return ContentKey(digest(bytes(blob)))


def verify(key: bytes, blob: Optional[bytes]) -> bool:
    if blob is None or len(key) != ContentKey.SIZE:
        return False
    return digest(bytes(blob)) == bytes(key)


class BlobStore:
    """Common interface of the in-memory and on-disk stores"""

    def put(self, blob: bytes) -> ContentKey:
        raise NotImplementedError

    def get(self, key: bytes) -> Optional[bytes]:
        raise NotImplementedError

    def keys(self) -> Iterator[ContentKey]:
        raise NotImplementedError

    def purge(self) -> None:
        raise NotImplementedError

    def verify(self, key: bytes, blob: Optional[bytes]) -> bool:
        return verify(key, blob)

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def __len__(self) -> int:
        return sum(1 for _ in self.keys())


class MemoryBlobStore(BlobStore):
    def __init__(self):
        self._blobs: Dict[ContentKey, bytes] = {}
        self._lock = threading.Lock()

    def put(self, blob: bytes) -> ContentKey:
        key = content_key(blob)
        with self._lock:
            self._blobs.setdefault(key, bytes(blob))
        return key

    def get(self, key: bytes) -> Optional[bytes]:
        with self._lock:
            return self._blobs.get(bytes(key))

    def keys(self) -> Iterator[ContentKey]:
        with self._lock:
            return iter(list(self._blobs))

    def purge(self) -> None:
        with self._lock:
            self._blobs.clear()

    def __len__(self) -> int:
        return len(self._blobs)


class DirectoryBlobStore(BlobStore):
    """Layout: <root>/<first 2 hex>/<64 hex> holding the raw blob bytes"""

    def __init__(self, root: str):
        self.root = root
        try:
            os.makedirs(root, exist_ok=True)
        except OSError as e:
            raise StoreError(f"Cannot create store root {root}: {e}")

    def path_for(self, key: bytes) -> str:
        name = bytes(key).hex()
        return os.path.join(self.root, name[:2], name)

    def put(self, blob: bytes) -> ContentKey:
        key = content_key(blob)
        path = self.path_for(key)
        if os.path.exists(path):
            return key
        try:
            os.makedirs(os.path.dirname(path), exist_ok=True)
            fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as f:
                    f.write(blob)
                os.replace(tmp_path, path)
            except BaseException:
                if os.path.exists(tmp_path):
                    os.unlink(tmp_path)
                raise
        except OSError as e:
            raise StoreError(f"Cannot store blob {key.hex0x()}: {e}")
        logger.debug("Stored blob %s (%d bytes)", key.hex0x(), len(blob))
        return key

    def get(self, key: bytes) -> Optional[bytes]:
        if len(key) != ContentKey.SIZE:
            return None
        try:
            with open(self.path_for(key), "rb") as f:
                return f.read()
        except FileNotFoundError:
            return None
        except OSError as e:
            raise StoreError(f"Cannot read blob {bytes(key).hex()}: {e}")

    def __contains__(self, key: bytes) -> bool:
        return len(key) == ContentKey.SIZE and os.path.exists(self.path_for(key))

    def keys(self) -> Iterator[ContentKey]:
        for prefix in sorted(os.listdir(self.root)):
            subdir = os.path.join(self.root, prefix)
            if len(prefix) != 2 or not os.path.isdir(subdir):
                continue
            for name in sorted(os.listdir(subdir)):
                if len(name) == 64 and name.startswith(prefix):
                    yield ContentKey(bytes.fromhex(name))

    def purge(self) -> None:
        for key in list(self.keys()):
            os.unlink(self.path_for(key))


def open_store(root: Optional[str]) -> BlobStore:
    """Directory store at root, or an in-memory store when root is None"""
    return DirectoryBlobStore(root) if root else MemoryBlobStore()
