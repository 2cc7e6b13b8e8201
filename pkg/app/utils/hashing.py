import hashlib
from pathlib import Path

CHUNK_SIZE = 1 << 20


def file_checksum(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(CHUNK_SIZE), b""):
            digest.update(chunk)
    return digest.hexdigest()


def checksums(paths) -> dict[str, str]:
    return {str(path): file_checksum(path) for path in sorted(map(str, paths))}
