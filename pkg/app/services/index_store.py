"""Persistence of sampling indices: single files and a directory-backed store."""

import json
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Union

from app.config import get_settings
from app.errors import IndexFormatError
from app.log import get_logger
from app.schemas import IndexMetadata
from app.services.lss import LssIndex

logger = get_logger("index_store")

PathLike = Union[str, Path]


def persist_index(index: LssIndex, path: PathLike) -> int:
    """Write an index blob; returns the number of bytes written."""
    blob = index.to_bytes()
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(blob)
    logger.info("index_persisted", path=str(target), size=len(blob))
    return len(blob)


def load_index(path: PathLike) -> LssIndex:
    """Read an index blob written by `persist_index`.

    Raises:
        IndexVersionError: written by an unsupported version
        IndexFormatError: missing, truncated or corrupt file
    """
    source = Path(path)
    try:
        blob = source.read_bytes()
    except OSError as e:
        raise IndexFormatError(f"cannot read index {source}: {e}") from e
    return LssIndex.from_bytes(blob)


class IndexStore:
    """Named indices under one directory, each with a JSON metadata sidecar."""

    def __init__(self, store_dir: Optional[str] = None):
        """Initialize the store.

        Args:
            store_dir: Directory holding the indices (defaults to settings.index_dir)
        """
        self.store_dir = Path(store_dir or get_settings().index_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)

    def _get_index_path(self, name: str) -> Path:
        safe_name = name.replace("/", "_").replace(":", "_")
        return self.store_dir / f"{safe_name}.lss"

    def _get_metadata_path(self, name: str) -> Path:
        safe_name = name.replace("/", "_").replace(":", "_")
        return self.store_dir / f"{safe_name}_meta.json"

    def save(self, name: str, index: LssIndex) -> IndexMetadata:
        """Persist an index under `name`, replacing any earlier entry.

        Returns:
            Metadata written next to the blob
        """
        index_path = self._get_index_path(name)
        size = persist_index(index, index_path)
        metadata = IndexMetadata(
            name=name,
            created_at=datetime.now().isoformat(),
            seed=index.seed,
            dim=index.dim,
            n=index.plan.n,
            levels=len(index.levels),
            slots=index.slots,
            size_bytes=size,
        )
        self._get_metadata_path(name).write_text(metadata.model_dump_json(indent=2))
        return metadata

    def load(self, name: str) -> LssIndex:
        """Load the index stored under `name`.

        Raises:
            IndexFormatError: no such entry or corrupt blob
        """
        return load_index(self._get_index_path(name))

    def exists(self, name: str) -> bool:
        return self._get_index_path(name).exists()

    def list_indices(self) -> List[IndexMetadata]:
        """Metadata for every stored index, newest first."""
        entries: List[IndexMetadata] = []
        for meta_file in self.store_dir.glob("*_meta.json"):
            try:
                metadata = IndexMetadata.model_validate(json.loads(meta_file.read_text()))
            except (json.JSONDecodeError, ValueError, OSError):
                logger.warning("index_metadata_unreadable", path=str(meta_file))
                continue
            metadata.path = str(self._get_index_path(metadata.name))
            entries.append(metadata)
        entries.sort(key=lambda entry: entry.created_at, reverse=True)
        return entries

    def delete(self, name: str) -> bool:
        """Delete an index and its metadata; returns False when absent."""
        index_path = self._get_index_path(name)
        meta_path = self._get_metadata_path(name)
        deleted = index_path.exists()
        index_path.unlink(missing_ok=True)
        meta_path.unlink(missing_ok=True)
        return deleted

    def total_size(self) -> int:
        """Bytes held by stored index blobs."""
        return sum(path.stat().st_size for path in self.store_dir.glob("*.lss"))
