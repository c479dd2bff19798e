import hashlib
import os
import tempfile
from typing import Optional

from logs.logger import get_logger
from utils.errors import ArtifactIntegrityError, PipelineOrderError

logger = get_logger(__name__)


class BaseArtifactHandler:
    """
    Base class for all artifact handlers.
    Provides atomic writes with checksum self-verification under one output root.
    """

    def __init__(self, root: str):
        """
        Initializes the handler with the output root.

        Args:
            root: Output directory shared by every handler of one run
        """
        self.root = os.path.abspath(root)

    def path(self, relativePath: str) -> str:
        return os.path.join(self.root, relativePath)

    def exists(self, relativePath: str) -> bool:
        return os.path.isfile(self.path(relativePath))

    @staticmethod
    def sha256(data: bytes) -> str:
        return hashlib.sha256(data).hexdigest()

    def writeAtomic(self, relativePath: str, data: bytes) -> str:
        """
        Write bytes via a temp file + rename, then re-read and verify the checksum.

        Args:
            relativePath: Target path under the root
            data: File contents

        Returns:
            str: sha256 hex digest of the written file

        Raises:
            ArtifactIntegrityError: If the file on disk does not match what was written
        """
        target = self.path(relativePath)
        directory = os.path.dirname(target)
        os.makedirs(directory, exist_ok=True)
        expected = self.sha256(data)
        handle, temporary = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        try:
            with os.fdopen(handle, "wb") as stream:
                stream.write(data)
                stream.flush()
                os.fsync(stream.fileno())
            os.replace(temporary, target)
        except Exception:
            if os.path.exists(temporary):
                os.remove(temporary)
            raise
        actual = self.sha256(self.readBytes(relativePath))
        if actual != expected:
            logger.error(f"Checksum mismatch after writing {relativePath}")
            raise ArtifactIntegrityError(f"{relativePath}: checksum {actual} != {expected}")
        logger.debug(f"Wrote {relativePath} ({len(data)} bytes, sha256 {expected[:12]})")
        return expected

    def readBytes(self, relativePath: str, requiredBy: Optional[str] = None) -> bytes:
        """
        Read an artifact.

        Raises:
            PipelineOrderError: If the file is missing and requiredBy names the consumer
        """
        target = self.path(relativePath)
        if not os.path.isfile(target):
            if requiredBy is not None:
                raise PipelineOrderError(
                    relativePath, f"{requiredBy} requires {relativePath}, which does not exist yet"
                )
            raise FileNotFoundError(target)
        with open(target, "rb") as stream:
            return stream.read()

    def verifyChecksum(self, relativePath: str, expected: str) -> None:
        actual = self.sha256(self.readBytes(relativePath))
        if actual != expected:
            raise ArtifactIntegrityError(f"{relativePath}: checksum {actual} != {expected}")
