"""Parser for dataset manifests and their checksum files"""

import io
from dataclasses import dataclass
from typing import Dict, List, Optional

import pandas as pd

from logs.logger import get_logger
from utils.errors import ParseError

logger = get_logger(__name__)

MANIFEST_COLUMNS = ["split", "path", "label", "mask_path_or_dash", "subseed"]
LABEL_NORMAL = "normal"
LABEL_ANOMALOUS = "anomalous"


@dataclass
class ManifestEntry:
    """One image of the dataset; paths are relative to the data directory"""
    split: str
    path: str
    label: str
    maskpath: Optional[str]
    subseed: int

    @property
    def anomalous(self) -> bool:
        return self.label == LABEL_ANOMALOUS


def encodeManifest(entries: List[ManifestEntry]) -> bytes:
    frame = pd.DataFrame(
        [[e.split, e.path, e.label, e.maskpath or "-", str(e.subseed)] for e in entries],
        columns=MANIFEST_COLUMNS,
    )
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def parseManifest(data: bytes) -> List[ManifestEntry]:
    """
    Parse manifest CSV bytes.

    Raises:
        ParseError: Wrong header, unknown label or bad subseed
    """
    header = data.split(b"\n", 1)[0].decode("utf-8", errors="replace").strip()
    if header.split(",") != MANIFEST_COLUMNS:
        raise ParseError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}, got {header!r}", 0)
    frame = pd.read_csv(io.BytesIO(data), dtype=str, keep_default_na=False)
    entries = []
    lineOffsets = _lineOffsets(data)
    for row, record in enumerate(frame.itertuples(index=False)):
        offset = lineOffsets[row + 1] if row + 1 < len(lineOffsets) else len(data)
        if record.label not in (LABEL_NORMAL, LABEL_ANOMALOUS):
            raise ParseError(f"unknown label {record.label!r}", offset)
        if not record.subseed.isdigit():
            raise ParseError(f"subseed {record.subseed!r} is not an unsigned integer", offset)
        maskPath = None if record.mask_path_or_dash == "-" else record.mask_path_or_dash
        if record.label == LABEL_ANOMALOUS and maskPath is None:
            raise ParseError("anomalous entry without a mask", offset)
        entries.append(ManifestEntry(record.split, record.path, record.label, maskPath, int(record.subseed)))
    return entries


def _lineOffsets(data: bytes) -> List[int]:
    offsets = [0]
    for index, byte in enumerate(data):
        if byte == 0x0A and index + 1 < len(data):
            offsets.append(index + 1)
    return offsets


def encodeChecksums(checksums: Dict[str, str]) -> bytes:
    """sha256sum-style lines: '<hex>  <relative path>'"""
    return "".join(f"{digest}  {path}\n" for path, digest in sorted(checksums.items())).encode("utf-8")


def parseChecksums(data: bytes) -> Dict[str, str]:
    checksums = {}
    offset = 0
    for line in data.decode("utf-8").splitlines(keepends=True):
        stripped = line.rstrip("\n")
        if stripped:
            parts = stripped.split("  ", 1)
            if len(parts) != 2 or len(parts[0]) != 64:
                raise ParseError("malformed checksum line", offset)
            checksums[parts[1]] = parts[0]
        offset += len(line.encode("utf-8"))
    return checksums
