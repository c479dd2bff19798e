from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from database.operations.BaseArtifactHandler import BaseArtifactHandler
from logs.logger import get_logger
from parsers.ImageParser import loadImage, loadMask
from parsers.ManifestParser import (
    ManifestEntry,
    encodeChecksums,
    encodeManifest,
    parseChecksums,
    parseManifest,
)

logger = get_logger(__name__)

MANIFEST = "manifest.csv"
CHECKSUMS = "manifest.sha256"
VARIABLE_MASK = "variable_mask.pgm"


@dataclass
class DatasetSample:
    """A manifest entry with its decoded image [3, H, W] and mask [H, W]"""
    entry: ManifestEntry
    image: np.ndarray
    mask: np.ndarray

    @property
    def anomalous(self) -> bool:
        return self.entry.anomalous


class DatasetHandler(BaseArtifactHandler):
    """Handler for the synthetic dataset under data/"""

    DIRECTORY = "data"

    def relativePath(self, filename: str) -> str:
        return f"{self.DIRECTORY}/{filename}"

    def writeDataset(self, files: Dict[str, bytes], entries: List[ManifestEntry]) -> Dict[str, str]:
        """
        Write images, masks, the manifest and its checksum file.

        Args:
            files: Encoded files keyed by path relative to data/
            entries: Manifest rows

        Returns:
            Dict[str, str]: sha256 per written file
        """
        checksums = {}
        for relative in sorted(files):
            checksums[relative] = self.writeAtomic(self.relativePath(relative), files[relative])
        checksums[MANIFEST] = self.writeAtomic(self.relativePath(MANIFEST), encodeManifest(entries))
        self.writeAtomic(self.relativePath(CHECKSUMS), encodeChecksums(checksums))
        logger.info(f"Wrote dataset: {len(entries)} manifest entries, {len(checksums)} checksummed files")
        return checksums

    def verifyDataset(self) -> None:
        """Re-hash every file listed in the checksum file"""
        checksums = parseChecksums(self.readBytes(self.relativePath(CHECKSUMS)))
        for relative, digest in checksums.items():
            self.verifyChecksum(self.relativePath(relative), digest)

    def loadManifest(self, requiredBy: Optional[str] = None) -> List[ManifestEntry]:
        return parseManifest(self.readBytes(self.relativePath(MANIFEST), requiredBy=requiredBy))

    def loadSamples(self, split: Optional[str] = None, requiredBy: Optional[str] = None) -> List[DatasetSample]:
        """
        Decode the images (and masks) of one split, in manifest order.

        Args:
            split: "train" or "test"; None loads everything
            requiredBy: Command name used in the ordering error when the manifest is missing

        Returns:
            List[DatasetSample]: Samples; normal images get an all-false mask
        """
        samples = []
        for entry in self.loadManifest(requiredBy=requiredBy):
            if split is not None and entry.split != split:
                continue
            image = loadImage(self.path(self.relativePath(entry.path))).data
            if entry.maskpath is not None:
                mask = loadMask(self.path(self.relativePath(entry.maskpath)))
            else:
                mask = np.zeros(image.shape[1:], dtype=bool)
            samples.append(DatasetSample(entry=entry, image=image, mask=mask))
        logger.debug(f"Loaded {len(samples)} samples (split={split})")
        return samples

    def loadVariableMask(self, requiredBy: Optional[str] = None) -> np.ndarray:
        self.readBytes(self.relativePath(VARIABLE_MASK), requiredBy=requiredBy)
        return loadMask(self.path(self.relativePath(VARIABLE_MASK)))
