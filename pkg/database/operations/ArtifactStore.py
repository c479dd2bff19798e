import os
from typing import Dict

from database.checkpoint.CheckpointHandler import CheckpointHandler
from database.dataset.DatasetHandler import DatasetHandler
from database.reports.ReportsHandler import ReportsHandler
from database.operations.BaseArtifactHandler import BaseArtifactHandler
from logs.logger import get_logger

logger = get_logger(__name__)

HEATMAP_DIRECTORY = "heatmaps"


class ArtifactStore:
    """
    Facade over one run's output directory.

    Layout: data/, checkpoints/, reports/, heatmaps/. Each area is served by a
    handler; all of them write atomically and verify what they wrote.
    """

    def __init__(self, root: str):
        """
        Args:
            root: Output directory (created on demand)
        """
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)
        self._initHandlers()

    def _initHandlers(self) -> None:
        self._handlers: Dict[str, BaseArtifactHandler] = {
            "checkpoints": CheckpointHandler(self.root),
            "reports": ReportsHandler(self.root),
            "dataset": DatasetHandler(self.root),
            "heatmaps": BaseArtifactHandler(self.root),
        }
        self.checkpoints: CheckpointHandler = self._handlers["checkpoints"]
        self.reports: ReportsHandler = self._handlers["reports"]
        self.dataset: DatasetHandler = self._handlers["dataset"]
        self.heatmaps: BaseArtifactHandler = self._handlers["heatmaps"]

    def writeHeatmap(self, filename: str, data: bytes) -> str:
        return self.heatmaps.writeAtomic(f"{HEATMAP_DIRECTORY}/{filename}", data)

    def child(self, name: str) -> "ArtifactStore":
        """Store rooted at a subdirectory (per-seed runs)"""
        return ArtifactStore(os.path.join(self.root, name))

    def __repr__(self) -> str:
        return f"ArtifactStore(root={self.root})"
