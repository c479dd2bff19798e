import io
from typing import List, Optional

import pandas as pd

from database.operations.BaseArtifactHandler import BaseArtifactHandler
from logs.logger import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"


class ReportsHandler(BaseArtifactHandler):
    """Handler for the CSV and text reports under reports/"""

    DIRECTORY = "reports"

    def relativePath(self, filename: str) -> str:
        return f"{self.DIRECTORY}/{filename}"

    def writeFrame(self, filename: str, frame: pd.DataFrame) -> str:
        """
        Write a report table as CSV with 17-significant-digit floats.

        Args:
            filename: File under reports/
            frame: Report rows; column order is preserved

        Returns:
            str: sha256 of the written file
        """
        data = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n").encode("utf-8")
        digest = self.writeAtomic(self.relativePath(filename), data)
        logger.info(f"Wrote report {filename} ({len(frame)} rows)")
        return digest

    def startLog(self, filename: str, columns: List[str]) -> None:
        """Truncate a per-iteration log to its header row"""
        self.writeFrame(filename, pd.DataFrame(columns=columns))

    def appendRow(self, filename: str, columns: List[str], row: List) -> None:
        """Append one row to a log started with startLog"""
        pd.DataFrame([row], columns=columns).to_csv(
            self.path(self.relativePath(filename)), mode="a", header=False, index=False,
            float_format=FLOAT_FORMAT, lineterminator="\n",
        )

    def readFrame(self, filename: str, requiredBy: Optional[str] = None) -> pd.DataFrame:
        data = self.readBytes(self.relativePath(filename), requiredBy=requiredBy)
        return pd.read_csv(io.BytesIO(data))

    def writeText(self, filename: str, text: str) -> str:
        return self.writeAtomic(self.relativePath(filename), text.encode("utf-8"))

    def hasReport(self, filename: str) -> bool:
        return self.exists(self.relativePath(filename))
