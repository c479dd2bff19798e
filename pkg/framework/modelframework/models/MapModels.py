from dataclasses import dataclass

import numpy as np


@dataclass
class AnomalyMap:
    """
    Anomaly maps of one image.

    Attributes:
        local: Teacher / student-head map [h, w]
        globalmap: Autoencoder / student-head map [h, w]
        combined: Elementwise mean of local and global
        resized: combined resized to the input resolution [H, W]
        imagescore: max of resized
    """
    local: np.ndarray
    globalmap: np.ndarray
    combined: np.ndarray
    resized: np.ndarray
    imagescore: float
