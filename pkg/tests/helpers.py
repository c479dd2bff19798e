import numpy as np

from database.dataset.DatasetHandler import DatasetSample
from framework.tensorframework.Tensor import Tape, Tensor, backward
from parsers.ManifestParser import LABEL_ANOMALOUS, LABEL_NORMAL, ManifestEntry

TINY_SIZE = 16
TINY_HIDDEN = [4, 4, 4]
TINY_CHANNELS = 2


def numericGradient(fn, array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array"""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gradFlat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        up = fn(array)
        flat[i] = saved - eps
        down = fn(array)
        flat[i] = saved
        gradFlat[i] = (up - down) / (2 * eps)
    return grad


def analyticGradient(build, array: np.ndarray) -> np.ndarray:
    x = Tensor(array.copy(), requiresgrad=True)
    with Tape() as tape:
        loss = build(x)
    backward(loss, tape)
    return x.grad


def relativeError(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))


def makeSamples(images: np.ndarray, anomalous=None, split: str = "train"):
    """In-memory dataset samples; anomalous images get a full mask, normal ones an empty one"""
    anomalous = anomalous or [False] * len(images)
    samples = []
    for index, (image, flag) in enumerate(zip(images, anomalous)):
        entry = ManifestEntry(split, f"{split}/{split}_{index:04d}.ppm",
                              LABEL_ANOMALOUS if flag else LABEL_NORMAL, None, index)
        mask = np.full(image.shape[1:], flag, dtype=bool)
        samples.append(DatasetSample(entry=entry, image=image, mask=mask))
    return samples
