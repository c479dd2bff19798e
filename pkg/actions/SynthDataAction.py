"""
Deterministic synthetic benchmark: an invariant textured disk on a strongly
jittered background, with defects injected only into the disk
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.Config import get_config
from config.PipelineConfig import DEFECT_KINDS, DataConfig
from database.operations.ArtifactStore import ArtifactStore
from framework.tensorframework.Random import generator, subSeed
from logs.logger import get_logger
from parsers.ImageParser import encodePgm, encodePpm, toUint8
from parsers.ManifestParser import LABEL_ANOMALOUS, LABEL_NORMAL, ManifestEntry
from utils.errors import SpecError

logger = get_logger(__name__)

OBJECT_RADIUS_FRACTION = 0.3
CHECKER_PERIOD = 4
OBJECT_COLOUR = (0.62, 0.55, 0.45)
CHECKER_CONTRAST = 0.12
BACKGROUND_CYCLES = 3.0
NOISE_SIGMA = 0.01
HOLE_LEVEL = 0.05
SCRATCH_LEVEL = 0.1


@dataclass
class SceneSpec:
    """
    Normal-image scene: a fixed checkered disk on a sinusoidal background whose
    phase, orientation, amplitude and brightness change per image.
    """
    imagesize: int
    radiusfraction: float = OBJECT_RADIUS_FRACTION
    checkerperiod: int = CHECKER_PERIOD
    noisesigma: float = NOISE_SIGMA

    @property
    def radius(self) -> float:
        return self.radiusfraction * self.imagesize

    @property
    def centre(self) -> float:
        return (self.imagesize - 1) / 2.0

    def objectMask(self) -> np.ndarray:
        rows, cols = np.mgrid[0:self.imagesize, 0:self.imagesize]
        return (rows - self.centre) ** 2 + (cols - self.centre) ** 2 <= self.radius ** 2

    def variableMask(self) -> np.ndarray:
        return ~self.objectMask()


@dataclass
class DefectSpec:
    """Defect kinds and the side length / diameter range in pixels"""
    kinds: List[str] = field(default_factory=lambda: list(DEFECT_KINDS))
    minsize: int = 3
    maxsize: int = 8

    def validate(self, scene: SceneSpec) -> None:
        if not self.kinds or any(kind not in DEFECT_KINDS for kind in self.kinds):
            raise SpecError(f"defect kinds must come from {list(DEFECT_KINDS)}, got {self.kinds}")
        if not 1 <= self.minsize <= self.maxsize:
            raise SpecError(f"invalid defect size range [{self.minsize}, {self.maxsize}]")
        if self.maxsize * np.sqrt(2.0) / 2.0 >= scene.radius:
            raise SpecError(
                f"defects up to {self.maxsize}px do not fit inside the invariant disk of radius {scene.radius:.2f}px"
            )


@dataclass
class GeneratedImage:
    image: np.ndarray
    mask: Optional[np.ndarray] = None
    kind: Optional[str] = None


def renderNormal(scene: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Render one normal image [3, H, W] in [0, 1].

    Args:
        scene: Scene geometry
        rng: Per-image stream

    Returns:
        np.ndarray: Image before 8-bit quantization
    """
    size = scene.imagesize
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)

    phase = rng.uniform(0.0, 2.0 * np.pi)
    angle = rng.uniform(0.0, np.pi)
    amplitude = rng.uniform(0.1, 0.3)
    offset = rng.uniform(-0.2, 0.2)
    tint = rng.uniform(-0.05, 0.05, size=3)
    frequency = 2.0 * np.pi * BACKGROUND_CYCLES / size
    wave = np.sin(frequency * (rows * np.sin(angle) + cols * np.cos(angle)) + phase)
    background = 0.5 + offset + amplitude * wave
    image = np.stack([background + tint[c] for c in range(3)])

    checker = ((rows // scene.checkerperiod + cols // scene.checkerperiod) % 2) * 2.0 - 1.0
    objectPixels = np.stack([colour + CHECKER_CONTRAST * checker for colour in OBJECT_COLOUR])
    disk = scene.objectMask()
    image[:, disk] = objectPixels[:, disk]

    image = image + rng.normal(0.0, scene.noisesigma, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def _defectCentre(scene: SceneSpec, size: int, rng: np.random.Generator) -> Tuple[int, int]:
    reach = max(0.0, scene.radius - size * np.sqrt(2.0) / 2.0 - 1.0)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    distance = reach * np.sqrt(rng.uniform(0.0, 1.0))
    return (
        int(np.rint(scene.centre + distance * np.sin(angle))),
        int(np.rint(scene.centre + distance * np.cos(angle))),
    )


def defectFootprint(scene: SceneSpec, kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Binary footprint of one defect inside the invariant disk"""
    cy, cx = _defectCentre(scene, size, rng)
    mask = np.zeros((scene.imagesize, scene.imagesize), dtype=bool)
    if kind == "patch":
        top, left = cy - size // 2, cx - size // 2
        mask[top:top + size, left:left + size] = True
    elif kind == "hole":
        rows, cols = np.mgrid[0:scene.imagesize, 0:scene.imagesize]
        mask[(rows - cy) ** 2 + (cols - cx) ** 2 <= (size / 2.0) ** 2] = True
    elif kind == "scratch":
        angle = rng.uniform(0.0, np.pi)
        steps = np.linspace(-size / 2.0, size / 2.0, 2 * size + 1)
        mask[np.rint(cy + steps * np.sin(angle)).astype(int), np.rint(cx + steps * np.cos(angle)).astype(int)] = True
    else:
        raise SpecError(f"unknown defect kind {kind!r}")
    mask[cy, cx] = True
    return mask


def injectDefect(
    base: np.ndarray,
    scene: SceneSpec,
    defects: DefectSpec,
    rng: np.random.Generator,
) -> GeneratedImage:
    """
    Copy a normal image and alter it inside one defect footprint only.

    Patches invert the local texture, holes go dark, scratches become a thin dark line.
    """
    kind = defects.kinds[int(rng.integers(0, len(defects.kinds)))]
    size = int(rng.integers(defects.minsize, defects.maxsize + 1))
    mask = defectFootprint(scene, kind, size, rng)
    if np.any(mask & scene.variableMask()):
        raise SpecError(f"{kind} defect of size {size} leaves the invariant region")

    image = base.copy()
    if kind == "patch":
        image[:, mask] = 1.0 - base[:, mask]
    elif kind == "hole":
        image[:, mask] = HOLE_LEVEL
    else:
        image[:, mask] = SCRATCH_LEVEL
    return GeneratedImage(image=image, mask=mask, kind=kind)


def varianceRatio(images: Sequence[np.ndarray], scene: SceneSpec) -> float:
    """Mean across-image pixel variance in the variable region over that of the invariant region"""
    stack = np.stack(images)
    variance = stack.var(axis=0).mean(axis=0)
    inside = variance[scene.objectMask()].mean()
    outside = variance[scene.variableMask()].mean()
    return float("inf") if inside == 0 else float(outside / inside)


@dataclass
class GeneratedDataset:
    files: Dict[str, bytes]
    entries: List[ManifestEntry]
    varianceratio: float


def generateSplit(cfg: DataConfig, seed: int, workers: int = 1) -> GeneratedDataset:
    """
    Render the train and test splits as encoded files plus manifest rows.

    Train images are normal; the test split lists its normal images first, then the
    anomalous ones, each anomalous image built from its own normal base.

    Args:
        cfg: Counts, image size and defect settings
        seed: Dataset seed
        workers: Render threads

    Returns:
        GeneratedDataset: Files keyed by path relative to data/, manifest entries, variance ratio
    """
    scene = SceneSpec(imagesize=cfg.imagesize)
    defects = DefectSpec(kinds=list(cfg.defectkinds), minsize=cfg.defectminsize, maxsize=cfg.defectmaxsize)
    if cfg.ntestanomalous > 0:
        defects.validate(scene)

    def renderTrain(index: int) -> GeneratedImage:
        return GeneratedImage(image=renderNormal(scene, generator(seed, "synth.train", index)))

    def renderTest(index: int) -> GeneratedImage:
        base = renderNormal(scene, generator(seed, "synth.test", index))
        if index < cfg.ntestnormal:
            return GeneratedImage(image=base)
        return injectDefect(base, scene, defects, generator(seed, "synth.defect", index))

    testCount = cfg.ntestnormal + cfg.ntestanomalous
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        train = list(pool.map(renderTrain, range(cfg.ntrain)))
        test = list(pool.map(renderTest, range(testCount)))

    ratio = varianceRatio([g.image for g in train], scene) if len(train) >= 2 else float("inf")
    if ratio < cfg.varianceratio:
        raise SpecError(f"variable/invariant variance ratio {ratio:.2f} below the required {cfg.varianceratio}")

    files: Dict[str, bytes] = {"variable_mask.pgm": encodePgm(scene.variableMask().astype(np.uint8) * 255)}
    entries: List[ManifestEntry] = []
    for index, generated in enumerate(train):
        path = f"train/train_{index:04d}.ppm"
        files[path] = encodePpm(toUint8(generated.image).transpose(1, 2, 0))
        entries.append(ManifestEntry("train", path, LABEL_NORMAL, None, subSeed(seed, "synth.train", index)))
    for index, generated in enumerate(test):
        path = f"test/test_{index:04d}.ppm"
        files[path] = encodePpm(toUint8(generated.image).transpose(1, 2, 0))
        maskPath = None
        if generated.mask is not None:
            maskPath = f"masks/test_{index:04d}_mask.pgm"
            files[maskPath] = encodePgm(generated.mask.astype(np.uint8) * 255)
        label = LABEL_ANOMALOUS if generated.mask is not None else LABEL_NORMAL
        entries.append(ManifestEntry("test", path, label, maskPath, subSeed(seed, "synth.test", index)))
    return GeneratedDataset(files=files, entries=entries, varianceratio=ratio)


class SynthDataAction:
    """Generates the synthetic dataset into an artifact store"""

    def __init__(self, store: ArtifactStore):
        self.store = store
        self.config = get_config()

    def generate(self, cfg: DataConfig, seed: int) -> GeneratedDataset:
        dataset = generateSplit(cfg, seed, self.config.RAAD_THREADS)
        self.store.dataset.writeDataset(dataset.files, dataset.entries)
        anomalous = sum(1 for e in dataset.entries if e.anomalous)
        logger.info(
            f"Generated {cfg.ntrain} train / {cfg.ntestnormal} normal + {anomalous} anomalous test images "
            f"({cfg.imagesize}x{cfg.imagesize}, seed {seed}), variance ratio {dataset.varianceratio:.1f}"
        )
        return dataset
