"""Synthetic 4-modality phantoms with nested ellipsoidal tumour regions."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .sampler import MODALITIES

# Mean intensity per class (rows: background, normal, edema, NCR/NET, enhancing)
# and modality (FLAIR, T1, T1c, T2).
DEFAULT_MEANS = (
    (0.0, 0.0, 0.0, 0.0),
    (1.0, 1.0, 1.0, 1.0),
    (2.4, 0.8, 1.0, 2.4),
    (1.6, 0.4, 0.5, 1.8),
    (1.8, 1.0, 2.6, 1.4),
)


@dataclass
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]

    def mask(self, shape) -> np.ndarray:
        grids = np.ogrid[tuple(slice(0, n) for n in shape)]
        d = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, self.center, self.radii))
        return d <= 1.0

    def within(self, shape) -> bool:
        return all(c - r >= 0 and c + r <= n - 1 for c, r, n in zip(self.center, self.radii, shape))


@dataclass
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 32)
    brain: Ellipsoid = field(default_factory=lambda: Ellipsoid((31.5, 31.5, 15.5), (28.0, 26.0, 13.0)))
    edema: Ellipsoid = field(default_factory=lambda: Ellipsoid((36.0, 30.0, 16.0), (12.0, 10.0, 6.0)))
    core: Ellipsoid = field(default_factory=lambda: Ellipsoid((36.0, 30.0, 16.0), (7.0, 6.0, 4.0)))
    enhancing: Ellipsoid | None = field(default_factory=lambda: Ellipsoid((36.0, 30.0, 16.0), (4.0, 3.5, 2.5)))
    means: tuple = DEFAULT_MEANS
    noise_sigma: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        for name in ("brain", "edema", "core", "enhancing"):
            ell = getattr(self, name)
            if ell is not None and not ell.within(self.shape):
                raise ValueError(f"{name} ellipsoid {ell} exceeds volume bounds {self.shape}")
        means = np.asarray(self.means, dtype=float)
        if means.shape != (5, len(MODALITIES)):
            raise ValueError(f"means must be 5x{len(MODALITIES)}, got {means.shape}")
        d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        gap = d[np.triu_indices(5, 1)].min()
        if gap < 2 * self.noise_sigma:
            raise ValueError(f"class means only {gap:.3f} apart; need >= 2*sigma = {2 * self.noise_sigma:.3f}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PhantomSpec":
        data = dict(data)
        for name in ("brain", "edema", "core", "enhancing"):
            if data.get(name) is not None:
                data[name] = Ellipsoid(tuple(data[name]["center"]), tuple(data[name]["radii"]))
        if "shape" in data:
            data["shape"] = tuple(data["shape"])
        if "means" in data:
            data["means"] = tuple(tuple(row) for row in data["means"])
        return cls(**data)


def generate(spec: PhantomSpec, rng: np.random.Generator | None = None):
    """Render a phantom: ``(intensities [W,H,L,4] f32, labels [W,H,L] u8, brain mask)``.

    Regions are painted outward-in, then clipped to the brain, so the label
    nesting enhancing <= core <= complete holds by construction. Noise is only
    added inside the brain; outside voxels stay exactly zero.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    brain = spec.brain.mask(spec.shape)
    labels = np.zeros(spec.shape, dtype=np.uint8)
    labels[brain] = 1
    labels[spec.edema.mask(spec.shape) & brain] = 2
    labels[spec.core.mask(spec.shape) & brain] = 3
    if spec.enhancing is not None:
        labels[spec.enhancing.mask(spec.shape) & brain] = 4
    means = np.asarray(spec.means, dtype=np.float32)
    intensities = means[labels]
    noise = rng.normal(0.0, spec.noise_sigma, size=intensities.shape).astype(np.float32)
    intensities = intensities + noise * brain[..., None]
    # keep brain voxels distinguishable from the zero background
    intensities[brain] = np.where(intensities[brain] == 0, 1e-3, intensities[brain])
    return intensities.astype(np.float32), labels, brain


def random_spec(rng: np.random.Generator, shape=(64, 64, 32), enhancing: bool = True,
                noise_sigma: float = 0.15) -> PhantomSpec:
    """Draw a spec with a randomly placed and sized tumour inside the brain."""
    shape = tuple(shape)
    center = np.array(shape, dtype=float) / 2 - 0.5
    brain_r = np.array(shape, dtype=float) * np.array([0.44, 0.41, 0.41])
    brain = Ellipsoid(tuple(center), tuple(brain_r))
    edema_r = brain_r * rng.uniform(0.35, 0.5, size=3)
    # keep the tumour inside the brain ellipsoid with some margin
    span = (brain_r - edema_r) * 0.55
    tc = center + rng.uniform(-1, 1, size=3) * span
    core_r = edema_r * rng.uniform(0.6, 0.75, size=3)
    core_c = tc + rng.uniform(-0.3, 0.3, size=3) * (edema_r - core_r)
    enh_r = core_r * rng.uniform(0.7, 0.85, size=3)
    enh_c = core_c + rng.uniform(-0.3, 0.3, size=3) * (core_r - enh_r)
    return PhantomSpec(
        shape=shape,
        brain=brain,
        edema=Ellipsoid(tuple(tc), tuple(edema_r)),
        core=Ellipsoid(tuple(core_c), tuple(core_r)),
        enhancing=Ellipsoid(tuple(enh_c), tuple(enh_r)) if enhancing else None,
        noise_sigma=noise_sigma,
        seed=int(rng.integers(0, 2 ** 31 - 1)),
    )


def generate_dataset(count: int, seed: int = 0, shape=(64, 64, 32), empty_enhancing_fraction: float = 0.0,
                     noise_sigma: float = 0.15):
    """``count`` phantoms as ``(spec, intensities, labels, brain)`` tuples.

    Roughly ``empty_enhancing_fraction`` of cases have no enhancing region,
    mimicking low-grade cases.
    """
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(count):
        enhancing = rng.random() >= empty_enhancing_fraction
        spec = random_spec(rng, shape=shape, enhancing=enhancing, noise_sigma=noise_sigma)
        cases.append((spec, *generate(spec)))
    return cases
