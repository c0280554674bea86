"""The resolved configuration of one run, serializable to a single JSON document."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .calibration import DetectionConfig, FitSettings
from .errors import InvalidArgumentError
from .polar import PolarGrid
from .seidel import OpticalConfig
from .solvers import SolverSettings

__all__ = ["GridSettings", "RunConfig"]


@dataclass(frozen=True)
class GridSettings:
    """How to build the polar grid for an image; ``None`` means the default."""

    cover: str = "corners"
    num_radii: int | None = None
    num_angles: int | None = None
    angles_per_radius: int = 8
    center: tuple[float, float] | None = None

    def build(self, n: int) -> PolarGrid:
        return PolarGrid.for_image(
            n,
            cover=self.cover,
            center=self.center,
            num_radii=self.num_radii,
            num_angles=self.num_angles,
            angles_per_radius=self.angles_per_radius,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["center"] = None if self.center is None else list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSettings":
        d = dict(d)
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        return cls(**d)


@dataclass
class RunConfig:
    """Everything needed to reproduce a command's output.

    ``optical`` may be ``None``, in which case commands derive it from the
    image size with :meth:`OpticalConfig.for_image`.
    """

    optical: OpticalConfig | None = None
    grid: GridSettings = field(default_factory=GridSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    fit: FitSettings = field(default_factory=FitSettings)
    seed: int = 0
    paths: dict = field(default_factory=dict)

    def optical_for(self, n: int, psf_side: int | None = None) -> OpticalConfig:
        if self.optical is not None:
            return self.optical if psf_side is None else self.optical.replace(psf_side=psf_side)
        return OpticalConfig.for_image(n, psf_side=psf_side)

    def to_dict(self) -> dict:
        return {
            "optical": None if self.optical is None else self.optical.to_dict(),
            "grid": self.grid.to_dict(),
            "solver": self.solver.to_dict(),
            "detection": self.detection.to_dict(),
            "fit": self.fit.to_dict(),
            "seed": int(self.seed),
            "paths": {k: str(v) for k, v in self.paths.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"optical", "grid", "solver", "detection", "fit", "seed", "paths"}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config sections: {sorted(unknown)}")
        try:
            return cls(
                optical=None if d.get("optical") is None else OpticalConfig.from_dict(d["optical"]),
                grid=GridSettings.from_dict(d.get("grid", {})),
                solver=SolverSettings.from_dict(d.get("solver", {})),
                detection=DetectionConfig.from_dict(d.get("detection", {})),
                fit=FitSettings(**d.get("fit", {})),
                seed=int(d.get("seed", 0)),
                paths=dict(d.get("paths", {})),
            )
        except TypeError as exc:
            raise InvalidArgumentError(f"invalid config: {exc}") from exc
