"""finslerkit: Finsler volumes, integral geometry and geodesic flows at desk scale."""

from .numerics import DirectionGrid, build_sphere_grid, integrate_sphere

__all__ = ["DirectionGrid", "build_sphere_grid", "integrate_sphere"]
__version__ = "0.1.0"
