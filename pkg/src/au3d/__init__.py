"""Action-unit detection from 3D facial landmarks encoded as voxel grids."""

__version__ = "0.1.0"
