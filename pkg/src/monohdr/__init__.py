"""Single-exposure HDR novel view synthesis on a differentiable voxel field."""

__version__ = "0.1.0"
