"""Post-training INT8 quantization toolchain for volumetric segmentation models."""

try:
    from ._voxelquant import *  # noqa: F401,F403
except ImportError:  # module built out-of-tree (plain CMake build on PYTHONPATH)
    from _voxelquant import *  # noqa: F401,F403
