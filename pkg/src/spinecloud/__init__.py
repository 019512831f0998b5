"""spinecloud: ultrasound-consistent vertebra point clouds and completion metrics.

Submodules
----------
labelmap    raw labeled-volume IO
isosurface  marching cubes + smoothing per vertebra level
mesh        triangle-mesh type and geometry utilities
ply         PLY/OBJ readers and writers
deform      rigid-body + spring spine curvature variation
render      occlusion/incidence/scattering ray-casting
masking     per-vertebra crops and resampling
metrics     Chamfer/EMD/F1 and anatomy-specific metrics
completion  atlas retrieval baseline and external-completer hook
synthetic   toy labeled spine volumes
pipeline    dataset generation, splits and batch evaluation
"""

__version__ = "0.1.0"
