"""Displacement fields between boundaries of consecutive developmental stages."""
from .field import (
    DisplacementField,
    FieldQuality,
    MappingError,
    crossing_count,
    crossing_pairs,
    field_quality,
    read_field,
    unmapped_fraction,
    write_field,
)
from .methods import (
    map_diffusion,
    map_minimal_distance,
    map_normal,
    map_uniform,
    nearest_on_polyline,
    vertex_normals,
)
from .pipeline import MappingConfig, run_mapping_pipeline
from .tps import LandmarkSet, SingularLandmarksError, ThinPlateSpline, map_tps, tps_kernel
