from .types import (
    GeometryError,
    NotWatertightError,
    PointCloud,
    ReferencePrism,
    TriangleMesh,
    box_mesh,
    icosphere,
    mesh_centroid,
    mesh_volume,
)
from .stl import StlError, parse_stl, read_stl, stl_ascii, stl_bytes, write_stl
from .sampling import (
    DEFAULT_SEED,
    downsample_random,
    prism_faces,
    sample_mesh_surface,
    sample_prism_faces,
    sample_reference_surface,
)
from .pointio import load_cloud, read_xyz, write_xyz
from .queries import MeshDistance, brute_force_distance, contains, first_hit_distance, winding_number

__all__ = [
    "GeometryError", "NotWatertightError", "PointCloud", "ReferencePrism", "TriangleMesh",
    "box_mesh", "icosphere", "mesh_centroid", "mesh_volume",
    "StlError", "parse_stl", "read_stl", "stl_ascii", "stl_bytes", "write_stl",
    "DEFAULT_SEED", "downsample_random", "prism_faces", "sample_mesh_surface",
    "sample_prism_faces", "sample_reference_surface",
    "load_cloud", "read_xyz", "write_xyz",
    "MeshDistance", "brute_force_distance", "contains", "first_hit_distance", "winding_number",
]
