"""Sample 3D scenes into point clouds, place them into scanned spaces, and score the placement."""

from .geometry import (
    Aabb,
    NNIndex,
    PointCloud,
    aabb,
    build_nn_index,
    centroid,
    load_point_cloud,
    nearest,
    random_downsample,
    save_point_cloud,
)
from .registration import (
    IcpParams,
    RegistrationResult,
    SimilarityTransformY,
    apply_transform,
    fit_anisotropic_y,
    fit_similarity_y,
    icp,
    multi_start_icp,
    placement_error,
)
from .sampling import LayerFilter, SceneMesh, load_mesh, sample_scene, support_points, surface_sample
from .evaluation import evaluate_dataset, export_heatmap, scan_dataset, write_report

__version__ = "0.1.0"
