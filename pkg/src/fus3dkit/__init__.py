"""Validity-aware SDF supervision, masked losses, surfaces, metrics and alignment."""

__version__ = "0.1.0"

from .align import IcpResult, SimilarityTransform, camera_centers, icp_refine, umeyama_align
from .errors import (
    DegenerateConfigurationError,
    EmptyResultError,
    FormatError,
    Fus3DError,
    NumericalError,
    SpecMismatchError,
    ValidationError,
)
from .grid import (
    GridSpec,
    MaskGrid,
    VectorGrid,
    VoxelGrid,
    build_eikonal_mask,
    eikonal_residual,
    finite_diff_gradient,
    trilinear_sample,
)
from .lift3d import (
    FULL_CONFIG,
    LatentVolume,
    LiftConfig,
    LiftModel,
    TokenSet,
    canonical_embedding,
    decode_sdf,
    extract,
    synthetic_tokens,
    trace_shapes,
)
from .losses import LossReport, LossWeights, loss_eikonal, loss_grad, loss_sdf, total_loss
from .mesh import TriangleMesh, box_mesh, icosphere, quad_mesh
from .meshsdf import (
    SignResult,
    SurfaceSamples,
    carve_visible,
    mesh_sdf_grid,
    sample_near_surface,
    sign_by_parity,
    subdivide_longest_edge,
    unsigned_distance,
)
from .metrics import ChamferReport, chamfer, emd, f_score, sample_surface_points, sdf_mae
from .surface import marching_cubes
from .tsdf import Camera, DepthMap, TsdfState, fuse_tsdf, look_at, render_depth, sphere_cameras
