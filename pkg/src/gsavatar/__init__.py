"""gsavatar: animatable 3D Gaussian-splat avatars on a parametric body template.

A body template plus UV-space Gaussian attribute maps decode into an
animatable set of 3D Gaussians, posed by linear blend skinning, rendered by a
software tile-based splat rasterizer, fitted to multi-view images by analytic
gradients, and edited (texture patches, shape coefficients) through a CLI, a
local HTTP service and a browser viewer.
"""

__version__ = "0.1.0"

from .avatar import Avatar
from .avatar_ops import PoseSequence, TexturePatch, animate, edit_shape, edit_texture
from .errors import AvatarError
from .fit import FitConfig, color_backward, fit_color, mse, psnr
from .imageio import Image, load_png, save_png
from .renderer import (
    Camera,
    Intrinsics,
    Splat2D,
    auto_camera,
    brute_force_render,
    load_camera,
    make_rig,
    project,
    rasterize,
    render,
    save_camera,
)
from .skinning import WeightVolume, build_weight_volume, query_weights, skin_gaussians
from .template import (
    BodyTemplate,
    JointTransforms,
    Pose,
    ShapeParams,
    apply_shape,
    forward_kinematics,
    identity_pose,
    load_template,
    make_toy_template,
    save_template,
)
from .uvgauss import (
    AnchorTable,
    GaussianAttributeMaps,
    GaussianSet,
    build_anchor_table,
    decode_gaussians,
    default_maps,
    load_maps,
    save_maps,
)
