"""splatlab: differentiable 3D Gaussian splatting on the CPU."""

from .core import (Camera, Gaussian, GaussianCloud, InvalidPrimitiveError,
                   ProjectedSplats, assemble_covariance, eval_gaussian_2d,
                   evaluate_sh, project)
from .gradients import (GaussianGrads, backward_blend, backward_conic_to_cov3d,
                        backward_cov3d_to_scale_rotation, backward_project)
from .optimizer import (DensifyReport, TrainConfig, TrainState, TrainView,
                        TrainingDiverged, compute_metrics, densify_and_prune,
                        loss, render_view, train, train_step)
from .rasterizer import (RenderOutput, TileBinning, bin_and_sort, make_keys,
                         render_backward, render_forward)
from .scene_io import (SfmScene, export_ply, init_from_sfm, init_random,
                       load_colmap, load_model, save_model, split_train_test)

__version__ = "0.1.0"
