"""Matching-space stereo volumes: classical costs + likelihoods as network input."""
from .confidence import SigmaConfig, likelihood
from .imagio import (DisparityMap, FormatError, GrayImage, load_gray, read_kitti_png, read_pfm,
                     write_kitti_png, write_pfm)
from .matchers import (CostVolume, MatcherConfig, box_sum, cost_census, cost_ncc, cost_sobel,
                       cost_zsad)
from .metrics import EvalResult, bad_x, random_dot_pair
from .regress import (LossWeights, combined_cost, loss_l1, loss_smooth_l1, soft_argmin, total_loss,
                      wta)
from .volume import MatchingVolume, build_matching_volume, downsample2, read_msv, write_msv

__version__ = "0.1.0"
