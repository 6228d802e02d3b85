"""Dual-camera metalens restoration: forward model, alignment, classical
pre-deblurring, gated pyramid fusion and a pixel-space diffusion scaffold."""
from .errors import (CalibrationError, ConfigError, DataError, DegenerateInputError,
                     FormatError, MetafuseError, NumericError, ParameterError, ShapeError,
                     SizeError, TransformError)
from .image import Image, KernelField, NoiseModel, PsfGrid, ToneMapParams, Transform2D
from .io import load_image, load_psf_grid, save_image, save_psf_grid
from .forward import color_average, sv_adjoint, sv_convolve, synthesize_measurements
from .align import AlignConfig, align_color_to_structure, estimate_transform, warp
from .predeblur import dkpn_loss, predeblur_image, predict_kernels
from .fusion import (DomainStats, FeaturePyramid, build_pyramid, collapse_pyramid,
                     fit_tone_map, gated_fuse)
from .diffusion import make_schedule, reverse_step, sample
from .metrics import psnr, ssim

__version__ = "0.1.0"
