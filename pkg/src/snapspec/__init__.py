"""snapspec: simulation and learned reconstruction for snapshot mosaic spectral cameras."""

__version__ = "0.1.0"

from .forward_model import (
    FilterArray,
    HyperCube,
    Measurement,
    adjoint,
    build_mosaic,
    coding_energy,
    encode,
    init_estimate,
    load_cube,
    load_measurement,
    save_cube,
    save_measurement,
)
from .metrics import psnr, report, ssim
from .prior_net import ProximalUNet, ReconstructionModel
from .rng import Xoshiro256
from .scenes import generate_scenes
from .selection import (
    SelectionResult,
    brute_force_oracle,
    select_fps,
    select_innerproduct_baseline,
)
from .spectra import (
    SpectrumBank,
    generate_synthetic,
    load_spectra,
    pearson_stats,
    save_spectra,
    wavelength_grid,
)
from .unfolding import UnfoldingConfig, UnfoldingResult, run_unfolding, train
