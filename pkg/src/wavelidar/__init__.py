"""
wavelidar: simulation and reconstruction for dual-polarization coherent
lidar built on random amplitude/phase modulation.

The toolkit synthesizes received symbol frames for analytic scenes under a
delay / Doppler / polarization-scrambling channel with complex Gaussian
noise, validates the symbol-domain abstraction against a continuous-time
homodyne front end, and recovers per-pixel depth, radial velocity, and
Jones matrices via matched filtering or regularized joint estimation.
"""

from .core import (C0, ConfigError, EchoPath, NoiseModel, NoSurfaceError,
                   SceneError, ShapeError, SolverError, SystemConfig, WavelidarError,
                   delay_to_depth, depth_to_delay, derive_rng, derive_seed,
                   doppler_bin_grid, doppler_bin_spacing, doppler_to_velocity,
                   velocity_bin_spacing, velocity_to_doppler)
from .modulation import (ModulationScheme, PulseShape, generate_tx,
                         pulse_shape, receiver_projection)
from .channel import (ChannelRealization, SpeckleModel, apply_channel,
                      sample_jones, snr_to_sigma, with_internal_reflections)
from .homodyne import (OpticalFieldTrace, PhotocurrentPair, balanced_detect,
                       branch_intensities, demodulate, make_lo_trace,
                       make_tx_trace, oracle_demodulated_symbols, propagate,
                       superpose)
from .reconstruction import (Extraction, ExtractionMap, JonesField,
                             SolverParams, data_residual, data_residual_grad,
                             extract, matched_filter_generalized,
                             matched_filter_naive, solve_joint, solve_stage1,
                             solve_stage2, solver_grid, sparsity_grad,
                             sparsity_penalty, tv_grad, tv_penalty, zero_field)
from .scenes import (Composite, GroundTruth, Plane, SceneSpec, SpinningDisk,
                     TwoLayer, acquire_frame, acquire_pixel, realize_scene)
from .metrics import (MetricsReport, evaluate, evaluate_depth,
                      evaluate_velocity, fit_plane_depth)

__version__ = "0.1.0"
