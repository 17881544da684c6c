"""Distribution-dependent SDEs with additive noise: particle and Picard solvers,
empirical-measure metrics, stability bounds and maximal-function tools."""

__version__ = "0.1.0"

from .bounds import (BoundReport, ModulusSpec, apriori_path_bound, bihari_G, bihari_M,
                     lipschitz_stability_bound, local_lip_F)
from .drifts import (AntisymmetricInteraction, ConvolutionKernel, Drift, LinearKernel,
                     LipschitzDrift, LocalLipGrowth, MeanAttraction, ModulusKernel,
                     MonotonePower, OsgoodConvolution, PowerKernel, ZeroDrift,
                     approximate_drift, drift_constants, eval_drift, lipschitz_approximate,
                     mollify_kernel)
from .lattice import LatticeFunction, load_lattice, save_lattice
from .maximal import (convolution_contrast, hajlasz_check, maximal_function,
                      onesided_constant, onesided_envelope)
from .measures import (EmpiricalMeasure, Ensemble, Path, TimeGrid, h_modulus, h_seminorm,
                       histogram_sup_mass, kde_density_norm, moment_norm, sup_norm,
                       wasserstein)
from .noise import InitialLawSpec, NoiseSpec, empirical_input, sample_paths
from .solver import (PicardDiagnostics, SolverConfig, integrate_frozen,
                     solve_ddsde_picard, solve_particle_system, weighted_distance)
