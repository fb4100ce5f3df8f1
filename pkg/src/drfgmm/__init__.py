"""Forest-affinity clustering: entropy-gain random forests, path-overlap
affinity graphs, threshold-seeded constraints, and constrained Gaussian
mixtures, with a spectral baseline and matched-accuracy metrics."""

from .affinity import (AffinityMatrix, affinity_heatmap, binary_affinity,
                       compute_affinity, load_affinity, path_affinity_adaptive,
                       path_affinity_uniform, save_affinity, save_pgm)
from .core import (ConfigError, DataError, Dataset, LearnerSchedule,
                   NumericalError, PipelineConfig, RandomStream, load_csv,
                   save_csv, standardize)
from .dual import (FREE, LatentConstraints, SeedingFailure,
                   connected_components, load_constraints, mutual_exclusion,
                   save_constraints, seed_constraints, threshold_filter)
from .forest import (AxisAligned, DegenerateSampleError, Forest, LinearBand,
                     MixtureRoute, Node, QuadraticBand, Tree, forest_density,
                     forest_from_dict, forest_to_dict, gaussian_entropy,
                     info_gain, load_forest, route_members, sample_weak_learner,
                     save_forest, train_forest, train_tree, traverse)
from .gmm import (EMResult, GaussianMixture, e_step, fit_em, gaussian_pdf,
                  log_gaussian_pdf, m_step, mixture_density)
from .metrics import accuracy, contingency, hungarian, nmi
from .spectral import eigen_smallest, kmeans, normalized_laplacian, spectral_cluster

__version__ = "0.1.0"
