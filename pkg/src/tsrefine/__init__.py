"""Refinement of time-space traffic speed diagrams by neighborhood-adaptive linear regression."""

from .baselines import GlrModel, NeConfig, glr_refine, glr_train, ne_refine, ne_weights
from .ingest import (RasterStats, SynthScenario, TrajectoryPoint, generate_synthetic,
                     synthetic_scenario, rasterize, read_trajectories)
from .metrics import (MetricsReport, SsimParams, cmjs, evaluate, gmsd, improvement_rate,
                      mae, mape, r_squared, ssim)
from .nalr import (NalrConfig, Neighborhood, RegressionCoeffs, SingularFitError, cae,
                   fit_neighborhood, predict_cell, refine, refine_chained, search_neighborhood)
from .patches import SampleSet, build_sample_set, query_patch
from .perturb import PerturbSpec, add_noise, drop_random, impute_nine_cell
from .tsgrid import (CellSize, GridError, TSDiagram, downsample_mean, load_matrix,
                     save_matrix, upsample_nearest)

__version__ = "0.1.0"
