"""Diffusion-divergence hypothesis tests and change-point detection."""

from .detection import (CusumDetector, StoppingRunResult, batch_test, cusum_from_z, cusum_run,
                        error_exponent_estimate, estimate_arl, estimate_edd, power_at_alpha,
                        roc_curve, roc_curves)
from .diffusion import (ConstantDiffusion, MlpDiffusion, calibrate_scale, calibrate_scale_ht,
                        gaussian_optimal)
from .errors import (ArgumentError, CalibrationError, ConfigurationError, DiffDetectError,
                     NumericalDomainError)
from .models import (GaussianModel, GbRbmModel, ModelPair, QuarticModel,
                     build_appendix_models)
from .samplers import MhConfig, PairSampler, sample_mh
from .statistics import (DiffusionStatistic, FisherStatistic, KLStatistic, divergence_mc,
                         norm_ratio_estimate)
from .training import TrainConfig, TrainingData, loss_cpd, loss_ht, train

__version__ = "0.1.0"
