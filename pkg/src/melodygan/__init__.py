"""Lyrics-conditioned melody generation with a relational-memory GAN.

The package trains a generator that maps 20-position syllable-embedding
sequences to aligned pitch/duration/rest index sequences, using relational
memory recurrence, Gumbel-Softmax relaxation for the discrete outputs, and a
relativistic sequence critic. A full evaluation suite (self-BLEU, MMD,
attribute statistics, transition histograms, conditioning baselines) and a
four-command CLI round out the pipeline.
"""

__version__ = "0.1.0"

from .data import (AlignedRecord, DatasetSplit, ValueTables, default_value_tables,
                   load_dataset, save_dataset, split_dataset, synthesize_dataset)
from .discriminator import (CriticScores, DiscriminatorConfig, TripletDiscriminator,
                            canonical_discriminator_config, d_loss, g_loss,
                            small_discriminator_config)
from .errors import (ConfigurationError, DataValidationError, MelodyGanError, NumericError,
                     UnknownTokenError)
from .generator import (AttributeSpec, AttributeSubNetwork, MelodyGenerator, MelodyTriplet,
                        canonical_attribute_specs, small_attribute_specs)
from .gumbel import (TemperatureSchedule, beta_at, categorical_sample, gumbel_softmax,
                     sample_gumbel_noise)
from .metrics import (AttributeStats, ConditioningBaselines, KernelSpec, MetricReport,
                      attribute_metrics, compute_metric_report, conditioning_baselines,
                      conditioning_distance, mmd_unbiased, self_bleu,
                      transition_distribution)
from .relmem import RelationalMemoryCell, RmcConfig, init_memory
from .training import (TrainConfig, adversarial_epoch, load_checkpoint, pretrain_mle,
                       save_checkpoint, small_train_config, train)

__all__ = [
    "__version__",
    "AlignedRecord", "DatasetSplit", "ValueTables", "default_value_tables",
    "load_dataset", "save_dataset", "split_dataset", "synthesize_dataset",
    "CriticScores", "DiscriminatorConfig", "TripletDiscriminator",
    "canonical_discriminator_config", "d_loss", "g_loss", "small_discriminator_config",
    "ConfigurationError", "DataValidationError", "MelodyGanError", "NumericError",
    "UnknownTokenError",
    "AttributeSpec", "AttributeSubNetwork", "MelodyGenerator", "MelodyTriplet",
    "canonical_attribute_specs", "small_attribute_specs",
    "TemperatureSchedule", "beta_at", "categorical_sample", "gumbel_softmax",
    "sample_gumbel_noise",
    "AttributeStats", "ConditioningBaselines", "KernelSpec", "MetricReport",
    "attribute_metrics", "compute_metric_report", "conditioning_baselines",
    "conditioning_distance", "mmd_unbiased", "self_bleu", "transition_distribution",
    "RelationalMemoryCell", "RmcConfig", "init_memory",
    "TrainConfig", "adversarial_epoch", "load_checkpoint", "pretrain_mle",
    "save_checkpoint", "small_train_config", "train",
]
