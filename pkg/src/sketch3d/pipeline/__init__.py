"""Dataset generation, training, evaluation, inference, and benchmarking."""

from .bench import benchmark_rasterizer, benchmark_runtime
from .dataset import (CATEGORY_FAMILIES, DatasetError, DatasetManifest,
                      generate_synthetic_dataset, load_manifest)
from .evaluate import evaluate, format_metrics_table, save_metrics
from .infer import InferenceInputError, decode_sketch_bytes, infer, load_sketch_file
from .train import (TrainConfig, TrainingDivergence, load_discriminator,
                    load_generator, toy_train_config, train)

__all__ = [
    "CATEGORY_FAMILIES",
    "DatasetError",
    "DatasetManifest",
    "generate_synthetic_dataset",
    "load_manifest",
    "TrainConfig",
    "TrainingDivergence",
    "train",
    "toy_train_config",
    "load_generator",
    "load_discriminator",
    "evaluate",
    "format_metrics_table",
    "save_metrics",
    "InferenceInputError",
    "decode_sketch_bytes",
    "load_sketch_file",
    "infer",
    "benchmark_runtime",
    "benchmark_rasterizer",
]
