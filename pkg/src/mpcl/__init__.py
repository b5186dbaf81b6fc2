"""Mixed-emotion distribution learning with modern Hopfield associative memories."""
from .config import Ablation, ModelConfig, TrainConfig, from_dict, load_config
from .data import DatasetManifest, GeneratorSpec, Sample, generate_synthetic, load_dataset, make_splits
from .metrics import MetricReport, average_rank, label_correlation, metric_suite
from .numeric import GradientTape, Tensor, grad_check, make_rng
from .train import Trainer, evaluate, run_protocol, train_fold

__version__ = "0.1.0"

__all__ = ["Ablation", "ModelConfig", "TrainConfig", "from_dict", "load_config", "DatasetManifest", "GeneratorSpec",
           "Sample", "generate_synthetic", "load_dataset", "make_splits", "MetricReport", "average_rank",
           "label_correlation", "metric_suite", "GradientTape", "Tensor", "grad_check", "make_rng", "Trainer",
           "evaluate", "run_protocol", "train_fold"]
