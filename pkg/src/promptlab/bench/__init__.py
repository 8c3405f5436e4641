"""Synthetic base-to-novel benchmark, trainer and ablation runner."""
from .ablation import AblationResult, Cell, component_grid, read_csv, run_ablation, sweep_grid, write_results
from .data import B2NDataset, DataConfig, generate_b2n, generate_pretraining_set
from .teacher import PretrainConfig, build_teacher
from .train import LossWeights, MetricsRecord, TrainConfig, evaluate, harmonic_mean, run_experiment, train_prompts
