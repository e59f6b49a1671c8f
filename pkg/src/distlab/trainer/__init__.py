from .checkpoint import load_policy, save_policy
from .config import (PAPER_LEARNING_RATE, ArConfig, ConfigError, ExperimentConfig, OutputConfig,
                     Toy2dConfig, apply_overrides, ar_defaults, env_defaults, load_config, paper_faithful,
                     parse_override_value, toy2d_defaults)
from .loop import (CSV_FIELDS, EvalResult, NumericalAbort, RunResult, TrainerState,
                   TrainingRecord, calibrate_entropy_target, evaluate, fid_and_grad,
                   grpo_iteration, init_state, iteration_rng, make_env, pathwise_iteration,
                   train, train_ar, train_mle, train_toy2d)
from .metrics import CsvLog, read_csv, records_to_csv
from .runtime import ArEnv, Rollouts, Toy2dEnv, mle_step, pretrained_policy
