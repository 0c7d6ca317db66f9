from ._dynanav import (
    ConfigError,
    Dataset,
    Episode,
    ExitThresholds,
    IoError,
    Model,
    NumericError,
    RunConfig,
    ShapeError,
    World,
    closed_loop_success,
    default_config_text,
    evaluate_policy,
    expert_rollout,
    gen_world,
    load_thresholds,
    make_dataset,
    parse_config_file,
    render,
    run_dynamic,
    run_static,
    sample_window,
    save_thresholds,
    train,
    tune_thresholds,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "Episode",
    "ExitThresholds",
    "IoError",
    "Model",
    "NumericError",
    "RunConfig",
    "ShapeError",
    "World",
    "closed_loop_success",
    "default_config_text",
    "evaluate_policy",
    "expert_rollout",
    "gen_world",
    "load_thresholds",
    "make_dataset",
    "parse_config_file",
    "render",
    "run_dynamic",
    "run_static",
    "sample_window",
    "save_thresholds",
    "train",
    "tune_thresholds",
]
