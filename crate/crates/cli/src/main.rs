mod commands;
mod settings;

use std::process::ExitCode;

use clap::Command;

use settings::{add_keys, key, Key};

const GEN_KEYS: &[Key] = &[
    key("out", None, "Dataset directory to write"),
    key("subjects", Some("44"), "Number of subjects"),
    key("per-subject", Some("38"), "Samples per subject"),
    key("minority", Some("0.14"), "Fraction of label-0 samples, in (0, 1)"),
    key("min-len", Some("160"), "Shortest sequence in 10 Hz steps"),
    key("max-len", Some("1120"), "Longest sequence in 10 Hz steps"),
    key("event-min", Some("2"), "Shortest planted event in seconds"),
    key("event-max", Some("5"), "Longest planted event in seconds"),
    key("amplitude", Some("2.5"), "Event signature height in noise units"),
    key("noise", Some("1"), "Background noise standard deviation"),
    key("smoothness", Some("0.8"), "AR(1) coefficient of the background noise"),
    key("subject-spread", Some("0.5"), "Standard deviation of subject offsets"),
    key("seed", Some("0"), "Generator seed"),
];

/// Model and protocol settings shared by `train` and `sweep`.
macro_rules! model_keys {
    ($($extra:expr),* $(,)?) => {
        &[
            key("data", None, "Dataset directory or manifest"),
            key("out", None, "Output directory"),
            key("r-self", Some("5"), "Self-attention range in steps"),
            key("d-model", Some("10"), "Model width (must equal the channel count)"),
            key("heads", Some("2"), "Attention heads"),
            key("layers", Some("2"), "Encoder layers of the transformer baseline"),
            key("max-len", Some("1500"), "Longest accepted sequence"),
            key("epochs", Some("30"), "Training epochs"),
            key("lr", Some("0.001"), "Adam learning rate"),
            key("batch-size", Some("16"), "Mini-batch size"),
            key("positional-encoding", Some("true"), "Add sinusoidal positions"),
            key("seeds", Some("5"), "Seed count N (seeds 0..N) or a comma list"),
            key("folds", Some("5"), "Subject folds"),
            key("split-seed", Some("0"), "Seed of the subject-to-fold assignment"),
            key("jobs", Some("1"), "Runs executed concurrently"),
            key("resample", Some("false"), "Resample series recorded above 10 Hz"),
            $($extra),*
        ]
    };
}

const TRAIN_KEYS: &[Key] = model_keys!(
    key("variant", Some("swan"), "swan, swan_no_selfatt, swan_no_winatt, transformer or windowed_linear"),
    key("r", Some("30"), "Window range in steps"),
    key("s", Some("15"), "Window step in steps"),
    key("compare", None, "runs.csv of another variant for a paired t-test"),
);

const SWEEP_KEYS: &[Key] = model_keys!(
    key("ranges", Some("0.5,1,3,5,10,20"), "Window ranges in seconds"),
    key("variants", Some("swan,windowed_linear"), "Variants to sweep"),
);

const ATTEND_KEYS: &[Key] = &[
    key("checkpoint", None, "Model checkpoint"),
    key("data", None, "Dataset directory or manifest"),
    key("out", None, "Output directory"),
    key("ids", None, "Comma-separated segment ids (default: all annotated samples)"),
    key("sigma", Some("5"), "Gaussian smoothing width in steps"),
    key("resample", Some("false"), "Resample series recorded above 10 Hz"),
];

const EVAL_KEYS: &[Key] = &[
    key("checkpoint", None, "Model checkpoint"),
    key("data", None, "Dataset directory or manifest"),
    key("out", None, "Output directory"),
    key("resample", Some("false"), "Resample series recorded above 10 Hz"),
];

fn cli() -> Command {
    Command::new("swan")
        .about("Windowing attention for long multivariate time-series")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(add_keys(
            Command::new("gen-data").about("Generate the synthetic planted-event dataset"),
            GEN_KEYS,
        ))
        .subcommand(add_keys(
            Command::new("train").about("Cross-validated training and testing of one variant"),
            TRAIN_KEYS,
        ))
        .subcommand(add_keys(
            Command::new("sweep").about("UAR across window ranges"),
            SWEEP_KEYS,
        ))
        .subcommand(add_keys(
            Command::new("attend").about("Export smoothed per-step window attention"),
            ATTEND_KEYS,
        ))
        .subcommand(add_keys(
            Command::new("eval").about("Evaluate a checkpoint on a dataset"),
            EVAL_KEYS,
        ))
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let keys = match name {
        "gen-data" => GEN_KEYS,
        "train" => TRAIN_KEYS,
        "sweep" => SWEEP_KEYS,
        "attend" => ATTEND_KEYS,
        "eval" => EVAL_KEYS,
        _ => unreachable!("clap rejects unknown subcommands"),
    };
    let result = settings::Settings::resolve(sub, keys).and_then(|s| match name {
        "gen-data" => commands::gen_data(&s),
        "train" => commands::train(&s),
        "sweep" => commands::sweep(&s),
        "attend" => commands::attend(&s),
        _ => commands::eval(&s),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
