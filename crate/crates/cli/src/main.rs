//! Command-line driver: scene generation, training, rendering, evaluation,
//! stability sweeps, and random-search tuning.

mod commands;
mod config;

use clap::{Parser, Subcommand};

/// Seasonal radiance fields over synthetic terrain scenes.
#[derive(Parser)]
#[command(name = "season-field", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset.
    GenScene(commands::GenSceneArgs),
    /// Train a field on a dataset.
    Train(commands::TrainArgs),
    /// Render one view from a checkpoint.
    Render(commands::RenderArgs),
    /// Render a year-long grid of seasonal images.
    RenderSeasons(commands::RenderSeasonsArgs),
    /// Run the full measurement suite against a dataset.
    Eval(commands::EvalArgs),
    /// Seasonal-stability sweep over views, suns, and times.
    Stability(commands::StabilityArgs),
    /// Random-search hyperparameter tuning.
    Tune(commands::TuneArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Ok(threads) = std::env::var("SEASON_FIELD_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }

    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScene(args) => commands::gen_scene(args),
        Command::Train(args) => commands::train(args),
        Command::Render(args) => commands::render(args),
        Command::RenderSeasons(args) => commands::render_seasons(args),
        Command::Eval(args) => commands::eval(args),
        Command::Stability(args) => commands::stability(args),
        Command::Tune(args) => commands::tune(args),
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            // single-line machine-parsable failure with a stable exit code
            let code = commands::exit_code_for(&err);
            eprintln!("error[{code}]: {err:#}");
            std::process::exit(code);
        }
    }
}
