//! Command implementations behind the `cycflow` binary.

pub mod args;
pub mod commands;
pub mod error;
pub mod eval;
pub mod report;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(error::CliError::Usage("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let det = cli.deterministic;
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train_cmd(a, det),
        Command::Solve(a) => commands::solve_cmd(a, det),
        Command::Eval(a) => commands::eval_cmd(a, det),
        Command::Ablate(a) => commands::ablate_cmd(a),
        Command::Bench(a) => commands::bench_cmd(a),
        Command::Couple(a) => commands::couple_cmd(a),
    }
}
