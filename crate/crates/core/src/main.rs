use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pudding::harness::{
    emit_report, run_game, run_scenario, write_table, Format, Game, HarnessError, ScenarioConfig, Verdict,
};

#[derive(Parser)]
#[command(name = "pudding", version, about = "Private user discovery over a simulated mix network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML scenario configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "table")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run the latency scenarios.
    Scenario,
    /// Run security games: g1, g2, g3, g4 or all.
    Game {
        #[arg(default_value = "all")]
        name: String,
    },
}

fn load(cli: &Cli) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn scenario(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), HarnessError> {
    let out = run_scenario(cfg)?;
    match &cli.out {
        Some(dir) => {
            for format in [Format::Csv, Format::Json] {
                emit_report(&out, format, dir)?;
            }
            let path = emit_report(&out, cli.format, dir)?;
            eprintln!("wrote {}", path.display());
        }
        None => match cli.format {
            Format::Table => write_table(&out, std::io::stdout().lock())?,
            Format::Csv => pudding::harness::write_csv(out.rows().cloned(), std::io::stdout().lock())?,
            Format::Json => pudding::harness::write_json(&out, std::io::stdout().lock())?,
        },
    }
    Ok(())
}

fn render(verdicts: &[Verdict], format: Format) -> Result<String, HarnessError> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(verdicts)? + "\n",
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["game", "pass", "evidence"])?;
            for v in verdicts {
                w.write_record([v.name.as_str(), if v.pass { "true" } else { "false" }, v.evidence.as_str()])?;
            }
            String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8")
        }
        Format::Table => verdicts.iter().map(|v| format!("{v}\n")).collect(),
    })
}

fn games(cli: &Cli, cfg: &ScenarioConfig, name: &str) -> Result<bool, HarnessError> {
    let selected: Vec<Game> = if name == "all" {
        Game::ALL.to_vec()
    } else {
        vec![name.parse().map_err(|e: String| HarnessError::config("game", e))?]
    };
    let mut verdicts = Vec::new();
    for game in selected {
        let v = run_game(game, cfg)?;
        eprintln!("{v}");
        verdicts.push(v);
    }
    let text = render(&verdicts, cli.format)?;
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let ext = match cli.format {
                Format::Csv => "csv",
                Format::Json => "json",
                Format::Table => "txt",
            };
            std::fs::write(dir.join(format!("games.{ext}")), text)?;
        }
        None => print!("{text}"),
    }
    Ok(verdicts.iter().all(|v| v.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| match &cli.command {
        Command::Scenario => scenario(&cli, &cfg).map(|()| true),
        Command::Game { name } => games(&cli, &cfg, name),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
