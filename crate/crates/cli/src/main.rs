use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use multisense::config::RunConfig;
use multisense::pipeline;
use multisense::Workspace;
use multisense::senselm::SenseVariant;

#[derive(Parser)]
#[command(name = "multisense", version, about = "Multi-sense language modelling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and write vocab.json.
    BuildVocab(Common),
    /// Build the dictionary graph and write graph.json.
    BuildGraph(Common),
    /// Pretrain the word model on the plain-text corpus.
    Pretrain(Common),
    /// Train the word model, the sense model and the sense statistics.
    Train(Common),
    /// Evaluate on the test split and write report.json.
    Evaluate(Common),
    /// Predict the next word and sense after some text.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        text: String,
        /// How many words and senses to list.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run config; relative paths resolve against its directory.
    #[arg(long, conflicts_with = "toy")]
    config: Option<PathBuf>,
    /// Use the bundled toy dataset, unpacked under <out-dir>/data.
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_graph: Option<bool>,
    #[arg(long)]
    context_len: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = if self.toy {
            let out = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
            let data = out.join("data");
            multisense::toy::write_to(&data)?;
            let mut cfg = RunConfig::from_toml(multisense::toy::CONFIG)?;
            cfg.resolve_paths(&data);
            cfg.out_dir = out;
            cfg
        } else if let Some(path) = &self.config {
            RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        } else {
            bail!("pass --config <file> or --toy");
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = &self.variant {
            cfg.variant = SenseVariant::parse(v)?;
            if !cfg.variant.takes_k() && self.k.is_none() {
                cfg.k = None;
            }
        }
        if self.k.is_some() {
            cfg.k = self.k;
        }
        if let Some(g) = self.use_graph {
            cfg.use_graph = g;
        }
        if let Some(n) = self.context_len {
            cfg.context_len = n;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn workspace(&self) -> Result<Workspace> {
        Ok(Workspace::open(&self.config()?)?)
    }
}

fn log(line: &str) {
    eprintln!("{line}");
}

fn shown(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> Result<()> {
    let mut log = log;
    match cli.command {
        Command::BuildVocab(c) => {
            let ws = c.workspace()?;
            pipeline::build_vocab_step(&ws, &mut log)?;
            println!("{}", shown(&ws.out(pipeline::files::VOCAB)));
        }
        Command::BuildGraph(c) => {
            let ws = c.workspace()?;
            pipeline::build_graph_step(&ws, &mut log)?;
            println!("{}", shown(&ws.out(pipeline::files::GRAPH)));
        }
        Command::Pretrain(c) => {
            let ws = c.workspace()?;
            let trace = pipeline::pretrain_step(&ws, &mut log)?;
            if let Some(ppl) = trace.last_perplexity() {
                println!("pretrain ppl {ppl:.3}");
            }
        }
        Command::Train(c) => {
            let ws = c.workspace()?;
            let s = pipeline::train_step(&ws, &mut log)?;
            for (what, trace) in [("lm", Some(&s.lm)), ("sense", s.sense.as_ref()), ("context", s.context.as_ref())] {
                if let Some(ppl) = trace.and_then(|t| t.last_perplexity()) {
                    println!("{what} train ppl {ppl:.3}");
                }
            }
        }
        Command::Evaluate(c) => {
            let ws = c.workspace()?;
            let report = pipeline::evaluate_step(&ws, &mut |_| {})?;
            println!("{}", multisense::eval::render_table(std::slice::from_ref(&report)));
        }
        Command::Predict { common, text, top } => {
            let ws = common.workspace()?;
            let p = pipeline::predict_step(&ws, &text, top)?;
            println!("{}", serde_json::to_string_pretty(&p)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
