//! Command-line front end. Exit codes: 0 on success, 1 on a failed
//! operation, 2 on bad usage.

use std::error::Error;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::data::{
    load_checkpoint, load_dataset, read_image, save_checkpoint, synth_dataset, write_manifest,
    write_pgm, Checkpoint, RunConfig, Split, SynthConfig, CONFIG_ENV,
};
use crate::decoder::infer_tree;
use crate::evaluation::EvalReport;
use crate::grammar::{
    from_sexpr, parse_markup, render_latex, sexpr_symbols, to_sexpr, tokenize_latex, CommandKind,
    CommandSet, SymbolTable, Token,
};
use crate::training::{predict_all, train, EpochMetrics, TrainError};
use crate::San;

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser, Debug)]
#[command(
    name = "san",
    version,
    about = "Syntax-aware handwritten math recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the canonical tree of a markup string.
    Parse {
        markup: String,
        /// Symbol table file; by default the markup's own symbols.
        #[arg(long)]
        symbols: Option<PathBuf>,
    },
    /// Print the canonical markup of a serialized tree.
    Render {
        tree_file: PathBuf,
        #[arg(long)]
        symbols: Option<PathBuf>,
    },
    /// Write a synthetic dataset: images, manifest, symbol table and config.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Trailing records assigned to the test split.
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[arg(long, default_value_t = 8)]
        max_length: usize,
        #[arg(long, default_value_t = 2)]
        max_depth: usize,
    },
    /// Train on the manifest's train split, checkpointing every epoch.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on one split of the manifest.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the report as tab-separated values.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode images: id, markup, tree and truncation flag per line.
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "image", required = true, num_args = 1..)]
        images: Vec<PathBuf>,
    },
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("san: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    let commands = CommandSet::default();
    match command {
        Command::Parse { markup, symbols } => {
            let table = match symbols {
                Some(p) => read_symbols(&p)?,
                None => markup_symbols(&markup, &commands)?,
            };
            println!("{}", to_sexpr(&parse_markup(&markup, &table, &commands)?));
        }
        Command::Render { tree_file, symbols } => {
            let text = read_text(&tree_file)?;
            let table = match symbols {
                Some(p) => read_symbols(&p)?,
                None => Arc::new(SymbolTable::new(sexpr_symbols(&text)?)?),
            };
            println!(
                "{}",
                render_latex(&from_sexpr(text.trim(), &table)?, &commands)
            );
        }
        Command::Synth {
            n,
            seed,
            out,
            test,
            max_length,
            max_depth,
        } => synth(n, seed, &out, test, max_length, max_depth, &commands)?,
        Command::Train { config, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            train_cmd(&cfg, &commands)?;
        }
        Command::Eval {
            config,
            checkpoint,
            split,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(format!("unknown split {other:?}").into()),
            };
            eval_cmd(
                &cfg,
                checkpoint.as_deref(),
                split,
                out.as_deref(),
                &commands,
            )?;
        }
        Command::Predict {
            config,
            checkpoint,
            images,
        } => {
            let cfg = load_config(config.as_deref())?;
            predict_cmd(&cfg, checkpoint.as_deref(), &images)?;
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Box<dyn Error>> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_symbols(path: &Path) -> Result<Arc<SymbolTable>, Box<dyn Error>> {
    Ok(Arc::new(SymbolTable::from_text(&read_text(path)?)?))
}

/// Terminals of a markup string in order of first appearance.
fn markup_symbols(markup: &str, commands: &CommandSet) -> Result<Arc<SymbolTable>, Box<dyn Error>> {
    let mut names: Vec<String> = Vec::new();
    for tok in tokenize_latex(markup, commands)? {
        let name = match &tok {
            Token::Char(_) => tok.text(),
            Token::Command(c) if !matches!(commands.kind_of(c), CommandKind::Modifier) => c.clone(),
            _ => continue,
        };
        if !names.contains(&name) {
            names.push(name);
        }
    }
    Ok(Arc::new(SymbolTable::new(names)?))
}

fn load_config(explicit: Option<&Path>) -> Result<RunConfig, Box<dyn Error>> {
    let path = RunConfig::locate(explicit)
        .ok_or_else(|| format!("no config: pass --config or set {CONFIG_ENV}"))?;
    Ok(RunConfig::load(&path)?)
}

fn config_symbols(cfg: &RunConfig) -> Result<Arc<SymbolTable>, Box<dyn Error>> {
    let path = cfg.symbols.as_ref().ok_or("config has no symbols file")?;
    read_symbols(path)
}

fn synth(
    n: usize,
    seed: u64,
    out: &Path,
    test: usize,
    max_length: usize,
    max_depth: usize,
    commands: &CommandSet,
) -> CliResult {
    if test > n {
        return Err(format!("--test {test} exceeds --n {n}").into());
    }
    let config = SynthConfig {
        seed,
        max_length,
        max_depth,
        ..Default::default()
    };
    let rows = synth_dataset(n, &config, commands)?;
    std::fs::create_dir_all(out.join("images"))?;
    let mut records = Vec::with_capacity(n);
    for (i, (_, markup, image)) in rows.iter().enumerate() {
        let rel = format!("images/{i:05}.pgm");
        write_pgm(&out.join(&rel), image)?;
        let split = if i + test >= n {
            Split::Test
        } else {
            Split::Train
        };
        records.push((rel, markup.as_str(), split));
    }
    let manifest = write_manifest(records.iter().map(|(p, m, s)| (p.as_str(), *m, *s)));
    std::fs::write(out.join("manifest.tsv"), manifest)?;
    std::fs::write(out.join("symbols.txt"), config.symbol_table()?.to_text())?;
    let run = RunConfig {
        train: crate::training::TrainConfig {
            seed,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let mut text = run.to_text();
    text.push_str("symbols = symbols.txt\nmanifest = manifest.tsv\ncheckpoint = checkpoint.txt\nmetrics = metrics.tsv\n");
    std::fs::write(out.join("config.txt"), text)?;
    println!("wrote {n} expressions to {}", out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, commands: &CommandSet) -> CliResult {
    let symbols = config_symbols(cfg)?;
    let manifest = cfg.manifest.as_ref().ok_or("config has no manifest")?;
    let data = load_dataset(manifest, &symbols, commands, cfg.model.zeta)?.pairs(Split::Train);
    let mut model = San::new(cfg.model.clone(), symbols, cfg.train.seed)?;
    let mut metrics = std::fs::File::create(&cfg.metrics)
        .map_err(|e| format!("{}: {e}", cfg.metrics.display()))?;
    writeln!(metrics, "{}", EpochMetrics::TSV_HEADER)?;
    train(&mut model, &data, &cfg.train, |m, model| {
        let io = |e: std::io::Error| TrainError::Io(e.to_string());
        writeln!(metrics, "{}", m.to_tsv()).map_err(io)?;
        metrics.flush().map_err(io)?;
        save_checkpoint(&cfg.checkpoint, model, &cfg.train)
            .map_err(|e| TrainError::Io(e.to_string()))?;
        let mut line = format!("epoch {} loss {:.4}", m.epoch, m.loss.total);
        if let (Some(e), Some(s)) = (m.train_exprate, m.train_espr) {
            let _ = write!(line, " exprate {e:.2} espr {s:.2}");
        }
        eprintln!("{line}");
        Ok(())
    })?;
    Ok(())
}

fn open_checkpoint(cfg: &RunConfig, explicit: Option<&Path>) -> Result<Checkpoint, Box<dyn Error>> {
    Ok(load_checkpoint(explicit.unwrap_or(&cfg.checkpoint))?)
}

fn eval_cmd(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    split: Split,
    out: Option<&Path>,
    commands: &CommandSet,
) -> CliResult {
    let symbols = config_symbols(cfg)?;
    let ck = open_checkpoint(cfg, checkpoint)?;
    ck.check_symbols(&symbols)?;
    let model = ck.into_model()?;
    let manifest = cfg.manifest.as_ref().ok_or("config has no manifest")?;
    let data = load_dataset(manifest, &model.symbols, commands, model.config.zeta)?.pairs(split);
    if data.is_empty() {
        return Err(format!("no {split} records in {}", manifest.display()).into());
    }
    let images: Vec<_> = data.iter().map(|p| &p.image).collect();
    let predicted = predict_all(&model, &images, cfg.train.budget)?;
    let truth: Vec<_> = data.into_iter().map(|p| p.tree).collect();
    let report = EvalReport::compute(&predicted, &truth, commands)?;
    if !report.laws_hold() {
        return Err("metric laws violated".into());
    }
    print!("{}", report.to_table());
    if let Some(p) = out {
        std::fs::write(p, report.to_tsv())?;
    }
    Ok(())
}

fn predict_cmd(cfg: &RunConfig, checkpoint: Option<&Path>, images: &[PathBuf]) -> CliResult {
    let model = open_checkpoint(cfg, checkpoint)?.into_model()?;
    let commands = CommandSet::default();
    let mut stdout = std::io::stdout().lock();
    for path in images {
        let image = read_image(path)?.pad_to_multiple(model.config.zeta);
        let inf = infer_tree(
            &model.encoder,
            &model.decoder,
            &model.store,
            &model.symbols,
            model.config.attention,
            &image,
            cfg.train.budget,
        )?;
        let id = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        writeln!(
            stdout,
            "{id}\t{}\t{}\t{}",
            render_latex(&inf.tree, &commands),
            to_sexpr(&inf.tree),
            inf.truncated
        )?;
    }
    Ok(())
}
