use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use s2ut_core::pipeline::{collect_reports, report_text, report_tsv, Recipe, Workspace};
use s2ut_core::training::full_scale_trainable_counts;
use s2ut_core::{Error, Result};

const OUT_DIR_ENV: &str = "S2UT_OUT_DIR";

#[derive(Parser)]
#[command(name = "s2ut", version, about = "Speech-to-unit translation experiments on a synthetic language pair")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Recipe JSON.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the recipe seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact root; shared stages write here, the S2UT model under <out-dir>/<recipe name>.
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Asr,
    SourceAsr,
    Mt,
    T2u,
    S2ut,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy corpus, source-only speech, target-only units and parallel text.
    GenData(Common),
    /// Fit the unit codebook.
    QuantizeFit(Common),
    /// Quantize corpus source speech into reduced unit sequences.
    QuantizeEncode(Common),
    /// Contrastive pretraining of the speech encoder.
    PretrainW2v(Common),
    /// Denoising pretraining of the unit encoder-decoder.
    PretrainMbart(Common),
    /// Train one model from scratch.
    TrainSupervised {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: Stage,
    },
    /// Finetune the S2UT model from the pretrained parts named in the recipe.
    Finetune(Common),
    /// Build weakly supervised examples from source-only speech.
    Augment(Common),
    /// Score the S2UT model on dev and test and write the run report.
    Evaluate(Common),
    /// Pretrain and finetune every cell of the span-length by mask-ratio grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axes as `p=0.3,0.5,0.7 lambda=5,10,15`.
        #[arg(long, num_args = 1..)]
        grid: Vec<String>,
    },
    /// Finite-difference gradient check of every op and model.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        instances: usize,
        #[arg(long, env = OUT_DIR_ENV)]
        out_dir: Option<PathBuf>,
    },
    /// Compare evaluated runs.
    Report {
        /// Run directories; defaults to every subdirectory of the out-dir.
        runs: Vec<PathBuf>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
        out_dir: PathBuf,
        /// Also list trainable parameter counts per strategy at full scale.
        #[arg(long)]
        full_scale: bool,
    },
}

fn load_recipe(c: &Common) -> Result<Recipe> {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", c.config.display())))?;
    let mut r = Recipe::from_json(&text)?;
    if let Some(s) = c.seed {
        r.seed = s;
    }
    Ok(r)
}

fn workspace(c: &Common, r: &Recipe) -> Workspace {
    Workspace::with_run(&c.out_dir, &c.out_dir.join(&r.name))
}

fn parse_axis(spec: &str) -> Result<(String, Vec<f64>)> {
    let (name, vals) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("grid", format!("expected name=v1,v2,... got `{spec}`")))?;
    let vals = vals
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::config(format!("grid.{name}"), format!("`{v}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((name.to_string(), vals))
}

fn apply_grid(r: &mut Recipe, grid: &[String]) -> Result<()> {
    for spec in grid {
        match parse_axis(spec)? {
            (n, v) if n == "p" => r.sweep.p = v,
            (n, v) if n == "lambda" => r.sweep.lambda = v,
            (n, _) => return Err(Error::config(format!("grid.{n}"), "unknown axis; use p or lambda")),
        }
    }
    r.validate()
}

fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    if out.is_dir() {
        for e in fs::read_dir(out)? {
            let p = e?.path();
            if p.join("report.json").exists() || p.join("s2ut").exists() {
                dirs.push(p);
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(c) => {
            let r = load_recipe(&c)?;
            let d = workspace(&c, &r).gen_data(&r)?;
            println!("{} corpus examples, {} source-only, {} target-only, {} text pairs", d.corpus.examples.len(), d.source_only.len(), d.target_only.len(), d.text.len());
        }
        Command::QuantizeFit(c) => {
            let r = load_recipe(&c)?;
            let cb = workspace(&c, &r).quantize_fit(&r)?;
            println!("codebook {} x {}", cb.k(), cb.dim());
        }
        Command::QuantizeEncode(c) => {
            let r = load_recipe(&c)?;
            println!("{} utterances quantized", workspace(&c, &r).quantize_encode()?);
        }
        Command::PretrainW2v(c) => {
            let r = load_recipe(&c)?;
            workspace(&c, &r).pretrain_w2v(&r)?;
        }
        Command::PretrainMbart(c) => {
            let r = load_recipe(&c)?;
            workspace(&c, &r).pretrain_mbart(&r)?;
        }
        Command::TrainSupervised { common: c, stage } => {
            let r = load_recipe(&c)?;
            let ws = workspace(&c, &r);
            match stage {
                Stage::Asr => drop(ws.train_target_asr(&r)?),
                Stage::SourceAsr => drop(ws.train_source_asr(&r)?),
                Stage::Mt => drop(ws.train_mt(&r)?),
                Stage::T2u => drop(ws.train_t2u(&r)?),
                Stage::S2ut => {
                    let info = ws.train_s2ut(&r, false)?;
                    println!("{} training examples, best update {:?}", info.examples, info.best_step);
                }
            }
        }
        Command::Finetune(c) => {
            let r = load_recipe(&c)?;
            if !(r.pretrained.encoder || r.pretrained.decoder) {
                return Err(Error::config("pretrained", "finetune needs a pretrained encoder or decoder"));
            }
            let info = workspace(&c, &r).train_s2ut(&r, true)?;
            println!("{} training examples, best update {:?}", info.examples, info.best_step);
        }
        Command::Augment(c) => {
            let r = load_recipe(&c)?;
            println!("{} weak examples", workspace(&c, &r).augment(&r)?.examples.len());
        }
        Command::Evaluate(c) => {
            let r = load_recipe(&c)?;
            let rep = workspace(&c, &r).evaluate(&r)?;
            println!("dev ASR-BLEU {:.2}  test ASR-BLEU {:.2}", rep.dev_bleu, rep.test_bleu);
        }
        Command::Sweep { common: c, grid } => {
            let mut r = load_recipe(&c)?;
            apply_grid(&mut r, &grid)?;
            workspace(&c, &r).sweep(&r)?;
            print!("{}", fs::read_to_string(c.out_dir.join("sweep.tsv"))?);
        }
        Command::GradCheck { seed, instances, out_dir } => {
            if instances == 0 {
                return Err(Error::config("instances", "must be >= 1"));
            }
            let entries = s2ut_core::gradsuite::run_suite(seed, instances)?;
            let mut tsv = String::from("name\tinstances\tmax_rel_err\tpass\n");
            for e in &entries {
                tsv.push_str(&format!("{}\t{}\t{:.3e}\t{}\n", e.name, e.instances, e.max_rel_err, e.pass));
            }
            print!("{tsv}");
            if let Some(d) = out_dir {
                fs::create_dir_all(&d)?;
                fs::write(d.join("grad_check.tsv"), &tsv)?;
            }
            let failed: Vec<_> = entries.iter().filter(|e| !e.pass).map(|e| e.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(Error::Contract(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Command::Report { runs, out_dir, full_scale } => {
            let dirs = if runs.is_empty() { run_dirs(&out_dir)? } else { runs };
            let rows = collect_reports(&dirs);
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("report.tsv"), report_tsv(&rows))?;
            let text = report_text(&rows);
            fs::write(out_dir.join("report.txt"), &text)?;
            print!("{text}");
            if full_scale {
                println!("\nstrategy  trainable_params_m (full-scale shape)");
                for (k, n) in full_scale_trainable_counts()? {
                    println!("{:<8}  {:.1}", k.as_str(), n as f64 / 1e6);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
