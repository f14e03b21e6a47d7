mod ppm;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssa2d::data::container::{read_container, write_container, NamedTensor};
use ssa2d::data::dataset::generate_dataset;
use ssa2d::data::ClipRecord;
use ssa2d::train::{benchmark, evaluate_model, infer};
use ssa2d::{Dataset, Error, RunConfig, Ssa2d, Trainer};

#[derive(Parser)]
#[command(name = "ssa2d", version, about = "Single-shot actor-action detection on synthetic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; toy defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.batch_size=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a directory of synthetic clips.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        clips: usize,
    },
    /// Train a model on a clip directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_ap_infusion: bool,
        #[arg(long)]
        no_ssa_masking: bool,
        #[arg(long)]
        no_atrous: bool,
        #[arg(long)]
        no_multi_scale: bool,
    },
    /// Score a checkpoint on a clip directory.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, required_unless_present = "oracle")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Key=value report path; a `.json` twin is written alongside.
        #[arg(long)]
        report: PathBuf,
        /// Score the ground truth against itself.
        #[arg(long)]
        oracle: bool,
    },
    /// Predict label volumes for one clip container.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write colour-mapped PPM frames per task.
        #[arg(long)]
        dump_frames: bool,
    },
    /// Time inference on scenes with different actor counts.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "init", required_unless_present = "init")]
        ckpt: Option<PathBuf>,
        /// Use a freshly initialized model.
        #[arg(long)]
        init: bool,
        #[arg(long, value_delimiter = ',', default_value = "1,4,8")]
        actors: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Run(e)
        }
    }
}

type CmdResult = Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn require_dir(path: &Path, what: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} directory {} does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            require_file(p, "config file")?;
            RunConfig::from_file(p)?
        }
        None => RunConfig::toy(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.network.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn gen_data(cfg: &RunConfig, out: &Path, clips: usize) -> CmdResult {
    let ds = generate_dataset(&cfg.synth, out, clips, cfg.seed)?;
    println!("wrote {} clips to {}", ds.len(), out.display());
    Ok(())
}

fn train(mut cfg: RunConfig, data: &Path, out: &Path, off: [bool; 4]) -> CmdResult {
    require_dir(data, "data")?;
    let f = &mut cfg.network.features;
    let [ap, ssa, atrous, ms] = off;
    f.ap_infusion &= !ap;
    f.ssa_masking &= !ssa;
    f.atrous &= !atrous;
    f.multi_scale &= !ms;
    cfg.validate()?;
    let clips = Dataset::open(data)?.load_all()?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_text(&out.join("config.txt"), &cfg.to_kv_string())?;
    let log_path = out.join("train.log");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    let model = Ssa2d::new(cfg.network.clone())?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.loss, cfg.seed)?
        .with_log(&mut log)
        .with_checkpoints(out);
    let outcome = trainer.run(&clips, |_, _| Ok(true))?;
    drop(trainer);
    log.flush().map_err(|e| io_err(&log_path, e))?;
    if let Some(last) = outcome.log.last() {
        println!("{last}");
    }
    println!("trained {} steps; checkpoint {}", outcome.steps, out.join("final.stc").display());
    Ok(())
}

fn eval(cfg: &RunConfig, ckpt: Option<&Path>, data: &Path, report: &Path, oracle: bool) -> CmdResult {
    require_dir(data, "data")?;
    let model = match (oracle, ckpt) {
        (true, _) => None,
        (false, Some(p)) => {
            require_file(p, "checkpoint")?;
            Some(Ssa2d::<f32>::load(p)?)
        }
        (false, None) => return Err(Failure::Usage("--ckpt is required without --oracle".into())),
    };
    let net = model.as_ref().map_or(&cfg.network, |m| &m.cfg);
    let clips = Dataset::open(data)?.load_all()?;
    let r = evaluate_model(
        model.as_ref(),
        &clips,
        net.actor_classes,
        net.action_classes,
        &cfg.synth.valid_pairs(),
        &cfg.metrics,
    )?;
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_text(report, &r.to_kv())?;
    write_text(&report.with_extension("json"), &r.to_json())?;
    print!("{}", r.table());
    Ok(())
}

fn infer_cmd(ckpt: &Path, input: &Path, out: &Path, dump_frames: bool) -> CmdResult {
    require_file(ckpt, "checkpoint")?;
    require_file(input, "input clip")?;
    let model = Ssa2d::<f32>::load(ckpt)?;
    let clip = ClipRecord::from_tensors(&read_container(input)?, 0)?;
    let p = infer(&model, &clip.video)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let tensors = [
        NamedTensor::int("actor_pred", &p.dims, p.actor.clone()),
        NamedTensor::int("action_pred", &p.dims, p.action.clone()),
        NamedTensor::int("mask_pred", &p.dims, p.mask.clone()),
    ];
    let path = out.join("prediction.stc");
    write_container(&path, &tensors)?;
    if dump_frames {
        for (task, labels) in [("actor", &p.actor), ("action", &p.action), ("mask", &p.mask)] {
            ppm::dump(out, task, labels, p.dims)?;
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn bench(cfg: &RunConfig, ckpt: Option<&Path>, actors: &[usize], repeats: usize) -> CmdResult {
    let model = match ckpt {
        Some(p) => {
            require_file(p, "checkpoint")?;
            Ssa2d::<f32>::load(p)?
        }
        None => Ssa2d::new(cfg.network.clone())?,
    };
    let synth = ssa2d::SynthConfig {
        frames: model.cfg.input[0],
        height: model.cfg.input[1],
        width: model.cfg.input[2],
        ..cfg.synth.clone()
    };
    let report = benchmark(&model, &synth, actors, repeats, cfg.seed)?;
    print!("{}", report.to_text());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenData { cfg, out, clips } => gen_data(&load_config(&cfg)?, &out, clips),
        Command::Train {
            cfg,
            data,
            out,
            no_ap_infusion,
            no_ssa_masking,
            no_atrous,
            no_multi_scale,
        } => train(
            load_config(&cfg)?,
            &data,
            &out,
            [no_ap_infusion, no_ssa_masking, no_atrous, no_multi_scale],
        ),
        Command::Eval {
            cfg,
            ckpt,
            data,
            report,
            oracle,
        } => eval(&load_config(&cfg)?, ckpt.as_deref(), &data, &report, oracle),
        Command::Infer {
            ckpt,
            input,
            out,
            dump_frames,
        } => infer_cmd(&ckpt, &input, &out, dump_frames),
        Command::Bench {
            cfg,
            ckpt,
            init: _,
            actors,
            repeats,
        } => bench(&load_config(&cfg)?, ckpt.as_deref(), &actors, repeats),
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("SSA2D_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
