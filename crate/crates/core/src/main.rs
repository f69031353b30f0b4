use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use npr_retarget::asn::{bundled_dataset, load_params, reachable_dataset, save_params, train};
use npr_retarget::config::{AppConfig, Resolved};
use npr_retarget::ctrl_eval::{evaluate_commands, sample_many, REWARD_TERMS};
use npr_retarget::descriptor::{load_descriptors, PoseDescriptor};
use npr_retarget::io::write_atomic;
use npr_retarget::retarget::{
    load_commands, motion_descriptors, retarget_asn, retarget_oracle, save_commands, CommandFile,
};
use npr_retarget::skeleton::load_motion;
use npr_retarget::Error;

#[derive(Parser)]
#[command(name = "npr-retarget", version, about = "Retarget human motion onto a humanoid robot")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Oracle,
    Asn,
}

#[derive(Subcommand)]
enum Verb {
    /// Convert a motion file into a robot command file.
    Retarget {
        motion: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "oracle")]
        solver: Solver,
        /// Network parameters, required with `--solver asn`.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Train the angle network on motion (.jsonl) or descriptor files; the
    /// bundled dataset is used when none are given.
    Train {
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Simulate PD tracking of a command file and score it.
    Eval {
        commands: PathBuf,
        /// Output directory for report.json, trace.csv and rmse.csv.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Sample domain-randomization parameter sets, one JSON object per line.
    Randomize {
        #[arg(long)]
        count: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print the robot model's joint table.
    Inspect,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) | Error::Solver(_) | Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn load_config(cli: &Cli) -> Result<Resolved, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg.resolve()?)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let r = load_config(cli)?;
    match &cli.verb {
        Verb::Retarget {
            motion,
            out,
            solver,
            params,
        } => {
            let params = match (solver, params) {
                (Solver::Asn, None) => {
                    return Err(Failure::Usage("--solver asn requires --params".into()))
                }
                (Solver::Asn, Some(p)) => Some(load_params(p)?),
                _ => None,
            };
            let seq = load_motion(motion, &r.layout, &r.remap)?;
            let targets = motion_descriptors(&seq, &r.layout, &r.model)?;
            let result = match &params {
                Some(p) => retarget_asn(&targets, p, &r.model, &r.weights)?,
                None => retarget_oracle(&targets, &r.model, &r.weights, &r.solver)?,
            };
            let file = CommandFile {
                robot: r.model.name.clone(),
                fps: seq.fps,
                frames: result.commands.clone(),
            };
            save_commands(out, &file, &r.model)?;
            let mut csv = String::from("frame,loss,converged\n");
            for (k, (l, c)) in result.losses.iter().zip(&result.converged).enumerate() {
                writeln!(csv, "{k},{l:e},{c}").unwrap();
            }
            write_atomic(&sidecar(out, ".loss.csv"), csv.as_bytes())?;
            let converged = result.converged.iter().filter(|&&c| c).count();
            println!(
                "frames {}  converged {converged}  mean_loss {:.3e}  max_loss {:.3e}",
                targets.len(),
                result.mean_loss(),
                result.losses.iter().cloned().fold(0.0, f64::max)
            );
        }
        Verb::Train { inputs, out } => {
            let dataset = training_set(inputs, &r)?;
            let (params, report) = train(&dataset, &r.train, &r.model, &r.weights)?;
            save_params(out, &params)?;
            let mut csv = String::from("epoch,train_loss,val_loss\n");
            writeln!(csv, "0,{:e},", report.initial_loss).unwrap();
            for (k, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
                let v = if v.is_nan() { String::new() } else { format!("{v:e}") };
                writeln!(csv, "{},{t:e},{v}", k + 1).unwrap();
            }
            let report_path = sidecar(out, ".loss.csv");
            write_atomic(&report_path, csv.as_bytes())?;
            println!(
                "samples {}  initial_loss {:.4e}  final_loss {:.4e}  checksum {}  report {}",
                dataset.len(),
                report.initial_loss,
                report.train_loss.last().copied().unwrap_or(f64::NAN),
                report.checksum,
                report_path.display()
            );
        }
        Verb::Eval { commands, out } => {
            let file = load_commands(commands, &r.model)?;
            let frames: Vec<Vec<f64>> = file.frames.iter().map(|c| c.0.clone()).collect();
            let rep = evaluate_commands(&frames, file.fps, &r.model, &r.config.eval, None)?;
            std::fs::create_dir_all(out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_eval_outputs(out, &rep)?;
            println!(
                "frames {}  termination {:?}  mean_rmse {:.4e}  endpoint_error {:.4e} +/- {:.4e}  reward {:.4}",
                rep.frames,
                rep.termination,
                rep.rmse.iter().sum::<f64>() / rep.rmse.len() as f64,
                rep.endpoint_error_mean,
                rep.endpoint_error_std,
                rep.reward.total
            );
        }
        Verb::Randomize { count, out } => {
            if *count == 0 {
                return Err(Failure::Usage("--count must be at least 1".into()));
            }
            let ev = &r.config.eval;
            let samples = sample_many(&ev.randomization, ev.episode_len, *count, r.config.seed)?;
            let mut text = String::new();
            for s in &samples {
                text.push_str(&serde_json::to_string(s).expect("sample serializes"));
                text.push('\n');
            }
            match out {
                Some(p) => write_atomic(p, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Verb::Inspect => {
            let m = &r.model;
            println!("robot {}  joints {}  commands {}", m.name, m.joints.len(), m.command_order.len());
            println!("l_arm {}  l_leg {}", m.l_arm, m.l_leg);
            println!(
                "mirror {} -> {}",
                m.joints[m.mirror.0].name, m.joints[m.mirror.1].name
            );
            println!("{:>3}  {:<16} {:<16} {:<14} {:>9} {:>9}  slot", "#", "joint", "parent", "class", "q_min", "q_max");
            for (i, j) in m.joints.iter().enumerate() {
                let parent = j.parent.map_or("torso", |p| m.joints[p].name.as_str());
                let slot = m
                    .command_order
                    .iter()
                    .position(|&c| c == i)
                    .map_or("mirror".to_string(), |s| s.to_string());
                println!(
                    "{i:>3}  {:<16} {:<16} {:<14} {:>9.4} {:>9.4}  {slot}",
                    j.name,
                    parent,
                    j.actuator_class.to_string(),
                    j.q_min,
                    j.q_max
                );
            }
        }
    }
    Ok(())
}

fn training_set(inputs: &[PathBuf], r: &Resolved) -> Result<Vec<PoseDescriptor>, Failure> {
    if inputs.is_empty() {
        return Ok(bundled_dataset());
    }
    let mut data = Vec::new();
    for p in inputs {
        if p.extension().is_some_and(|e| e == "jsonl") {
            let seq = load_motion(p, &r.layout, &r.remap)?;
            data.extend(motion_descriptors(&seq, &r.layout, &r.model)?);
        } else {
            data.extend(load_descriptors(p)?);
        }
    }
    let f = r.config.dataset.generated_fraction;
    let extra = (data.len() as f64 * f / (1.0 - f)).round() as usize;
    data.extend(reachable_dataset(&r.model, extra, r.config.seed)?);
    Ok(data)
}

fn write_eval_outputs(dir: &Path, rep: &npr_retarget::ctrl_eval::EpisodeReport) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "frames": rep.frames,
        "duration": rep.duration,
        "termination": rep.termination,
        "rmse": rep.joint_names.iter().zip(&rep.rmse).collect::<std::collections::BTreeMap<_, _>>(),
        "endpoint_error_mean": rep.endpoint_error_mean,
        "endpoint_error_std": rep.endpoint_error_std,
        "reward_total": rep.reward.total,
        "reward_terms": rep.reward.by_name(),
    }))
    .expect("report serializes");
    write_atomic(&dir.join("report.json"), json.as_bytes())?;

    let mut csv = String::from("time");
    for n in &rep.joint_names {
        write!(csv, ",ref_{n}").unwrap();
    }
    for n in &rep.joint_names {
        write!(csv, ",meas_{n}").unwrap();
    }
    for t in REWARD_TERMS {
        write!(csv, ",{t}").unwrap();
    }
    csv.push('\n');
    for row in &rep.trace {
        write!(csv, "{}", row.time).unwrap();
        for v in row.reference.iter().chain(&row.measured).chain(&row.reward.weighted) {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    write_atomic(&dir.join("trace.csv"), csv.as_bytes())?;

    let mut rm = String::from("joint,rmse\n");
    for (n, e) in rep.joint_names.iter().zip(&rep.rmse) {
        writeln!(rm, "{n},{e}").unwrap();
    }
    write_atomic(&dir.join("rmse.csv"), rm.as_bytes())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
