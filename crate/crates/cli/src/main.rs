//! `age2hie` command-line front-end. Every flag mirrors a run-config key
//! (`--refine-epochs` ↔ `refine_epochs`); `--config FILE` loads a key=value
//! file first and flags override it. Each run writes the resolved
//! configuration to `<out>/run_config.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use age2hie::config::{ArmKind, RunConfig, KEYS};
use age2hie::data::{load_manifest, synth_age_dataset, synth_hie_dataset, write_dataset, Dataset, Task};
use age2hie::eval::{ablation, cross_site, cross_validate, Arm, MetricsReport, ScratchArm, TransferArm};
use age2hie::pipeline::checkpoint::{load_checkpoint, save_checkpoint};
use age2hie::pipeline::{finetune, predict, predict_age, pretrain, refine, train_scratch, Checkpoint, CheckpointStage};
use age2hie::{Error, Partition};
use clap::{Arg, ArgMatches, Command};

const OUT_ENV: &str = "AGE2HIE_OUT";
const CONFIG_FILE: &str = "run_config.txt";

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("synth-age", "Write a synthetic age-regression cohort (VOL3 files + manifest)"),
    ("synth-hie", "Write a synthetic two-site outcome cohort (VOL3 files + manifest)"),
    ("pretrain", "Train all layers on age regression"),
    ("refine", "Attach a two-logit head to a pretrained checkpoint and train only the head"),
    ("finetune", "Train all layers of a refined checkpoint"),
    ("train-scratch", "Train the no-transfer baseline from random initialization"),
    ("cross-validate", "Same-site k-fold cross-validation of one arm"),
    ("cross-site", "Train on one site, evaluate on the other, over several seeds"),
    ("ablation", "Scratch cross-validation for each backbone depth"),
    ("predict", "Eval-mode predictions from a checkpoint"),
    ("inspect-checkpoint", "Print a checkpoint's stage, configuration and checksums"),
];

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let mut cmd = Command::new("age2hie")
        .about("Staged transfer learning from brain-age regression to outcome classification")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name)
            .about(about)
            .arg(Arg::new("config").long("config").value_name("FILE").help("key=value run configuration"));
        if name.starts_with("synth-") {
            sub = sub.arg(Arg::new("n").long("n").value_name("COUNT").help("cohort size (n_age / n_hie)"));
        }
        for &key in KEYS.iter().filter(|&&k| k != "command") {
            sub = sub.arg(Arg::new(key).long(flag(key)).value_name("VALUE"));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn resolve(name: &str, m: &ArgMatches) -> Result<RunConfig, Error> {
    let mut config = match m.get_one::<String>("config") {
        Some(path) => RunConfig::load(Path::new(path))?,
        None => RunConfig::default(),
    };
    for &key in KEYS.iter().filter(|&&k| k != "command") {
        if let Some(v) = m.get_one::<String>(key) {
            config
                .set(key, v)
                .map_err(|e| Error::RunConfig(format!("--{}: {}", flag(key), detail(&e))))?;
        }
    }
    if let Some(n) = m.try_get_one::<String>("n").ok().flatten() {
        let key = if name == "synth-age" { "n_age" } else { "n_hie" };
        config.set(key, n).map_err(|e| Error::RunConfig(format!("--n: {}", detail(&e))))?;
    }
    if config.out.is_none() {
        config.out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    }
    config.command = Some(name.to_string());
    config.validate()?;
    Ok(config)
}

fn detail(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config error: ").map(str::to_string).unwrap_or(s)
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, Error> {
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::RunConfig(format!("no output directory: pass --out or set {OUT_ENV}")))?;
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Error> {
    path.as_deref()
        .ok_or_else(|| Error::RunConfig(format!("--{} is required", flag(key))))
}

fn age_data(config: &RunConfig) -> Result<Dataset, Error> {
    match &config.age_manifest {
        Some(p) => load_manifest(p, Task::Age),
        None => synth_age_dataset(config.n_age, config.synth_dims(), config.data_seed),
    }
}

fn hie_data(config: &RunConfig) -> Result<Dataset, Error> {
    match &config.hie_manifest {
        Some(p) => load_manifest(p, Task::Outcome),
        None => synth_hie_dataset(
            config.n_hie,
            config.synth_dims(),
            config.data_seed,
            config.site_mix,
            config.site_shift(),
        ),
    }
}

fn checkpoint_arg(config: &RunConfig, key: &str) -> Result<Checkpoint, Error> {
    let path = match key {
        "pretrained" => &config.pretrained,
        _ => &config.checkpoint,
    };
    load_checkpoint(require(path, key)?)
}

fn summarize_checkpoint(ck: &Checkpoint) -> String {
    let c = ck.config();
    let mut s = String::new();
    writeln!(s, "stage={}", ck.stage).unwrap();
    writeln!(s, "variant={}", c.variant).unwrap();
    writeln!(s, "width={}", c.width).unwrap();
    writeln!(s, "in_channels={}", c.in_channels).unwrap();
    writeln!(s, "out_dim={}", c.out_dim).unwrap();
    writeln!(s, "parameters={}", ck.model.num_parameters()).unwrap();
    writeln!(s, "epochs={}", ck.meta.epochs).unwrap();
    writeln!(s, "seed={}", ck.meta.seed).unwrap();
    match ck.meta.final_loss() {
        Some(l) => writeln!(s, "final_loss={l}").unwrap(),
        None => writeln!(s, "final_loss=").unwrap(),
    }
    writeln!(s, "feature_checksum={}", ck.model.checksum(Partition::FeatureExtractor)).unwrap();
    writeln!(s, "head_checksum={}", ck.model.checksum(Partition::Head)).unwrap();
    s
}

fn arm<'a>(config: &RunConfig, pretrained: Option<&'a Checkpoint>) -> Box<dyn Arm + 'a> {
    match pretrained {
        Some(ck) => Box::new(TransferArm {
            pretrained: ck,
            refine: config.refine,
            finetune: config.finetune,
        }),
        None => Box::new(ScratchArm {
            config: config.model_config(2),
            schedule: config.scratch_schedule(),
        }),
    }
}

fn load_arm_checkpoint(config: &RunConfig) -> Result<Option<Checkpoint>, Error> {
    match config.arm {
        ArmKind::Transfer => Ok(Some(checkpoint_arg(config, "pretrained")?)),
        ArmKind::Scratch => Ok(None),
    }
}

fn finish_report(config: &RunConfig, out: &Path, report: &MetricsReport) -> Result<(), Error> {
    write(&out.join("report.txt"), config.annotate(&report.render_table()))?;
    print!("{}", report.render_text());
    Ok(())
}

fn run(name: &str, m: &ArgMatches) -> Result<(), Error> {
    let config = resolve(name, m)?;
    if name == "inspect-checkpoint" {
        print!("{}", summarize_checkpoint(&checkpoint_arg(&config, "checkpoint")?));
        return Ok(());
    }
    // Inputs are checked before anything is written.
    let out = match name {
        "refine" => {
            let ck = checkpoint_arg(&config, "pretrained")?;
            let data = hie_data(&config)?;
            let out = out_dir(&config)?;
            let refined = refine(&ck, &data, &config.refine, config.seed)?;
            save_checkpoint(out.join("refined.a2h"), &refined)?;
            out
        }
        "finetune" => {
            let ck = checkpoint_arg(&config, "checkpoint")?;
            let data = hie_data(&config)?;
            let out = out_dir(&config)?;
            let tuned = finetune(&ck, &data, &config.finetune, config.seed)?;
            save_checkpoint(out.join("finetuned.a2h"), &tuned)?;
            out
        }
        "predict" => {
            let ck = checkpoint_arg(&config, "checkpoint")?;
            let mut csv = String::new();
            if ck.stage == CheckpointStage::Pretrained {
                let data = age_data(&config)?;
                csv.push_str("id,age\n");
                for (id, age) in predict_age(&ck, &data)? {
                    writeln!(csv, "{id},{age}").unwrap();
                }
            } else {
                let data = hie_data(&config)?;
                csv.push_str("id,class,probability\n");
                for p in predict(&ck, &data)? {
                    writeln!(csv, "{},{},{}", p.id, p.class, p.probability).unwrap();
                }
            }
            let out = out_dir(&config)?;
            write(&out.join("predictions.csv"), csv)?;
            out
        }
        "cross-validate" | "cross-site" => {
            let pretrained = load_arm_checkpoint(&config)?;
            let data = hie_data(&config)?;
            let out = out_dir(&config)?;
            let arm = arm(&config, pretrained.as_ref());
            let report = if name == "cross-validate" {
                cross_validate(&data, arm.as_ref(), config.k, config.seed, config.jobs)?
            } else {
                cross_site(&data, config.train_site, config.test_site, arm.as_ref(), &config.seeds, config.jobs)?
            };
            finish_report(&config, &out, &report)?;
            out
        }
        "synth-age" | "synth-hie" => {
            let ds = if name == "synth-age" {
                synth_age_dataset(config.n_age, config.synth_dims(), config.seed)?
            } else {
                synth_hie_dataset(
                    config.n_hie,
                    config.synth_dims(),
                    config.seed,
                    config.site_mix,
                    config.site_shift(),
                )?
            };
            let out = out_dir(&config)?;
            write_dataset(&out, &ds)?;
            out
        }
        _ => {
            let out = out_dir(&config)?;
            match name {
                "pretrain" => {
                    let ck = pretrain(&age_data(&config)?, config.model_config(1), &config.pretrain, config.seed)?;
                    save_checkpoint(out.join("pretrained.a2h"), &ck)?;
                    print!("{}", summarize_checkpoint(&ck));
                }
                "train-scratch" => {
                    let ck = train_scratch(
                        &hie_data(&config)?,
                        config.model_config(2),
                        &config.scratch_schedule(),
                        config.seed,
                    )?;
                    save_checkpoint(out.join("scratch.a2h"), &ck)?;
                    print!("{}", summarize_checkpoint(&ck));
                }
                "ablation" => {
                    let table = ablation(
                        &hie_data(&config)?,
                        &config.variants,
                        config.model_config(2),
                        &config.scratch_schedule(),
                        config.k,
                        config.seed,
                        config.jobs,
                    )?;
                    write(&out.join("ablation.txt"), config.annotate(&table.render()))?;
                    print!("{}", table.render());
                }
                other => unreachable!("unhandled subcommand {other}"),
            }
            out
        }
    };
    write(&out.join(CONFIG_FILE), config.render())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{}", e.render());
                return ExitCode::FAILURE;
            }
            let msg = e.render().to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("age2hie: {}", line.trim_start_matches("error: "));
            return ExitCode::FAILURE;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("age2hie: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
