use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use rgbt_scribble::config::RunConfig;
use rgbt_scribble::dataset::load_dataset;
use rgbt_scribble::diffnet::{train, Checkpoint, EpochLog, Supervision};
use rgbt_scribble::gradcheck::{check_losses, check_ops};
use rgbt_scribble::metrics::evaluate_dirs;
use rgbt_scribble::pipeline::{
    infer_dataset, load_network, precompute_expansions, pseudo_labels, training_samples, write_maps, PSEUDO_DIR,
};
use rgbt_scribble::superpixel::slic_segment;
use rgbt_scribble::synth::{generate_dataset, Profile, MANIFEST_FILE};

#[derive(Parser, Debug)]
#[command(version, about = "Scribble-supervised RGB-thermal salient object detection")]
struct Cli {
    /// key=value config file ('#' starts a comment)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set epochs=10
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic RGB-T dataset with scribbles and ground truth
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value = "mixed")]
        profile: Profile,
        /// Defaults to the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Image side; defaults to image_size
        #[arg(long)]
        size: Option<usize>,
    },
    /// Write SLIC label maps (16-bit) and a color preview per stem
    Slic {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = false)]
        thermal: bool,
    },
    /// Expand scribbles on both modalities and cache the results
    Expand {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Write aggregated pseudo labels to <root>/pseudo
    Aggregate {
        #[arg(long)]
        root: PathBuf,
        /// Use the prediction heads of this checkpoint instead of the expanded labels
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a network and write a checkpoint plus a loss log
    Train {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss log path; defaults to <out>.losses.tsv
        #[arg(long)]
        log: Option<PathBuf>,
        /// Scribble terms only
        #[arg(long)]
        no_pseudo: bool,
    },
    /// Predict saliency maps for every stem
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of loss and op gradients
    LossCheck {
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        cfg.set_pair(s)?;
    }
    cfg.check()?;
    Ok(cfg)
}

fn echo(cfg: &RunConfig) {
    eprint!("# resolved config\n{cfg}");
}

fn default_log(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".losses.tsv");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    match cli.cmd {
        Cmd::Synth {
            out,
            n,
            profile,
            seed,
            size,
        } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let size = size.unwrap_or(cfg.image_size);
            echo(&cfg);
            let manifest = generate_dataset(n, &out, profile, cfg.seed, size)?;
            rgbt_scribble::io::write_atomic(&out.join(MANIFEST_FILE), manifest.to_string().as_bytes())?;
            println!("wrote {} stems to {}", manifest.entries.len(), out.display());
        }
        Cmd::Slic { root, out, thermal } => {
            echo(&cfg);
            let ds = load_dataset(&root, cfg.image_size)?;
            let p = cfg.slic();
            for s in &ds.samples {
                let img = if thermal { &s.thermal } else { &s.rgb };
                let seg = slic_segment(img, p.superpixels, p.compactness, p.iters)?;
                rgbt_scribble::io::write_labels16(&out.join(format!("{}.png", s.stem)), &seg)?;
                rgbt_scribble::io::write_label_colors(&out.join(format!("{}_color.png", s.stem)), &seg)?;
                println!("{}\t{} superpixels", s.stem, seg.count());
            }
        }
        Cmd::Expand { root, force } => {
            echo(&cfg);
            let ds = load_dataset(&root, cfg.image_size)?;
            let (_, stats) = precompute_expansions(&ds, &cfg, force)?;
            println!("expanded {} stems, reused {} cached", stats.computed, stats.reused);
        }
        Cmd::Aggregate { root, checkpoint } => {
            let net = match &checkpoint {
                Some(p) => {
                    let (ck_cfg, net) = load_network(p)?;
                    cfg = ck_cfg;
                    Some(net)
                }
                None => None,
            };
            echo(&cfg);
            let ds = load_dataset(&root, cfg.image_size)?;
            let (ex, _) = precompute_expansions(&ds, &cfg, false)?;
            let maps = pseudo_labels(&ds, &ex, &cfg, net.as_ref())?;
            write_maps(&root.join(PSEUDO_DIR), &ds, &maps)?;
            println!("wrote {} pseudo labels", maps.len());
        }
        Cmd::Train {
            root,
            out,
            log,
            no_pseudo,
        } => {
            if no_pseudo {
                cfg.supervision = Supervision::Baseline;
            }
            echo(&cfg);
            let ds = load_dataset(&root, cfg.image_size)?;
            let (ex, _) = precompute_expansions(&ds, &cfg, false)?;
            let samples = training_samples(&ds, &ex);
            eprintln!("{}", EpochLog::HEADER);
            let outcome = train(&samples, &cfg.train(), |e| eprintln!("{e}"))?;
            let mut text = format!("{}\n", EpochLog::HEADER);
            for e in &outcome.log {
                text.push_str(&format!("{e}\n"));
            }
            let ck = Checkpoint {
                params: outcome.network.params().clone(),
                step: outcome.steps,
                config: cfg.pairs(),
            };
            ck.save(&out)?;
            let log = log.unwrap_or_else(|| default_log(&out));
            rgbt_scribble::io::write_atomic(&log, text.as_bytes())?;
            println!("checkpoint {} after {} steps", out.display(), outcome.steps);
        }
        Cmd::Infer { checkpoint, root, out } => {
            let (ck_cfg, net) = load_network(&checkpoint)?;
            echo(&ck_cfg);
            let ds = load_dataset(&root, ck_cfg.image_size)?;
            let maps = infer_dataset(&net, &ds)?;
            write_maps(&out, &ds, &maps)?;
            println!("wrote {} saliency maps to {}", maps.len(), out.display());
        }
        Cmd::Eval { pred, gt, report } => {
            echo(&cfg);
            let rep = evaluate_dirs(&pred, &gt)?;
            let text = rep.to_string();
            if let Some(p) = report {
                rgbt_scribble::io::write_atomic(&p, text.as_bytes())?;
            }
            print!("{text}");
        }
        Cmd::LossCheck { probes, seed } => {
            echo(&cfg);
            if probes == 0 {
                bail!(rgbt_scribble::Error::Parameter("probes must be at least 1".into()));
            }
            let losses = check_losses(seed, probes)?;
            let ops = check_ops(seed, probes)?;
            print!("{losses}{ops}");
            if !losses.passed() || !ops.passed() {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<rgbt_scribble::Error>() {
        Some(err) if err.is_usage() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
