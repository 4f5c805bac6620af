use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cladelab::analysis::{analyze, modulation_maps, AnalyzeOptions};
use cladelab::generator::{noise_batch, GenInput, Model, NormMode};
use cladelab::io::{load_checkpoint, read_instances, read_mask, read_spec, save_checkpoint, write_pgm, write_ppm};
use cladelab::training::{
    bench_site, make_dataset_with, train_model, write_metrics_csv, DatasetConfig, Layout, SiteConfig, TrainConfig,
};
use cladelab::Error;

#[derive(Parser, Debug)]
#[command(name = "cladelab", version, about = "Conditional normalization lab: analyze, train, synthesize, benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-layer parameter and FLOP report for a graph spec.
    Analyze {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        mode: NormMode,
        #[arg(long)]
        out: PathBuf,
        /// Count a multiply-accumulate as two FLOPs.
        #[arg(long)]
        mac_as_2flops: bool,
        /// Also print a human-readable table to stderr.
        #[arg(long)]
        table: bool,
    },
    /// Train a generator on a procedural dataset.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        mode: NormMode,
        #[arg(long, default_value = "voronoi")]
        layout: Layout,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for checkpoints and the metrics log.
        #[arg(long)]
        out: PathBuf,
        /// Train with instance maps and the edge path.
        #[arg(long)]
        instances: bool,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr_g: f64,
        #[arg(long, default_value_t = 4e-4)]
        lr_d: f64,
        /// Weight of the hinge GAN term; 0 trains with L1 only.
        #[arg(long, default_value_t = 0.0)]
        gan_weight: f64,
        #[arg(long, default_value_t = 200)]
        eval_every: usize,
        /// Training scenes.
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Held-out evaluation scenes.
        #[arg(long, default_value_t = 64)]
        eval_samples: usize,
    },
    /// Synthesize one image from a checkpoint and a mask.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the forward pass of one norm site.
    Bench {
        #[arg(long)]
        mode: NormMode,
        #[arg(long)]
        cin: usize,
        #[arg(long)]
        cout: usize,
        /// Feature height and width.
        #[arg(long)]
        hw: usize,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 32)]
        classes: usize,
        /// SPADE hidden width.
        #[arg(long, default_value_t = 128)]
        hidden: usize,
    },
    /// Write per-site modulation maps and within-class spreads.
    DumpMaps {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Half-width of the window that defines interior pixels.
        #[arg(long, default_value_t = 2)]
        band: usize,
    },
}

/// Divergence during training, reported after the checkpoints are written.
#[derive(Debug)]
struct TrainingFailed(Error);

impl std::fmt::Display for TrainingFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training stopped early: {}", self.0)
    }
}

impl std::error::Error for TrainingFailed {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<TrainingFailed>().is_some() {
        return 5;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::SpecParse { .. } | Error::SpecInvalid { .. }) => 2,
        Some(Error::Checkpoint(_)) => 3,
        Some(Error::Shape { .. } | Error::LabelOutOfRange { .. } | Error::ClassOutOfRange { .. }) => 4,
        Some(Error::NonFiniteGradient { .. } | Error::Diverged { .. }) => 5,
        _ => 1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            spec,
            mode,
            out,
            mac_as_2flops,
            table,
        } => {
            let spec = read_spec(&spec)?.with_mode(mode);
            let report = analyze(&spec, AnalyzeOptions { mac_as_2flops })?;
            let mut w = create(&out)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            if table {
                eprint!("{}", report.table());
            }
            println!("{}", report.aggregate_line());
        }
        Command::Train {
            spec,
            mode,
            layout,
            steps,
            seed,
            out,
            instances,
            batch,
            lr_g,
            lr_d,
            gan_weight,
            eval_every,
            samples,
            eval_samples,
        } => {
            let spec = read_spec(&spec)?.with_mode(mode).with_edge(instances);
            let data_cfg = DatasetConfig {
                n: samples,
                resolution: spec.resolution,
                num_classes: spec.num_classes,
                layout,
                seed,
                instances,
            };
            let data = make_dataset_with(&data_cfg)?;
            let eval = make_dataset_with(&DatasetConfig {
                n: eval_samples,
                seed: seed.wrapping_add(1),
                ..data_cfg
            })?;
            let cfg = TrainConfig {
                steps,
                batch,
                lr_g,
                lr_d,
                gan_weight,
                seed,
                eval_every,
                ..TrainConfig::default()
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let outcome = train_model(Model::build(spec, seed), &data, &eval, &cfg, |r| {
                eprintln!("step {:>6}  l1 {:.4}  acc {:.4}  miou {:.4}", r.step, r.loss_l1, r.pixel_acc, r.miou);
            })?;
            save_checkpoint(&out.join("model.ckpt"), &outcome.best)?;
            save_checkpoint(&out.join("last.ckpt"), &outcome.last)?;
            let mut w = create(&out.join("metrics.csv"))?;
            write_metrics_csv(&mut w, &outcome.log)?;
            w.flush()?;
            println!(
                "best_step={} pixel_acc={:.6} miou={:.6}",
                outcome.best_step,
                outcome.best_eval.pixel_acc(),
                outcome.best_eval.miou()
            );
            if let Some(e) = outcome.failure {
                return Err(TrainingFailed(e).into());
            }
        }
        Command::Synth {
            ckpt,
            mask,
            noise_seed,
            instances,
            out,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let mask = read_mask(&mask)?;
            let inst = instances.as_deref().map(read_instances).transpose()?;
            let noise = noise_batch(1, model.spec().noise_dim, noise_seed);
            let input = GenInput::new(model.spec(), std::slice::from_ref(&mask), noise, inst.as_ref().map(std::slice::from_ref))?;
            let image = model.infer(&input)?;
            let mut w = create(&out)?;
            write_ppm(&mut w, &image)?;
            w.flush()?;
        }
        Command::Bench {
            mode,
            cin,
            cout,
            hw,
            repeats,
            warmup,
            classes,
            hidden,
        } => {
            let cfg = SiteConfig {
                mode,
                cin,
                cout,
                h: hw,
                w: hw,
                num_classes: classes,
                hidden,
            };
            let stats = bench_site(&cfg, repeats, warmup)?;
            let cost = cfg.cost();
            let iqr = stats.iqr.map_or_else(|| "n/a".to_string(), |v| format!("{:.6}", v * 1e3));
            println!(
                "mode={mode} repeats={repeats} median_ms={:.6} iqr_ms={iqr} params={} flops={} conv_flops={}",
                stats.median * 1e3,
                cost.params,
                cost.flops,
                cfg.conv_cost().flops
            );
        }
        Command::DumpMaps { ckpt, mask, out, band } => {
            let model = load_checkpoint(&ckpt)?;
            let mask = read_mask(&mask)?;
            let sites = modulation_maps(&model, std::slice::from_ref(&mask), band)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut spread = create(&out.join("spread.csv"))?;
            writeln!(
                spread,
                "site,class,pixels,interior_pixels,gamma_spread,beta_spread,interior_gamma_spread,interior_beta_spread"
            )?;
            for site in &sites {
                let stem = site.path.replace('.', "_");
                for (name, maps) in [("gamma", &site.gamma), ("beta", &site.beta)] {
                    let mut w = create(&out.join(format!("{stem}_{name}.pgm")))?;
                    write_pgm(&mut w, maps[0].data(), site.h, site.w)?;
                    w.flush()?;
                }
                for c in &site.classes {
                    writeln!(
                        spread,
                        "{},{},{},{},{},{},{},{}",
                        site.path,
                        c.class,
                        c.pixels,
                        c.interior_pixels,
                        c.gamma_spread,
                        c.beta_spread,
                        c.interior_gamma_spread,
                        c.interior_beta_spread
                    )?;
                }
                println!(
                    "{} {}x{} max_spread={} max_interior_spread={}",
                    site.path,
                    site.h,
                    site.w,
                    site.max_spread(),
                    site.max_interior_spread()
                );
            }
            spread.flush()?;
        }
    }
    Ok(())
}
