use std::collections::BTreeMap;
use std::io::{self, Write};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::{noise_batch, GenInput, GraphSpec, Model};
use crate::layers::{edge_map, InstanceMap, SegmentationMask};
use crate::tensor::{Gradients, Tape, Tensor, Var};

use super::adam::Adam;
use super::data::{Dataset, SyntheticScene};
use super::disc::Discriminator;
use super::loss::{hinge_d, hinge_g, l1};
use super::metrics::{edge_pixels, oracle_segment, Confusion, EdgeScore};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Weight of the hinge generator loss; 0 trains with L1 only and skips
    /// the discriminator entirely.
    pub gan_weight: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Base width of the patch discriminator.
    pub disc_width: usize,
    /// Noise seed used for every evaluation pass.
    pub eval_noise_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 4,
            lr_g: 1e-3,
            lr_d: 4e-4,
            gan_weight: 0.0,
            seed: 0,
            eval_every: 200,
            disc_width: 16,
            eval_noise_seed: 0,
        }
    }
}

/// One line of the metrics log: losses averaged over the steps since the
/// previous row, metrics on the evaluation set at `step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_l1: f64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub pixel_acc: f64,
    pub miou: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,loss_l1,loss_g,loss_d,pixel_acc,miou";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step, self.loss_l1, self.loss_g, self.loss_d, self.pixel_acc, self.miou
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> io::Result<()> {
    writeln!(out, "{}", MetricsRow::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub confusion: Confusion,
    /// Present when the dataset draws instance boundaries.
    pub edges: Option<EdgeScore>,
}

impl EvalResult {
    pub fn pixel_acc(&self) -> f64 {
        self.confusion.pixel_accuracy()
    }

    pub fn miou(&self) -> f64 {
        self.confusion.miou()
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the evaluation with the highest pixel accuracy.
    pub best: Model,
    pub best_step: usize,
    pub best_eval: EvalResult,
    /// Parameters after the last completed step.
    pub last: Model,
    pub log: Vec<MetricsRow>,
    /// Why training stopped early, if it did. `best` and `last` are still
    /// valid: neither contains the failed update.
    pub failure: Option<Error>,
}

const EVAL_BATCH: usize = 8;

fn instances_for<'a>(model: &Model, scenes: &[&'a SyntheticScene]) -> Option<Vec<&'a InstanceMap>> {
    if !model.spec().use_edge {
        return None;
    }
    scenes.iter().map(|s| s.instances.as_ref()).collect()
}

fn gen_input(model: &Model, scenes: &[&SyntheticScene], noise: Tensor<f32>) -> Result<GenInput> {
    let masks: Vec<SegmentationMask> = scenes.iter().map(|s| s.mask.clone()).collect();
    let inst: Option<Vec<InstanceMap>> = instances_for(model, scenes).map(|v| v.into_iter().cloned().collect());
    GenInput::new(model.spec(), &masks, noise, inst.as_deref())
}

fn check_dataset(spec: &GraphSpec, data: &Dataset) -> Result<()> {
    if data.resolution != spec.resolution {
        return Err(Error::shape(
            "train",
            format!("dataset resolution {} but model resolution {}", data.resolution, spec.resolution),
        ));
    }
    if data.num_classes > spec.num_classes {
        return Err(Error::shape(
            "train",
            format!("dataset has {} classes but model has {}", data.num_classes, spec.num_classes),
        ));
    }
    Ok(())
}

/// Eval-mode synthesis of every scene with fixed noise, judged by the
/// nearest-color oracle.
pub fn evaluate(model: &Model, data: &Dataset, noise_seed: u64) -> Result<EvalResult> {
    evaluate_scenes(model, data, &data.scenes, noise_seed)
}

pub fn evaluate_scenes(model: &Model, data: &Dataset, scenes: &[SyntheticScene], noise_seed: u64) -> Result<EvalResult> {
    check_dataset(model.spec(), data)?;
    let mut confusion = Confusion::new(data.num_classes);
    let mut edges = data.edge_color.map(|_| EdgeScore::default());
    for (b, chunk) in scenes.chunks(EVAL_BATCH).enumerate() {
        let refs: Vec<&SyntheticScene> = chunk.iter().collect();
        let noise = noise_batch(chunk.len(), model.spec().noise_dim, noise_seed.wrapping_add(b as u64));
        let out = model.infer(&gen_input(model, &refs, noise)?)?;
        for (i, scene) in chunk.iter().enumerate() {
            confusion.add(&oracle_segment(&out, i, &data.palette)?, &scene.mask)?;
            if let (Some(score), Some(color), Some(inst)) = (edges.as_mut(), data.edge_color, scene.instances.as_ref()) {
                let pred = edge_pixels(&out, i, &data.palette, color)?;
                let gt: Vec<bool> = edge_map::<f32>(inst).data().iter().map(|&e| e > 0.5).collect();
                score.add(&pred, &gt);
            }
        }
    }
    Ok(EvalResult { confusion, edges })
}

/// Builds a generator from `spec` seeded with `cfg.seed` and trains it.
pub fn train(spec: GraphSpec, data: &Dataset, eval: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_model(Model::build(spec, cfg.seed), data, eval, cfg, |_| {})
}

fn collect(grads: &Gradients<f32>, vars: &BTreeMap<String, Var>, into: &mut BTreeMap<String, Tensor<f32>>) {
    for (path, &v) in vars {
        if let Some(g) = grads.get(v) {
            match into.get_mut(path) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    into.insert(path.clone(), g.clone());
                }
            }
        }
    }
}

#[derive(Default)]
struct Running {
    l1: f64,
    g: f64,
    d: f64,
    n: usize,
}

struct Trainer<'a> {
    model: Model,
    disc: Option<Discriminator>,
    opt_g: Adam,
    opt_d: Adam,
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    /// One generator update (and one discriminator update with the GAN term).
    /// Returns `(l1, g, d)` losses.
    fn step(&mut self, step: usize) -> Result<(f64, f64, f64)> {
        let n = self.data.scenes.len();
        let picks: Vec<&SyntheticScene> =
            (0..self.cfg.batch).map(|_| &self.data.scenes[self.rng.random_range(0..n)]).collect();
        let noise = noise_batch(self.cfg.batch, self.model.spec().noise_dim, self.rng.random());
        let input = gen_input(&self.model, &picks, noise)?;
        let target_items: Vec<Tensor<f32>> = picks.iter().map(|s| s.target.clone()).collect();
        let target = Tensor::stack(&target_items)?;

        let mut tape = Tape::<f32>::new();
        let fwd = self.model.forward(&mut tape, &input, true)?;
        let t = tape.constant(target.clone());
        let l1_var = l1(&mut tape, fwd.image, t)?;
        let mut loss = l1_var;
        let mut onehot = None;
        let mut loss_g = 0.0;
        if let Some(disc) = &self.disc {
            let oh = input.labels.one_hot::<f32>();
            let ohv = tape.constant(oh.clone());
            let (logits, _) = disc.forward(&mut tape, fwd.image, ohv, false)?;
            let g = hinge_g(&mut tape, logits);
            loss_g = tape.value(g).item()? as f64;
            let gw = tape.scale(g, self.cfg.gan_weight);
            loss = tape.add(loss, gw)?;
            onehot = Some(oh);
        }
        let loss_l1 = tape.value(l1_var).item()? as f64;
        if !tape.value(loss).all_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = tape.backward(loss)?;
        let mut gg = BTreeMap::new();
        collect(&grads, &fwd.params, &mut gg);
        self.opt_g.step(self.model.params_mut(), &gg)?;
        self.model.apply_moments(&fwd.moments);

        let mut loss_d = 0.0;
        if let (Some(disc), Some(oh)) = (self.disc.as_mut(), onehot) {
            let fake = tape.value(fwd.image).clone();
            drop(tape);
            let mut dt = Tape::<f32>::new();
            let (real, fake, ohv) = (dt.constant(target), dt.constant(fake), dt.constant(oh));
            let (lr, vr) = disc.forward(&mut dt, real, ohv, true)?;
            let (lf, vf) = disc.forward(&mut dt, fake, ohv, true)?;
            let d = hinge_d(&mut dt, lr, lf)?;
            loss_d = dt.value(d).item()? as f64;
            if !loss_d.is_finite() {
                return Err(Error::Diverged { step });
            }
            let grads = dt.backward(d)?;
            let mut gd = BTreeMap::new();
            collect(&grads, &vr, &mut gd);
            collect(&grads, &vf, &mut gd);
            self.opt_d.step(disc.params_mut(), &gd)?;
        }
        Ok((loss_l1, loss_g, loss_d))
    }
}

/// Trains `model` on `data`, evaluating on `eval` every `cfg.eval_every`
/// steps and after the last one. `on_row` sees each metrics row as it is
/// produced. Deterministic for a fixed configuration.
pub fn train_model(
    model: Model,
    data: &Dataset,
    eval: &Dataset,
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    check_dataset(model.spec(), data)?;
    check_dataset(model.spec(), eval)?;
    if data.scenes.is_empty() || eval.scenes.is_empty() {
        return Err(Error::InvalidArgument("training and evaluation sets must be non-empty".into()));
    }
    if cfg.batch == 0 || cfg.eval_every == 0 {
        return Err(Error::InvalidArgument("batch and eval interval must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let disc = (cfg.gan_weight > 0.0)
        .then(|| Discriminator::new(model.spec().num_classes, cfg.disc_width, cfg.seed.wrapping_add(1)));
    let mut t = Trainer {
        model,
        disc,
        opt_g: Adam::gan(cfg.lr_g),
        opt_d: Adam::gan(cfg.lr_d),
        data,
        cfg,
        rng,
    };

    let first = evaluate(&t.model, eval, cfg.eval_noise_seed)?;
    let row = MetricsRow {
        step: 0,
        loss_l1: f64::NAN,
        loss_g: f64::NAN,
        loss_d: f64::NAN,
        pixel_acc: first.pixel_acc(),
        miou: first.miou(),
    };
    on_row(&row);
    let mut log = vec![row];
    let (mut best, mut best_step, mut best_eval) = (t.model.clone(), 0, first);
    let mut running = Running::default();
    let mut failure = None;

    for step in 1..=cfg.steps {
        match t.step(step) {
            Ok((a, g, d)) => {
                running.l1 += a;
                running.g += g;
                running.d += d;
                running.n += 1;
            }
            Err(e) => {
                warn!("training stopped at step {step}: {e}");
                failure = Some(e);
                break;
            }
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let res = evaluate(&t.model, eval, cfg.eval_noise_seed)?;
            let k = running.n.max(1) as f64;
            let row = MetricsRow {
                step,
                loss_l1: running.l1 / k,
                loss_g: running.g / k,
                loss_d: running.d / k,
                pixel_acc: res.pixel_acc(),
                miou: res.miou(),
            };
            info!(
                "step {step}: l1 {:.4} acc {:.4} miou {:.4}",
                row.loss_l1, row.pixel_acc, row.miou
            );
            on_row(&row);
            log.push(row);
            running = Running::default();
            if res.pixel_acc() > best_eval.pixel_acc() {
                best = t.model.clone();
                best_step = step;
                best_eval = res;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_step,
        best_eval,
        last: t.model,
        log,
        failure,
    })
}
