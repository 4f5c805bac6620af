use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{count_bn, count_clade, count_conv, count_spade, Cost};
use crate::error::Result;
use crate::generator::NormMode;
use crate::layers::{clade_forward, normalize_batch, spade_forward, LabelBatch, NormStats, ParamBank, SegmentationMask, SpadeBlockParams};
use crate::tensor::{Shape, Tape, Tensor};

/// One norm site: a `C_out`-channel feature at `H×W` under an `N_c`-class
/// mask. `cin` only enters the cost of the paired `3×3` conv.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteConfig {
    pub mode: NormMode,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    pub hidden: usize,
}

impl SiteConfig {
    pub fn cost(&self) -> Cost {
        match self.mode {
            NormMode::Spade => count_spade(3, self.num_classes, self.hidden, self.cout, self.h, self.w),
            NormMode::Clade => count_clade(self.num_classes, self.cout, self.h, self.w),
            NormMode::Bn => count_bn(self.cout, self.h, self.w),
        }
    }

    pub fn conv_cost(&self) -> Cost {
        count_conv(3, self.cin, self.cout, self.h, self.w)
    }
}

/// Wall-clock seconds per forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchStats {
    pub samples: Vec<f64>,
    pub median: f64,
    /// Interquartile range; `None` with fewer than two samples.
    pub iqr: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BenchStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.is_empty() { f64::NAN } else { quantile(&sorted, 0.5) };
        let iqr = (sorted.len() >= 2).then(|| quantile(&sorted, 0.75) - quantile(&sorted, 0.25));
        BenchStats { samples, median, iqr }
    }
}

/// Times the eval-mode forward of a single norm site (normalization plus
/// modulation) `repeats` times after `warmup` untimed runs. Inputs and
/// parameters are random; the one-hot mask is built outside the timed region.
pub fn bench_site(cfg: &SiteConfig, repeats: usize, warmup: usize) -> Result<BenchStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn(Shape::new(1, cfg.cout, cfg.h, cfg.w), |_, _, _, _| rng.random_range(-1.0f32..1.0));
    let nc = cfg.num_classes.max(1);
    let mask = SegmentationMask::from_fn(cfg.h, cfg.w, nc, |i, j| ((i / 8 + j / 8) % nc) as u32)?;
    let labels = LabelBatch::from_masks([&mask])?;
    let onehot = labels.one_hot::<f32>();
    let mut stats = NormStats::new(cfg.cout);
    stats.eval();
    stats.updates = 1;
    let mut bank = ParamBank::new(nc, cfg.cout);
    bank.gamma.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
    bank.beta.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    let spade = SpadeBlockParams::init(nc, cfg.hidden, cfg.cout, 3, &mut rng);
    let scale = Tensor::ones(Shape::new(1, cfg.cout, 1, 1));
    let shift = Tensor::zeros(Shape::new(1, cfg.cout, 1, 1));

    let run = || -> Result<f64> {
        let mut tape = Tape::<f32>::inference();
        let start = Instant::now();
        let xv = tape.constant(x.clone());
        let out = match cfg.mode {
            NormMode::Clade => {
                let b = bank.register(&mut tape);
                clade_forward(&mut tape, xv, &labels, b, &stats)?.0
            }
            NormMode::Spade => {
                let p = spade.register(&mut tape);
                let oh = tape.constant(onehot.clone());
                spade_forward(&mut tape, xv, oh, p, &stats)?.0
            }
            NormMode::Bn => {
                let (s, b) = (tape.constant(scale.clone()), tape.constant(shift.clone()));
                let xhat = normalize_batch(&mut tape, xv, &stats)?.0;
                tape.affine(xhat, s, b)?
            }
        };
        std::hint::black_box(tape.value(out));
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..warmup {
        run()?;
    }
    let samples = (0..repeats).map(|_| run()).collect::<Result<Vec<_>>>()?;
    Ok(BenchStats::from_samples(samples))
}
