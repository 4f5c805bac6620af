use crate::error::Result;
use crate::generator::{noise_batch, GenInput, Model, NormMode};
use crate::layers::SegmentationMask;
use crate::tensor::{Shape, Tape, Tensor};

/// Within-class statistics of one norm site's modulation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpread {
    pub class: u32,
    pub pixels: usize,
    /// Pixels whose whole `(2·band+1)²` window lies inside the image and
    /// inside the class.
    pub interior_pixels: usize,
    /// Channel-0 mean over all pixels of the class.
    pub gamma_mean: f64,
    pub beta_mean: f64,
    /// `max − min` over the class's pixels, maximized over channels.
    pub gamma_spread: f64,
    pub beta_spread: f64,
    pub interior_gamma_spread: f64,
    pub interior_beta_spread: f64,
}

/// Modulation maps of one norm site.
#[derive(Clone, Debug)]
pub struct SiteMaps {
    pub path: String,
    pub mode: NormMode,
    pub h: usize,
    pub w: usize,
    /// Channel-0 `γ` and `β` per input mask, `1×1×h×w`.
    pub gamma: Vec<Tensor<f32>>,
    pub beta: Vec<Tensor<f32>>,
    /// Statistics pooled over all input masks, for classes present.
    pub classes: Vec<ClassSpread>,
}

impl SiteMaps {
    pub fn max_spread(&self) -> f64 {
        self.classes.iter().map(|c| c.gamma_spread.max(c.beta_spread)).fold(0.0, f64::max)
    }

    pub fn max_interior_spread(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.interior_gamma_spread.max(c.interior_beta_spread))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy)]
struct Range {
    lo: f32,
    hi: f32,
}

impl Range {
    const EMPTY: Range = Range {
        lo: f32::INFINITY,
        hi: f32::NEG_INFINITY,
    };

    fn push(&mut self, v: f32) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    fn spread(self) -> f64 {
        if self.hi >= self.lo {
            (self.hi as f64) - (self.lo as f64)
        } else {
            0.0
        }
    }
}

fn is_interior(m: &SegmentationMask, i: usize, j: usize, band: usize) -> bool {
    let (h, w) = (m.height(), m.width());
    if i < band || j < band || i + band >= h || j + band >= w {
        return false;
    }
    let l = m.get(i, j);
    (i - band..=i + band).all(|a| (j - band..=j + band).all(|b| m.get(a, b) == l))
}

/// Evaluates the model on `masks` and returns every norm site's modulation
/// maps with per-class spreads. `band` is the boundary width excluded from
/// the interior statistics.
pub fn modulation_maps(model: &Model, masks: &[SegmentationMask], band: usize) -> Result<Vec<SiteMaps>> {
    let spec = model.spec();
    let noise = noise_batch(masks.len(), spec.noise_dim, 0);
    let input = GenInput::new(spec, masks, noise, None)?;
    let mut tape = Tape::<f32>::inference();
    let fwd = model.forward(&mut tape, &input, false)?;
    let mut sites = Vec::with_capacity(fwd.taps.len());
    for tap in &fwd.taps {
        let (h, w) = (tap.h, tap.w);
        let expand = |t: &Tensor<f32>| -> Tensor<f32> {
            let s = t.shape();
            if (s.h, s.w) == (h, w) && s.n == masks.len() {
                t.clone()
            } else {
                Tensor::from_fn(Shape::new(masks.len(), s.c, h, w), |_, c, _, _| t.at(0, c, 0, 0))
            }
        };
        let (g, b) = (expand(tape.value(tap.gamma)), expand(tape.value(tap.beta)));
        let channels = g.shape().c;
        let small: Vec<SegmentationMask> = masks.iter().map(|m| m.resize_nearest(h, w)).collect();
        let nc = spec.num_classes;
        let mut all = vec![vec![(Range::EMPTY, Range::EMPTY); channels]; nc];
        let mut inner = all.clone();
        let mut counts = vec![(0usize, 0usize, 0f64, 0f64); nc];
        for (n, m) in small.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    let l = m.get(i, j) as usize;
                    let interior = is_interior(m, i, j, band);
                    let cnt = &mut counts[l];
                    cnt.0 += 1;
                    cnt.1 += usize::from(interior);
                    cnt.2 += g.at(n, 0, i, j) as f64;
                    cnt.3 += b.at(n, 0, i, j) as f64;
                    for c in 0..channels {
                        let (gv, bv) = (g.at(n, c, i, j), b.at(n, c, i, j));
                        all[l][c].0.push(gv);
                        all[l][c].1.push(bv);
                        if interior {
                            inner[l][c].0.push(gv);
                            inner[l][c].1.push(bv);
                        }
                    }
                }
            }
        }
        let max_over = |r: &[(Range, Range)], beta: bool| {
            r.iter()
                .map(|(g, b)| if beta { b.spread() } else { g.spread() })
                .fold(0.0, f64::max)
        };
        let classes = (0..nc)
            .filter(|&l| counts[l].0 > 0)
            .map(|l| {
                let (pixels, interior_pixels, gs, bs) = counts[l];
                ClassSpread {
                    class: l as u32,
                    pixels,
                    interior_pixels,
                    gamma_mean: gs / pixels as f64,
                    beta_mean: bs / pixels as f64,
                    gamma_spread: max_over(&all[l], false),
                    beta_spread: max_over(&all[l], true),
                    interior_gamma_spread: max_over(&inner[l], false),
                    interior_beta_spread: max_over(&inner[l], true),
                }
            })
            .collect();
        let plane = |t: &Tensor<f32>, n: usize| Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, i, j| t.at(n, 0, i, j));
        sites.push(SiteMaps {
            path: tap.path.clone(),
            mode: tap.mode,
            h,
            w,
            gamma: (0..masks.len()).map(|n| plane(&g, n)).collect(),
            beta: (0..masks.len()).map(|n| plane(&b, n)).collect(),
            classes,
        });
    }
    Ok(sites)
}
