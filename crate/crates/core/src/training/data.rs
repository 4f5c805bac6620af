use std::f32::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::layers::{edge_map, InstanceMap, SegmentationMask};
use crate::par;
use crate::tensor::{Shape, Tensor};

pub type Color = [f32; 3];

/// Color drawn on instance boundaries when a dataset renders them.
pub const EDGE_COLOR: Color = [-1.0, -1.0, -1.0];

const TEXTURE_AMP: f32 = 0.05;
/// Per-pixel noise is Gaussian with this scale, truncated at ±2.5σ, so a
/// target pixel never strays more than 0.1 per channel from its class color.
const NOISE_AMP: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `N_c` equal vertical bands in a random class order.
    Stripes,
    /// Nearest-site partition with random site classes.
    Voronoi,
    /// Random ellipses over a background class.
    Blobs,
    /// One class everywhere, split into two instances by a straight line.
    Split,
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stripes" => Ok(Layout::Stripes),
            "voronoi" => Ok(Layout::Voronoi),
            "blobs" => Ok(Layout::Blobs),
            "split" => Ok(Layout::Split),
            _ => Err(format!("unknown layout `{s}` (expected stripes, voronoi, blobs or split)")),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Stripes => "stripes",
            Layout::Voronoi => "voronoi",
            Layout::Blobs => "blobs",
            Layout::Split => "split",
        })
    }
}

/// Distinct class colors on a regular grid in RGB space, most saturated
/// first, skipping colors close to [`EDGE_COLOR`]. Pairwise distance is at
/// least 0.5.
pub fn palette(num_classes: usize) -> Result<Vec<Color>> {
    let levels: &[f32] = if num_classes <= 26 { &[0.8, 0.0, -0.8] } else { &[0.75, 0.25, -0.25, -0.75] };
    let mut colors: Vec<Color> = Vec::new();
    for &r in levels {
        for &g in levels {
            for &b in levels {
                colors.push([r, g, b]);
            }
        }
    }
    colors.retain(|c| distance(c, &EDGE_COLOR) >= 0.5);
    let sat = |c: &Color| c.iter().copied().fold(f32::MIN, f32::max) - c.iter().copied().fold(f32::MAX, f32::min);
    colors.sort_by(|a, b| sat(b).total_cmp(&sat(a)));
    if num_classes > colors.len() {
        return Err(Error::InvalidArgument(format!(
            "at most {} classes have distinct palette colors",
            colors.len()
        )));
    }
    colors.truncate(num_classes);
    Ok(colors)
}

pub fn distance(a: &Color, b: &Color) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

/// A mask with its rendered target image.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub mask: SegmentationMask,
    /// `1×3×H×W` in `[−1, 1]`.
    pub target: Tensor<f32>,
    pub instances: Option<InstanceMap>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub layout: Layout,
    pub resolution: usize,
    pub num_classes: usize,
    pub palette: Vec<Color>,
    /// Set when targets draw instance boundaries.
    pub edge_color: Option<Color>,
    pub scenes: Vec<SyntheticScene>,
    /// One single-class scene per class.
    pub flat: Vec<SyntheticScene>,
}

#[derive(Clone, Copy, Debug)]
pub struct DatasetConfig {
    pub n: usize,
    pub resolution: usize,
    pub num_classes: usize,
    pub layout: Layout,
    pub seed: u64,
    /// Attach instance maps and draw their boundaries in the targets. Always
    /// on for [`Layout::Split`].
    pub instances: bool,
}

/// Instance maps and boundary rendering follow the layout's default (on for
/// [`Layout::Split`] only).
pub fn make_dataset(n: usize, resolution: usize, num_classes: usize, layout: Layout, seed: u64) -> Result<Dataset> {
    make_dataset_with(&DatasetConfig {
        n,
        resolution,
        num_classes,
        layout,
        seed,
        instances: layout == Layout::Split,
    })
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn make_dataset_with(cfg: &DatasetConfig) -> Result<Dataset> {
    let r = cfg.resolution;
    if r == 0 || r % 16 != 0 {
        return Err(Error::InvalidArgument(format!("resolution {r} is not a positive multiple of 16")));
    }
    if cfg.num_classes < 2 {
        return Err(Error::InvalidArgument("datasets need at least two classes".into()));
    }
    let palette = palette(cfg.num_classes)?;
    let instances = cfg.instances || cfg.layout == Layout::Split;
    let edge_color = instances.then_some(EDGE_COLOR);
    let render = |mask: SegmentationMask, inst: Option<InstanceMap>, rng: &mut ChaCha8Rng| {
        let inst = inst.filter(|_| instances);
        let target = render_target(&mask, inst.as_ref(), &palette, rng);
        SyntheticScene {
            mask,
            target,
            instances: inst,
        }
    };
    let scenes = par::map_range(cfg.n, |i| {
        let mut rng = scene_rng(cfg.seed, i as u64);
        let (mask, inst) = layout_mask(cfg.layout, r, cfg.num_classes, &mut rng);
        render(mask, Some(inst), &mut rng)
    });
    let flat = (0..cfg.num_classes)
        .map(|c| {
            let mut rng = scene_rng(cfg.seed, (1 << 32) + c as u64);
            let mask = SegmentationMask::uniform(r, r, cfg.num_classes, c as u32).expect("class in range");
            let inst = InstanceMap::from_fn(r, r, |_, _| 0);
            render(mask, Some(inst), &mut rng)
        })
        .collect();
    Ok(Dataset {
        layout: cfg.layout,
        resolution: r,
        num_classes: cfg.num_classes,
        palette,
        edge_color,
        scenes,
        flat,
    })
}

fn layout_mask(layout: Layout, r: usize, nc: usize, rng: &mut ChaCha8Rng) -> (SegmentationMask, InstanceMap) {
    let mut classes: Vec<u32> = (0..nc as u32).collect();
    for i in (1..nc).rev() {
        classes.swap(i, rng.random_range(0..=i));
    }
    let (labels, ids): (Vec<u32>, Vec<u32>) = match layout {
        Layout::Stripes => (0..r * r)
            .map(|p| {
                let band = (p % r) * nc / r;
                (classes[band], band as u32)
            })
            .unzip(),
        Layout::Voronoi => {
            let k = rng.random_range(nc..=2 * nc);
            let sites: Vec<(f32, f32, u32)> = (0..k)
                .map(|s| {
                    let class = if s < nc { classes[s] } else { rng.random_range(0..nc as u32) };
                    (rng.random_range(0.0..r as f32), rng.random_range(0.0..r as f32), class)
                })
                .collect();
            (0..r * r)
                .map(|p| {
                    let (y, x) = ((p / r) as f32 + 0.5, (p % r) as f32 + 0.5);
                    let (site, _) = sites.iter().enumerate().fold((0, f32::INFINITY), |best, (s, &(sy, sx, _))| {
                        let d = (y - sy).powi(2) + (x - sx).powi(2);
                        if d < best.1 {
                            (s, d)
                        } else {
                            best
                        }
                    });
                    (sites[site].2, site as u32)
                })
                .unzip()
        }
        Layout::Blobs => {
            let mut labels = vec![classes[0]; r * r];
            let mut ids = vec![0u32; r * r];
            let count = rng.random_range(2..=5);
            for b in 0..count {
                let class = classes[1 + b % (nc - 1)];
                let (cy, cx) = (rng.random_range(0.0..r as f32), rng.random_range(0.0..r as f32));
                let ry = rng.random_range(r as f32 / 8.0..r as f32 / 3.0);
                let rx = rng.random_range(r as f32 / 8.0..r as f32 / 3.0);
                for p in 0..r * r {
                    let (y, x) = ((p / r) as f32 + 0.5, (p % r) as f32 + 0.5);
                    if ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0 {
                        labels[p] = class;
                        ids[p] = b as u32 + 1;
                    }
                }
            }
            (labels, ids)
        }
        Layout::Split => {
            let class = classes[0];
            let at = rng.random_range(r / 4..3 * r / 4);
            let vertical = rng.random_bool(0.5);
            (0..r * r)
                .map(|p| {
                    let coord = if vertical { p % r } else { p / r };
                    (class, u32::from(coord >= at))
                })
                .unzip()
        }
    };
    (
        SegmentationMask::new(r, r, nc, labels).expect("layout labels are in range"),
        InstanceMap::new(r, r, ids).expect("instance ids sized to the grid"),
    )
}

/// Per-class texture: a plane wave whose frequency and direction depend only
/// on the class.
fn texture(class: u32, i: usize, j: usize, r: usize) -> f32 {
    let freq = 2.0 + (class % 4) as f32;
    let theta = class as f32 * 0.9;
    let t = (i as f32 * theta.cos() + j as f32 * theta.sin()) / r as f32;
    TEXTURE_AMP * (TAU * freq * t).sin()
}

fn render_target(mask: &SegmentationMask, inst: Option<&InstanceMap>, palette: &[Color], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (h, w) = (mask.height(), mask.width());
    let edges = inst.map(edge_map::<f32>);
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for i in 0..h {
        for j in 0..w {
            let class = mask.get(i, j);
            let on_edge = edges.as_ref().is_some_and(|e| e.at(0, 0, i, j) > 0.5);
            let base = if on_edge { EDGE_COLOR } else { palette[class as usize] };
            let tex = if on_edge { 0.0 } else { texture(class, i, j, h) };
            for (c, &b) in base.iter().enumerate() {
                let n: f32 = rng.sample(StandardNormal);
                let v = b + tex + NOISE_AMP * n.clamp(-2.5, 2.5);
                t.set(0, c, i, j, v.clamp(-1.0, 1.0));
            }
        }
    }
    t
}
