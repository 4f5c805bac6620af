use crate::error::{Error, Result};
use crate::layers::SegmentationMask;
use crate::tensor::Tensor;

use super::data::{distance, Color};

fn pixel(image: &Tensor<f32>, item: usize, i: usize, j: usize) -> Color {
    [image.at(item, 0, i, j), image.at(item, 1, i, j), image.at(item, 2, i, j)]
}

fn nearest(c: &Color, palette: &[Color]) -> usize {
    // Strict comparison keeps the lowest index on ties.
    let mut best = (0, f32::INFINITY);
    for (k, p) in palette.iter().enumerate() {
        let d = distance(c, p);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn check_image(image: &Tensor<f32>, item: usize) -> Result<()> {
    let s = image.shape();
    if s.c != 3 || item >= s.n {
        return Err(Error::shape("segment", format!("item {item} of image {s}")));
    }
    Ok(())
}

fn check_palette(palette: &[Color]) -> Result<()> {
    if palette.is_empty() {
        return Err(Error::InvalidArgument("empty palette".into()));
    }
    Ok(())
}

/// Labels every pixel with its nearest palette color.
pub fn oracle_segment(image: &Tensor<f32>, item: usize, palette: &[Color]) -> Result<SegmentationMask> {
    check_image(image, item)?;
    check_palette(palette)?;
    let s = image.shape();
    SegmentationMask::from_fn(s.h, s.w, palette.len(), |i, j| nearest(&pixel(image, item, i, j), palette) as u32)
}

/// Pixels whose nearest color among the palette and `edge` is `edge`,
/// row-major.
pub fn edge_pixels(image: &Tensor<f32>, item: usize, palette: &[Color], edge: Color) -> Result<Vec<bool>> {
    check_image(image, item)?;
    check_palette(palette)?;
    let s = image.shape();
    let mut all = palette.to_vec();
    all.push(edge);
    Ok((0..s.h * s.w)
        .map(|p| nearest(&pixel(image, item, p / s.w, p % s.w), &all) == palette.len())
        .collect())
}

/// Pooled `gt × pred` pixel counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Confusion {
    num_classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Confusion {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn add(&mut self, pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::shape("confusion", "prediction and ground truth differ in size"));
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            let (p, g) = (p as usize, g as usize);
            if p >= self.num_classes || g >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: p.max(g) as u32,
                    num_classes: self.num_classes,
                });
            }
            self.counts[g * self.num_classes + p] += 1;
        }
        Ok(())
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..self.num_classes).map(|c| self.count(c, c)).sum();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }

    /// Mean IoU over classes present in either ground truth or prediction.
    pub fn miou(&self) -> f64 {
        let n = self.num_classes;
        let mut sum = 0.0;
        let mut present = 0;
        for c in 0..n {
            let row: u64 = (0..n).map(|p| self.count(c, p)).sum();
            let col: u64 = (0..n).map(|g| self.count(g, c)).sum();
            if row + col == 0 {
                continue;
            }
            let tp = self.count(c, c);
            sum += tp as f64 / (row + col - tp) as f64;
            present += 1;
        }
        if present == 0 {
            0.0
        } else {
            sum / present as f64
        }
    }
}

pub fn pixel_accuracy(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<f64> {
    let mut c = Confusion::new(pred.num_classes().max(gt.num_classes()));
    c.add(pred, gt)?;
    Ok(c.pixel_accuracy())
}

pub fn miou(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<f64> {
    let mut c = Confusion::new(pred.num_classes().max(gt.num_classes()));
    c.add(pred, gt)?;
    Ok(c.miou())
}

/// Precision, recall and F1 of predicted boundary pixels, exact pixel match.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeScore {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl EdgeScore {
    pub fn add(&mut self, pred: &[bool], gt: &[bool]) {
        for (&p, &g) in pred.iter().zip(gt) {
            match (p, g) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
