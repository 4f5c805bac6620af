use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// `H×W` grid of class labels in `[0, N_c)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SegmentationMask {
    h: usize,
    w: usize,
    num_classes: usize,
    labels: Vec<u32>,
}

impl SegmentationMask {
    pub fn new(h: usize, w: usize, num_classes: usize, labels: Vec<u32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("mask needs at least one class".into()));
        }
        if labels.len() != h * w {
            return Err(Error::shape("mask", format!("{} labels for {h}x{w}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        Ok(SegmentationMask {
            h,
            w,
            num_classes,
            labels,
        })
    }

    pub fn uniform(h: usize, w: usize, num_classes: usize, label: u32) -> Result<Self> {
        Self::new(h, w, num_classes, vec![label; h * w])
    }

    pub fn from_fn(h: usize, w: usize, num_classes: usize, f: impl Fn(usize, usize) -> u32) -> Result<Self> {
        let labels = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Self::new(h, w, num_classes, labels)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.labels[i * self.w + j]
    }

    /// Nearest-neighbour resampling; labels are categorical, so no blending.
    pub fn resize_nearest(&self, h: usize, w: usize) -> SegmentationMask {
        if (h, w) == (self.h, self.w) {
            return self.clone();
        }
        let labels = (0..h)
            .flat_map(|i| (0..w).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i * self.h / h, j * self.w / w))
            .collect();
        SegmentationMask {
            h,
            w,
            num_classes: self.num_classes,
            labels,
        }
    }

    /// `1×N_c×H×W` one-hot encoding.
    pub fn one_hot<T: Real>(&self) -> Tensor<T> {
        let plane = self.h * self.w;
        let mut t = Tensor::zeros(Shape::new(1, self.num_classes, self.h, self.w));
        for (p, &l) in self.labels.iter().enumerate() {
            t.data_mut()[l as usize * plane + p] = T::ONE;
        }
        t
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }
}

/// Labels of several equally sized masks, laid out `N×H×W`.
#[derive(Clone, Debug)]
pub struct LabelBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    pub labels: Arc<[u32]>,
}

impl LabelBatch {
    pub fn from_masks<'a>(masks: impl IntoIterator<Item = &'a SegmentationMask>) -> Result<Self> {
        let mut it = masks.into_iter().peekable();
        let first = it
            .peek()
            .ok_or_else(|| Error::InvalidArgument("empty mask batch".into()))?;
        let (h, w, num_classes) = (first.h, first.w, first.num_classes);
        let mut labels = Vec::new();
        let mut n = 0;
        for m in it {
            if (m.h, m.w, m.num_classes) != (h, w, num_classes) {
                return Err(Error::shape(
                    "mask batch",
                    format!("{}x{} ({} classes) vs {h}x{w} ({num_classes})", m.h, m.w, m.num_classes),
                ));
            }
            labels.extend_from_slice(&m.labels);
            n += 1;
        }
        Ok(LabelBatch {
            n,
            h,
            w,
            num_classes,
            labels: labels.into(),
        })
    }

    pub fn resize_nearest(&self, h: usize, w: usize) -> LabelBatch {
        if (h, w) == (self.h, self.w) {
            return self.clone();
        }
        let plane = self.h * self.w;
        let mut labels = Vec::with_capacity(self.n * h * w);
        for n in 0..self.n {
            let src = &self.labels[n * plane..(n + 1) * plane];
            for i in 0..h {
                for j in 0..w {
                    labels.push(src[(i * self.h / h) * self.w + j * self.w / w]);
                }
            }
        }
        LabelBatch {
            n: self.n,
            h,
            w,
            num_classes: self.num_classes,
            labels: labels.into(),
        }
    }

    /// `N×N_c×H×W` one-hot encoding.
    pub fn one_hot<T: Real>(&self) -> Tensor<T> {
        let plane = self.h * self.w;
        let mut t = Tensor::zeros(Shape::new(self.n, self.num_classes, self.h, self.w));
        let d = t.data_mut();
        for n in 0..self.n {
            for p in 0..plane {
                let l = self.labels[n * plane + p] as usize;
                d[(n * self.num_classes + l) * plane + p] = T::ONE;
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_labels() {
        assert!(matches!(
            SegmentationMask::new(1, 2, 2, vec![0, 2]),
            Err(Error::LabelOutOfRange { label: 2, num_classes: 2 })
        ));
    }

    #[test]
    fn nearest_downsample_keeps_categories() {
        let m = SegmentationMask::from_fn(4, 4, 3, |i, j| ((i / 2) + (j / 2)) as u32 % 3).unwrap();
        let d = m.resize_nearest(2, 2);
        assert_eq!(d.labels(), &[0, 1, 1, 2]);
        let b = LabelBatch::from_masks([&m, &m]).unwrap().resize_nearest(2, 2);
        assert_eq!(&b.labels[..], &[0, 1, 1, 2, 0, 1, 1, 2]);
    }

    #[test]
    fn one_hot_sums_to_one() {
        let m = SegmentationMask::from_fn(3, 3, 4, |i, j| ((i * 3 + j) % 4) as u32).unwrap();
        let oh = m.one_hot::<f32>();
        for p in 0..9 {
            let s: f32 = (0..4).map(|c| oh.data()[c * 9 + p]).sum();
            assert_eq!(s, 1.0);
        }
    }
}
