//! Closed-form parameter and FLOP counts. FLOPs count one multiply-accumulate
//! as one operation; biases are excluded.

/// Parameters and FLOPs of one layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub params: u64,
    pub flops: u64,
}

impl Cost {
    /// `cost` over `other`, as fractions.
    pub fn ratio(self, other: Cost) -> (f64, f64) {
        (self.params as f64 / other.params as f64, self.flops as f64 / other.flops as f64)
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            flops: self.flops + o.flops,
        }
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

fn u(v: usize) -> u64 {
    v as u64
}

/// `k²·C_in·C_out` weights, applied at every output pixel.
pub fn count_conv(k: usize, cin: usize, cout: usize, h: usize, w: usize) -> Cost {
    let params = u(k * k) * u(cin) * u(cout);
    Cost {
        params,
        flops: params * u(h) * u(w),
    }
}

/// SPADE modulation network: a shared `k_m×k_m` conv from the one-hot mask
/// to `C_m` channels and two heads from `C_m` to `C_out`.
pub fn count_spade(km: usize, num_classes: usize, hidden: usize, cout: usize, h: usize, w: usize) -> Cost {
    let params = u(km * km) * (u(num_classes) * u(hidden) + 2 * u(hidden) * u(cout));
    Cost {
        params,
        flops: params * u(h) * u(w),
    }
}

/// CLADE: a `N_c×C_out` bank for each of `γ` and `β`; guided sampling is a
/// lookup, so the only arithmetic is the per-element modulation.
pub fn count_clade(num_classes: usize, cout: usize, h: usize, w: usize) -> Cost {
    Cost {
        params: 2 * u(num_classes) * u(cout),
        flops: u(cout) * u(h) * u(w),
    }
}

/// Batch norm's per-channel affine; equal to CLADE with a single class.
pub fn count_bn(cout: usize, h: usize, w: usize) -> Cost {
    count_clade(1, cout, h, w)
}

pub fn count_linear(din: usize, dout: usize) -> Cost {
    let params = u(din) * u(dout);
    Cost { params, flops: params }
}
