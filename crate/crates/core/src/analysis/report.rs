use std::fmt::Write as _;
use std::io::{self, Write};

use super::cost::{count_bn, count_clade, count_conv, count_linear, count_spade, Cost};
use crate::error::{Error, Result};
use crate::generator::{GraphSpec, LayerKind, LayerSpec, NormMode};

pub const CSV_HEADER: &str = "layer,kind,cin,cout,h,w,params,flops,norm_params,norm_flops,ratio_params,ratio_flops";

/// One report line: a layer, or one sub-layer of a residual block.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// Layer path, e.g. `3` or `3.conv_0`.
    pub layer: String,
    pub kind: String,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    /// Stored parameters, biases included.
    pub params: u64,
    pub flops: u64,
    /// For convolutions paired with a norm site: the norm's formula cost,
    /// sized to this convolution's output.
    pub norm: Option<Cost>,
    /// `norm / conv`, with the convolution's bias-free formula cost.
    pub ratio: Option<(f64, f64)>,
    /// Bias-free formula cost of the convolution, for paired rows.
    pub conv: Option<Cost>,
}

/// How per-pair ratios are averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// `Σ norm / Σ conv` over all pairs.
    Totals,
    /// Arithmetic mean of the per-pair ratios.
    PerSiteMean,
}

impl Convention {
    pub fn describe(self) -> &'static str {
        match self {
            Convention::Totals => "ratio of totals (sum of norm cost / sum of conv cost over all pairs)",
            Convention::PerSiteMean => "mean of per-pair ratios",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioSummary {
    pub params: f64,
    pub flops: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AnalyzeOptions {
    /// Count a multiply-accumulate as two FLOPs.
    pub mac_as_2flops: bool,
}

#[derive(Clone, Debug)]
pub struct ComplexityReport {
    pub mode: NormMode,
    pub options: AnalyzeOptions,
    pub rows: Vec<ReportRow>,
    pub total_params: u64,
    pub total_flops: u64,
}

/// Stored parameters of one norm site with `c` channels.
fn norm_live_params(mode: NormMode, spec: &GraphSpec, c: usize) -> u64 {
    let formula = norm_formula(mode, spec, c, 1, 1).params;
    let biases = match mode {
        NormMode::Spade => spec.hidden + 2 * c,
        NormMode::Clade | NormMode::Bn => 0,
    };
    formula + biases as u64
}

fn norm_formula(mode: NormMode, spec: &GraphSpec, c: usize, h: usize, w: usize) -> Cost {
    match mode {
        NormMode::Spade => count_spade(spec.mod_kernel, spec.num_classes, spec.hidden, c, h, w),
        NormMode::Clade => count_clade(spec.num_classes, c, h, w),
        NormMode::Bn => count_bn(c, h, w),
    }
}

fn kind_name(mode: NormMode) -> String {
    format!("norm_{mode}")
}

struct Builder<'a> {
    spec: &'a GraphSpec,
    rows: Vec<ReportRow>,
}

impl Builder<'_> {
    fn row(&mut self, layer: String, kind: &str, cin: usize, cout: usize, l: &LayerSpec, params: u64, flops: u64) {
        self.rows.push(ReportRow {
            layer,
            kind: kind.to_string(),
            cin,
            cout,
            h: l.h,
            w: l.w,
            params,
            flops,
            norm: None,
            ratio: None,
            conv: None,
        });
    }

    fn norm(&mut self, layer: String, mode: NormMode, c: usize, l: &LayerSpec) {
        let params = norm_live_params(mode, self.spec, c);
        let flops = norm_formula(mode, self.spec, c, l.h, l.w).flops;
        self.row(layer, &kind_name(mode), c, c, l, params, flops);
    }

    /// A convolution row, paired with a norm of mode `pair` when given.
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, layer: String, k: usize, cin: usize, cout: usize, bias: bool, l: &LayerSpec, pair: Option<NormMode>) {
        let formula = count_conv(k, cin, cout, l.h, l.w);
        let params = formula.params + if bias { cout as u64 } else { 0 };
        self.row(layer, "conv", cin, cout, l, params, formula.flops);
        if let Some(mode) = pair {
            let norm = norm_formula(mode, self.spec, cout, l.h, l.w);
            let r = self.rows.last_mut().expect("row just pushed");
            r.norm = Some(norm);
            r.ratio = Some(norm.ratio(formula));
            r.conv = Some(formula);
        }
    }
}

/// Per-layer parameter/FLOP report for `spec` in its norm mode.
///
/// Every convolution inside a residual block is paired with a norm site of the
/// graph's mode sized to that convolution's output; a standalone convolution
/// is paired with a standalone norm directly after it (activations may sit in
/// between). A standalone norm without such a convolution is rejected.
pub fn analyze(spec: &GraphSpec, options: AnalyzeOptions) -> Result<ComplexityReport> {
    let mode = spec.mode;
    let mut b = Builder { spec, rows: Vec::new() };
    let edge = usize::from(spec.use_edge);
    let mut edge_flops = 0u64;
    let layers = &spec.layers;
    // nearest non-activation neighbour in either direction
    let neighbour = |i: usize, forward: bool| -> Option<&LayerSpec> {
        let mut j = i;
        loop {
            j = if forward { j.checked_add(1).filter(|&j| j < layers.len())? } else { j.checked_sub(1)? };
            if !matches!(layers[j].kind, LayerKind::Activation(_)) {
                return Some(&layers[j]);
            }
        }
    };
    for (i, l) in layers.iter().enumerate() {
        let p = i.to_string();
        match l.kind {
            LayerKind::Linear => {
                let d = l.cout * l.h * l.w;
                let c = count_linear(l.cin, d);
                b.row(p, "linear", l.cin, l.cout, l, c.params + d as u64, c.flops);
            }
            LayerKind::Conv => {
                let pair = neighbour(i, true).and_then(|n| n.norm_mode(mode));
                b.conv(p, l.k, l.cin, l.cout, true, l, pair);
            }
            LayerKind::Norm(_) => {
                if neighbour(i, false).is_none_or(|n| n.kind != LayerKind::Conv) {
                    return Err(Error::SpecInvalid {
                        layer: i,
                        msg: "norm site has no precedent convolution".into(),
                    });
                }
                b.norm(p, l.norm_mode(mode).unwrap_or(mode), l.cin, l);
            }
            LayerKind::ResBlock => {
                let mid = l.mid_channels();
                if l.learned_skip() {
                    b.norm(format!("{p}.norm_s"), mode, l.cin, l);
                    b.conv(format!("{p}.conv_s"), 1, l.cin, l.cout, false, l, Some(mode));
                }
                b.norm(format!("{p}.norm_0"), mode, l.cin, l);
                b.conv(format!("{p}.conv_0"), l.k, l.cin + edge, mid, true, l, Some(mode));
                b.norm(format!("{p}.norm_1"), mode, mid, l);
                b.conv(format!("{p}.conv_1"), l.k, mid, l.cout, true, l, Some(mode));
                edge_flops += (edge * l.h * l.w) as u64;
            }
            LayerKind::ConcatEdge => {
                edge_flops += (l.h * l.w) as u64;
                b.row(p, "concat_edge", l.cin, l.cout, l, 0, 0);
            }
            LayerKind::Upsample => b.row(p, "upsample", l.cin, l.cout, l, 0, 0),
            LayerKind::Activation(_) => b.row(p, "activation", l.cin, l.cout, l, 0, 0),
        }
    }
    if spec.use_edge {
        let last = layers.last().expect("validated graphs are non-empty");
        b.row("edge".into(), "edge_mod", 1, 1, last, 2, edge_flops);
        let r = b.rows.last_mut().expect("row just pushed");
        r.h = spec.resolution;
        r.w = spec.resolution;
    }
    let mut rows = b.rows;
    if options.mac_as_2flops {
        for r in &mut rows {
            r.flops *= 2;
            if let Some(n) = &mut r.norm {
                n.flops *= 2;
            }
            if let Some(c) = &mut r.conv {
                c.flops *= 2;
            }
        }
    }
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_flops = rows.iter().map(|r| r.flops).sum();
    Ok(ComplexityReport {
        mode,
        options,
        rows,
        total_params,
        total_flops,
    })
}

impl ComplexityReport {
    /// Number of norm–conv pairs.
    pub fn pairs(&self) -> usize {
        self.rows.iter().filter(|r| r.ratio.is_some()).count()
    }

    pub fn average(&self, convention: Convention) -> Option<RatioSummary> {
        let paired: Vec<&ReportRow> = self.rows.iter().filter(|r| r.ratio.is_some()).collect();
        if paired.is_empty() {
            return None;
        }
        Some(match convention {
            Convention::Totals => {
                let norm: Cost = paired.iter().filter_map(|r| r.norm).sum();
                let conv: Cost = paired.iter().filter_map(|r| r.conv).sum();
                let (params, flops) = norm.ratio(conv);
                RatioSummary { params, flops }
            }
            Convention::PerSiteMean => {
                let n = paired.len() as f64;
                let (sp, sf) = paired
                    .iter()
                    .filter_map(|r| r.ratio)
                    .fold((0.0, 0.0), |(a, b), (p, f)| (a + p, b + f));
                RatioSummary {
                    params: sp / n,
                    flops: sf / n,
                }
            }
        })
    }

    /// The convention behind the headline averages.
    pub const REPORTED: Convention = Convention::Totals;

    /// `avg_param_ratio=… avg_flops_ratio=… total_params=… total_flops=…`,
    /// ratios as fractions under [`Self::REPORTED`].
    pub fn aggregate_line(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        let avg = self.average(Self::REPORTED);
        format!(
            "avg_param_ratio={} avg_flops_ratio={} total_params={} total_flops={}",
            fmt(avg.map(|a| a.params)),
            fmt(avg.map(|a| a.flops)),
            self.total_params,
            self.total_flops
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            let opt = |v: Option<String>| v.unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.layer,
                r.kind,
                r.cin,
                r.cout,
                r.h,
                r.w,
                r.params,
                r.flops,
                opt(r.norm.map(|n| n.params.to_string())),
                opt(r.norm.map(|n| n.flops.to_string())),
                opt(r.ratio.map(|x| x.0.to_string())),
                opt(r.ratio.map(|x| x.1.to_string())),
            )?;
        }
        Ok(())
    }

    /// Human-readable table with both averaging conventions.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:<11} {:>5} {:>5} {:>4} {:>4} {:>12} {:>15} {:>9} {:>9}",
            "layer", "kind", "cin", "cout", "h", "w", "params", "flops", "r_params", "r_flops"
        );
        for r in &self.rows {
            let pct = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{:.2}%", 100.0 * v));
            let _ = writeln!(
                s,
                "{:<12} {:<11} {:>5} {:>5} {:>4} {:>4} {:>12} {:>15} {:>9} {:>9}",
                r.layer,
                r.kind,
                r.cin,
                r.cout,
                r.h,
                r.w,
                r.params,
                r.flops,
                pct(r.ratio.map(|x| x.0)),
                pct(r.ratio.map(|x| x.1)),
            );
        }
        let flop_unit = if self.options.mac_as_2flops { "1 MAC = 2 FLOPs" } else { "1 MAC = 1 FLOP" };
        let _ = writeln!(
            s,
            "\nmode {}: {:.1}M params, {:.1}G FLOPs ({flop_unit})",
            self.mode,
            self.total_params as f64 / 1e6,
            self.total_flops as f64 / 1e9
        );
        for c in [Convention::Totals, Convention::PerSiteMean] {
            if let Some(a) = self.average(c) {
                let tag = if c == Self::REPORTED { " [reported]" } else { "" };
                let _ = writeln!(
                    s,
                    "norm/conv over {} pairs, {}{tag}: params {:.2}%, FLOPs {:.2}%",
                    self.pairs(),
                    c.describe(),
                    100.0 * a.params,
                    100.0 * a.flops
                );
            }
        }
        s
    }
}
