//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit
//! if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cladelab::analysis::{
    analyze, count_bn, count_clade, count_conv, count_spade, modulation_maps, AnalyzeOptions, ComplexityReport,
    Convention,
};
use cladelab::generator::{noise_batch, GraphSpec, Model, NormMode};
use cladelab::layers::{
    clade_forward, edge_map, edge_modulate, guided_sample, instance_norm, normalize_batch, spade_forward,
    EdgeModParams, InstanceMap, LabelBatch, NormStats, ParamBank, SegmentationMask, SpadeBlockParams, EPS,
};
use cladelab::tensor::{finite_diff_check_against, NormGroups};
use cladelab::training::{
    bench_site, evaluate, hinge_d, hinge_g, l1, make_dataset, train, Dataset, Layout, SiteConfig, TrainConfig,
};
use cladelab::{Result, Shape, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    checks: Vec<(String, bool)>,
    notes: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Report {
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        self.checks.push((what.into(), ok));
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

fn run(id: usize, title: &str, budget: Duration, f: impl FnOnce(&mut Report) -> Result<()>) -> bool {
    let start = Instant::now();
    let mut r = Report::new();
    let res = f(&mut r);
    let elapsed = start.elapsed();
    if let Err(e) = &res {
        r.check(format!("ran without error ({e})"), false);
    }
    r.check(format!("runtime {:.1}s within {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()), elapsed <= budget);
    let pass = r.checks.iter().all(|c| c.1);
    println!("criterion {id:>2} {}: {title} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    for n in &r.notes {
        println!("      {n}");
    }
    for (what, _) in r.checks.iter().filter(|c| !c.1) {
        println!("      failed: {what}");
    }
    pass
}

fn random<T: cladelab::Real>(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64(rng.random_range(-1.0..1.0)))
}

/// Magnitudes in [0.2, 1] with random sign, keeping kinks out of reach of
/// the finite-difference step.
fn away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(0.2f32..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn random_bank(nc: usize, c: usize, rng: &mut ChaCha8Rng) -> ParamBank {
    let mut b = ParamBank::new(nc, c);
    for l in 0..nc {
        for k in 0..c {
            b.set(l, k, rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0));
        }
    }
    b
}

fn random_mask(h: usize, w: usize, nc: usize, rng: &mut ChaCha8Rng) -> SegmentationMask {
    let labels = (0..h * w).map(|_| rng.random_range(0..nc as u32)).collect();
    SegmentationMask::new(h, w, nc, labels).unwrap()
}

// ---------------------------------------------------------------- 1

fn formula_fidelity(r: &mut Report) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows = 0;
    for _ in 0..100 {
        let k = [1usize, 3, 5][rng.random_range(0..3)];
        let (cin, cout) = (rng.random_range(1..1025), rng.random_range(1..1025));
        let (h, w) = (rng.random_range(1..257), rng.random_range(1..257));
        let (nc, cm) = (rng.random_range(1..200), rng.random_range(1..257));
        let (cin64, cout64, hw) = (cin as u64, cout as u64, (h * w) as u64);
        let conv_p = (k * k) as u64 * cin64 * cout64;
        let spade_p = 9 * (nc as u64 * cm as u64 + 2 * cm as u64 * cout64);
        let conv = count_conv(k, cin, cout, h, w);
        let spade = count_spade(3, nc, cm, cout, h, w);
        let clade = count_clade(nc, cout, h, w);
        let bn = count_bn(cout, h, w);
        r.check("conv", (conv.params, conv.flops) == (conv_p, conv_p * hw));
        r.check("spade", (spade.params, spade.flops) == (spade_p, spade_p * hw));
        r.check("clade", (clade.params, clade.flops) == (2 * nc as u64 * cout64, cout64 * hw));
        r.check("bn", (bn.params, bn.flops) == (2 * cout64, cout64 * hw));
        let (pr, fr) = spade.ratio(conv);
        r.check("spade flops ratio equals params ratio", pr == fr);

        // The same formulas through the analyzer on a small graph.
        let (a, b, res) = (rng.random_range(1..48), rng.random_range(1..48), 4 * rng.random_range(1..5));
        let mode = NormMode::ALL[rng.random_range(0..3)];
        let text = format!(
            "noise=8 resolution={res} classes={nc} hidden={cm} mode={mode}
             kind=linear cout={a} h={res} w={res}
             kind=resblock cout={b}
             kind=conv cout=3
             kind=activation fn=tanh"
        );
        let spec = GraphSpec::parse(&text)?;
        let report = analyze(&spec, AnalyzeOptions::default())?;
        for row in report.rows.iter().filter(|x| x.ratio.is_some()) {
            rows += 1;
            let kk = if row.layer.ends_with("conv_s") { 1 } else { 3 };
            let c = (kk * kk * row.cin * row.cout) as u64;
            let n = match mode {
                NormMode::Spade => 9 * (nc * cm + 2 * cm * row.cout) as u64,
                NormMode::Clade => 2 * (nc * row.cout) as u64,
                NormMode::Bn => 2 * row.cout as u64,
            };
            let nf = if mode == NormMode::Spade { n * (res * res) as u64 } else { (row.cout * res * res) as u64 };
            let norm = row.norm.unwrap();
            r.check(format!("analyzer row {}", row.layer), (norm.params, norm.flops) == (n, nf));
            let (rp, rf) = row.ratio.unwrap();
            r.check("analyzer ratio", rp == n as f64 / c as f64 && rf == nf as f64 / (c * (res * res) as u64) as f64);
            if mode == NormMode::Spade {
                r.check("analyzer spade ratio identity", rp == rf);
            }
        }
    }
    r.note(format!("100 configs, {rows} analyzer norm/conv pairs, all exact"));
    Ok(())
}

// ---------------------------------------------------------------- 2, 3

fn paper_reports() -> Result<(ComplexityReport, ComplexityReport)> {
    let p = GraphSpec::preset("paper-256")?;
    Ok((
        analyze(&p.clone().with_mode(NormMode::Spade), AnalyzeOptions::default())?,
        analyze(&p.with_mode(NormMode::Clade), AnalyzeOptions::default())?,
    ))
}

fn published_ratios(r: &mut Report) -> Result<()> {
    let (s, c) = paper_reports()?;
    for conv in [Convention::Totals, Convention::PerSiteMean] {
        let (sa, ca) = (s.average(conv).unwrap(), c.average(conv).unwrap());
        r.note(format!(
            "{:<13} SPADE {:.2}% params / {:.2}% FLOPs, CLADE {:.2}% / {:.3}%",
            conv.describe(),
            100.0 * sa.params,
            100.0 * sa.flops,
            100.0 * ca.params,
            100.0 * ca.flops
        ));
    }
    let (sa, ca) = (s.average(ComplexityReport::REPORTED).unwrap(), c.average(ComplexityReport::REPORTED).unwrap());
    r.note(format!(
        "reported convention: {} (targets 39.21% / 234.73%, 4.57% / 0.07%)",
        ComplexityReport::REPORTED.describe()
    ));
    r.check("SPADE params within 5 pts of 39.21%", (sa.params - 0.3921).abs() <= 0.05);
    r.check("SPADE FLOPs within 25% of 234.73%", (sa.flops / 2.3473 - 1.0).abs() <= 0.25);
    r.check("CLADE params within 2 pts of 4.57%", (ca.params - 0.0457).abs() <= 0.02);
    r.check("CLADE FLOPs 0.07% ± 0.05 pts", (ca.flops - 0.0007).abs() <= 0.0005);
    Ok(())
}

fn reference_totals(r: &mut Report) -> Result<()> {
    let (s, c) = paper_reports()?;
    for (name, rep, p, f) in [("SPADE", &s, 96.5e6, 181.3e9), ("CLADE", &c, 71.4e6, 42.2e9)] {
        let (dp, df) = (rep.total_params as f64 / p - 1.0, rep.total_flops as f64 / f - 1.0);
        r.note(format!(
            "{name}: {:.1}M params ({:+.1}%), {:.1}G FLOPs ({:+.1}%)",
            rep.total_params as f64 / 1e6,
            100.0 * dp,
            rep.total_flops as f64 / 1e9,
            100.0 * df
        ));
        r.check(format!("{name} totals within 15%"), dp.abs() <= 0.15 && df.abs() <= 0.15);
    }
    r.note("residual deviation: block layout, skip paths and bias handling are reconstructed, not published");
    Ok(())
}

// ---------------------------------------------------------------- 4

macro_rules! both {
    (|$tape:ident, $x:ident| $body:expr) => {
        (
            |$tape: &mut Tape<f32>, $x: Var| -> Result<Var> { $body },
            |$tape: &mut Tape<f64>, $x: Var| -> Result<Var> { $body },
        )
    };
}

fn gradient_checks(r: &mut Report) -> Result<()> {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let s = Shape::new(2, 3, 4, 4);
        let x = random::<f32>(s, &mut rng);
        let other = random::<f64>(s, &mut rng);
        let kinked = away_from_zero(s, &mut rng);
        let conv_w = random::<f64>(Shape::new(4, 3, 3, 3), &mut rng);
        let conv_b = random::<f64>(Shape::new(1, 4, 1, 1), &mut rng);
        let eps = 1e-3;

        macro_rules! fd {
            ($name:expr, $input:expr, |$tape:ident, $v:ident| $body:expr) => {{
                let (f32_fn, f64_fn) = both!(|$tape, $v| $body);
                record($name, finite_diff_check_against(&f32_fn, &f64_fn, &$input, eps)?);
            }};
        }

        fd!("conv2d/x", x, |t, v| {
            let w = t.constant(conv_w.cast());
            let b = t.constant(conv_b.cast());
            t.conv2d(v, w, Some(b), 1, 1)
        });
        fd!("conv2d/x stride 2", x, |t, v| {
            let w = t.constant(conv_w.cast());
            t.conv2d(v, w, None, 2, 1)
        });
        fd!("conv2d/w", conv_w.cast::<f32>(), |t, v| {
            let xv = t.constant(x.cast());
            t.conv2d(xv, v, None, 1, 1)
        });
        fd!("conv2d/b", conv_b.cast::<f32>(), |t, v| {
            let xv = t.constant(x.cast());
            let w = t.constant(conv_w.cast());
            t.conv2d(xv, w, Some(v), 1, 0)
        });
        let lin_w = random::<f64>(Shape::new(5, 48, 1, 1), &mut rng);
        fd!("linear/x", x, |t, v| {
            let w = t.constant(lin_w.cast());
            t.linear(v, w, None)
        });
        fd!("linear/w", lin_w.cast::<f32>(), |t, v| {
            let xv = t.constant(x.cast());
            let b = t.constant(Tensor::ones(Shape::new(1, 5, 1, 1)));
            t.linear(xv, v, Some(b))
        });
        fd!("upsample", x, |t, v| Ok(t.upsample_nearest2x(v)));
        fd!("relu", kinked, |t, v| Ok(t.relu(v)));
        fd!("leaky_relu", kinked, |t, v| Ok(t.leaky_relu(v, 0.2)));
        fd!("abs", kinked, |t, v| Ok(t.abs(v)));
        fd!("tanh", x, |t, v| Ok(t.tanh(v)));
        fd!("scale/add_scalar", x, |t, v| {
            let y = t.scale(v, -1.7);
            Ok(t.add_scalar(y, 0.3))
        });
        fd!("add/sub", x, |t, v| {
            let o = t.constant(other.cast());
            let a = t.add(v, o)?;
            t.sub(o, a)
        });
        fd!("mul", x, |t, v| {
            let o = t.constant(other.cast());
            let a = t.mul(v, o)?;
            t.mul(a, v)
        });
        let sc = random::<f64>(Shape::new(1, 3, 1, 1), &mut rng);
        fd!("affine/x", x, |t, v| {
            let a = t.constant(sc.cast());
            let b = t.constant(sc.cast());
            t.affine(v, a, b)
        });
        fd!("affine/broadcast scale", sc.cast::<f32>(), |t, v| {
            let xv = t.constant(x.cast());
            let b = t.constant(Tensor::zeros(Shape::new(1, 3, 1, 1)));
            t.affine(xv, v, b)
        });
        fd!("affine/full scale", x, |t, v| {
            let xv = t.constant(other.cast());
            t.affine(xv, v, v)
        });
        fd!("reshape", x, |t, v| {
            let y = t.reshape(v, Shape::new(2, 48, 1, 1))?;
            Ok(t.tanh(y))
        });
        fd!("concat", x, |t, v| {
            let o = t.constant(other.cast());
            let a = t.concat_channels(v, o)?;
            let b = t.concat_channels(o, v)?;
            t.mul(a, b)
        });
        fd!("sum/mean", x, |t, v| {
            let sq = t.mul(v, v)?;
            let a = t.sum(sq);
            let b = t.mean(v);
            t.add(a, b)
        });
        fd!("instance norm", x, |t, v| Ok(instance_norm(t, v, EPS)));
        fd!("batch-stat norm", x, |t, v| Ok(t.normalize(v, NormGroups::PerChannel, EPS).0));
        // L1 target offset by at least 0.2 from x keeps |·| off its kink.
        let target = Tensor::from_fn(s, |n, c, h, w| (x.at(n, c, h, w) + kinked.at(n, c, h, w)) as f64);
        fd!("losses", x, |t, v| {
            let o = t.constant(target.cast());
            let a = l1(t, v, o)?;
            // Halved logits stay inside the hinge margins.
            let h = t.scale(v, 0.5);
            let b = hinge_d(t, h, o)?;
            let c = hinge_g(t, h);
            let ab = t.add(a, b)?;
            t.add(ab, c)
        });

        let nc = 4;
        let masks: Vec<_> = (0..2).map(|_| random_mask(4, 4, nc, &mut rng)).collect();
        let labels = LabelBatch::from_masks(&masks)?;
        let bank = random_bank(nc, 3, &mut rng);
        let stats = NormStats::new(3);
        fd!("guided sample/bank", bank.gamma, |t, v| {
            let beta = t.constant(bank.beta.cast());
            let (g, b) = guided_sample(t, &labels, cladelab::layers::BankVars { gamma: v, beta })?;
            let g2 = t.mul(g, g)?;
            t.add(g2, b)
        });
        fd!("clade/x", x, |t, v| {
            let bv = bank.register(t);
            Ok(clade_forward(t, v, &labels, bv, &stats)?.0)
        });
        fd!("clade/beta bank", bank.beta, |t, v| {
            let xv = t.constant(x.cast());
            let gamma = t.constant(bank.gamma.cast());
            Ok(clade_forward(t, xv, &labels, cladelab::layers::BankVars { gamma, beta: v }, &stats)?.0)
        });
        // Redraw until no hidden pre-activation sits within reach of the
        // ReLU kink.
        let oh = labels.one_hot::<f64>();
        let mut tries = 0;
        let p = loop {
            tries += 1;
            assert!(tries < 10_000, "no kink-free SPADE draw");
            let p = SpadeBlockParams::init(nc, 5, 3, 3, &mut rng);
            let mut t = Tape::<f64>::inference();
            let m = t.constant(oh.clone());
            let (w, b) = (t.constant(p.shared_w.cast()), t.constant(p.shared_b.cast()));
            let pre = t.conv2d(m, w, Some(b), 1, 1)?;
            if t.value(pre).data().iter().all(|v| v.abs() > 2e-3) {
                break p;
            }
        };
        fd!("spade/x", x, |t, v| {
            let m = t.constant(oh.cast());
            let pv = p.register(t);
            Ok(spade_forward(t, v, m, pv, &stats)?.0)
        });
        fd!("spade/shared weight", p.shared_w, |t, v| {
            let xv = t.constant(x.cast());
            let m = t.constant(oh.cast());
            let mut pv = p.register(t);
            pv.shared_w = v;
            Ok(spade_forward(t, xv, m, pv, &stats)?.0)
        });
        fd!("spade/beta head", p.beta_w, |t, v| {
            let xv = t.constant(x.cast());
            let m = t.constant(oh.cast());
            let mut pv = p.register(t);
            pv.beta_w = v;
            Ok(spade_forward(t, xv, m, pv, &stats)?.0)
        });
        let inst = InstanceMap::from_fn(4, 4, |i, j| u32::from(i + j > 3));
        let e = edge_map::<f64>(&inst);
        fd!("edge modulation", Tensor::<f32>::scalar(rng.random_range(0.5..1.5)), |t, v| {
            let ev = t.constant(e.cast());
            let b = t.constant(Tensor::scalar(cladelab::Real::from_f64(0.25)));
            edge_modulate(t, ev, v, b)
        });
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let names: Vec<String> = worst.iter().map(|w| format!("{} {:.1e}", w.0, w.1)).collect();
    r.note(format!("{} checks x 20 seeds, max rel. error {max:.2e}", worst.len()));
    for chunk in names.chunks(4) {
        r.note(chunk.join(", "));
    }
    for (name, err) in worst {
        r.check(format!("{name}: {err:.2e} < 1e-3"), err < 1e-3);
    }
    Ok(())
}

// ---------------------------------------------------------------- 5

fn wash_away(r: &mut Report) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nc = 6;
    let conv_w = random::<f32>(Shape::new(16, nc, 3, 3), &mut rng);
    let bank = random_bank(nc, 16, &mut rng);
    let feature = random::<f32>(Shape::new(1, 16, 8, 8), &mut rng);
    let mut worst_in = 0f64;
    let mut worst_clade = 0f64;
    let mut min_clade_gap = f64::INFINITY;
    for a in 0..nc as u32 {
        for b in a + 1..nc as u32 {
            let mut outs = Vec::new();
            let mut tape = Tape::<f32>::new();
            for class in [a, b] {
                let mask = SegmentationMask::uniform(10, 10, nc, class)?;
                let oh = tape.constant(mask.one_hot());
                let w = tape.constant(conv_w.clone());
                let f = tape.conv2d(oh, w, None, 1, 0)?;
                outs.push(instance_norm(&mut tape, f, EPS));
            }
            worst_in = worst_in.max(tape.value(outs[0]).max_abs_diff(tape.value(outs[1])));

            // CLADE on a shared feature: the outputs differ by exactly the
            // difference of the two classes' affine transforms.
            let xv = tape.constant(feature.clone());
            let stats = NormStats::new(16);
            let (xhat, _) = normalize_batch(&mut tape, xv, &stats)?;
            let bv = bank.register(&mut tape);
            let mut clade = Vec::new();
            for class in [a, b] {
                let lab = LabelBatch::from_masks([&SegmentationMask::uniform(8, 8, nc, class)?])?;
                clade.push(clade_forward(&mut tape, xv, &lab, bv, &stats)?.0);
            }
            let (o0, o1, xh) = (tape.value(clade[0]), tape.value(clade[1]), tape.value(xhat));
            let (la, lb) = (a as usize, b as usize);
            let expected = Tensor::from_fn(o0.shape(), |n, c, h, w| {
                (bank.gamma_at(la, c) - bank.gamma_at(lb, c)) * xh.at(n, c, h, w) + bank.beta_at(la, c)
                    - bank.beta_at(lb, c)
            });
            let diff = Tensor::from_fn(o0.shape(), |n, c, h, w| o0.at(n, c, h, w) - o1.at(n, c, h, w));
            worst_clade = worst_clade.max(diff.max_abs_diff(&expected));
            min_clade_gap = min_clade_gap.min(diff.max_abs());
        }
    }
    r.note(format!(
        "conv→IN max class difference {worst_in:.2e}; CLADE vs bank affine difference {worst_clade:.2e} (smallest class gap {min_clade_gap:.3})"
    ));
    r.check("IN washes classes away (<1e-5)", worst_in < 1e-5);
    r.check("CLADE difference equals bank affine difference (1e-5)", worst_clade <= 1e-5);
    r.check("CLADE keeps classes apart", min_clade_gap > 1e-2);
    Ok(())
}

// ---------------------------------------------------------------- 6

fn randomize_banks(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (path, t) in model.params_mut() {
        if path.ends_with(".gamma") || path.ends_with(".beta") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
    }
}

fn modulation_spread(r: &mut Report) -> Result<()> {
    let toy = GraphSpec::preset("toy-64")?;
    let data = make_dataset(2, 64, toy.num_classes, Layout::Voronoi, 6)?;
    let masks: Vec<SegmentationMask> = data.scenes.iter().map(|s| s.mask.clone()).collect();
    let mut clade = Model::build(toy.clone().with_mode(NormMode::Clade), 6);
    randomize_banks(&mut clade, 6);
    let spade = Model::build(toy.with_mode(NormMode::Spade), 6);
    let clade_sites = modulation_maps(&clade, &masks, 2)?;
    let spade_sites = modulation_maps(&spade, &masks, 2)?;
    let cs = clade_sites.iter().map(|s| s.max_spread()).fold(0.0, f64::max);
    let si = spade_sites.iter().map(|s| s.max_interior_spread()).fold(0.0, f64::max);
    let sa = spade_sites.iter().map(|s| s.max_spread()).fold(0.0, f64::max);
    let interior: usize = spade_sites.iter().flat_map(|s| &s.classes).map(|c| c.interior_pixels).sum();
    let between = clade_sites
        .iter()
        .map(|s| {
            let m: Vec<f64> = s.classes.iter().map(|c| c.gamma_mean).collect();
            m.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - m.iter().fold(f64::INFINITY, |a, &b| a.min(b))
        })
        .fold(0.0, f64::max);
    r.note(format!(
        "{} sites, 2 masks: CLADE within-class spread {cs}, between-class gamma range {between:.3}; SPADE interior spread {si:.2e} over {interior} interior pixels (whole-region spread {sa:.3})",
        clade_sites.len()
    ));
    r.check("CLADE within-region spread exactly 0", cs == 0.0);
    r.check("SPADE interior spread < 1e-6", si < 1e-6);
    r.check("interior pixels exist", interior > 0);
    Ok(())
}

// ---------------------------------------------------------------- 7

fn flat_spread(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let noise = noise_batch(1, model.spec().noise_dim, 0);
    let outs: Vec<Tensor<f32>> = data
        .flat
        .iter()
        .map(|s| model.generate(&s.mask, noise.data(), None))
        .collect::<Result<_>>()?;
    let (mut max, mut min) = (0f64, f64::INFINITY);
    for a in 0..outs.len() {
        for b in a + 1..outs.len() {
            let d = outs[a].max_abs_diff(&outs[b]);
            max = max.max(d);
            min = min.min(d);
        }
    }
    Ok((max, min))
}

fn synthesis_parity(r: &mut Report) -> Result<()> {
    let toy = GraphSpec::preset("toy-64")?;
    let nc = toy.num_classes;
    let train_set = make_dataset(256, 64, nc, Layout::Voronoi, 0)?;
    let validation = make_dataset(64, 64, nc, Layout::Voronoi, 1)?;
    let held_out = make_dataset(64, 64, nc, Layout::Voronoi, 2)?;
    let cfg = TrainConfig::default();
    r.note(format!(
        "voronoi {nc} classes 64x64; {} steps, batch {}, lr {}, L1 only; selection on 64 validation masks, scores on 64 held-out masks",
        cfg.steps, cfg.batch, cfg.lr_g
    ));
    let mut acc = Vec::new();
    for mode in NormMode::ALL {
        let t = Instant::now();
        let out = train(toy.clone().with_mode(mode), &train_set, &validation, &cfg)?;
        if let Some(e) = &out.failure {
            r.check(format!("{mode} training finished ({e})"), false);
        }
        let test = evaluate(&out.best, &held_out, 0)?;
        let (flat_max, flat_min) = flat_spread(&out.best, &train_set)?;
        r.note(format!(
            "{mode}: acc {:.4} mIoU {:.4} (best step {}), flat-mask output difference min {flat_min:.3e} max {flat_max:.3e} [{:.0}s]",
            test.pixel_acc(),
            test.miou(),
            out.best_step,
            t.elapsed().as_secs_f64()
        ));
        match mode {
            NormMode::Bn => r.check("BN flat-mask outputs class-indistinguishable (1e-5)", flat_max <= 1e-5),
            _ => {
                r.check(format!("{mode} acc >= 0.90"), test.pixel_acc() >= 0.90);
                r.check(format!("{mode} mIoU >= 0.75"), test.miou() >= 0.75);
                acc.push(test.pixel_acc());
            }
        }
    }
    let gap = (acc[0] - acc[1]).abs();
    r.note(format!("|acc_SPADE - acc_CLADE| = {gap:.4}"));
    r.check("accuracy gap <= 0.05", gap <= 0.05);
    Ok(())
}

// ---------------------------------------------------------------- 8

fn site_runtime(r: &mut Report) -> Result<()> {
    let base = SiteConfig {
        mode: NormMode::Clade,
        cin: 64,
        cout: 64,
        h: 128,
        w: 128,
        num_classes: 32,
        hidden: 128,
    };
    let clade = bench_site(&base, 200, 3)?;
    let spade = bench_site(&SiteConfig { mode: NormMode::Spade, ..base }, 200, 3)?;
    let ratio = clade.median / spade.median;
    let iqr = |s: &cladelab::training::BenchStats| s.iqr.map_or("n/a".to_string(), |v| format!("{:.2}", v * 1e3));
    r.note(format!(
        "C=64, 128x128, N_c=32, C_m=128, 200 repeats: CLADE median {:.2} ms (IQR {}), SPADE {:.2} ms (IQR {}), ratio {:.1}%",
        clade.median * 1e3,
        iqr(&clade),
        spade.median * 1e3,
        iqr(&spade),
        100.0 * ratio
    ));
    r.check("CLADE median < 25% of SPADE", ratio < 0.25);
    Ok(())
}

// ---------------------------------------------------------------- 9

fn guided_sampling_oracle(r: &mut Report) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact = true;
    let mut grads_exact = true;
    for _ in 0..1000 {
        let nc = rng.random_range(1..9);
        let (h, w, c) = (rng.random_range(1..10), rng.random_range(1..10), rng.random_range(1..5));
        let mask = random_mask(h, w, nc, &mut rng);
        let bank = random_bank(nc, c, &mut rng);
        let upstream = random::<f32>(Shape::new(1, c, h, w), &mut rng);
        let mut tape = Tape::<f32>::new();
        let bv = bank.register(&mut tape);
        let (g, b) = guided_sample(&mut tape, &LabelBatch::from_masks([&mask])?, bv)?;
        for k in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let l = mask.get(i, j) as usize;
                    exact &= tape.value(g).at(0, k, i, j).to_bits() == bank.gamma_at(l, k).to_bits();
                    exact &= tape.value(b).at(0, k, i, j).to_bits() == bank.beta_at(l, k).to_bits();
                }
            }
        }
        // d/dΓ[l,k] of Σ u·γ⃗ is the sum of u over pixels labelled l; d/dB of
        // Σ β⃗ is the pixel count of l.
        let u = tape.constant(upstream.clone());
        let gu = tape.mul(g, u)?;
        let a = tape.sum(gu);
        let bs = tape.sum(b);
        let loss = tape.add(a, bs)?;
        let grads = tape.backward(loss)?;
        let (gg, gb) = (grads.wrt(bv.gamma), grads.wrt(bv.beta));
        for l in 0..nc {
            for k in 0..c {
                let mut sum = 0f64;
                let mut count = 0f64;
                for i in 0..h {
                    for j in 0..w {
                        if mask.get(i, j) as usize == l {
                            sum += upstream.at(0, k, i, j) as f64;
                            count += 1.0;
                        }
                    }
                }
                grads_exact &= gg.at(l, k, 0, 0) == sum as f32;
                grads_exact &= gb.at(l, k, 0, 0) == count as f32;
            }
        }
    }
    r.note("1000 random masks (1-8 classes, up to 9x9, 1-4 channels)");
    r.check("guided sampling bitwise equal to brute force", exact);
    r.check("scatter gradients equal the counting oracle", grads_exact);
    Ok(())
}

// ---------------------------------------------------------------- 10

fn edge_path(r: &mut Report) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut scan_ok = true;
    let mut identity_ok = true;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..16), rng.random_range(1..16));
        let k = rng.random_range(1..5);
        let ids: Vec<u32> = (0..h * w).map(|_| rng.random_range(0..k)).collect();
        let inst = InstanceMap::new(h, w, ids.clone())?;
        let e = edge_map::<f32>(&inst);
        for i in 0..h {
            for j in 0..w {
                let id = ids[i * w + j];
                let mut edge = false;
                if i > 0 {
                    edge |= ids[(i - 1) * w + j] != id;
                }
                if i + 1 < h {
                    edge |= ids[(i + 1) * w + j] != id;
                }
                if j > 0 {
                    edge |= ids[i * w + j - 1] != id;
                }
                if j + 1 < w {
                    edge |= ids[i * w + j + 1] != id;
                }
                scan_ok &= e.at(0, 0, i, j) == if edge { 1.0 } else { 0.0 };
            }
        }
        let mut tape = Tape::<f32>::new();
        let ev = tape.constant(e.clone());
        let g = tape.param(Tensor::scalar(1.0));
        let b = tape.param(Tensor::scalar(0.0));
        let m = edge_modulate(&mut tape, ev, g, b)?;
        identity_ok &= tape.value(m) == &e && EdgeModParams::default().modulate(&inst) == e;
    }
    r.check("edge map equals 4-neighbour scan on 100 maps", scan_ok);
    r.check("gamma=1, beta=0 gives E_hat = E", identity_ok);

    let spec = GraphSpec::preset("toy-64")?.with_mode(NormMode::Clade).with_edge(true);
    let data = make_dataset(256, 64, spec.num_classes, Layout::Split, 0)?;
    let eval = make_dataset(64, 64, spec.num_classes, Layout::Split, 1)?;
    let cfg = TrainConfig {
        steps: 600,
        ..TrainConfig::default()
    };
    let out = train(spec, &data, &eval, &cfg)?;
    let e = out.best_eval.edges.unwrap_or_default();
    let f1 = e.f1();
    r.note(format!(
        "split layout, CLADE + edge path, {} steps: boundary precision {:.3} recall {:.3} F1 {f1:.3} (step {})",
        cfg.steps,
        e.precision(),
        e.recall(),
        out.best_step
    ));
    r.check("boundary F1 >= 0.8", f1 >= 0.8);
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and friends probe the binary; honour a filter on
    // criterion numbers (`acceptance 1 4 9`) and ignore harness flags.
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Vec<usize> = args.iter().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| only.is_empty() || only.contains(&n);
    let s = Duration::from_secs;
    let criteria: [(usize, &str, Duration, fn(&mut Report) -> Result<()>); 10] = [
        (1, "formula fidelity", s(1), formula_fidelity),
        (2, "published ratio reproduction", s(1), published_ratios),
        (3, "reference totals", s(1), reference_totals),
        (4, "gradient correctness", s(30), gradient_checks),
        (5, "wash-away", s(10), wash_away),
        (6, "modulation map constancy", s(30), modulation_spread),
        (7, "desk-scale synthesis parity", s(30 * 60), synthesis_parity),
        (8, "site runtime", s(60), site_runtime),
        (9, "guided sampling oracle", s(10), guided_sampling_oracle),
        (10, "edge path", s(10 * 60), edge_path),
    ];
    let mut failed = 0;
    for (n, title, budget, f) in criteria {
        if want(n) && !run(n, title, budget, f) {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
