use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::spec::{Activation, GraphSpec, LayerKind, LayerSpec, NormMode};
use crate::error::{Error, Result};
use crate::layers::{edge_map, guided_sample, normalize_batch, spade_modulation, BankVars, InstanceMap, LabelBatch,
    NormStats, SegmentationMask, SpadeVars};
use crate::real::Real;
use crate::tensor::{GroupMoments, Shape, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(f32),
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
struct ParamDecl {
    path: String,
    shape: Shape,
    init: Init,
}

#[derive(Default)]
struct Layout {
    params: Vec<ParamDecl>,
    /// Norm sites: path, channels.
    sites: Vec<(String, usize)>,
}

impl Layout {
    fn add(&mut self, path: String, shape: Shape, init: Init) {
        self.params.push(ParamDecl { path, shape, init });
    }

    fn conv(&mut self, path: &str, cin: usize, cout: usize, k: usize, bias: bool) {
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        self.add(format!("{path}.weight"), Shape::new(cout, cin, k, k), Init::Uniform(bound));
        if bias {
            self.add(format!("{path}.bias"), Shape::new(1, cout, 1, 1), Init::Zeros);
        }
    }

    fn norm(&mut self, path: &str, mode: NormMode, c: usize, spec: &GraphSpec) {
        let (nc, cm, km) = (spec.num_classes, spec.hidden, spec.mod_kernel);
        match mode {
            NormMode::Spade => {
                self.conv(&format!("{path}.shared"), nc, cm, km, true);
                for (head, bias) in [("gamma", Init::Ones), ("beta", Init::Zeros)] {
                    let bound = 1.0 / ((cm * km * km) as f32).sqrt();
                    self.add(format!("{path}.{head}.weight"), Shape::new(c, cm, km, km), Init::Uniform(bound));
                    self.add(format!("{path}.{head}.bias"), Shape::new(1, c, 1, 1), bias);
                }
            }
            NormMode::Clade => {
                self.add(format!("{path}.gamma"), Shape::new(nc, c, 1, 1), Init::Ones);
                self.add(format!("{path}.beta"), Shape::new(nc, c, 1, 1), Init::Zeros);
            }
            NormMode::Bn => {
                self.add(format!("{path}.scale"), Shape::new(1, c, 1, 1), Init::Ones);
                self.add(format!("{path}.shift"), Shape::new(1, c, 1, 1), Init::Zeros);
            }
        }
        self.sites.push((path.to_string(), c));
    }

    fn of(spec: &GraphSpec) -> Layout {
        let mut lay = Layout::default();
        let edge = usize::from(spec.use_edge);
        for (i, l) in spec.layers.iter().enumerate() {
            let p = i.to_string();
            match l.kind {
                LayerKind::Linear => {
                    let d = l.cout * l.h * l.w;
                    let bound = 1.0 / (l.cin as f32).sqrt();
                    lay.add(format!("{p}.weight"), Shape::new(d, l.cin, 1, 1), Init::Uniform(bound));
                    lay.add(format!("{p}.bias"), Shape::new(1, d, 1, 1), Init::Zeros);
                }
                LayerKind::Conv => lay.conv(&p, l.cin, l.cout, l.k, true),
                LayerKind::Norm(_) => lay.norm(&p, l.norm_mode(spec.mode).unwrap_or(spec.mode), l.cin, spec),
                LayerKind::ResBlock => {
                    let mid = l.mid_channels();
                    lay.norm(&format!("{p}.norm_0"), spec.mode, l.cin, spec);
                    lay.conv(&format!("{p}.conv_0"), l.cin + edge, mid, l.k, true);
                    lay.norm(&format!("{p}.norm_1"), spec.mode, mid, spec);
                    lay.conv(&format!("{p}.conv_1"), mid, l.cout, l.k, true);
                    if l.learned_skip() {
                        lay.norm(&format!("{p}.norm_s"), spec.mode, l.cin, spec);
                        lay.conv(&format!("{p}.conv_s"), l.cin, l.cout, 1, false);
                    }
                }
                LayerKind::Upsample | LayerKind::Activation(_) | LayerKind::ConcatEdge => {}
            }
        }
        if spec.use_edge {
            lay.add("edge.gamma".into(), Shape::SCALAR, Init::Ones);
            lay.add("edge.beta".into(), Shape::SCALAR, Init::Zeros);
        }
        lay
    }
}

/// FNV-1a; selects an independent random stream per parameter path, so a
/// parameter's initial value depends only on `(seed, path)`.
fn path_stream(path: &str) -> u64 {
    path.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn init_param(d: &ParamDecl, seed: u64) -> Tensor<f32> {
    match d.init {
        Init::Zeros => Tensor::zeros(d.shape),
        Init::Ones => Tensor::ones(d.shape),
        Init::Uniform(bound) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path_stream(&d.path));
            Tensor::from_fn(d.shape, |_, _, _, _| rng.random_range(-bound..bound))
        }
    }
}

/// Standard-normal noise vectors, `n×dim×1×1`.
pub fn noise_batch(n: usize, dim: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Shape::new(n, dim, 1, 1), |_, _, _, _| rng.sample(StandardNormal))
}

/// A generator batch: labels at the target resolution, noise and, for graphs
/// with the edge path, raw instance-edge maps.
#[derive(Clone, Debug)]
pub struct GenInput {
    pub labels: LabelBatch,
    pub noise: Tensor<f32>,
    /// `N×1×H×W` edge maps `E`.
    pub edges: Option<Tensor<f32>>,
}

impl GenInput {
    /// Validates masks, noise and instance maps against `spec`. A graph with
    /// the edge path and no instance maps sees an edge-free map.
    pub fn new(
        spec: &GraphSpec,
        masks: &[SegmentationMask],
        noise: Tensor<f32>,
        instances: Option<&[InstanceMap]>,
    ) -> Result<GenInput> {
        let r = spec.resolution;
        for m in masks {
            if (m.height(), m.width()) != (r, r) {
                return Err(Error::shape(
                    "generate",
                    format!("mask is {}x{}, model resolution is {r}x{r}", m.height(), m.width()),
                ));
            }
            if m.num_classes() > spec.num_classes {
                return Err(Error::shape(
                    "generate",
                    format!("mask declares {} classes, model has {}", m.num_classes(), spec.num_classes),
                ));
            }
        }
        let mut labels = LabelBatch::from_masks(masks)?;
        labels.num_classes = spec.num_classes;
        let ns = noise.shape();
        if ns != Shape::new(labels.n, spec.noise_dim, 1, 1) {
            return Err(Error::shape(
                "generate",
                format!("noise {ns} for {} masks and noise dimension {}", labels.n, spec.noise_dim),
            ));
        }
        let edges = match (spec.use_edge, instances) {
            (false, None) => None,
            (false, Some(_)) => {
                return Err(Error::InvalidArgument("instance maps given to a model built without the edge path".into()))
            }
            (true, None) => Some(Tensor::zeros(Shape::new(labels.n, 1, r, r))),
            (true, Some(inst)) => {
                if inst.len() != labels.n {
                    return Err(Error::shape("generate", format!("{} instance maps for {} masks", inst.len(), labels.n)));
                }
                let maps = inst
                    .iter()
                    .map(|im| {
                        if (im.height(), im.width()) != (r, r) {
                            return Err(Error::shape(
                                "generate",
                                format!("instance map is {}x{}, model resolution is {r}x{r}", im.height(), im.width()),
                            ));
                        }
                        Ok(edge_map::<f32>(im))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Tensor::stack(&maps)?)
            }
        };
        Ok(GenInput { labels, noise, edges })
    }

    pub fn batch_size(&self) -> usize {
        self.labels.n
    }
}

/// `(γ, β)` recorded at one norm site during a forward pass.
#[derive(Clone, Debug)]
pub struct ModulationTap {
    pub path: String,
    pub mode: NormMode,
    /// `N×C×H×W` for SPADE/CLADE, `1×C×1×1` for BN.
    pub gamma: Var,
    pub beta: Var,
    pub h: usize,
    pub w: usize,
}

/// Everything a forward pass leaves behind on the tape.
#[derive(Debug)]
pub struct Forward {
    pub image: Var,
    pub params: BTreeMap<String, Var>,
    /// Batch moments per norm site (training mode only).
    pub moments: Vec<(String, GroupMoments)>,
    pub taps: Vec<ModulationTap>,
}

/// A generator built from a [`GraphSpec`]: named parameters and the running
/// statistics of every norm site.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: GraphSpec,
    seed: u64,
    params: BTreeMap<String, Tensor<f32>>,
    stats: BTreeMap<String, NormStats>,
}

pub fn build_generator(spec: GraphSpec, seed: u64) -> Model {
    Model::build(spec, seed)
}

impl Model {
    /// Deterministic initialization: uniform `±1/√fan_in` weights, zero
    /// biases, identity modulation (`γ ≡ 1`, `β ≡ 0`) at every norm site.
    pub fn build(spec: GraphSpec, seed: u64) -> Model {
        let lay = Layout::of(&spec);
        let params = lay.params.iter().map(|d| (d.path.clone(), init_param(d, seed))).collect();
        let stats = lay.sites.iter().map(|(p, c)| (p.clone(), NormStats::new(*c))).collect();
        Model {
            spec,
            seed,
            params,
            stats,
        }
    }

    /// Reassembles a model from stored parts, checking every name and shape
    /// against the layout `spec` implies.
    pub fn from_parts(
        spec: GraphSpec,
        seed: u64,
        params: BTreeMap<String, Tensor<f32>>,
        stats: BTreeMap<String, NormStats>,
    ) -> Result<Model> {
        let lay = Layout::of(&spec);
        if params.len() != lay.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter tensors, graph needs {}",
                params.len(),
                lay.params.len()
            )));
        }
        for d in &lay.params {
            match params.get(&d.path) {
                Some(t) if t.shape() == d.shape => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!("parameter {} is {}, expected {}", d.path, t.shape(), d.shape)))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {}", d.path))),
            }
        }
        if stats.len() != lay.sites.len() {
            return Err(Error::Checkpoint(format!("{} norm statistics, graph needs {}", stats.len(), lay.sites.len())));
        }
        for (path, c) in &lay.sites {
            match stats.get(path) {
                Some(s) if s.channels() == *c => {}
                _ => return Err(Error::Checkpoint(format!("missing or mis-sized statistics for {path}"))),
            }
        }
        Ok(Model {
            spec,
            seed,
            params,
            stats,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<f32>> {
        &mut self.params
    }

    pub fn param(&self, path: &str) -> Option<&Tensor<f32>> {
        self.params.get(path)
    }

    pub fn stats(&self) -> &BTreeMap<String, NormStats> {
        &self.stats
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Paths of all norm sites in forward order.
    pub fn norm_sites(&self) -> Vec<String> {
        Layout::of(&self.spec).sites.into_iter().map(|(p, _)| p).collect()
    }

    /// Folds training-mode batch moments into the running statistics.
    pub fn apply_moments(&mut self, moments: &[(String, GroupMoments)]) {
        for (path, m) in moments {
            if let Some(s) = self.stats.get_mut(path) {
                s.update(m);
            }
        }
    }

    /// Records the full generator on `tape`. In training mode norm sites use
    /// batch statistics and report their moments; otherwise running stats.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: &GenInput, train: bool) -> Result<Forward> {
        let noise = tape.constant(input.noise.cast());
        self.forward_from(tape, noise, input, train)
    }

    /// [`forward`](Self::forward) with the noise supplied as a tape value
    /// (`N×D×1×1`) instead of `input.noise`.
    pub fn forward_from<T: Real>(&self, tape: &mut Tape<T>, noise: Var, input: &GenInput, train: bool) -> Result<Forward> {
        let ns = tape.shape(noise);
        if ns != input.noise.shape() {
            return Err(Error::shape("generate", format!("noise {ns}, expected {}", input.noise.shape())));
        }
        let params: BTreeMap<String, Var> = self.params.iter().map(|(k, v)| (k.clone(), tape.param(v.cast()))).collect();
        let mut run = Runner {
            tape,
            model: self,
            params: &params,
            input,
            train,
            labels: HashMap::new(),
            edges: HashMap::new(),
            moments: Vec::new(),
            taps: Vec::new(),
        };
        let image = run.graph(noise)?;
        let (moments, taps) = (run.moments, run.taps);
        Ok(Forward {
            image,
            params,
            moments,
            taps,
        })
    }

    /// Eval-mode batch synthesis, `N×3×H×W`.
    pub fn infer(&self, input: &GenInput) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::inference();
        let out = self.forward(&mut tape, input, false)?;
        Ok(tape.value(out.image).clone())
    }

    /// One image `1×3×H×W` in `[−1, 1]` for `mask` and `noise`.
    pub fn generate(&self, mask: &SegmentationMask, noise: &[f32], instances: Option<&InstanceMap>) -> Result<Tensor<f32>> {
        let noise = Tensor::from_vec(Shape::new(1, noise.len(), 1, 1), noise.to_vec())?;
        let inst = instances.map(std::slice::from_ref);
        self.infer(&GenInput::new(&self.spec, std::slice::from_ref(mask), noise, inst)?)
    }
}

struct Runner<'a, T: Real> {
    tape: &'a mut Tape<T>,
    model: &'a Model,
    params: &'a BTreeMap<String, Var>,
    input: &'a GenInput,
    train: bool,
    /// Labels and (for SPADE) one-hot masks per resolution.
    labels: HashMap<(usize, usize), (LabelBatch, Option<Var>)>,
    /// Modulated edge maps per resolution.
    edges: HashMap<(usize, usize), Var>,
    moments: Vec<(String, GroupMoments)>,
    taps: Vec<ModulationTap>,
}

impl<T: Real> Runner<'_, T> {
    fn p(&self, path: &str) -> Var {
        self.params[path]
    }

    fn graph(&mut self, noise: Var) -> Result<Var> {
        let spec = &self.model.spec;
        let mut x = noise;
        for (i, l) in spec.layers.iter().enumerate() {
            let p = i.to_string();
            x = match l.kind {
                LayerKind::Linear => {
                    let y = self.tape.linear(x, self.p(&format!("{p}.weight")), Some(self.p(&format!("{p}.bias"))))?;
                    self.tape.reshape(y, Shape::new(self.input.batch_size(), l.cout, l.h, l.w))?
                }
                LayerKind::Conv => self.conv(&p, x, l.k)?,
                LayerKind::Norm(_) => self.norm(&p, l.norm_mode(spec.mode).unwrap_or(spec.mode), x, l)?,
                LayerKind::ResBlock => self.resblock(&p, x, l)?,
                LayerKind::Upsample => self.tape.upsample_nearest2x(x),
                LayerKind::Activation(a) => self.act(a, x),
                LayerKind::ConcatEdge => {
                    let e = self.edge(l.h, l.w)?;
                    self.tape.concat_channels(x, e)?
                }
            };
        }
        Ok(x)
    }

    fn act(&mut self, a: Activation, x: Var) -> Var {
        match a {
            Activation::Relu => self.tape.relu(x),
            Activation::LeakyRelu => self.tape.leaky_relu(x, Activation::LEAKY_SLOPE),
            Activation::Tanh => self.tape.tanh(x),
        }
    }

    fn conv(&mut self, path: &str, x: Var, k: usize) -> Result<Var> {
        let w = self.p(&format!("{path}.weight"));
        let b = self.params.get(&format!("{path}.bias")).copied();
        self.tape.conv2d(x, w, b, 1, k / 2)
    }

    fn resblock(&mut self, p: &str, x: Var, l: &LayerSpec) -> Result<Var> {
        let mode = self.model.spec.mode;
        let skip = if l.learned_skip() {
            let s = self.norm(&format!("{p}.norm_s"), mode, x, l)?;
            self.conv(&format!("{p}.conv_s"), s, 1)?
        } else {
            x
        };
        let mut dx = self.norm(&format!("{p}.norm_0"), mode, x, l)?;
        dx = self.tape.leaky_relu(dx, Activation::LEAKY_SLOPE);
        if self.model.spec.use_edge {
            let e = self.edge(l.h, l.w)?;
            dx = self.tape.concat_channels(dx, e)?;
        }
        dx = self.conv(&format!("{p}.conv_0"), dx, l.k)?;
        dx = self.norm(&format!("{p}.norm_1"), mode, dx, l)?;
        dx = self.tape.leaky_relu(dx, Activation::LEAKY_SLOPE);
        dx = self.conv(&format!("{p}.conv_1"), dx, l.k)?;
        self.tape.add(skip, dx)
    }

    fn edge(&mut self, h: usize, w: usize) -> Result<Var> {
        if let Some(&v) = self.edges.get(&(h, w)) {
            return Ok(v);
        }
        let e = self
            .input
            .edges
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("graph consumes instance edges but none were provided".into()))?;
        let e = self.tape.constant(e.resize_nearest(h, w).cast());
        let (g, b) = (self.p("edge.gamma"), self.p("edge.beta"));
        let v = self.tape.affine(e, g, b)?;
        self.edges.insert((h, w), v);
        Ok(v)
    }

    fn labels_at(&mut self, h: usize, w: usize, one_hot: bool) -> (LabelBatch, Option<Var>) {
        let entry = self
            .labels
            .entry((h, w))
            .or_insert_with(|| (self.input.labels.resize_nearest(h, w), None));
        if one_hot && entry.1.is_none() {
            entry.1 = Some(self.tape.constant(entry.0.one_hot()));
        }
        entry.clone()
    }

    fn norm(&mut self, path: &str, mode: NormMode, x: Var, l: &LayerSpec) -> Result<Var> {
        let mut stats = self.model.stats[path].clone();
        stats.training = self.train;
        let (xhat, moments) = normalize_batch(self.tape, x, &stats)?;
        if let Some(m) = moments {
            self.moments.push((path.to_string(), m));
        }
        let (gamma, beta) = match mode {
            NormMode::Clade => {
                let (labels, _) = self.labels_at(l.h, l.w, false);
                let bank = BankVars {
                    gamma: self.p(&format!("{path}.gamma")),
                    beta: self.p(&format!("{path}.beta")),
                };
                guided_sample(self.tape, &labels, bank)?
            }
            NormMode::Spade => {
                let (_, onehot) = self.labels_at(l.h, l.w, true);
                let v = |s: &str| self.p(&format!("{path}.{s}"));
                let vars = SpadeVars {
                    shared_w: v("shared.weight"),
                    shared_b: v("shared.bias"),
                    gamma_w: v("gamma.weight"),
                    gamma_b: v("gamma.bias"),
                    beta_w: v("beta.weight"),
                    beta_b: v("beta.bias"),
                };
                spade_modulation(self.tape, onehot.expect("one-hot requested"), vars)?
            }
            NormMode::Bn => (self.p(&format!("{path}.scale")), self.p(&format!("{path}.shift"))),
        };
        self.taps.push(ModulationTap {
            path: path.to_string(),
            mode,
            gamma,
            beta,
            h: l.h,
            w: l.w,
        });
        self.tape.affine(xhat, gamma, beta)
    }
}
