use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which normalization the generator uses at its norm sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    Spade,
    Clade,
    /// Batch normalization with a learned per-channel affine; the mask is not
    /// consumed.
    Bn,
}

impl NormMode {
    pub const ALL: [NormMode; 3] = [NormMode::Spade, NormMode::Clade, NormMode::Bn];

    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Spade => "spade",
            NormMode::Clade => "clade",
            NormMode::Bn => "bn",
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spade" => Ok(NormMode::Spade),
            "clade" => Ok(NormMode::Clade),
            "bn" => Ok(NormMode::Bn),
            _ => Err(format!("unknown norm mode `{s}` (expected spade, clade or bn)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Slope 0.2.
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.2;

    fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Noise vector to a `C×H×W` feature map.
    Linear,
    Conv,
    /// A standalone norm site; `None` follows the graph's mode.
    Norm(Option<NormMode>),
    /// `norm→act→conv` twice plus a skip path, learned (`norm→1×1 conv`) when
    /// the channel count changes.
    ResBlock,
    Upsample,
    Activation(Activation),
    /// Appends the modulated instance-edge map as one extra channel.
    ConcatEdge,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Conv => "conv",
            LayerKind::Norm(None) => "norm",
            LayerKind::Norm(Some(NormMode::Spade)) => "norm_spade",
            LayerKind::Norm(Some(NormMode::Clade)) => "norm_clade",
            LayerKind::Norm(Some(NormMode::Bn)) => "norm_bn",
            LayerKind::ResBlock => "resblock",
            LayerKind::Upsample => "upsample",
            LayerKind::Activation(_) => "activation",
            LayerKind::ConcatEdge => "concat_edge",
        }
    }

    fn parse(s: &str) -> Option<LayerKind> {
        Some(match s {
            "linear" => LayerKind::Linear,
            "conv" => LayerKind::Conv,
            "norm" => LayerKind::Norm(None),
            "norm_spade" => LayerKind::Norm(Some(NormMode::Spade)),
            "norm_clade" => LayerKind::Norm(Some(NormMode::Clade)),
            "norm_bn" => LayerKind::Norm(Some(NormMode::Bn)),
            "resblock" => LayerKind::ResBlock,
            "upsample" => LayerKind::Upsample,
            "activation" => LayerKind::Activation(Activation::LeakyRelu),
            "concat_edge" => LayerKind::ConcatEdge,
            _ => return None,
        })
    }
}

/// One resolved layer: input/output channels, kernel size and output
/// resolution are all concrete.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    /// Kernel size of the layer's convolutions (1 for kernel-free layers).
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl LayerSpec {
    /// Hidden width of a residual block.
    pub fn mid_channels(&self) -> usize {
        self.cin.min(self.cout)
    }

    pub fn learned_skip(&self) -> bool {
        self.kind == LayerKind::ResBlock && self.cin != self.cout
    }

    /// Norm mode of a standalone norm site under graph mode `mode`.
    pub fn norm_mode(&self, mode: NormMode) -> Option<NormMode> {
        match self.kind {
            LayerKind::Norm(m) => Some(m.unwrap_or(mode)),
            _ => None,
        }
    }
}

/// A validated generator graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec {
    pub noise_dim: usize,
    pub resolution: usize,
    pub num_classes: usize,
    /// Hidden width `C_m` of SPADE's modulation network.
    pub hidden: usize,
    /// Kernel size of SPADE's modulation convolutions.
    pub mod_kernel: usize,
    pub mode: NormMode,
    pub use_edge: bool,
    pub layers: Vec<LayerSpec>,
}

/// A layer as written, before channel/resolution inference.
#[derive(Clone, Debug, Default)]
struct RawLayer {
    line: usize,
    kind: Option<LayerKind>,
    cin: Option<usize>,
    cout: Option<usize>,
    k: Option<usize>,
    h: Option<usize>,
    w: Option<usize>,
}

#[derive(Clone, Debug)]
struct RawGraph {
    noise_dim: Option<usize>,
    resolution: Option<usize>,
    num_classes: usize,
    hidden: usize,
    mod_kernel: usize,
    mode: NormMode,
    use_edge: bool,
    layers: Vec<RawLayer>,
}

impl Default for RawGraph {
    fn default() -> Self {
        RawGraph {
            noise_dim: None,
            resolution: None,
            num_classes: 2,
            hidden: 128,
            mod_kernel: 3,
            mode: NormMode::Spade,
            use_edge: false,
            layers: Vec::new(),
        }
    }
}

fn layer(kind: LayerKind, cout: Option<usize>) -> RawLayer {
    RawLayer {
        kind: Some(kind),
        cout,
        ..RawLayer::default()
    }
}

/// `noise → linear → C₀×4×4`, a residual block per entry of `chain` with an
/// upsample before every block but the first (or before every block when
/// `upsample_first`), then `leaky → conv 3×3 to RGB → tanh`.
fn backbone(entry: usize, chain: &[usize], upsample_first: bool) -> Vec<RawLayer> {
    let mut layers = vec![RawLayer {
        kind: Some(LayerKind::Linear),
        cout: Some(entry),
        h: Some(4),
        w: Some(4),
        ..RawLayer::default()
    }];
    for (i, &c) in chain.iter().enumerate() {
        if i > 0 || upsample_first {
            layers.push(layer(LayerKind::Upsample, None));
        }
        layers.push(layer(LayerKind::ResBlock, Some(c)));
    }
    layers.push(layer(LayerKind::Activation(Activation::LeakyRelu), None));
    layers.push(layer(LayerKind::Conv, Some(3)));
    layers.push(layer(LayerKind::Activation(Activation::Tanh), None));
    layers
}

fn preset(name: &str) -> Option<RawGraph> {
    match name {
        "paper-256" => Some(RawGraph {
            noise_dim: Some(256),
            resolution: Some(256),
            num_classes: 151,
            hidden: 128,
            layers: backbone(1024, &[1024, 1024, 1024, 512, 256, 128, 64], false),
            ..RawGraph::default()
        }),
        "toy-64" => Some(RawGraph {
            noise_dim: Some(16),
            resolution: Some(64),
            num_classes: 5,
            hidden: 32,
            layers: backbone(64, &[64, 64, 32, 16], true),
            ..RawGraph::default()
        }),
        _ => None,
    }
}

impl GraphSpec {
    pub const PRESETS: [&'static str; 2] = ["paper-256", "toy-64"];

    pub fn preset(name: &str) -> Result<GraphSpec> {
        let raw = preset(name).ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{name}`")))?;
        resolve(raw)
    }

    pub fn with_mode(mut self, mode: NormMode) -> GraphSpec {
        self.mode = mode;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Result<GraphSpec> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Switches the instance-edge path on or off. With it on, every residual
    /// block's first convolution takes one extra input channel.
    pub fn with_edge(mut self, use_edge: bool) -> GraphSpec {
        self.use_edge = use_edge;
        self
    }

    /// Parses the line-oriented `key=value` format. Errors carry the 1-based
    /// line number; inconsistent graphs are reported with the layer index.
    pub fn parse(text: &str) -> Result<GraphSpec> {
        resolve(parse_raw(text)?)
    }

    /// Writes the explicit form (no preset shortcut); `parse(to_text(g)) == g`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "noise={}", self.noise_dim);
        let _ = writeln!(s, "resolution={}", self.resolution);
        let _ = writeln!(s, "classes={}", self.num_classes);
        let _ = writeln!(s, "hidden={}", self.hidden);
        let _ = writeln!(s, "mod_kernel={}", self.mod_kernel);
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "edge={}", self.use_edge);
        for l in &self.layers {
            s.push('\n');
            let _ = write!(s, "kind={} cin={} cout={}", l.kind.name(), l.cin, l.cout);
            match l.kind {
                LayerKind::Linear => {
                    let _ = write!(s, " h={} w={}", l.h, l.w);
                }
                LayerKind::Conv | LayerKind::ResBlock => {
                    let _ = write!(s, " k={}", l.k);
                }
                LayerKind::Activation(a) => {
                    let _ = write!(s, " fn={}", a.as_str());
                }
                _ => {}
            }
            s.push('\n');
        }
        s
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.cout)
    }
}

fn parse_raw(text: &str) -> Result<RawGraph> {
    let mut g = RawGraph::default();
    let mut preset_line = None;
    let mut explicit = Vec::<(usize, &str)>::new();
    // keys bind to the latest `kind=` block; a preset's own layers take none
    let mut in_layer = false;
    let perr = |line: usize, msg: String| Error::SpecParse { line, msg };
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        for token in content.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| perr(line, format!("expected key=value, found `{token}`")))?;
            let num = || -> Result<usize> {
                value
                    .parse::<usize>()
                    .map_err(|_| perr(line, format!("`{key}` expects a non-negative integer, found `{value}`")))
            };
            if key == "kind" {
                let kind = LayerKind::parse(value).ok_or_else(|| perr(line, format!("unknown layer kind `{value}`")))?;
                g.layers.push(RawLayer {
                    line,
                    kind: Some(kind),
                    ..RawLayer::default()
                });
                in_layer = true;
                continue;
            }
            if let Some(cur) = g.layers.last_mut().filter(|_| in_layer) {
                match key {
                    "cin" => cur.cin = Some(num()?),
                    "cout" => cur.cout = Some(num()?),
                    "k" => cur.k = Some(num()?),
                    "h" => cur.h = Some(num()?),
                    "w" => cur.w = Some(num()?),
                    "fn" => {
                        let act = match value {
                            "relu" => Activation::Relu,
                            "leaky" | "leaky_relu" => Activation::LeakyRelu,
                            "tanh" => Activation::Tanh,
                            _ => return Err(perr(line, format!("unknown activation `{value}`"))),
                        };
                        if !matches!(cur.kind, Some(LayerKind::Activation(_))) {
                            return Err(perr(line, "`fn` only applies to activation layers".into()));
                        }
                        cur.kind = Some(LayerKind::Activation(act));
                    }
                    _ => return Err(perr(line, format!("unknown layer key `{key}`"))),
                }
                continue;
            }
            match key {
                "preset" => {
                    let p = preset(value).ok_or_else(|| {
                        perr(line, format!("unknown preset `{value}` (expected {})", GraphSpec::PRESETS.join(" or ")))
                    })?;
                    if !explicit.is_empty() {
                        return Err(perr(line, "preset must come before other graph keys".into()));
                    }
                    g = p;
                    preset_line = Some(line);
                }
                "noise" => g.noise_dim = Some(num()?),
                "resolution" => g.resolution = Some(num()?),
                "classes" | "num_classes" => g.num_classes = num()?,
                "hidden" => g.hidden = num()?,
                "mod_kernel" => g.mod_kernel = num()?,
                "mode" => g.mode = value.parse().map_err(|e| perr(line, e))?,
                "edge" => {
                    g.use_edge = match value {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        _ => return Err(perr(line, format!("`edge` expects true or false, found `{value}`"))),
                    }
                }
                _ => return Err(perr(line, format!("unknown graph key `{key}`"))),
            }
            if key != "preset" {
                explicit.push((line, key));
            }
        }
    }
    let last_line = text.lines().count().max(1);
    if let Some(pl) = preset_line {
        // a preset brings its own layers; explicit ones would be ambiguous
        if let Some(l) = g.layers.iter().find(|l| l.line > pl) {
            return Err(perr(l.line, "explicit layers cannot follow a preset".into()));
        }
    } else if g.layers.is_empty() {
        return Err(perr(last_line, "graph spec defines no layers".into()));
    }
    let missing = |what: &str| perr(last_line, format!("missing graph key `{what}`"));
    g.noise_dim.ok_or_else(|| missing("noise"))?;
    g.resolution.ok_or_else(|| missing("resolution"))?;
    Ok(g)
}

fn resolve(g: RawGraph) -> Result<GraphSpec> {
    let invalid = |layer: usize, msg: String| Error::SpecInvalid { layer, msg };
    let noise_dim = g.noise_dim.unwrap_or(0);
    let resolution = g.resolution.unwrap_or(0);
    if noise_dim == 0 {
        return Err(Error::InvalidArgument("noise dimension must be positive".into()));
    }
    if g.num_classes == 0 {
        return Err(Error::InvalidArgument("num_classes must be positive".into()));
    }
    if g.mod_kernel % 2 == 0 {
        return Err(Error::InvalidArgument("modulation kernel size must be odd".into()));
    }
    let mut layers = Vec::with_capacity(g.layers.len());
    let (mut c, mut h, mut w) = (noise_dim, 1usize, 1usize);
    for (i, raw) in g.layers.iter().enumerate() {
        let kind = raw.kind.expect("raw layers always carry a kind");
        if i == 0 && kind != LayerKind::Linear {
            return Err(invalid(0, "the first layer must be `linear` (it consumes the noise vector)".into()));
        }
        if i > 0 && kind == LayerKind::Linear {
            return Err(invalid(i, "`linear` is only allowed as the first layer".into()));
        }
        if let Some(cin) = raw.cin {
            if cin != c {
                return Err(invalid(i, format!("cin={cin} but the previous layer emits {c} channels")));
            }
        }
        let cout = raw.cout.unwrap_or(c);
        let fixed = |name: &str| -> Result<()> {
            if cout != c {
                return Err(invalid(i, format!("{name} cannot change the channel count ({c} → {cout})")));
            }
            Ok(())
        };
        let mut k = 1;
        match kind {
            LayerKind::Linear => {
                let (lh, lw) = (raw.h.unwrap_or(4), raw.w.unwrap_or(4));
                if cout == 0 || lh == 0 || lw == 0 {
                    return Err(invalid(i, "linear needs positive cout, h and w".into()));
                }
                h = lh;
                w = lw;
            }
            LayerKind::Conv | LayerKind::ResBlock => {
                k = raw.k.unwrap_or(3);
                if k % 2 == 0 {
                    return Err(invalid(i, format!("kernel size must be odd, got {k}")));
                }
                if cout == 0 {
                    return Err(invalid(i, "cout must be positive".into()));
                }
            }
            LayerKind::Upsample => {
                fixed("upsample")?;
                h *= 2;
                w *= 2;
            }
            LayerKind::Norm(m) => {
                fixed("norm")?;
                if m.unwrap_or(g.mode) == NormMode::Spade && g.hidden == 0 {
                    return Err(invalid(i, "SPADE needs hidden > 0".into()));
                }
            }
            LayerKind::Activation(_) => fixed("activation")?,
            LayerKind::ConcatEdge => {
                if !g.use_edge {
                    return Err(invalid(i, "concat_edge requires edge=true".into()));
                }
                if raw.cout.is_some_and(|co| co != c + 1) {
                    return Err(invalid(i, format!("concat_edge emits {} channels", c + 1)));
                }
            }
        }
        if kind != LayerKind::Linear && (raw.h.is_some_and(|v| v != h) || raw.w.is_some_and(|v| v != w)) {
            return Err(invalid(i, format!("declared resolution does not match the inferred {h}x{w}")));
        }
        let cout = if kind == LayerKind::ConcatEdge { c + 1 } else { cout };
        layers.push(LayerSpec {
            kind,
            cin: c,
            cout,
            k,
            h,
            w,
        });
        c = cout;
    }
    let n = layers.len();
    let last = layers.last().ok_or_else(|| invalid(0, "graph has no layers".into()))?;
    if last.kind != LayerKind::Activation(Activation::Tanh) || last.cout != 3 {
        return Err(invalid(n - 1, "the final layer must be a tanh activation over 3 channels".into()));
    }
    if (last.h, last.w) != (resolution, resolution) {
        return Err(invalid(
            n - 1,
            format!("graph ends at {}x{} but resolution={resolution}", last.h, last.w),
        ));
    }
    if g.mode == NormMode::Spade && g.hidden == 0 && layers.iter().any(|l| l.kind == LayerKind::ResBlock) {
        return Err(Error::InvalidArgument("SPADE needs hidden > 0".into()));
    }
    Ok(GraphSpec {
        noise_dim,
        resolution,
        num_classes: g.num_classes,
        hidden: g.hidden,
        mod_kernel: g.mod_kernel,
        mode: g.mode,
        use_edge: g.use_edge,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        let p = GraphSpec::preset("paper-256").unwrap();
        let blocks: Vec<_> = p.layers.iter().filter(|l| l.kind == LayerKind::ResBlock).collect();
        assert_eq!(blocks.len(), 7);
        assert_eq!(blocks.iter().map(|b| b.cout).collect::<Vec<_>>(), [1024, 1024, 1024, 512, 256, 128, 64]);
        assert_eq!(blocks.iter().map(|b| b.h).collect::<Vec<_>>(), [4, 8, 16, 32, 64, 128, 256]);
        let t = GraphSpec::preset("toy-64").unwrap();
        let blocks: Vec<_> = t.layers.iter().filter(|l| l.kind == LayerKind::ResBlock).collect();
        assert_eq!(blocks.iter().map(|b| b.cout).collect::<Vec<_>>(), [64, 64, 32, 16]);
        assert_eq!(t.resolution, 64);
        assert_eq!(t.output_channels(), 3);
    }

    #[test]
    fn text_roundtrip() {
        for name in GraphSpec::PRESETS {
            let g = GraphSpec::preset(name).unwrap().with_mode(NormMode::Clade).with_edge(true);
            assert_eq!(GraphSpec::parse(&g.to_text()).unwrap(), g);
        }
    }

    #[test]
    fn preset_with_overrides() {
        let g = GraphSpec::parse("preset=toy-64\nmode=bn classes=7 # comment\n").unwrap();
        assert_eq!((g.mode, g.num_classes), (NormMode::Bn, 7));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("", 1),
            ("noise=4\nresolution=8\n\nkind=linear cout=3\nbogus", 5),
            ("noise=4\nresolution=x", 2),
            ("preset=toy-64\nkind=conv", 2),
            ("noise=4\nresolution=4\nkind=widget", 3),
        ];
        for (text, line) in cases {
            match GraphSpec::parse(text) {
                Err(Error::SpecParse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn channel_chain_mismatch_names_layer() {
        let text = "noise=8\nresolution=4\nkind=linear cout=6 h=4 w=4\nkind=conv cin=5 cout=3\nkind=activation fn=tanh";
        assert!(matches!(GraphSpec::parse(text), Err(Error::SpecInvalid { layer: 1, .. })));
        let ok = "noise=8\nresolution=4\nkind=linear cout=6 h=4 w=4\nkind=conv cin=6 cout=3\nkind=activation fn=tanh";
        assert_eq!(GraphSpec::parse(ok).unwrap().layers[1].cin, 6);
        let bad_end = "noise=8\nresolution=8\nkind=linear cout=3 h=4 w=4\nkind=activation fn=tanh";
        assert!(matches!(GraphSpec::parse(bad_end), Err(Error::SpecInvalid { layer: 1, .. })));
    }
}
