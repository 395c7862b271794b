//! Backbone plus two softmax heads: a classification head `f` over the class
//! space and a cluster head `g` over the cluster space. `g` is initialized
//! from its own random stream, never from `f`.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamArray, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

const CHECKPOINT_TAG: &str = "icon-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Relu,
}

impl Nonlinearity {
    fn name(self) -> &'static str {
        match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Relu => "relu",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Nonlinearity::Tanh),
            "relu" => Some(Nonlinearity::Relu),
            _ => None,
        }
    }

    fn apply_values(self, xs: &mut [f64]) {
        for x in xs {
            *x = match self {
                Nonlinearity::Tanh => x.tanh(),
                Nonlinearity::Relu => x.max(0.0),
            };
        }
    }

    fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Nonlinearity::Tanh => tape.tanh(x),
            Nonlinearity::Relu => tape.relu(x),
        }
    }
}

/// Backbone architecture: the chain of layer widths from the input width to
/// the feature width, with one affine + nonlinearity per consecutive pair.
/// A single-entry chain is the identity backbone.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneSpec {
    pub widths: Vec<usize>,
    pub nonlinearity: Nonlinearity,
}

impl BackboneSpec {
    /// Default desk-scale backbone: input -> 32 -> 32 -> 16, tanh.
    pub fn default_for(input_dim: usize) -> Self {
        BackboneSpec {
            widths: vec![input_dim, 32, 32, 16],
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    /// Identity backbone: features are the raw inputs.
    pub fn identity(input_dim: usize) -> Self {
        BackboneSpec {
            widths: vec![input_dim],
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config("backbone widths must be non-empty".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "backbone widths must be positive, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }
}

/// Parameters of one affine layer, row-major weight of shape (rows, cols).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineParams {
    /// Scaled uniform init with bound 1/sqrt(fan_in) for weight and bias.
    fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let weight = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..rows).map(|_| rng.random_range(-bound..bound)).collect();
        AffineParams {
            rows,
            cols,
            weight,
            bias,
        }
    }

    pub fn zeroed(rows: usize, cols: usize) -> Self {
        AffineParams {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Values-only forward: `W x + b`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                op: "affine",
                detail: format!(
                    "input has length {} but weight is matrix[{}x{}]",
                    x.len(),
                    self.rows,
                    self.cols
                ),
            });
        }
        let mut out = self.bias.clone();
        for i in 0..self.rows {
            let row = &self.weight[i * self.cols..(i + 1) * self.cols];
            out[i] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(out)
    }
}

/// Which head to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    F,
    G,
}

/// All trainable state: backbone layers plus the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub nonlinearity: Nonlinearity,
    pub layers: Vec<AffineParams>,
    pub head_f: AffineParams,
    pub head_g: AffineParams,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_clusters: usize,
}

/// Builds a model from the architecture spec. `head_g` draws from its own
/// random stream so it is independent of `head_f` under the same seed.
/// `num_clusters = num_classes * cluster_multiplier`, which must be a
/// positive integer.
pub fn init_model(
    spec: &BackboneSpec,
    num_classes: usize,
    cluster_multiplier: f64,
    seed: u64,
) -> Result<ModelState> {
    spec.validate()?;
    if num_classes == 0 {
        return Err(Error::Config("num_classes must be positive".into()));
    }
    let num_clusters = cluster_count(num_classes, cluster_multiplier)?;

    let mut backbone_rng = substream(seed, Stream::InitBackbone);
    let layers: Vec<AffineParams> = layer_dims(&spec.widths)
        .map(|(rows, cols)| AffineParams::init(rows, cols, &mut backbone_rng))
        .collect();

    let feature_dim = spec.feature_dim();
    let mut f_rng = substream(seed, Stream::InitHeadF);
    let mut g_rng = substream(seed, Stream::InitHeadG);
    Ok(ModelState {
        nonlinearity: spec.nonlinearity,
        layers,
        head_f: AffineParams::init(num_classes, feature_dim, &mut f_rng),
        head_g: AffineParams::init(num_clusters, feature_dim, &mut g_rng),
        input_dim: spec.input_dim(),
        feature_dim,
        num_classes,
        num_clusters,
    })
}

/// `round(C * multiplier)`; errors unless the product is a positive integer.
pub fn cluster_count(num_classes: usize, multiplier: f64) -> Result<usize> {
    let raw = num_classes as f64 * multiplier;
    let rounded = raw.round();
    if !(multiplier > 0.0) || rounded < 1.0 || (raw - rounded).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "cluster multiplier {multiplier} with {num_classes} classes \
             yields non-integer cluster count {raw}"
        )));
    }
    Ok(rounded as usize)
}

fn layer_dims(widths: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    widths.windows(2).map(|w| (w[1], w[0]))
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Stabilized softmax on plain values; mirrors the tape op bit for bit.
pub fn softmax_values(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl ModelState {
    fn head(&self, head: Head) -> &AffineParams {
        match head {
            Head::F => &self.head_f,
            Head::G => &self.head_g,
        }
    }

    /// Values-only backbone forward; no tape, no gradients.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                op: "features",
                detail: format!(
                    "input has length {} but model expects {}",
                    x.len(),
                    self.input_dim
                ),
            });
        }
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.apply(&h)?;
            self.nonlinearity.apply_values(&mut h);
        }
        Ok(h)
    }

    /// Values-only head probabilities.
    pub fn predict(&self, x: &[f64], head: Head) -> Result<Vec<f64>> {
        let features = self.features(x)?;
        let logits = self.head(head).apply(&features)?;
        Ok(softmax_values(&logits))
    }

    /// Argmax prediction, ties toward the lowest index.
    pub fn predict_class(&self, x: &[f64], head: Head) -> Result<usize> {
        Ok(argmax(&self.predict(x, head)?))
    }

    /// Parameter arrays in a fixed order: each backbone layer's weight then
    /// bias, then head f, then head g. The order is shared with
    /// [`ModelState::inject`] and [`ModelVars::from_leaves`].
    pub fn param_arrays(&self) -> Vec<ParamArray> {
        let mut out = Vec::with_capacity(2 * (self.layers.len() + 2));
        for layer in self.layers.iter().chain([&self.head_f, &self.head_g]) {
            out.push(
                ParamArray::matrix(layer.rows, layer.cols, layer.weight.clone())
                    .expect("stored weight length matches dims"),
            );
            out.push(ParamArray::vector(layer.bias.clone()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .chain([&self.head_f, &self.head_g])
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Creates tape leaves for every parameter, in `param_arrays` order.
    pub fn inject(&self, tape: &mut Tape) -> ModelVars {
        let mut leaves = Vec::new();
        for layer in self.layers.iter().chain([&self.head_f, &self.head_g]) {
            let w = tape
                .matrix(layer.rows, layer.cols, &layer.weight)
                .expect("stored weight length matches dims");
            let b = tape.vector(&layer.bias);
            leaves.push((w, b));
        }
        ModelVars {
            nonlinearity: self.nonlinearity,
            layers: leaves[..self.layers.len()].to_vec(),
            head_f: leaves[self.layers.len()],
            head_g: leaves[self.layers.len() + 1],
        }
    }

    /// Writes the checkpoint: a version-tagged textual list of named
    /// parameter arrays with shape headers, values at 17 significant digits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(CHECKPOINT_TAG);
        out.push('\n');
        out.push_str(&format!("nonlinearity {}\n", self.nonlinearity.name()));
        out.push_str(&format!("input_dim {}\n", self.input_dim));
        out.push_str(&format!("feature_dim {}\n", self.feature_dim));
        out.push_str(&format!("num_classes {}\n", self.num_classes));
        out.push_str(&format!("num_clusters {}\n", self.num_clusters));
        out.push_str(&format!("backbone_layers {}\n", self.layers.len()));
        let named: Vec<(String, &AffineParams)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("backbone.{i}"), l))
            .chain([
                ("head_f".to_string(), &self.head_f),
                ("head_g".to_string(), &self.head_g),
            ])
            .collect();
        for (name, layer) in named {
            out.push_str(&format!("param {name} {} {}\n", layer.rows, layer.cols));
            for i in 0..layer.rows {
                let row: Vec<String> = layer.weight[i * layer.cols..(i + 1) * layer.cols]
                    .iter()
                    .map(|v| format!("{v:.16e}"))
                    .collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
            let bias: Vec<String> = layer.bias.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&bias.join(" "));
            out.push('\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelState> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(line))) => Ok((i + 1, line)),
                Some((_, Err(e))) => Err(Error::io(path, e)),
                None => Err(Error::Checkpoint(format!(
                    "unexpected end of file while reading {what}"
                ))),
            }
        };
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: path.display().to_string(),
            line,
            detail,
        };

        let (line_no, tag) = next_line("version tag")?;
        if tag != CHECKPOINT_TAG {
            return Err(parse_err(
                line_no,
                format!("expected '{CHECKPOINT_TAG}', found '{tag}'"),
            ));
        }
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (line_no, line) = next_line(name)?;
            match line.split_once(' ') {
                Some((key, value)) if key == name => Ok((line_no, value.to_string())),
                _ => Err(parse_err(line_no, format!("expected '{name} <value>'"))),
            }
        };
        let (line_no, nl) = field("nonlinearity")?;
        let nonlinearity = Nonlinearity::parse(&nl)
            .ok_or_else(|| parse_err(line_no, format!("unknown nonlinearity '{nl}'")))?;
        let parse_usize = |line_no: usize, v: &str, name: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| parse_err(line_no, format!("invalid {name} '{v}'")))
        };
        let (l, v) = field("input_dim")?;
        let input_dim = parse_usize(l, &v, "input_dim")?;
        let (l, v) = field("feature_dim")?;
        let feature_dim = parse_usize(l, &v, "feature_dim")?;
        let (l, v) = field("num_classes")?;
        let num_classes = parse_usize(l, &v, "num_classes")?;
        let (l, v) = field("num_clusters")?;
        let num_clusters = parse_usize(l, &v, "num_clusters")?;
        let (l, v) = field("backbone_layers")?;
        let n_layers = parse_usize(l, &v, "backbone_layers")?;

        let mut read_param = |expected: &str| -> Result<AffineParams> {
            let (line_no, header) = next_line("param header")?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "param" || parts[1] != expected {
                return Err(parse_err(
                    line_no,
                    format!("expected 'param {expected} <rows> <cols>', found '{header}'"),
                ));
            }
            let rows = parse_usize(line_no, parts[2], "rows")?;
            let cols = parse_usize(line_no, parts[3], "cols")?;
            let mut weight = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (line_no, line) = next_line("weight row")?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| parse_err(line_no, format!("invalid value '{t}'")))
                    })
                    .collect::<Result<_>>()?;
                if row.len() != cols {
                    return Err(parse_err(
                        line_no,
                        format!("expected {cols} values, found {}", row.len()),
                    ));
                }
                weight.extend(row);
            }
            let (line_no, line) = next_line("bias row")?;
            let bias: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| parse_err(line_no, format!("invalid value '{t}'")))
                })
                .collect::<Result<_>>()?;
            if bias.len() != rows {
                return Err(parse_err(
                    line_no,
                    format!("expected {rows} bias values, found {}", bias.len()),
                ));
            }
            Ok(AffineParams {
                rows,
                cols,
                weight,
                bias,
            })
        };

        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            layers.push(read_param(&format!("backbone.{i}"))?);
        }
        let head_f = read_param("head_f")?;
        let head_g = read_param("head_g")?;

        let model = ModelState {
            nonlinearity,
            layers,
            head_f,
            head_g,
            input_dim,
            feature_dim,
            num_classes,
            num_clusters,
        };
        model.check_consistent()?;
        Ok(model)
    }

    fn check_consistent(&self) -> Result<()> {
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.cols != width {
                return Err(Error::Checkpoint(format!(
                    "backbone.{i} expects input width {} but gets {width}",
                    layer.cols
                )));
            }
            width = layer.rows;
        }
        if width != self.feature_dim {
            return Err(Error::Checkpoint(format!(
                "backbone produces width {width} but feature_dim is {}",
                self.feature_dim
            )));
        }
        for (name, head, out) in [
            ("head_f", &self.head_f, self.num_classes),
            ("head_g", &self.head_g, self.num_clusters),
        ] {
            if head.cols != self.feature_dim || head.rows != out {
                return Err(Error::Checkpoint(format!(
                    "{name} is {}x{} but expected {out}x{}",
                    head.rows, head.cols, self.feature_dim
                )));
            }
        }
        Ok(())
    }
}

/// Tape handles for every model parameter, for one training step's graph.
#[derive(Clone)]
pub struct ModelVars {
    pub nonlinearity: Nonlinearity,
    pub layers: Vec<(Var, Var)>,
    pub head_f: (Var, Var),
    pub head_g: (Var, Var),
}

impl ModelVars {
    /// Rebuilds the handle structure from a flat leaf list in
    /// [`ModelState::param_arrays`] order; used by gradient checking.
    pub fn from_leaves(model: &ModelState, leaves: &[Var]) -> Result<ModelVars> {
        let expected = 2 * (model.layers.len() + 2);
        if leaves.len() != expected {
            return Err(Error::Config(format!(
                "expected {expected} parameter leaves, got {}",
                leaves.len()
            )));
        }
        let pairs: Vec<(Var, Var)> = leaves.chunks(2).map(|c| (c[0], c[1])).collect();
        Ok(ModelVars {
            nonlinearity: model.nonlinearity,
            layers: pairs[..model.layers.len()].to_vec(),
            head_f: pairs[model.layers.len()],
            head_g: pairs[model.layers.len() + 1],
        })
    }

    /// Differentiable backbone forward for one input vector.
    pub fn features(&self, tape: &mut Tape, x: &[f64]) -> Result<Var> {
        let mut h = tape.vector(x);
        for &(w, b) in &self.layers {
            let z = tape.affine(w, h, b)?;
            h = self.nonlinearity.apply_tape(tape, z);
        }
        Ok(h)
    }

    /// Differentiable head on top of an existing feature node.
    pub fn head(&self, tape: &mut Tape, features: Var, head: Head) -> Result<Var> {
        let (w, b) = match head {
            Head::F => self.head_f,
            Head::G => self.head_g,
        };
        let z = tape.affine(w, features, b)?;
        tape.softmax(z)
    }

    /// Differentiable forward through backbone and one head.
    pub fn forward(&self, tape: &mut Tape, x: &[f64], head: Head) -> Result<Var> {
        let features = self.features(tape, x)?;
        self.head(tape, features, head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn small_spec() -> BackboneSpec {
        BackboneSpec {
            widths: vec![4, 8, 6],
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    #[test]
    fn cluster_multiplier_examples() {
        let m = init_model(&small_spec(), 2, 1.0, 0).unwrap();
        assert_eq!(m.num_clusters, 2);
        let m = init_model(&small_spec(), 2, 2.0, 0).unwrap();
        assert_eq!(m.num_clusters, 4);
        let m = init_model(&small_spec(), 2, 0.5, 0).unwrap();
        assert_eq!(m.num_clusters, 1);
        assert!(init_model(&small_spec(), 3, 0.5, 0).is_err());
        assert!(init_model(&small_spec(), 2, -1.0, 0).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical_distinct_seeds_differ() {
        let a = init_model(&small_spec(), 3, 1.0, 42).unwrap();
        let b = init_model(&small_spec(), 3, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let c = init_model(&small_spec(), 3, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn head_g_is_independent_of_head_f() {
        let m = init_model(&small_spec(), 3, 1.0, 0).unwrap();
        assert_ne!(m.head_f.weight, m.head_g.weight);
    }

    #[test]
    fn zeroed_heads_give_uniform_output() {
        let mut m = init_model(&small_spec(), 4, 1.0, 0).unwrap();
        m.head_f = AffineParams::zeroed(4, m.feature_dim);
        let p = m.predict(&[0.1, -0.2, 0.3, 0.4], Head::F).unwrap();
        for v in &p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(m.predict_class(&[0.1, -0.2, 0.3, 0.4], Head::F).unwrap(), 0);
    }

    #[test]
    fn outputs_sum_to_one_for_random_inputs() {
        let m = init_model(&small_spec(), 3, 2.0, 7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            for (head, dim) in [(Head::F, 3), (Head::G, 6)] {
                let p = m.predict(&x, head).unwrap();
                assert_eq!(p.len(), dim);
                let total: f64 = p.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn identity_backbone_returns_input() {
        let spec = BackboneSpec::identity(5);
        let m = init_model(&spec, 2, 1.0, 0).unwrap();
        let x = [1.0, -2.0, 3.0, 0.0, 0.5];
        assert_eq!(m.features(&x).unwrap(), x.to_vec());
        assert_eq!(m.feature_dim, 5);
    }

    #[test]
    fn features_have_configured_length_and_are_deterministic() {
        let m = init_model(&small_spec(), 2, 1.0, 0).unwrap();
        let x = [0.5, 0.5, -0.5, 0.25];
        let f1 = m.features(&x).unwrap();
        let f2 = m.features(&x).unwrap();
        assert_eq!(f1.len(), m.feature_dim);
        assert_eq!(f1, f2);
    }

    #[test]
    fn heads_share_backbone_activations() {
        let m = init_model(&small_spec(), 2, 1.0, 5).unwrap();
        let x = [0.3, -0.1, 0.7, 0.2];
        let f0 = m.predict(&x, Head::F).unwrap();
        let g0 = m.predict(&x, Head::G).unwrap();
        let mut perturbed = m.clone();
        perturbed.layers[0].weight[0] += 0.05;
        let f1 = perturbed.predict(&x, Head::F).unwrap();
        let g1 = perturbed.predict(&x, Head::G).unwrap();
        assert_ne!(f0, f1);
        assert_ne!(g0, g1);
    }

    #[test]
    fn tape_forward_matches_values_forward_bitwise() {
        let m = init_model(&small_spec(), 3, 1.0, 9).unwrap();
        let x = [0.4, 0.1, -0.9, 0.6];
        let mut tape = Tape::new();
        let vars = m.inject(&mut tape);
        let p = vars.forward(&mut tape, &x, Head::F).unwrap();
        let direct = m.predict(&x, Head::F).unwrap();
        for (a, b) in tape.value(p).iter().zip(&direct) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = init_model(&small_spec(), 3, 2.0, 123).unwrap();
        m.save(&path).unwrap();
        let loaded = ModelState::load(&path).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn checkpoint_rejects_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, "some-other-format v9\n").unwrap();
        let err = ModelState::load(&path).unwrap_err();
        assert!(err.to_string().contains("icon-checkpoint"));
    }

    #[test]
    fn checkpoint_rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = init_model(&small_spec(), 2, 1.0, 1).unwrap();
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(9).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, truncated).unwrap();
        assert!(ModelState::load(&path).is_err());
    }
}
