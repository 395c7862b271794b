//! Seeded synthetic dataset generators with a two-axis latent structure: a
//! causal coordinate that determines the class and an environment coordinate
//! whose correlation with the class differs between the source and target
//! domains. Latent points are embedded into a higher dimension through a
//! seeded random orthogonal map, so latent distances are preserved.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Geometry and correlation knobs shared by all generators.
///
/// `rho_s` / `rho_t` are the per-domain probabilities that the environment
/// sign matches the class sign. `env_sigma_s` scales the within-class spread
/// of the source domain's environment coordinate (the offsets stay at full
/// scale); small values make the environment axis the cleanest feature in
/// the source, the regime where the source pairwise loss dominates and a
/// source-fit classifier puts large weight on the environment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpuriousShiftConfig {
    pub n_per_domain: usize,
    pub class_sep: f64,
    pub env_sep: f64,
    pub rho_s: f64,
    pub rho_t: f64,
    pub noise_sigma: f64,
    pub env_sigma_s: f64,
    pub embed_dim: usize,
}

impl Default for SpuriousShiftConfig {
    fn default() -> Self {
        SpuriousShiftConfig {
            n_per_domain: 1000,
            class_sep: 2.0,
            env_sep: 2.0,
            rho_s: 0.95,
            rho_t: 0.05,
            noise_sigma: 0.3,
            env_sigma_s: 1.0,
            embed_dim: 8,
        }
    }
}

impl SpuriousShiftConfig {
    /// The source-dominated regime: the environment coordinate in the source
    /// domain has very low variance, so a classifier fit to the source alone
    /// leans heavily on it.
    pub fn domination_regime() -> Self {
        SpuriousShiftConfig {
            env_sigma_s: 0.05,
            rho_s: 0.95,
            rho_t: 0.05,
            ..Default::default()
        }
    }

    /// Sets one field from its config-file key; unknown keys are rejected
    /// by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} value '{value}'"));
        match key {
            "n_per_domain" => self.n_per_domain = value.parse().map_err(|_| bad(key))?,
            "class_sep" => self.class_sep = value.parse().map_err(|_| bad(key))?,
            "env_sep" => self.env_sep = value.parse().map_err(|_| bad(key))?,
            "rho_s" => self.rho_s = value.parse().map_err(|_| bad(key))?,
            "rho_t" => self.rho_t = value.parse().map_err(|_| bad(key))?,
            "noise_sigma" => self.noise_sigma = value.parse().map_err(|_| bad(key))?,
            "env_sigma_s" => self.env_sigma_s = value.parse().map_err(|_| bad(key))?,
            "embed_dim" => self.embed_dim = value.parse().map_err(|_| bad(key))?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown generator config key '{key}'"
                )))
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.n_per_domain == 0 {
            return Err(Error::Config("n_per_domain must be positive".into()));
        }
        if !(self.class_sep > 0.0) || !(self.env_sep > 0.0) {
            return Err(Error::Config(format!(
                "separations must be positive: class_sep={}, env_sep={}",
                self.class_sep, self.env_sep
            )));
        }
        for (name, rho) in [("rho_s", self.rho_s), ("rho_t", self.rho_t)] {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Config(format!("{name}={rho} must be in [0, 1]")));
            }
        }
        if self.noise_sigma < 0.0 || self.env_sigma_s < 0.0 {
            return Err(Error::Config("sigmas must be non-negative".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config(format!(
                "embed_dim must be at least 2, got {}",
                self.embed_dim
            )));
        }
        Ok(())
    }
}

/// Generator provenance carried by every dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetMetadata {
    pub generator: String,
    pub seed: u64,
    pub config: SpuriousShiftConfig,
}

/// Labeled source samples plus target samples whose labels exist only for
/// evaluation. Training code reaches the target through [`target_inputs`]
/// and never sees the labels; the evaluation module uses
/// [`target_for_eval`].
///
/// [`target_inputs`]: DomainDataset::target_inputs
/// [`target_for_eval`]: DomainDataset::target_for_eval
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub source: Vec<(Vec<f64>, usize)>,
    target: Vec<(Vec<f64>, usize)>,
    pub input_dim: usize,
    pub num_classes: usize,
    pub metadata: DatasetMetadata,
}

impl DomainDataset {
    pub fn new(
        source: Vec<(Vec<f64>, usize)>,
        target: Vec<(Vec<f64>, usize)>,
        input_dim: usize,
        num_classes: usize,
        metadata: DatasetMetadata,
    ) -> Result<DomainDataset> {
        for (x, y) in source.iter().chain(&target) {
            if x.len() != input_dim {
                return Err(Error::Dimension {
                    op: "DomainDataset",
                    detail: format!("sample has length {}, expected {input_dim}", x.len()),
                });
            }
            if *y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    index: *y,
                    classes: num_classes,
                });
            }
        }
        Ok(DomainDataset {
            source,
            target,
            input_dim,
            num_classes,
            metadata,
        })
    }

    /// Unlabeled view of the target domain, the only view training code uses.
    pub fn target_inputs(&self) -> Vec<&[f64]> {
        self.target.iter().map(|(x, _)| x.as_slice()).collect()
    }

    pub fn target_len(&self) -> usize {
        self.target.len()
    }

    pub fn target_input(&self, i: usize) -> &[f64] {
        &self.target[i].0
    }

    /// Labeled target samples. Evaluation-only by contract: nothing on the
    /// training path may call this.
    pub fn target_for_eval(&self) -> &[(Vec<f64>, usize)] {
        &self.target
    }
}

/// A generated dataset plus the latent bookkeeping that oracle tests need:
/// the orthogonal embedding (row-major `embed_dim x 2`, columns = causal and
/// environment axes) and each sample's environment sign.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub dataset: DomainDataset,
    pub embedding: Vec<f64>,
    pub source_env_signs: Vec<i8>,
    pub target_env_signs: Vec<i8>,
}

impl GeneratorOutput {
    /// Recovers the latent (causal, environment) coordinates of an embedded
    /// input; exact because the embedding columns are orthonormal.
    pub fn latent_of(&self, x: &[f64]) -> (f64, f64) {
        let d = self.dataset.input_dim;
        let causal = (0..d).map(|i| self.embedding[i * 2] * x[i]).sum();
        let env = (0..d).map(|i| self.embedding[i * 2 + 1] * x[i]).sum();
        (causal, env)
    }
}

/// Per-domain generation knobs derived from the config by each scenario.
struct DomainParams {
    rho: f64,
    env_sep: f64,
    env_noise_scale: f64,
}

/// Two orthonormal columns in `embed_dim` dimensions, drawn from seeded
/// Gaussians and Gram-Schmidt orthogonalized.
fn orthogonal_embedding(embed_dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..embed_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let v: Vec<f64> = (0..embed_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let unorm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if unorm < 1e-6 {
            continue;
        }
        let e1: Vec<f64> = u.iter().map(|x| x / unorm).collect();
        let proj: f64 = v.iter().zip(&e1).map(|(a, b)| a * b).sum();
        let vperp: Vec<f64> = v.iter().zip(&e1).map(|(a, b)| a - proj * b).collect();
        let vnorm = vperp.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm < 1e-6 {
            continue;
        }
        let e2: Vec<f64> = vperp.iter().map(|x| x / vnorm).collect();
        let mut embedding = vec![0.0; embed_dim * 2];
        for i in 0..embed_dim {
            embedding[i * 2] = e1[i];
            embedding[i * 2 + 1] = e2[i];
        }
        return embedding;
    }
}

fn generate_domain(
    cfg: &SpuriousShiftConfig,
    params: &DomainParams,
    embedding: &[f64],
    rng: &mut ChaCha8Rng,
) -> (Vec<(Vec<f64>, usize)>, Vec<i8>) {
    let mut samples = Vec::with_capacity(cfg.n_per_domain);
    let mut env_signs = Vec::with_capacity(cfg.n_per_domain);
    for _ in 0..cfg.n_per_domain {
        let y = usize::from(rng.random_bool(0.5));
        let class_sign = if y == 1 { 1.0 } else { -1.0 };
        let matches = rng.random_bool(params.rho);
        let env_sign = if matches { class_sign } else { -class_sign };
        let zc: f64 = StandardNormal.sample(rng);
        let ze: f64 = StandardNormal.sample(rng);
        let causal = class_sign * cfg.class_sep / 2.0 + cfg.noise_sigma * zc;
        let env = env_sign * params.env_sep / 2.0
            + params.env_noise_scale * cfg.noise_sigma * ze;
        let x: Vec<f64> = (0..cfg.embed_dim)
            .map(|i| embedding[i * 2] * causal + embedding[i * 2 + 1] * env)
            .collect();
        samples.push((x, y));
        env_signs.push(env_sign as i8);
    }
    (samples, env_signs)
}

fn generate(
    cfg: &SpuriousShiftConfig,
    seed: u64,
    name: &str,
    source_params: DomainParams,
    target_params: DomainParams,
) -> Result<GeneratorOutput> {
    cfg.validate()?;
    let mut rng = substream(seed, Stream::Data);
    let embedding = orthogonal_embedding(cfg.embed_dim, &mut rng);
    let (source, source_env_signs) = generate_domain(cfg, &source_params, &embedding, &mut rng);
    let (target, target_env_signs) = generate_domain(cfg, &target_params, &embedding, &mut rng);
    let dataset = DomainDataset::new(
        source,
        target,
        cfg.embed_dim,
        2,
        DatasetMetadata {
            generator: name.to_string(),
            seed,
            config: *cfg,
        },
    )?;
    Ok(GeneratorOutput {
        dataset,
        embedding,
        source_env_signs,
        target_env_signs,
    })
}

/// Two-class spurious-correlation data: the environment sign tracks the class
/// with probability `rho_s` in the source domain and `rho_t` in the target.
pub fn gen_spurious_shift(cfg: &SpuriousShiftConfig, seed: u64) -> Result<DomainDataset> {
    gen_spurious_shift_full(cfg, seed).map(|out| out.dataset)
}

pub fn gen_spurious_shift_full(cfg: &SpuriousShiftConfig, seed: u64) -> Result<GeneratorOutput> {
    generate(
        cfg,
        seed,
        "spurious_shift",
        DomainParams {
            rho: cfg.rho_s,
            env_sep: cfg.env_sep,
            env_noise_scale: cfg.env_sigma_s,
        },
        DomainParams {
            rho: cfg.rho_t,
            env_sep: cfg.env_sep,
            env_noise_scale: 1.0,
        },
    )
}

/// Multiplier applied to the target environment separation in the
/// cluster-structure violation scenario.
const VIOLATION_ENV_SEP_FACTOR: f64 = 5.0;

/// Target clusters form along the environment axis instead of the class
/// axis: the target environment separation dwarfs the class separation and
/// the environment is independent of the class (`rho = 0.5`). The source
/// domain keeps the standard geometry.
pub fn gen_assumption1_violation(cfg: &SpuriousShiftConfig, seed: u64) -> Result<DomainDataset> {
    gen_assumption1_violation_full(cfg, seed).map(|out| out.dataset)
}

pub fn gen_assumption1_violation_full(
    cfg: &SpuriousShiftConfig,
    seed: u64,
) -> Result<GeneratorOutput> {
    generate(
        cfg,
        seed,
        "assumption1_violation",
        DomainParams {
            rho: cfg.rho_s,
            env_sep: cfg.env_sep,
            env_noise_scale: cfg.env_sigma_s,
        },
        DomainParams {
            rho: 0.5,
            env_sep: VIOLATION_ENV_SEP_FACTOR * cfg.class_sep.max(cfg.env_sep),
            env_noise_scale: 1.0,
        },
    )
}

/// Two invariant classifiers exist: class and environment signs are fully
/// aligned within each domain (deterministically), with the pairing flipped
/// between domains, so both axis-aligned splits separate source classes and
/// target clusters while disagreeing on every target label.
pub fn gen_assumption2_violation(cfg: &SpuriousShiftConfig, seed: u64) -> Result<DomainDataset> {
    gen_assumption2_violation_full(cfg, seed).map(|out| out.dataset)
}

pub fn gen_assumption2_violation_full(
    cfg: &SpuriousShiftConfig,
    seed: u64,
) -> Result<GeneratorOutput> {
    generate(
        cfg,
        seed,
        "assumption2_violation",
        DomainParams {
            rho: 1.0,
            env_sep: cfg.env_sep,
            env_noise_scale: 1.0,
        },
        DomainParams {
            rho: 0.0,
            env_sep: cfg.env_sep,
            env_noise_scale: 1.0,
        },
    )
}

// ----- augmentation --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentLevel {
    None,
    Weak,
    Strong,
}

/// Noise scales for the weak and strong views.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub p_drop: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            sigma_weak: 0.1,
            sigma_strong: 0.4,
            p_drop: 0.15,
        }
    }
}

/// `none` is the identity; `weak` adds Gaussian noise at `sigma_weak`;
/// `strong` adds Gaussian noise at `sigma_strong` and then zeroes each
/// coordinate independently with probability `p_drop`.
pub fn augment(x: &[f64], level: AugmentLevel, cfg: &AugmentConfig, seed: u64) -> Vec<f64> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_with(x, level, cfg, &mut rng)
}

/// As [`augment`], drawing from a caller-owned generator.
pub fn augment_with(
    x: &[f64],
    level: AugmentLevel,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    match level {
        AugmentLevel::None => x.to_vec(),
        AugmentLevel::Weak => x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + cfg.sigma_weak * z
            })
            .collect(),
        AugmentLevel::Strong => x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                let noised = v + cfg.sigma_strong * z;
                if cfg.p_drop > 0.0 && rng.random_bool(cfg.p_drop) {
                    0.0
                } else {
                    noised
                }
            })
            .collect(),
    }
}

// ----- dataset file I/O ------------------------------------------------------

const METADATA_PREFIX: &str = "# metadata ";

/// Writes the dataset CSV: a metadata comment line, the header
/// `domain,label,f0,...,f{d-1}`, then one row per sample with values at 17
/// significant digits. LF line endings.
pub fn save_dataset(ds: &DomainDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let meta =
        serde_json::to_string(&ds.metadata).map_err(|e| Error::Config(e.to_string()))?;
    out.push_str(METADATA_PREFIX);
    out.push_str(&meta);
    out.push('\n');
    out.push_str("domain,label");
    for i in 0..ds.input_dim {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for (domain, rows) in [("S", &ds.source), ("T", &ds.target)] {
        for (x, y) in rows {
            out.push_str(domain);
            out.push_str(&format!(",{y}"));
            for v in x {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DomainDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.display().to_string(),
        line,
        detail,
    };

    let mut lines = text.lines().enumerate().peekable();

    let metadata = match lines.peek() {
        Some((_, line)) if line.starts_with('#') => {
            let (line_no, line) = lines.next().unwrap();
            let json = line.strip_prefix(METADATA_PREFIX).ok_or_else(|| {
                parse_err(line_no + 1, "malformed metadata comment".to_string())
            })?;
            Some(
                serde_json::from_str::<DatasetMetadata>(json)
                    .map_err(|e| parse_err(line_no + 1, format!("invalid metadata: {e}")))?,
            )
        }
        _ => None,
    };

    let (header_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".to_string()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "domain" || columns[1] != "label" {
        return Err(parse_err(
            header_no + 1,
            format!("header must start with 'domain,label,f0,...', found '{header}'"),
        ));
    }
    for (i, col) in columns[2..].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(parse_err(
                header_no + 1,
                format!("expected column 'f{i}', found '{col}'"),
            ));
        }
    }
    let input_dim = columns.len() - 2;

    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut max_label = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid label '{}'", fields[1])))?;
        max_label = max_label.max(label);
        let values: Vec<f64> = fields[2..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("invalid value '{t}'")))
            })
            .collect::<Result<_>>()?;
        match fields[0] {
            "S" => source.push((values, label)),
            "T" => target.push((values, label)),
            other => {
                return Err(parse_err(
                    line_no,
                    format!("domain must be S or T, found '{other}'"),
                ))
            }
        }
    }

    let metadata = metadata.unwrap_or_else(|| DatasetMetadata {
        generator: "unknown".to_string(),
        seed: 0,
        config: SpuriousShiftConfig {
            n_per_domain: source.len().max(target.len()),
            embed_dim: input_dim.max(2),
            ..Default::default()
        },
    });
    let num_classes = max_label + 1;
    DomainDataset::new(source, target, input_dim, num_classes, metadata)
}
