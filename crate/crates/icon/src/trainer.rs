//! Seeded, epoch-structured training loop. Composes the supervised
//! cross-entropy, the two pairwise consistency losses, the variance penalty
//! that balances them, self-training, and the cluster-head loss, with a
//! toggle for every component so each ablation row is a config, not a code
//! path.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::clustering::{rank_stat_pairs, RankStatConfig};
use crate::datagen::{augment_with, AugmentConfig, AugmentLevel, DomainDataset};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, probe_g_vs_f};
use crate::losses::{
    cross_entropy, fixmatch_loss, noisy_student_targets, pairs_from_class_labels,
    pairs_from_clusters, pairwise_bce, pseudolabel_loss, rex_penalty, LossReport,
};
use crate::model::{init_model, BackboneSpec, Head, ModelState, ModelVars};
use crate::rng::{substream, Stream};

/// Which self-training loss supervises the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StVariant {
    Fixmatch,
    Pseudolabel,
    NoisyStudent,
    None,
}

impl StVariant {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "fixmatch" => Some(StVariant::Fixmatch),
            "pseudolabel" => Some(StVariant::Pseudolabel),
            "noisy_student" => Some(StVariant::NoisyStudent),
            "none" => Some(StVariant::None),
            _ => None,
        }
    }
}

/// Fraction of total steps over which the pseudo-label weight ramps to one.
const PSEUDOLABEL_RAMP_FRACTION: f64 = 0.4;

/// Linear ramp: 0 at the first step, exactly 1 at 40% of total steps,
/// constant afterwards.
pub fn pseudolabel_ramp(step_frac: f64) -> f64 {
    (step_frac / PSEUDOLABEL_RAMP_FRACTION).min(1.0)
}

/// All hyperparameters, schedules, and component toggles for a run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Self-training weight.
    pub alpha: f64,
    /// Invariance (variance penalty) weight.
    pub beta: f64,
    /// Whether the source pairwise loss enters the sum. Off by default: the
    /// supervised cross-entropy already enforces source consistency, and the
    /// source pairwise loss still feeds the variance penalty when needed.
    pub include_bce_s: bool,
    /// Cluster-head loss weight.
    pub lambda_cluster: f64,
    pub st_variant: StVariant,
    /// Self-training confidence threshold.
    pub tau: f64,
    /// Confidence threshold for selecting target pairs from cluster output.
    pub cluster_conf: f64,
    /// Cluster count as a multiple of the class count.
    pub cluster_multiplier: f64,
    /// Epochs before the target pairwise loss (and with it the variance
    /// penalty) activates, giving the cluster head time to organize.
    pub warmup_epochs_bce_t: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Stop cluster-head gradients at the backbone.
    pub detach_cluster_backbone: bool,
    /// Use the supervised cross-entropy instead of the source pairwise loss
    /// as the variance penalty's source-side argument.
    pub rex_on_ce: bool,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.75,
            beta: 0.15,
            include_bce_s: false,
            lambda_cluster: 1.0,
            st_variant: StVariant::Fixmatch,
            tau: 0.97,
            cluster_conf: 0.9,
            cluster_multiplier: 1.0,
            warmup_epochs_bce_t: 5,
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
            detach_cluster_backbone: false,
            rex_on_ce: false,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda_cluster < 0.0 {
            return Err(Error::Config(
                "alpha, beta and lambda_cluster must be non-negative".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau={} must be in (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.cluster_conf) {
            return Err(Error::Config(format!(
                "cluster_conf={} must be in [0, 1]",
                self.cluster_conf
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr={} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum={} must be in [0, 1)",
                self.momentum
            )));
        }
        if self.cluster_multiplier <= 0.0 {
            return Err(Error::Config(
                "cluster_multiplier must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sets one field from its config-file key; unknown keys are rejected by
    /// name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} value '{value}'"));
        let parse_f64 = |what: &str| value.parse::<f64>().map_err(|_| bad(what));
        let parse_usize = |what: &str| value.parse::<usize>().map_err(|_| bad(what));
        let parse_u64 = |what: &str| value.parse::<u64>().map_err(|_| bad(what));
        let parse_bool = |what: &str| value.parse::<bool>().map_err(|_| bad(what));
        match key {
            "alpha" => self.alpha = parse_f64(key)?,
            "beta" => self.beta = parse_f64(key)?,
            "include_bce_s" => self.include_bce_s = parse_bool(key)?,
            "lambda_cluster" => self.lambda_cluster = parse_f64(key)?,
            "st_variant" => {
                self.st_variant = StVariant::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown st_variant '{value}'")))?
            }
            "tau" => self.tau = parse_f64(key)?,
            "cluster_conf" => self.cluster_conf = parse_f64(key)?,
            "cluster_multiplier" => self.cluster_multiplier = parse_f64(key)?,
            "warmup_epochs_bce_t" => self.warmup_epochs_bce_t = parse_usize(key)?,
            "epochs" => self.epochs = parse_usize(key)?,
            "batch_size" => self.batch_size = parse_usize(key)?,
            "lr" => self.lr = parse_f64(key)?,
            "momentum" => self.momentum = parse_f64(key)?,
            "seed" => self.seed = parse_u64(key)?,
            "detach_cluster_backbone" => self.detach_cluster_backbone = parse_bool(key)?,
            "rex_on_ce" => self.rex_on_ce = parse_bool(key)?,
            "grad_clip" => self.grad_clip = parse_f64(key)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Supervised source-only baseline. The cluster head keeps training with
    /// detached gradients so the pair probe stays meaningful; it cannot
    /// influence the classifier.
    pub fn erm_baseline(mut self) -> Self {
        self.alpha = 0.0;
        self.beta = 0.0;
        self.st_variant = StVariant::None;
        self.warmup_epochs_bce_t = self.epochs;
        self.detach_cluster_backbone = true;
        self
    }

    /// Self-training only: consistency and invariance off, cluster head
    /// detached as in [`TrainConfig::erm_baseline`].
    pub fn self_training_baseline(mut self) -> Self {
        self.beta = 0.0;
        self.warmup_epochs_bce_t = self.epochs;
        self.detach_cluster_backbone = true;
        self
    }

    /// Consistency without the invariance constraint.
    pub fn consistency_only(mut self) -> Self {
        self.beta = 0.0;
        self
    }
}

/// Parses the flat `key = value` config format with `#` comments; unknown
/// keys are an error naming the key.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", idx + 1))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One epoch of the training log.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochRecord {
    pub losses: LossReport,
    pub acc_s: f64,
    pub acc_t: f64,
    pub probe_pct: f64,
}

/// Per-epoch records plus the final model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub model: ModelState,
}

impl TrainLog {
    pub fn final_record(&self) -> &EpochRecord {
        self.epochs.last().expect("at least one epoch")
    }

    /// Metrics CSV, one row per epoch (0-based); absent terms print as 0.
    pub fn metrics_csv(&self) -> String {
        let mut out =
            String::from("epoch,ce_s,bce_s,bce_t,st,rex,cluster,acc_s,acc_t,probe_pct\n");
        for (epoch, rec) in self.epochs.iter().enumerate() {
            let l = &rec.losses;
            out.push_str(&format!(
                "{epoch},{},{},{},{},{},{},{},{},{}\n",
                l.ce_s,
                l.bce_s.unwrap_or(0.0),
                l.bce_t.unwrap_or(0.0),
                l.st.unwrap_or(0.0),
                l.rex.unwrap_or(0.0),
                l.cluster.unwrap_or(0.0),
                rec.acc_s,
                rec.acc_t,
                rec.probe_pct
            ));
        }
        out
    }
}

/// Number of probe pairs sampled for the per-epoch log.
const PROBE_PAIRS: usize = 10_000;

/// Target-sample views for one step, drawn before graph construction so the
/// objective is a deterministic function of the parameters.
pub struct TargetViews {
    pub clean: Vec<Vec<f64>>,
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
}

impl TargetViews {
    /// Draws whatever views the self-training variant needs.
    pub fn prepare(
        batch: &[Vec<f64>],
        variant: StVariant,
        aug: &AugmentConfig,
        rng: &mut ChaCha8Rng,
    ) -> TargetViews {
        let weak = match variant {
            StVariant::Fixmatch | StVariant::Pseudolabel | StVariant::NoisyStudent => batch
                .iter()
                .map(|x| augment_with(x, AugmentLevel::Weak, aug, rng))
                .collect(),
            StVariant::None => Vec::new(),
        };
        let strong = match variant {
            StVariant::Fixmatch => batch
                .iter()
                .map(|x| augment_with(x, AugmentLevel::Strong, aug, rng))
                .collect(),
            _ => Vec::new(),
        };
        TargetViews {
            clean: batch.to_vec(),
            weak,
            strong,
        }
    }
}

fn check_finite(tape: &Tape, v: Var, term: &'static str) -> Result<f64> {
    let value = tape.scalar_value(v)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { term });
    }
    Ok(value)
}

/// Builds the full objective graph for one step and returns the root node
/// plus the per-term report. All data-dependent decisions (pair labels,
/// confidence gates, pseudo-labels except the epoch-fixed ones) are
/// recomputed from the current parameter values on the tape.
#[allow(clippy::too_many_arguments)]
pub fn build_objective(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &TrainConfig,
    rank_cfg: &RankStatConfig,
    batch_s: &[(Vec<f64>, usize)],
    target: &TargetViews,
    epoch: usize,
    step_frac: f64,
    noisy_student_labels: Option<&[usize]>,
) -> Result<(Var, LossReport)> {
    if batch_s.is_empty() || target.clean.is_empty() {
        return Err(Error::Config("batches must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&step_frac) {
        return Err(Error::Config(format!(
            "step_frac={step_frac} must be in [0, 1]"
        )));
    }

    // Source forward: cross-entropy plus predictions for the pairwise loss.
    let mut f_s = Vec::with_capacity(batch_s.len());
    let mut ce_terms = Vec::with_capacity(batch_s.len());
    for (x, y) in batch_s {
        let p = vars.forward(tape, x, Head::F)?;
        f_s.push(p);
        ce_terms.push(cross_entropy(tape, p, *y)?);
    }
    let ce_s = tape.mean(&ce_terms)?;
    let ce_s_value = check_finite(tape, ce_s, "ce_s")?;

    let bce_t_scheduled = epoch >= cfg.warmup_epochs_bce_t;
    let needs_g = cfg.lambda_cluster > 0.0 || bce_t_scheduled;

    // Target forward: one backbone pass per sample, shared by both heads.
    let mut g_values: Vec<Vec<f64>> = Vec::new();
    let mut g_t: Vec<Var> = Vec::new();
    let mut f_t: Vec<Var> = Vec::new();
    let mut feature_values: Vec<Vec<f64>> = Vec::new();
    if needs_g || cfg.st_variant != StVariant::None {
        for x in &target.clean {
            let features = vars.features(tape, x)?;
            feature_values.push(tape.value(features).to_vec());
            if bce_t_scheduled {
                f_t.push(vars.head(tape, features, Head::F)?);
            }
            if needs_g {
                let g_input = if cfg.detach_cluster_backbone {
                    let frozen = tape.value(features).to_vec();
                    tape.vector(&frozen)
                } else {
                    features
                };
                let g = vars.head(tape, g_input, Head::G)?;
                g_values.push(tape.value(g).to_vec());
                g_t.push(g);
            }
        }
    }

    // Cluster-head loss under rank-statistics labels (labels from values).
    let mut cluster = None;
    if cfg.lambda_cluster > 0.0 && target.clean.len() >= 2 {
        let pairs = rank_stat_pairs(&feature_values, rank_cfg.k)?;
        let bce = pairwise_bce(tape, &g_t, &pairs)?;
        if !bce.no_pairs() {
            check_finite(tape, bce.value, "cluster")?;
            cluster = Some(bce);
        }
    }

    // Target pairwise consistency, on confident cluster pairs.
    let mut bce_t = None;
    if bce_t_scheduled {
        let pairs = pairs_from_clusters(&g_values, cfg.cluster_conf);
        let bce = pairwise_bce(tape, &f_t, &pairs)?;
        if !bce.no_pairs() {
            check_finite(tape, bce.value, "bce_t")?;
            bce_t = Some(bce);
        }
    }
    let bce_t_active = bce_t.is_some();

    // Source pairwise consistency; also computed (value and gradient) when
    // only the variance penalty needs it.
    let mut bce_s = None;
    if cfg.include_bce_s || (bce_t_active && !cfg.rex_on_ce) {
        let pairs = pairs_from_class_labels(
            &batch_s.iter().map(|(_, y)| *y).collect::<Vec<_>>(),
        );
        let bce = pairwise_bce(tape, &f_s, &pairs)?;
        if !bce.no_pairs() {
            check_finite(tape, bce.value, "bce_s")?;
            bce_s = Some(bce);
        }
    }

    // Self-training.
    let mut st = None;
    match cfg.st_variant {
        StVariant::None => {}
        StVariant::Fixmatch => {
            let mut terms = Vec::with_capacity(target.clean.len());
            for (weak, strong) in target.weak.iter().zip(&target.strong) {
                // weak view is detached: only its values are read
                let weak_probs = {
                    let p = vars.forward(tape, weak, Head::F)?;
                    tape.value(p).to_vec()
                };
                let p_strong = vars.forward(tape, strong, Head::F)?;
                terms.push(fixmatch_loss(tape, &weak_probs, p_strong, cfg.tau)?);
            }
            st = Some(tape.mean(&terms)?);
        }
        StVariant::Pseudolabel => {
            let ramp = pseudolabel_ramp(step_frac);
            let mut terms = Vec::with_capacity(target.clean.len());
            for weak in &target.weak {
                let p = vars.forward(tape, weak, Head::F)?;
                terms.push(pseudolabel_loss(tape, p, cfg.tau, ramp)?);
            }
            st = Some(tape.mean(&terms)?);
        }
        StVariant::NoisyStudent => {
            let labels = noisy_student_labels.ok_or_else(|| {
                Error::Config("noisy_student requires epoch-start pseudo-labels".into())
            })?;
            if labels.len() != target.clean.len() {
                return Err(Error::Config(format!(
                    "{} pseudo-labels for {} target samples",
                    labels.len(),
                    target.clean.len()
                )));
            }
            let mut terms = Vec::with_capacity(target.clean.len());
            for (weak, &label) in target.weak.iter().zip(labels) {
                let p = vars.forward(tape, weak, Head::F)?;
                terms.push(cross_entropy(tape, p, label)?);
            }
            st = Some(tape.mean(&terms)?);
        }
    }
    if let Some(v) = st {
        check_finite(tape, v, "st")?;
    }

    // Variance penalty over the two domain losses; skipped whenever the
    // target side is.
    let mut rex = None;
    if bce_t_active {
        let source_side = if cfg.rex_on_ce {
            Some(ce_s)
        } else {
            bce_s.map(|b| b.value)
        };
        if let Some(left) = source_side {
            let penalty = rex_penalty(tape, left, bce_t.unwrap().value)?;
            check_finite(tape, penalty, "rex")?;
            rex = Some(penalty);
        }
    }

    // Weighted sum, composed in report order.
    let mut total = ce_s;
    let bce_s_in_sum = cfg.include_bce_s && bce_s.is_some();
    if bce_s_in_sum {
        total = tape.add(total, bce_s.unwrap().value)?;
    }
    if let Some(b) = bce_t {
        total = tape.add(total, b.value)?;
    }
    if let Some(s) = st {
        let scaled = tape.scale(s, cfg.alpha);
        total = tape.add(total, scaled)?;
    }
    if let Some(r) = rex {
        let scaled = tape.scale(r, cfg.beta);
        total = tape.add(total, scaled)?;
    }
    if let Some(c) = cluster {
        let scaled = tape.scale(c.value, cfg.lambda_cluster);
        total = tape.add(total, scaled)?;
    }
    let total_value = check_finite(tape, total, "total")?;

    let report = LossReport {
        ce_s: ce_s_value,
        bce_s: if bce_s_in_sum {
            Some(tape.scalar_value(bce_s.unwrap().value)?)
        } else {
            None
        },
        bce_t: bce_t.map(|b| tape.scalar_value(b.value)).transpose()?,
        st: st.map(|v| tape.scalar_value(v)).transpose()?,
        rex: rex.map(|v| tape.scalar_value(v)).transpose()?,
        cluster: cluster.map(|c| tape.scalar_value(c.value)).transpose()?,
        total: total_value,
        alpha: cfg.alpha,
        beta: cfg.beta,
        lambda_cluster: cfg.lambda_cluster,
    };
    Ok((total, report))
}

/// Training state: the model plus SGD momentum buffers.
pub struct Trainer {
    pub model: ModelState,
    cfg: TrainConfig,
    rank_cfg: RankStatConfig,
    augment_cfg: AugmentConfig,
    velocity: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Trainer {
    pub fn new(model: ModelState, cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let velocity = model
            .layers
            .iter()
            .chain([&model.head_f, &model.head_g])
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect();
        let rank_cfg = RankStatConfig::for_feature_dim(model.feature_dim);
        Ok(Trainer {
            model,
            cfg,
            rank_cfg,
            augment_cfg: AugmentConfig::default(),
            velocity,
        })
    }

    /// One optimization step: build the objective on a fresh tape, run the
    /// backward pass, and apply one SGD-with-momentum update to every
    /// parameter. Aborts with the term name if any loss goes non-finite.
    pub fn step(
        &mut self,
        batch_s: &[(Vec<f64>, usize)],
        batch_t: &[Vec<f64>],
        epoch: usize,
        step_frac: f64,
        noisy_student_labels: Option<&[usize]>,
        augment_rng: &mut ChaCha8Rng,
    ) -> Result<LossReport> {
        let views = TargetViews::prepare(
            batch_t,
            self.cfg.st_variant,
            &self.augment_cfg,
            augment_rng,
        );
        let mut tape = Tape::new();
        let vars = self.model.inject(&mut tape);
        let (root, report) = build_objective(
            &mut tape,
            &vars,
            &self.cfg,
            &self.rank_cfg,
            batch_s,
            &views,
            epoch,
            step_frac,
            noisy_student_labels,
        )?;
        tape.backward(root)?;

        let lr = self.cfg.lr;
        let momentum = self.cfg.momentum;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = vars
            .layers
            .iter()
            .chain([&vars.head_f, &vars.head_g])
            .map(|&(w, b)| (tape.grad(w).to_vec(), tape.grad(b).to_vec()))
            .collect();

        // Clip the global gradient norm: the clamped pair losses can emit
        // near-1/eps spikes on confidently contradicted pairs, and one such
        // batch with momentum would throw the run across basins.
        if self.cfg.grad_clip > 0.0 {
            let norm: f64 = grads
                .iter()
                .flat_map(|(w, b)| w.iter().chain(b.iter()))
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > self.cfg.grad_clip {
                let scale = self.cfg.grad_clip / norm;
                for (w, b) in &mut grads {
                    for g in w.iter_mut().chain(b.iter_mut()) {
                        *g *= scale;
                    }
                }
            }
        }
        for ((layer, (vw, vb)), (gw, gb)) in self
            .model
            .layers
            .iter_mut()
            .chain([&mut self.model.head_f, &mut self.model.head_g])
            .zip(self.velocity.iter_mut())
            .zip(grads)
        {
            for ((p, v), g) in layer.weight.iter_mut().zip(vw.iter_mut()).zip(gw) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
            for ((p, v), g) in layer.bias.iter_mut().zip(vb.iter_mut()).zip(gb) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(report)
    }
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn aggregate_reports(reports: &[LossReport], cfg: &TrainConfig) -> LossReport {
    let collect = |pick: fn(&LossReport) -> Option<f64>| -> Option<f64> {
        let present: Vec<f64> = reports.iter().filter_map(pick).collect();
        if present.is_empty() {
            None
        } else {
            Some(mean_of(&present))
        }
    };
    LossReport {
        ce_s: mean_of(&reports.iter().map(|r| r.ce_s).collect::<Vec<_>>()),
        bce_s: collect(|r| r.bce_s),
        bce_t: collect(|r| r.bce_t),
        st: collect(|r| r.st),
        rex: collect(|r| r.rex),
        cluster: collect(|r| r.cluster),
        total: mean_of(&reports.iter().map(|r| r.total).collect::<Vec<_>>()),
        alpha: cfg.alpha,
        beta: cfg.beta,
        lambda_cluster: cfg.lambda_cluster,
    }
}

/// Runs the full loop: seeded shuffles, source and target batches in
/// lockstep with the shorter domain cycling, epoch-boundary pseudo-label
/// refresh for the noisy-student variant, and per-epoch metrics. Only the
/// backbone and classification head are used for test-time prediction; the
/// cluster head only ever feeds the loss and the probe.
pub fn train(ds: &DomainDataset, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let model = init_model(
        &BackboneSpec::default_for(ds.input_dim),
        ds.num_classes,
        cfg.cluster_multiplier,
        cfg.seed,
    )?;
    let mut trainer = Trainer::new(model, cfg.clone())?;

    let n_source = ds.source.len();
    let n_target = ds.target_len();
    if n_source == 0 || n_target == 0 {
        return Err(Error::Config("both domains must be non-empty".into()));
    }
    let steps_per_epoch = n_source.max(n_target).div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;

    let mut shuffle_rng = substream(cfg.seed, Stream::Shuffle);
    let mut augment_rng = substream(cfg.seed, Stream::Augment);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut source_order: Vec<usize> = (0..n_source).collect();
        let mut target_order: Vec<usize> = (0..n_target).collect();
        source_order.shuffle(&mut shuffle_rng);
        target_order.shuffle(&mut shuffle_rng);

        // Epoch-fixed pseudo-labels, aligned with target indices.
        let ns_labels_all = if cfg.st_variant == StVariant::NoisyStudent {
            let inputs: Vec<Vec<f64>> = ds
                .target_inputs()
                .iter()
                .map(|x| x.to_vec())
                .collect();
            Some(noisy_student_targets(&trainer.model, &inputs)?)
        } else {
            None
        };

        let mut reports = Vec::with_capacity(steps_per_epoch);
        for step in 0..steps_per_epoch {
            let take = |order: &[usize], len: usize| -> Vec<usize> {
                (0..cfg.batch_size)
                    .map(|k| order[(step * cfg.batch_size + k) % len])
                    .collect()
            };
            let s_idx = take(&source_order, n_source);
            let t_idx = take(&target_order, n_target);
            let batch_s: Vec<(Vec<f64>, usize)> = s_idx
                .iter()
                .map(|&i| ds.source[i].clone())
                .collect();
            let batch_t: Vec<Vec<f64>> = t_idx
                .iter()
                .map(|&i| ds.target_input(i).to_vec())
                .collect();
            let ns_batch: Option<Vec<usize>> = ns_labels_all
                .as_ref()
                .map(|labels| t_idx.iter().map(|&i| labels[i]).collect());

            let global_step = epoch * steps_per_epoch + step;
            let step_frac = global_step as f64 / total_steps;
            let report = trainer.step(
                &batch_s,
                &batch_t,
                epoch,
                step_frac,
                ns_batch.as_deref(),
                &mut augment_rng,
            )?;
            reports.push(report);
        }

        let acc_s = accuracy(&trainer.model, &ds.source)?;
        let acc_t = accuracy(&trainer.model, ds.target_for_eval())?;
        let probe_pct = if n_target >= 2 {
            probe_g_vs_f(&trainer.model, ds.target_for_eval(), PROBE_PAIRS, cfg.seed)?.percentage
        } else {
            0.0
        };
        epochs.push(EpochRecord {
            losses: aggregate_reports(&reports, cfg),
            acc_s,
            acc_t,
            probe_pct,
        });
    }

    Ok(TrainLog {
        epochs,
        model: trainer.model,
    })
}
