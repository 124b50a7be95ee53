//! Ensembles of feedforward members with stochastic feature sharing and the
//! three training objectives: independent ensemble (IE), multiple choice
//! learning (MCL), and confident multiple choice learning (CMCL).
//!
//! One CMCL step per batch:
//! 1. sample fresh Bernoulli masks (when sharing is enabled),
//! 2. forward all members with masked peer features injected at the share
//!    layer,
//! 3. build the per-example per-member cross-entropy and KL tables,
//! 4. rank members by the composite loss and assign the top-K per example,
//! 5. assigned examples contribute cross-entropy gradients, unassigned ones
//!    beta-scaled KL-to-uniform gradients (exact or stochastic-label),
//! 6. backpropagate, including the flow through shared features into peer
//!    members' lower layers,
//! 7. one optimizer step per member.
//!
//! Gradients are batch means. The single-threaded path here is the
//! normative one: accumulation runs in member order, then example order.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::{self, Batch, Dataset};
use crate::error::{Error, Result};
use crate::losses::{self, AssignmentMatrix, LossBreakdown};
use crate::matrix::Matrix;
use crate::metrics;
use crate::net::{
    backward, backward_from_activation, forward, init_params, Activation, ForwardTrace, Gradients,
    Injection, LayerSpec, NetworkParams,
};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::seeds::{self, STREAM_INIT, STREAM_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ie,
    Mcl,
    Cmcl,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Ie => "ie",
            Mode::Mcl => "mcl",
            Mode::Cmcl => "cmcl",
        })
    }
}

/// Gradient used on unassigned examples: the exact KL gradient or the
/// Monte-Carlo cross-entropy gradient against uniformly drawn labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradVariant {
    #[serde(rename = "v0")]
    ExactV0,
    #[serde(rename = "v1")]
    StochasticV1,
}

impl std::fmt::Display for GradVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradVariant::ExactV0 => "v0",
            GradVariant::StochasticV1 => "v1",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Ensemble size M.
    pub members: usize,
    /// Overlap K: members assigned per example.
    pub overlap: usize,
    /// KL penalty.
    pub beta: f64,
    /// Bernoulli sharing probability.
    pub lambda: f64,
    /// Layer whose input receives peer features; `None` disables sharing.
    pub share_layer: Option<usize>,
    pub grad_variant: GradVariant,
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden layer widths; the output layer is added from the data.
    pub hidden_dims: Vec<usize>,
    /// Monte-Carlo samples per unassigned example for the v1 gradient.
    pub mc_samples: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 5,
            overlap: 1,
            beta: 1.0,
            lambda: 0.7,
            share_layer: Some(1),
            grad_variant: GradVariant::ExactV0,
            mode: Mode::Cmcl,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            hidden_dims: vec![32],
            mc_samples: 1,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if self.overlap == 0 || self.overlap > self.members {
            return Err(Error::Config(format!(
                "overlap K={} must satisfy 1 <= K <= M={}",
                self.overlap, self.members
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden dims must be non-empty and positive".into()));
        }
        if let Some(s) = self.share_layer {
            if s == 0 || s > self.hidden_dims.len() {
                return Err(Error::Config(format!(
                    "share layer {s} must name a hidden activation in 1..={}",
                    self.hidden_dims.len()
                )));
            }
        }
        self.optimizer.validate()
    }

    /// Validates and applies the mode rules: MCL forces beta to zero and
    /// disables sharing; IE trains members independently so sharing is
    /// dropped as well.
    pub fn normalized(mut self) -> Result<Self> {
        self.validate()?;
        match self.mode {
            Mode::Mcl => {
                self.beta = 0.0;
                self.share_layer = None;
            }
            Mode::Ie => {
                self.share_layer = None;
            }
            Mode::Cmcl => {}
        }
        Ok(self)
    }

    pub fn layer_specs(&self, input_dim: usize, class_count: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = input_dim;
        for &h in &self.hidden_dims {
            specs.push(LayerSpec::new(prev, h, Activation::Relu));
            prev = h;
        }
        specs.push(LayerSpec::new(prev, class_count, Activation::Softmax));
        specs
    }
}

/// Bernoulli masks `sigma[from][to]` over the shared feature dimension,
/// resampled once per minibatch.
#[derive(Debug, Clone)]
pub struct MaskSet {
    layer: usize,
    members: usize,
    dim: usize,
    masks: Vec<f64>,
}

impl MaskSet {
    pub fn sample<R: Rng>(members: usize, dim: usize, layer: usize, lambda: f64, rng: &mut R) -> Self {
        let mut masks = vec![0.0; members * members * dim];
        for from in 0..members {
            for to in 0..members {
                if from == to {
                    continue;
                }
                let base = (from * members + to) * dim;
                for d in 0..dim {
                    masks[base + d] = if rng.gen::<f64>() < lambda { 1.0 } else { 0.0 };
                }
            }
        }
        MaskSet {
            layer,
            members,
            dim,
            masks,
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn mask(&self, from: usize, to: usize) -> &[f64] {
        let base = (from * self.members + to) * self.dim;
        &self.masks[base..base + self.dim]
    }

    fn matches(&self, members: usize, dim: usize, layer: usize) -> bool {
        self.members == members && self.dim == dim && self.layer == layer
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: EnsembleConfig,
    pub members: Vec<NetworkParams>,
    pub optimizers: Vec<OptimizerState>,
    /// Completed training epochs.
    pub epoch: usize,
}

impl Ensemble {
    /// Builds M members with the shared architecture, each initialized from
    /// its own derived seed (mode-independent, so IE/MCL/CMCL runs with the
    /// same seed start from identical parameters).
    pub fn init(config: &EnsembleConfig, input_dim: usize, class_count: usize) -> Result<Self> {
        let config = config.clone().normalized()?;
        let specs = config.layer_specs(input_dim, class_count);
        let mut members = Vec::with_capacity(config.members);
        let mut optimizers = Vec::with_capacity(config.members);
        for m in 0..config.members {
            let params = init_params(&specs, seeds::derive(config.seed, &[STREAM_INIT, m as u64]))?;
            optimizers.push(OptimizerState::new(config.optimizer, &params)?);
            members.push(params);
        }
        Ok(Ensemble {
            config,
            members,
            optimizers,
            epoch: 0,
        })
    }

    /// Rebuilds an ensemble around existing member parameters (checkpoint
    /// restore); optimizer velocities start at zero.
    pub fn from_members(config: EnsembleConfig, members: Vec<NetworkParams>, epoch: usize) -> Result<Self> {
        let config = config.normalized()?;
        if members.len() != config.members {
            return Err(Error::Config(format!(
                "config names {} members but {} parameter sets were given",
                config.members,
                members.len()
            )));
        }
        let optimizers = members
            .iter()
            .map(|p| OptimizerState::new(config.optimizer, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            config,
            members,
            optimizers,
            epoch,
        })
    }

    pub fn class_count(&self) -> usize {
        self.members[0].output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    /// Width of the shared feature vector, when sharing is enabled.
    pub fn share_dim(&self) -> Option<usize> {
        self.config
            .share_layer
            .map(|s| self.members[0].layers[s].input_dim())
    }

    pub fn sharing_active(&self) -> bool {
        self.config.mode == Mode::Cmcl && self.config.share_layer.is_some() && self.config.members > 1
    }
}

enum Sharing<'a> {
    Off,
    Masked(&'a MaskSet),
    Expected { layer: usize, lambda: f64 },
}

/// Forward passes for a group of members, wiring masked (or
/// expectation-scaled) peer activations into each member's share layer.
fn forward_members(members: &[NetworkParams], inputs: &Matrix, sharing: Sharing) -> Result<Vec<ForwardTrace>> {
    let (layer, weight_of): (usize, Box<dyn Fn(usize, usize, usize) -> f64>) = match sharing {
        Sharing::Off => {
            return members.iter().map(|p| forward(p, inputs, &[])).collect();
        }
        Sharing::Masked(masks) => {
            let layer = masks.layer();
            (layer, Box::new(move |from, to, d| masks.mask(from, to)[d]))
        }
        Sharing::Expected { layer, lambda } => (layer, Box::new(move |_, _, _| lambda)),
    };

    // Pre-share activations are injection-free, so a plain pass per member
    // yields the peer features exactly.
    let plain: Vec<ForwardTrace> = members
        .iter()
        .map(|p| forward(p, inputs, &[]))
        .collect::<Result<_>>()?;
    let batch = inputs.rows();
    let dim = members[0].layers[layer].input_dim();

    let mut traces = Vec::with_capacity(members.len());
    for (m, params) in members.iter().enumerate() {
        let mut injected = Matrix::zeros(batch, dim);
        for (n, peer) in plain.iter().enumerate() {
            if n == m {
                continue;
            }
            let activation = peer.activation(layer);
            if activation.cols() != dim {
                return Err(Error::Shape(format!(
                    "member {n} shares {} features, member {m} expects {dim}",
                    activation.cols()
                )));
            }
            for b in 0..batch {
                let src = activation.row(b);
                let dst = injected.row_mut(b);
                for d in 0..dim {
                    dst[d] += weight_of(n, m, d) * src[d];
                }
            }
        }
        traces.push(forward(
            params,
            inputs,
            &[Injection {
                layer,
                features: &injected,
            }],
        )?);
    }
    Ok(traces)
}

/// Forward pass for every member. In training mode with sharing enabled the
/// sampled masks are required; in eval mode masks are replaced by the
/// deterministic expectation scaling with lambda.
pub fn forward_ensemble(
    ensemble: &Ensemble,
    inputs: &Matrix,
    masks: Option<&MaskSet>,
    eval_mode: bool,
) -> Result<Vec<ForwardTrace>> {
    if !ensemble.sharing_active() {
        return forward_members(&ensemble.members, inputs, Sharing::Off);
    }
    let layer = ensemble.config.share_layer.expect("sharing active");
    let dim = ensemble.share_dim().expect("sharing active");
    if eval_mode {
        return forward_members(
            &ensemble.members,
            inputs,
            Sharing::Expected {
                layer,
                lambda: ensemble.config.lambda,
            },
        );
    }
    let masks = masks.ok_or_else(|| {
        Error::Input("sharing is enabled but no mask set was supplied for training".into())
    })?;
    if !masks.matches(ensemble.config.members, dim, layer) {
        return Err(Error::Shape("mask set does not match the ensemble layout".into()));
    }
    forward_members(&ensemble.members, inputs, Sharing::Masked(masks))
}

/// Cross-entropy of every member on every example.
fn task_table(traces: &[ForwardTrace], labels: &[usize]) -> Result<Matrix> {
    let batch = labels.len();
    let mut table = Matrix::zeros(batch, traces.len());
    for (m, trace) in traces.iter().enumerate() {
        let probs = trace.output();
        for i in 0..batch {
            table.set(i, m, losses::cross_entropy_value(probs.row(i), labels[i])?);
        }
    }
    Ok(table)
}

/// KL-to-uniform of every member on every example.
fn kl_table(traces: &[ForwardTrace]) -> Matrix {
    let batch = traces[0].batch_size();
    let mut table = Matrix::zeros(batch, traces.len());
    for (m, trace) in traces.iter().enumerate() {
        let probs = trace.output();
        for i in 0..batch {
            table.set(i, m, losses::kl_from_uniform(probs.row(i)));
        }
    }
    table
}

fn composite_table(task: &Matrix, kl: &Matrix, beta: f64) -> Result<Matrix> {
    let mut composite = Matrix::zeros(task.rows(), task.cols());
    for i in 0..task.rows() {
        let row = losses::composite_member_loss(task.row(i), kl.row(i), beta)?;
        composite.row_mut(i).copy_from_slice(&row);
    }
    Ok(composite)
}

/// Batch-mean gradients of the confident oracle objective at a fixed
/// assignment: assigned examples contribute cross-entropy gradients,
/// unassigned ones beta-scaled KL gradients (exact or stochastic-label),
/// and sharing routes each member's injected-feature gradient into its
/// peers' lower layers.
#[allow(clippy::too_many_arguments)]
pub fn cmcl_batch_gradients<R: Rng>(
    members: &[NetworkParams],
    traces: &[ForwardTrace],
    labels: &[usize],
    assignment: &AssignmentMatrix,
    beta: f64,
    variant: GradVariant,
    mc_samples: usize,
    masks: Option<&MaskSet>,
    rng: &mut R,
) -> Result<Vec<Gradients>> {
    let batch = labels.len();
    let class_count = members[0].output_dim();
    let inv_b = 1.0 / batch as f64;
    let inv_c = 1.0 / class_count as f64;

    let mut grads = Vec::with_capacity(members.len());
    let mut injection_grads: Vec<Option<Matrix>> = vec![None; members.len()];
    for (m, (params, trace)) in members.iter().zip(traces).enumerate() {
        let probs = trace.output();
        let mut logit_grad = Matrix::zeros(batch, class_count);
        for i in 0..batch {
            let p = probs.row(i);
            let row = logit_grad.row_mut(i);
            if assignment.is_assigned(i, m) {
                for (j, (&pj, rj)) in p.iter().zip(row.iter_mut()).enumerate() {
                    let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                    *rj = (pj - onehot) * inv_b;
                }
            } else {
                match variant {
                    GradVariant::ExactV0 => {
                        for (&pj, rj) in p.iter().zip(row.iter_mut()) {
                            *rj = beta * inv_b * (pj - inv_c);
                        }
                    }
                    GradVariant::StochasticV1 => {
                        let g = losses::stochastic_label_grad(p, rng, mc_samples)?;
                        for (&gj, rj) in g.iter().zip(row.iter_mut()) {
                            *rj = beta * inv_b * gj;
                        }
                    }
                }
            }
        }
        let member_grads = backward(params, trace, &logit_grad)?;
        if let Some(mask_set) = masks {
            injection_grads[m] = member_grads.injection_grad(mask_set.layer()).cloned();
        }
        grads.push(member_grads);
    }

    if let Some(mask_set) = masks {
        let layer = mask_set.layer();
        for m in 0..members.len() {
            let Some(inj_grad) = &injection_grads[m] else {
                continue;
            };
            for n in 0..members.len() {
                if n == m {
                    continue;
                }
                // d loss_m / d a_layer^n = sigma_{n m} * d loss_m / d injected_m
                let mask = mask_set.mask(n, m);
                let mut act_grad = Matrix::zeros(batch, inj_grad.cols());
                for b in 0..batch {
                    let src = inj_grad.row(b);
                    let dst = act_grad.row_mut(b);
                    for (d, (&s, dd)) in src.iter().zip(dst.iter_mut()).enumerate() {
                        *dd = mask[d] * s;
                    }
                }
                let peer = backward_from_activation(&members[n], &traces[n], layer, &act_grad)?;
                grads[n].add_assign(&peer)?;
            }
        }
    }
    Ok(grads)
}

/// Batch-mean confident oracle objective at a fixed assignment and fixed
/// masks; pure evaluation used by the finite-difference checks.
pub fn cmcl_batch_loss(
    members: &[NetworkParams],
    inputs: &Matrix,
    labels: &[usize],
    assignment: &AssignmentMatrix,
    beta: f64,
    masks: Option<&MaskSet>,
) -> Result<f64> {
    let sharing = match masks {
        Some(m) => Sharing::Masked(m),
        None => Sharing::Off,
    };
    let traces = forward_members(members, inputs, sharing)?;
    let task = task_table(&traces, labels)?;
    let kl = kl_table(&traces);
    let raw = losses::confident_objective(&task, &kl, beta, assignment)?;
    Ok(raw / labels.len() as f64)
}

/// One training step's loss tables and the assignment it used.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub breakdown: LossBreakdown,
    pub assignment: AssignmentMatrix,
}

fn breakdown_from(task: Matrix, kl: Matrix, composite: Matrix, beta: f64, assignment: &AssignmentMatrix) -> Result<LossBreakdown> {
    let task_total = losses::ie_loss(&task);
    let kl_total = losses::ie_loss(&kl);
    let objective =
        losses::confident_objective(&task, &kl, beta, assignment)? / task.rows() as f64;
    Ok(LossBreakdown {
        task,
        kl,
        composite,
        task_total,
        kl_total,
        objective,
    })
}

fn apply_updates(ensemble: &mut Ensemble, grads: &[Gradients]) -> Result<()> {
    for ((params, opt), g) in ensemble
        .members
        .iter_mut()
        .zip(&mut ensemble.optimizers)
        .zip(grads)
    {
        opt.step(params, g)?;
    }
    Ok(())
}

/// One CMCL step: fresh masks, top-K assignment by composite loss, then
/// cross-entropy gradients on assigned examples and beta-scaled KL
/// gradients on the rest.
pub fn train_step_cmcl(ensemble: &mut Ensemble, batch: &Batch, rng: &mut StdRng) -> Result<StepOutcome> {
    if ensemble.config.mode != Mode::Cmcl {
        return Err(Error::Config(format!(
            "train_step_cmcl called in {} mode",
            ensemble.config.mode
        )));
    }
    let masks = if ensemble.sharing_active() {
        Some(MaskSet::sample(
            ensemble.config.members,
            ensemble.share_dim().expect("sharing active"),
            ensemble.config.share_layer.expect("sharing active"),
            ensemble.config.lambda,
            rng,
        ))
    } else {
        None
    };
    let traces = forward_ensemble(ensemble, &batch.features, masks.as_ref(), false)?;
    let task = task_table(&traces, &batch.labels)?;
    let kl = kl_table(&traces);
    let beta = ensemble.config.beta;
    let composite = composite_table(&task, &kl, beta)?;
    let assignment = losses::assign(&composite, ensemble.config.overlap)?;
    let grads = cmcl_batch_gradients(
        &ensemble.members,
        &traces,
        &batch.labels,
        &assignment,
        beta,
        ensemble.config.grad_variant,
        ensemble.config.mc_samples,
        masks.as_ref(),
        rng,
    )?;
    apply_updates(ensemble, &grads)?;
    Ok(StepOutcome {
        breakdown: breakdown_from(task, kl, composite, beta, &assignment)?,
        assignment,
    })
}

/// One MCL step: top-K assignment by cross-entropy alone; unassigned
/// examples contribute nothing.
pub fn train_step_mcl(ensemble: &mut Ensemble, batch: &Batch) -> Result<StepOutcome> {
    if ensemble.config.mode != Mode::Mcl {
        return Err(Error::Config(format!(
            "train_step_mcl called in {} mode",
            ensemble.config.mode
        )));
    }
    let traces = forward_members(&ensemble.members, &batch.features, Sharing::Off)?;
    let task = task_table(&traces, &batch.labels)?;
    let kl = Matrix::zeros(task.rows(), task.cols());
    let assignment = losses::assign(&task, ensemble.config.overlap)?;
    let mut rng = StdRng::seed_from_u64(0); // unused: beta = 0 draws nothing
    let grads = cmcl_batch_gradients(
        &ensemble.members,
        &traces,
        &batch.labels,
        &assignment,
        0.0,
        GradVariant::ExactV0,
        1,
        None,
        &mut rng,
    )?;
    apply_updates(ensemble, &grads)?;
    Ok(StepOutcome {
        breakdown: breakdown_from(task.clone(), kl, task, 0.0, &assignment)?,
        assignment,
    })
}

/// One IE step: every member takes a cross-entropy gradient on the full
/// batch independently.
pub fn train_step_ie(ensemble: &mut Ensemble, batch: &Batch) -> Result<StepOutcome> {
    if ensemble.config.mode != Mode::Ie {
        return Err(Error::Config(format!(
            "train_step_ie called in {} mode",
            ensemble.config.mode
        )));
    }
    let traces = forward_members(&ensemble.members, &batch.features, Sharing::Off)?;
    let task = task_table(&traces, &batch.labels)?;
    let kl = Matrix::zeros(task.rows(), task.cols());
    let assignment = losses::assign_all(task.rows(), task.cols());
    let mut rng = StdRng::seed_from_u64(0); // unused: everything is assigned
    let grads = cmcl_batch_gradients(
        &ensemble.members,
        &traces,
        &batch.labels,
        &assignment,
        0.0,
        GradVariant::ExactV0,
        1,
        None,
        &mut rng,
    )?;
    apply_updates(ensemble, &grads)?;
    Ok(StepOutcome {
        breakdown: breakdown_from(task.clone(), kl, task, 0.0, &assignment)?,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mode: Mode,
    pub oracle_error: f64,
    pub top1_error: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Comma-separated export with a header row; floats keep full
    /// round-trip precision.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("epoch,mode,oracle_error,top1_error,mean_entropy\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.mode, r.oracle_error, r.top1_error, r.mean_entropy
            ));
        }
        out
    }
}

/// Full training loop: initializes the ensemble, runs `epochs` passes of
/// the mode-appropriate step over seeded batches, and records per-epoch
/// metrics evaluated on `eval_data` (the training set when absent).
pub fn train(
    config: &EnsembleConfig,
    dataset: &Dataset,
    eval_data: Option<&Dataset>,
) -> Result<(Ensemble, TrainingLog)> {
    let config = config.clone().normalized()?;
    let mut ensemble = Ensemble::init(&config, dataset.dim(), dataset.class_count)?;
    let eval_set = eval_data.unwrap_or(dataset);
    let mut log = TrainingLog::default();

    for epoch in 0..config.epochs {
        let batches = data::batches(dataset, config.batch_size, config.seed, epoch as u64)?;
        for (index, batch) in batches.iter().enumerate() {
            let mut rng = StdRng::seed_from_u64(seeds::derive(
                config.seed,
                &[STREAM_STEP, epoch as u64, index as u64],
            ));
            match config.mode {
                Mode::Ie => train_step_ie(&mut ensemble, batch)?,
                Mode::Mcl => train_step_mcl(&mut ensemble, batch)?,
                Mode::Cmcl => train_step_cmcl(&mut ensemble, batch, &mut rng)?,
            };
        }
        ensemble.epoch = epoch + 1;
        let report = metrics::evaluate(&ensemble, eval_set)?;
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            mode: config.mode,
            oracle_error: report.oracle_error,
            top1_error: report.top1_error,
            mean_entropy: report.mean_entropy(),
        });
    }
    Ok((ensemble, log))
}
