//! In-process federated training: clients run local steps between barriers,
//! the server aggregates and broadcasts.
//!
//! Each epoch starts with a broadcast of the global model. Within an epoch,
//! iteration `it` (1-based) ends with an aggregation when `it % t_agg == 0`,
//! and the last iteration of an epoch always ends with one. Every
//! aggregation is followed by a broadcast.
//!
//! Mini-batch order depends only on the run seed and the epoch, so clients
//! holding identical shards follow identical trajectories and a single
//! client reproduces a centralized run.

mod aggregate;

pub use aggregate::{
    aggregate_direct, aggregate_fedit, aggregate_ffalora, aggregate_flexlora, broadcast, client_weights,
    mean_effective_updates, weighted_mean, FlexSplit, Weighting,
};

use crate::adapters::{LoraConfig, LoraModel, LoraPair};
use crate::data::LabeledDataset;
use crate::error::{Error, Result, ResultExt};
use crate::linalg::{gaussian_init, numerical_rank, row_softmax_entropy, spectral_norm, Matrix, RngSeed};
use crate::metrics::{self, BoundInputs, MetricsRecord, Participant};
use crate::model::{self, Batch, Family, GradSet, ModelConfig, ParamSet, Sample, TrainableScheme};
use crate::optim::{LocalOptimizer, OptimizerConfig};
use rand::seq::SliceRandom;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationKind {
    Direct,
    FedIt,
    FlexLora,
    FfaLora,
}

impl AggregationKind {
    pub fn uses_adapters(self) -> bool {
        self != AggregationKind::Direct
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationStrategy {
    pub kind: AggregationKind,
    pub weighting: Weighting,
    /// FlexLoRA truncation rank; also the `r_target` of the logged tail mass.
    pub flexlora_rank: usize,
    pub flex_split: FlexSplit,
}

impl AggregationStrategy {
    pub fn new(kind: AggregationKind) -> Self {
        AggregationStrategy {
            kind,
            weighting: Weighting::Uniform,
            flexlora_rank: 8,
            flex_split: FlexSplit::FoldIntoB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSchedule {
    pub epochs: usize,
    pub t_agg: usize,
    pub batch_size: usize,
    /// Iterations per epoch; defaults to `ceil(min shard size / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub seed: RngSeed,
}

impl RoundSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.t_agg == 0 || self.batch_size == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::Range(format!(
                "epochs, t_agg, batch_size and steps_per_epoch must be at least 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, shard_sizes: &[usize]) -> Result<usize> {
        if let Some(t) = self.steps_per_epoch {
            return Ok(t);
        }
        let min = shard_sizes.iter().copied().min().unwrap_or(0);
        if min == 0 {
            return Err(Error::contract("a client has an empty training shard"));
        }
        Ok(min.div_ceil(self.batch_size))
    }

    pub fn is_aggregation_step(&self, iteration: usize, per_epoch: usize) -> bool {
        iteration.is_multiple_of(self.t_agg) || iteration == per_epoch
    }

    /// Aggregations per epoch.
    pub fn rounds_per_epoch(&self, per_epoch: usize) -> usize {
        (1..=per_epoch).filter(|&it| self.is_aggregation_step(it, per_epoch)).count()
    }

    /// Order in which a shard of `len` samples is visited during `epoch`.
    pub fn epoch_permutation(&self, len: usize, epoch: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut self.seed.derive(epoch as u64).rng());
        perm
    }

    /// Shard positions of the mini-batch for `iteration` (1-based), wrapping
    /// around the permutation when an epoch asks for more samples than the
    /// shard holds.
    pub fn batch_positions<'p>(&self, perm: &'p [usize], iteration: usize) -> impl Iterator<Item = usize> + 'p {
        let start = (iteration - 1) * self.batch_size;
        let n = perm.len();
        (start..start + self.batch_size).map(move |j| perm[j % n])
    }
}

/// LoRA placement for the adapter-based strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraSetup {
    pub config: LoraConfig,
    pub targets: Vec<String>,
    /// Give every client the server's `A`. When false each client samples
    /// its own, which FFA-LoRA aggregation rejects.
    pub shared_a: bool,
}

/// What global evaluations compute beyond losses and accuracy.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Pooled-data optimum; enables excess risk and the bound columns.
    pub w_star: Option<ParamSet>,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct FederatedSetup {
    pub model: ModelConfig,
    /// Starting weights; `None` draws them from `init_seed`.
    pub initial: Option<ParamSet>,
    /// Trainable matrices for the direct strategy.
    pub scheme: TrainableScheme,
    pub lora: Option<LoraSetup>,
    pub optimizer: OptimizerConfig,
    pub aggregation: AggregationStrategy,
    pub schedule: RoundSchedule,
    pub init_seed: RngSeed,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Sequential execution order of clients; `None` is ascending id.
    pub client_order: Option<Vec<usize>>,
    /// Run clients on the rayon pool between barriers.
    pub parallel: bool,
    /// Keep every client gradient in [`MetricsLog::gradients`].
    pub record_gradients: bool,
}

/// Weights of the global model or a client.
#[derive(Debug, Clone)]
pub enum ModelState {
    Full(ParamSet),
    Lora(LoraModel),
}

impl ModelState {
    /// The matrices that local optimizers update.
    pub fn trainable(&self) -> &ParamSet {
        match self {
            ModelState::Full(p) => p,
            ModelState::Lora(m) => m.adapters(),
        }
    }

    pub fn trainable_mut(&mut self) -> &mut ParamSet {
        match self {
            ModelState::Full(p) => p,
            ModelState::Lora(m) => m.adapters_mut(),
        }
    }

    /// Full model weights with adapters merged.
    pub fn effective(&self) -> Result<ParamSet> {
        match self {
            ModelState::Full(p) => Ok(p.clone()),
            ModelState::Lora(m) => m.merged(),
        }
    }

    pub fn pairs(&self) -> Vec<LoraPair> {
        match self {
            ModelState::Full(_) => Vec::new(),
            ModelState::Lora(m) => m.pairs(),
        }
    }

    /// Loss, gradients of the trainable matrices, and full-weight gradients
    /// (identical to the former for full models).
    fn loss_and_grads(&self, cfg: &ModelConfig, batch: &Batch<'_>) -> Result<(f64, GradSet, GradSet)> {
        match self {
            ModelState::Full(p) => {
                let names = p.trainable_names();
                let (loss, g) = model::loss_and_grad(p, cfg, batch, &names)?;
                Ok((loss, g.clone(), g))
            }
            ModelState::Lora(m) => m.loss_and_grads(cfg, batch),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub model: ModelState,
    pub optimizer: LocalOptimizer,
    pub train_size: usize,
}

/// Server-side view of one aggregation.
#[derive(Debug, Clone)]
pub struct AggregationTrace {
    pub epoch: usize,
    pub round: usize,
    /// Local iterations completed by each client so far.
    pub local_steps: usize,
    /// Averaged update of the probe matrix: the change of the global
    /// weights this round for the direct strategy, the mean client
    /// effective update `scale·B·A` for adapter strategies.
    pub agg_update: Matrix,
    pub client_update_ranks: Vec<usize>,
    pub agg_rank: usize,
    pub tail_mass: Option<f64>,
    /// `‖probe‖₂` of the global model after aggregation.
    pub weight_norm: f64,
    /// Running maximum of probe-gradient spectral norms.
    pub grad_bound: f64,
}

/// One client gradient, kept when [`RunOptions::record_gradients`] is set.
#[derive(Debug, Clone)]
pub struct GradientTrace {
    pub epoch: usize,
    pub round: usize,
    pub local_step: usize,
    pub client: usize,
    /// Full-weight gradients (adapter targets, or trainable matrices).
    pub grads: GradSet,
}

#[derive(Debug, Clone)]
pub struct MetricsLog {
    pub records: Vec<MetricsRecord>,
    pub aggregations: Vec<AggregationTrace>,
    pub gradients: Vec<GradientTrace>,
    pub probe: String,
    pub initial: ModelState,
    pub global: ModelState,
    pub iterations_per_epoch: usize,
}

impl MetricsLog {
    pub fn global_records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.records.iter().filter(|r| r.is_global())
    }

    pub fn final_global_record(&self) -> Option<&MetricsRecord> {
        self.global_records().last()
    }
}

fn choose_probe(setup: &FederatedSetup, global: &ModelState) -> Result<String> {
    if let Some(l) = &setup.lora {
        return l.targets.first().cloned().ok_or_else(|| Error::config("lora setup without targets"));
    }
    let trainable = global.trainable().trainable_names();
    match setup.model.family() {
        Family::Convex => Ok(model::CONVEX_WEIGHT.to_string()),
        Family::Transformer if trainable.contains(&"Wup") => Ok("Wup".to_string()),
        Family::Transformer => trainable
            .first()
            .map(|s| s.to_string())
            .ok_or_else(|| Error::config("no trainable matrices")),
    }
}

fn initial_global(setup: &FederatedSetup) -> Result<ModelState> {
    setup.model.validate()?;
    let base = match &setup.initial {
        Some(p) => {
            model::check_shapes(p, &setup.model)?;
            p.clone()
        }
        None => setup.model.init_params(setup.init_seed.derive(0))?,
    };
    match (&setup.lora, setup.aggregation.kind.uses_adapters()) {
        (Some(l), true) => {
            let targets: Vec<&str> = l.targets.iter().map(String::as_str).collect();
            let m = LoraModel::attach(base, &targets, &l.config, setup.init_seed.derive(1))?;
            Ok(ModelState::Lora(m))
        }
        (None, false) => Ok(ModelState::Full(model::select_trainable(&base, &setup.model, setup.scheme)?)),
        (None, true) => Err(Error::config(format!("{:?} aggregation needs lora adapters", setup.aggregation.kind))),
        (Some(_), false) => Err(Error::config("direct aggregation does not use lora adapters")),
    }
}

struct StepLog {
    local_step: usize,
    loss: f64,
    grad_norm: f64,
    grads: Option<GradSet>,
}

struct Segment<'a> {
    cfg: &'a ModelConfig,
    schedule: &'a RoundSchedule,
    probe: &'a str,
    epoch: usize,
    first_iteration: usize,
    last_iteration: usize,
    steps_before: usize,
    keep_grads: bool,
}

fn run_segment(client: &mut ClientState, shard: &LabeledDataset, perm: &[usize], seg: &Segment<'_>) -> Result<Vec<StepLog>> {
    let mut logs = Vec::with_capacity(seg.last_iteration + 1 - seg.first_iteration);
    for it in seg.first_iteration..=seg.last_iteration {
        let local_step = seg.steps_before + (it - seg.first_iteration) + 1;
        let id = client.id;
        let mut step = || {
            let samples: Vec<&Sample> = seg.schedule.batch_positions(perm, it).map(|p| &shard.items()[p]).collect();
            let batch = Batch::new(samples, shard.num_classes())?;
            let (loss, grads, full) = client.model.loss_and_grads(seg.cfg, &batch)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!("loss is {loss}")));
            }
            let grad_norm = spectral_norm(full.require(seg.probe)?)?;
            client.optimizer.step(client.model.trainable_mut(), &grads)?;
            Ok(StepLog {
                local_step,
                loss,
                grad_norm,
                grads: seg.keep_grads.then_some(full),
            })
        };
        let log = step().context(|| format!("client {id}, epoch {}, iteration {it}", seg.epoch))?;
        logs.push(log);
    }
    Ok(logs)
}

fn probe_of(state: &ModelState, probe: &str) -> Result<Matrix> {
    Ok(state.effective()?.require(probe)?.clone())
}

struct Evaluator<'a> {
    cfg: &'a ModelConfig,
    pooled_train: LabeledDataset,
    eval: &'a LabeledDataset,
}

impl Evaluator<'_> {
    fn fill(&self, rec: &mut MetricsRecord, params: &ParamSet) -> Result<()> {
        let c = self.cfg.num_classes();
        let train = Batch::from_slice(self.pooled_train.items(), c)?;
        rec.loss = Some(model::loss(params, self.cfg, &train)?);
        if !self.eval.is_empty() {
            let eval = Batch::from_slice(self.eval.items(), c)?;
            rec.eval_loss = Some(model::loss(params, self.cfg, &eval)?);
            let preds = self
                .eval
                .items()
                .iter()
                .map(|s| model::predict(params, self.cfg, &s.input))
                .collect::<Result<Vec<_>>>()?;
            let labels = self.eval.labels();
            let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            rec.accuracy = Some(hits as f64 / labels.len() as f64);
            rec.macro_f1 = Some(metrics::macro_f1(&preds, &labels, c)?);
        }
        if let Some(wup) = params.get("Wup") {
            rec.entropy_wup = Some(row_softmax_entropy(wup)?);
        }
        Ok(())
    }
}

/// Lookup of a client's position in the canonical order.
fn execution_order(n: usize, opts: &RunOptions) -> Result<Vec<usize>> {
    match &opts.client_order {
        None => Ok((0..n).collect()),
        Some(order) => {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::contract(format!("client order {order:?} is not a permutation of 0..{n}")));
            }
            Ok(order.clone())
        }
    }
}

/// Run federated training over `train_shards` (one per client), evaluating
/// the global model on the shards pooled and on `eval` after every
/// aggregation.
pub fn run_training(
    setup: &FederatedSetup,
    train_shards: &[LabeledDataset],
    eval: &LabeledDataset,
    opts: &RunOptions,
) -> Result<MetricsLog> {
    setup.schedule.validate()?;
    let n = train_shards.len();
    if n == 0 {
        return Err(Error::config("need at least one client"));
    }
    let order = execution_order(n, opts)?;
    let cfg = &setup.model;
    let sizes: Vec<usize> = train_shards.iter().map(LabeledDataset::len).collect();
    let per_epoch = setup.schedule.iterations_per_epoch(&sizes)?;
    let weights = client_weights(setup.aggregation.weighting, &sizes)?;
    let weights = weights.as_deref();

    let mut global = initial_global(setup)?;
    let probe = choose_probe(setup, &global)?;
    let initial = global.clone();
    let w0 = probe_of(&initial, &probe)?;

    let mut clients = Vec::with_capacity(n);
    for (id, &train_size) in sizes.iter().enumerate() {
        let mut model = global.clone();
        if let (ModelState::Lora(m), Some(l)) = (&mut model, &setup.lora) {
            if !l.shared_a {
                for (t, pair) in m.pairs().iter().enumerate() {
                    let (r, k) = pair.a.shape();
                    let a = gaussian_init(r, k, l.config.init_std, setup.init_seed.derive(1000 + id as u64).derive(t as u64))?;
                    m.set_pair(&LoraPair { a, ..pair.clone() })?;
                }
            }
        }
        let optimizer = setup.optimizer.build(model.trainable()).context(|| format!("client {id} optimizer"))?;
        clients.push(ClientState {
            id,
            model,
            optimizer,
            train_size,
        });
    }

    let evaluator = Evaluator {
        cfg,
        pooled_train: LabeledDataset::concat(train_shards)?,
        eval,
    };
    let w_star_probe = setup.eval.w_star.as_ref().map(|w| w.require(&probe).cloned()).transpose()?;
    let ffa_c = match (&global, setup.aggregation.kind) {
        (ModelState::Lora(m), AggregationKind::FfaLora) => {
            let a0 = &m.pair(&probe)?.a;
            Some(spectral_norm(&a0.t_matmul(a0))?)
        }
        _ => None,
    };
    let lr = setup.optimizer.lr();

    let mut records = Vec::new();
    let mut aggregations = Vec::new();
    let mut gradients = Vec::new();
    let mut round = 0usize;
    let mut steps_done = 0usize;
    let mut grad_bound: f64 = 0.0;

    for epoch in 1..=setup.schedule.epochs {
        for c in clients.iter_mut() {
            broadcast(global.trainable(), c.model.trainable_mut())?;
            c.optimizer.on_broadcast();
        }
        let perms: Vec<Vec<usize>> = sizes.iter().map(|&len| setup.schedule.epoch_permutation(len, epoch)).collect();
        let mut first_iteration = 1;
        for it in 1..=per_epoch {
            if !setup.schedule.is_aggregation_step(it, per_epoch) {
                continue;
            }
            let seg = Segment {
                cfg,
                schedule: &setup.schedule,
                probe: &probe,
                epoch,
                first_iteration,
                last_iteration: it,
                steps_before: steps_done,
                keep_grads: opts.record_gradients,
            };
            let mut logs: Vec<Vec<StepLog>> = if opts.parallel {
                clients
                    .par_iter_mut()
                    .map(|c| run_segment(c, &train_shards[c.id], &perms[c.id], &seg))
                    .collect::<Result<Vec<_>>>()?
            } else {
                let mut slots: Vec<Option<Vec<StepLog>>> = (0..n).map(|_| None).collect();
                for &id in &order {
                    slots[id] = Some(run_segment(&mut clients[id], &train_shards[id], &perms[id], &seg)?);
                }
                slots.into_iter().map(|s| s.expect("every client ran")).collect()
            };
            round += 1;
            let seg_len = it + 1 - first_iteration;
            for k in 0..seg_len {
                for (id, client_logs) in logs.iter().enumerate() {
                    let l = &client_logs[k];
                    grad_bound = grad_bound.max(l.grad_norm);
                    let mut rec = MetricsRecord::new(epoch, round, l.local_step, Participant::Client(id));
                    rec.loss = Some(l.loss);
                    rec.grad_spectral_norm = Some(l.grad_norm);
                    records.push(rec);
                }
            }
            if opts.record_gradients {
                for k in 0..seg_len {
                    for (id, client_logs) in logs.iter_mut().enumerate() {
                        let l = &mut client_logs[k];
                        gradients.push(GradientTrace {
                            epoch,
                            round,
                            local_step: l.local_step,
                            client: id,
                            grads: l.grads.take().expect("recorded"),
                        });
                    }
                }
            }
            steps_done += seg_len;
            first_iteration = it + 1;

            let prev_probe = probe_of(&global, &probe)?;
            let (agg_update, client_updates, tail_mass) = aggregate_round(setup, &clients, &mut global, weights, &probe, &prev_probe)
                .context(|| format!("aggregation at epoch {epoch}, round {round}"))?;
            let rank_target = match setup.aggregation.kind {
                AggregationKind::Direct => None,
                _ => Some(setup.aggregation.flexlora_rank),
            };
            let agg_rank = numerical_rank(&agg_update, None)?;
            let client_update_ranks = client_updates
                .iter()
                .map(|u| numerical_rank(u, None))
                .collect::<Result<Vec<_>>>()?;
            let tail_mass = match (tail_mass, rank_target) {
                (Some(t), _) => Some(t),
                (None, Some(r)) if setup.aggregation.kind == AggregationKind::FlexLora => Some(metrics::svd_tail_mass(&agg_update, r)?),
                _ => None,
            };

            let effective = global.effective()?;
            let probe_now = effective.require(&probe)?;
            let weight_norm = spectral_norm(probe_now)?;
            let mut rec = MetricsRecord::new(epoch, round, steps_done, Participant::Global);
            evaluator.fill(&mut rec, &effective)?;
            rec.agg_update_rank = Some(agg_rank);
            rec.svd_tail_mass = tail_mass;
            rec.grad_spectral_norm = Some(grad_bound);
            rec.weight_spectral_norm = Some(weight_norm);
            if let (Some(ws), Some(wsp)) = (&setup.eval.w_star, &w_star_probe) {
                rec.excess_risk = Some(metrics::excess_risk(&effective, ws, cfg, &evaluator.pooled_train)?);
                let dist = spectral_norm(&(&w0 - wsp))?;
                let b = BoundInputs {
                    d: grad_bound,
                    n_clients: n,
                    s: round,
                    t_agg: setup.schedule.t_agg,
                    c: grad_bound * dist,
                    alpha: lr,
                    w_star_norm: dist,
                    sigma: setup.eval.sigma,
                    ..BoundInputs::default()
                };
                rec.bound_direct = Some(metrics::bound_direct(&b));
                if let Some(c) = ffa_c {
                    rec.bound_ffalora = Some(metrics::bound_ffalora(&BoundInputs { c, ..b }));
                }
            }
            records.push(rec);
            aggregations.push(AggregationTrace {
                epoch,
                round,
                local_steps: steps_done,
                agg_update,
                client_update_ranks,
                agg_rank,
                tail_mass,
                weight_norm,
                grad_bound,
            });

            for c in clients.iter_mut() {
                broadcast(global.trainable(), c.model.trainable_mut())?;
                c.optimizer.on_broadcast();
            }
        }
    }

    Ok(MetricsLog {
        records,
        aggregations,
        gradients,
        probe,
        initial,
        global,
        iterations_per_epoch: per_epoch,
    })
}

/// Aggregate client snapshots into `global`. Returns the averaged probe
/// update, the per-client probe updates, and the tail mass when the
/// strategy computes it itself.
fn aggregate_round(
    setup: &FederatedSetup,
    clients: &[ClientState],
    global: &mut ModelState,
    weights: Option<&[f64]>,
    probe: &str,
    prev_probe: &Matrix,
) -> Result<(Matrix, Vec<Matrix>, Option<f64>)> {
    let kind = setup.aggregation.kind;
    match global {
        ModelState::Full(g) => {
            let snaps: Vec<&ParamSet> = clients
                .iter()
                .map(|c| match &c.model {
                    ModelState::Full(p) => Ok(p),
                    ModelState::Lora(_) => Err(Error::contract("client holds adapters under direct aggregation")),
                })
                .collect::<Result<_>>()?;
            let client_updates = snaps
                .iter()
                .map(|p| Ok(p.require(probe)? - prev_probe))
                .collect::<Result<Vec<_>>>()?;
            *g = aggregate_direct(&snaps, weights)?;
            let agg = g.require(probe)? - prev_probe;
            Ok((agg, client_updates, None))
        }
        ModelState::Lora(g) => {
            let pair_sets: Vec<Vec<LoraPair>> = clients.iter().map(|c| c.model.pairs()).collect();
            let t = g.target_names().iter().position(|n| *n == probe).expect("probe is an adapter target");
            let client_updates: Vec<Matrix> = pair_sets.iter().map(|ps| ps[t].effective_update()).collect();
            let (new_pairs, means, tail) = match kind {
                AggregationKind::FedIt => (aggregate_fedit(&pair_sets, weights)?, mean_effective_updates(&pair_sets, weights)?, None),
                AggregationKind::FfaLora => (aggregate_ffalora(&pair_sets, weights)?, mean_effective_updates(&pair_sets, weights)?, None),
                AggregationKind::FlexLora => {
                    let (p, m) = aggregate_flexlora(&pair_sets, weights, setup.aggregation.flexlora_rank, setup.aggregation.flex_split)?;
                    let tail = metrics::svd_tail_mass(&m[t], setup.aggregation.flexlora_rank)?;
                    (p, m, Some(tail))
                }
                AggregationKind::Direct => unreachable!("direct aggregation uses full models"),
            };
            for p in &new_pairs {
                g.set_pair(p)?;
            }
            Ok((means[t].clone(), client_updates, tail))
        }
    }
}
