//! The collaborative training loop.
//!
//! Each epoch runs local training for every honest user, lets the
//! adversaries craft their updates for every aggregation point, aggregates
//! at the server (star) or at every honest user (complete), and records
//! metrics. Users are always processed in ascending id so that runs are
//! reproducible bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adversary::{
    dissensus, fit_multi_krum, fit_norm_bound, state_override_scc_toward, state_override_split,
    AdversaryView, AttackKind, AttackSpec, Observation,
};
use crate::aggregators::{
    aggregate, dynamic_delta, AggregationInput, AggregationOutcome, AggregatorSpec, DeltaPolicy,
    EvaluatorKind,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    evaluate, local_train_step, LocalSchedule, Metric, Model, ModelShape, OptimizerParams,
    OptimizerState, ParamVector,
};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// A server aggregates and broadcasts one global model.
    Star,
    /// Every user aggregates all peers' updates plus its own.
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub n_users: usize,
}

impl Topology {
    pub fn star(n_users: usize) -> Self {
        Topology {
            kind: TopologyKind::Star,
            n_users,
        }
    }

    pub fn complete(n_users: usize) -> Self {
        Topology {
            kind: TopologyKind::Complete,
            n_users,
        }
    }

    pub fn server_present(&self) -> bool {
        self.kind == TopologyKind::Star
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub topology: Topology,
    pub aggregator: AggregatorSpec,
    pub attack: AttackSpec,
    pub shape: ModelShape,
    pub optimizer: OptimizerParams,
    pub schedule: LocalSchedule,
    pub epochs: usize,
    pub seed: u64,
    /// Model-quality metrics are computed every `eval_every` epochs and at
    /// the last epoch; 0 means the last epoch only.
    pub eval_every: usize,
    /// Keep every update and aggregation outcome in the trace.
    pub record_updates: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topology.n_users == 0 {
            return Err(Error::invalid("n_users must be at least 1"));
        }
        self.aggregator.validate()?;
        self.optimizer.validate()?;
        self.attack.validate(&self.shape, self.topology.n_users)?;
        if self.schedule.batch_size == 0 || self.schedule.local_epochs == 0 {
            return Err(Error::invalid("batch size and local epochs must be positive"));
        }
        let kind = self.aggregator.kind;
        match self.topology.kind {
            TopologyKind::Star => {
                if kind == EvaluatorKind::Scc {
                    return Err(Error::invalid("SCC needs a peer-to-peer topology"));
                }
                if self.aggregator.delta == DeltaPolicy::DynamicVariance {
                    return Err(Error::invalid("a dynamic delta needs a peer-to-peer topology"));
                }
                if self.attack.kind == AttackKind::Dissensus {
                    return Err(Error::invalid("dissensus targets peer-to-peer users"));
                }
            }
            TopologyKind::Complete => {}
        }
        if self.attack.kind == AttackKind::StateOverrideScc && kind != EvaluatorKind::Scc {
            return Err(Error::invalid("state_override_scc attacks the SCC aggregator only"));
        }
        Ok(())
    }

    fn is_eval_epoch(&self, epoch: usize) -> bool {
        epoch + 1 == self.epochs || (self.eval_every > 0 && (epoch + 1) % self.eval_every == 0)
    }
}

/// Inputs a run needs besides its configuration.
#[derive(Debug, Clone)]
pub struct SimulationData {
    /// Local data of every user, indexed by id; adversaries' entries are
    /// ignored.
    pub user_data: Vec<Dataset>,
    pub validation: Dataset,
    /// Sample of the union of the users' training data for `train_loss`.
    pub train_probe: Option<Dataset>,
    /// Evaluation data held by the server for behavior-based aggregators.
    pub server_eval: Option<Dataset>,
}

#[derive(Debug, Clone)]
pub struct UserState {
    pub id: usize,
    pub model: Model,
    pub optimizer: OptimizerState,
    pub local_data: Dataset,
    pub is_adversary: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Every sent update; filled only when updates are recorded.
    pub updates: BTreeMap<usize, ParamVector>,
    /// Keyed `server` or `user:<id>`; filled only when updates are recorded.
    pub outcomes: BTreeMap<String, AggregationOutcome>,
    /// Honest-mean metrics.
    pub metrics: BTreeMap<String, f64>,
    /// Per-user metrics in peer-to-peer runs.
    pub user_metrics: BTreeMap<usize, BTreeMap<String, f64>>,
}

/// Mean over models of `||params − target||`.
pub fn distance_to_target<'a>(models: impl IntoIterator<Item = &'a Model>, target: &ParamVector) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for m in models {
        total += m.params().try_sub(target)?.norm();
        count += 1;
    }
    if count == 0 {
        return Err(Error::precondition("no honest users to measure"));
    }
    Ok(total / count as f64)
}

/// Where an aggregation happens and what that party holds.
struct Victim<'a> {
    id: Option<usize>,
    model: &'a Model,
    own_update: Option<&'a ParamVector>,
}

pub struct Simulation {
    config: RunConfig,
    users: Vec<UserState>,
    global: Option<Model>,
    validation: Dataset,
    train_probe: Option<Dataset>,
    server_eval: Option<Dataset>,
    local_eval: Vec<Option<Dataset>>,
    initial_updates: Option<BTreeMap<usize, ParamVector>>,
    previous_updates: Option<BTreeMap<usize, ParamVector>>,
    epoch: usize,
}

fn eval_subset(data: &Dataset, size: usize, seed: u64, owner: u64) -> Dataset {
    if data.len() <= size {
        return data.clone();
    }
    let mut rng = rng::rng_for(seed, &[stream::EVAL_SUBSET, owner]);
    let mut idx = rand::seq::index::sample(&mut rng, data.len(), size).into_vec();
    idx.sort_unstable();
    data.select(&idx)
}

impl Simulation {
    pub fn new(config: RunConfig, data: SimulationData) -> Result<Self> {
        config.validate()?;
        let n = config.topology.n_users;
        if data.user_data.len() != n {
            return Err(Error::invalid(format!(
                "{} local datasets for {n} users",
                data.user_data.len()
            )));
        }
        let initial = Model::init(config.shape.clone(), &mut rng::rng_for(config.seed, &[stream::INIT]));
        let is_adversary = |id: usize| config.attack.is_active() && config.attack.adversary_ids.contains(&id);
        let mut users = Vec::with_capacity(n);
        for (id, local) in data.user_data.into_iter().enumerate() {
            let adversary = is_adversary(id);
            if !adversary {
                if local.is_empty() {
                    return Err(Error::invalid(format!("honest user {id} has no data")));
                }
                if local.n_features() != config.shape.input_size() {
                    return Err(Error::DimensionMismatch {
                        expected: config.shape.input_size(),
                        actual: local.n_features(),
                        context: "user data features",
                    });
                }
            }
            users.push(UserState {
                id,
                model: initial.clone(),
                optimizer: OptimizerState::new(config.optimizer, initial.params().len()),
                local_data: local,
                is_adversary: adversary,
            });
        }
        let behavior = matches!(
            config.aggregator.kind,
            EvaluatorKind::RdSvmHinge | EvaluatorKind::ErrRejection
        );
        let size = config.aggregator.eval_set_size;
        let local_eval = users
            .iter()
            .map(|u| {
                (behavior && !u.is_adversary && config.topology.kind == TopologyKind::Complete)
                    .then(|| eval_subset(&u.local_data, size, config.seed, u.id as u64))
            })
            .collect();
        let server_eval = match (behavior && config.topology.server_present(), data.server_eval) {
            (true, None) => {
                return Err(Error::invalid("behavior-based aggregation at the server needs server_eval data"))
            }
            (true, Some(d)) => Some(eval_subset(&d, size, config.seed, u64::MAX)),
            (false, d) => d,
        };
        Ok(Simulation {
            global: config.topology.server_present().then(|| initial.clone()),
            config,
            users,
            validation: data.validation,
            train_probe: data.train_probe,
            server_eval,
            local_eval,
            initial_updates: None,
            previous_updates: None,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    pub fn user(&self, id: usize) -> Option<&UserState> {
        self.users.get(id)
    }

    pub fn honest_models(&self) -> impl Iterator<Item = &Model> {
        self.users.iter().filter(|u| !u.is_adversary).map(|u| &u.model)
    }

    /// The server's model in a star topology.
    pub fn global_model(&self) -> Option<&Model> {
        self.global.as_ref()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn honest_ids(&self) -> Vec<usize> {
        self.users.iter().filter(|u| !u.is_adversary).map(|u| u.id).collect()
    }

    fn adversary_ids(&self) -> Vec<usize> {
        self.users.iter().filter(|u| u.is_adversary).map(|u| u.id).collect()
    }

    /// Runs all remaining epochs.
    pub fn run(&mut self) -> Result<Vec<EpochTrace>> {
        let mut traces = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            traces.push(self.run_epoch()?);
        }
        Ok(traces)
    }

    /// Runs one epoch; errors carry the epoch index.
    pub fn run_epoch(&mut self) -> Result<EpochTrace> {
        let epoch = self.epoch;
        let trace = self.step(epoch).map_err(|e| e.at_epoch(epoch))?;
        self.epoch += 1;
        Ok(trace)
    }

    fn step(&mut self, epoch: usize) -> Result<EpochTrace> {
        let mut trace = EpochTrace {
            epoch,
            ..EpochTrace::default()
        };

        // (1) local training
        let mut updates: BTreeMap<usize, ParamVector> = BTreeMap::new();
        let mut local_loss = 0.0;
        for user in self.users.iter_mut().filter(|u| !u.is_adversary) {
            let seed = rng::derive_seed(self.config.seed, &[stream::LOCAL_TRAIN, epoch as u64, user.id as u64]);
            let step = local_train_step(&user.model, &mut user.optimizer, &user.local_data, &self.config.schedule, seed)?;
            local_loss += step.mean_loss;
            updates.insert(user.id, step.update);
        }
        let n_honest = updates.len() as f64;
        trace.metrics.insert("local_loss".into(), local_loss / n_honest);
        trace.metrics.insert(
            "update_norm_mean".into(),
            updates.values().map(ParamVector::norm).sum::<f64>() / n_honest,
        );
        if self.initial_updates.is_none() {
            self.initial_updates = Some(updates.clone());
        }

        // (2) + (3) communication and aggregation
        let mut adv_sent = 0usize;
        let mut adv_accepted = 0usize;
        let mut clipped = 0usize;
        let mut received_total = 0usize;
        let mut deltas = Vec::new();
        let mut record = |key: String, out: &AggregationOutcome, senders: &[usize], advs: &[usize], trace: &mut EpochTrace| {
            for (pos, id) in senders.iter().enumerate() {
                if advs.contains(id) {
                    adv_sent += 1;
                    adv_accepted += usize::from(out.accepted[pos]);
                }
            }
            clipped += out.clipped.iter().filter(|&&c| c).count();
            received_total += out.clipped.len();
            if self.config.record_updates {
                trace.outcomes.insert(key, out.clone());
            }
        };
        let advs = self.adversary_ids();
        match self.config.topology.kind {
            TopologyKind::Star => {
                let global = self.global.as_ref().expect("star topology has a global model");
                let victim = Victim {
                    id: None,
                    model: global,
                    own_update: None,
                };
                let crafted = self.craft(&victim, &updates, epoch, self.fixed_delta())?;
                let (senders, received) = merge(&updates, &crafted);
                let out = aggregate(
                    &self.config.aggregator,
                    AggregationInput {
                        updates: &received,
                        own_index: None,
                        current_model: global,
                        eval_set: self.server_eval.as_ref(),
                        delta: self.fixed_delta(),
                    },
                )?;
                record("server".into(), &out, &senders, &advs, &mut trace);
                let next = global.apply_update(&out.aggregate)?;
                for user in self.users.iter_mut().filter(|u| !u.is_adversary) {
                    user.model = next.clone();
                }
                self.global = Some(next);
                if self.config.record_updates {
                    trace.updates.extend(senders.into_iter().zip(received));
                }
            }
            TopologyKind::Complete => {
                let mut next_models = Vec::new();
                for id in self.honest_ids() {
                    let user = &self.users[id];
                    let own = &updates[&id];
                    let neighbours_delta = |extra: &[ParamVector]| -> Result<f64> {
                        let others: Vec<ParamVector> = updates
                            .iter()
                            .filter(|&(&j, _)| j != id)
                            .map(|(_, u)| u.clone())
                            .chain(extra.iter().cloned())
                            .collect();
                        if others.is_empty() {
                            Ok(0.0)
                        } else {
                            dynamic_delta(own, &others)
                        }
                    };
                    // the adversary estimates a dynamic threshold from honest updates
                    let craft_delta = match self.config.aggregator.delta {
                        DeltaPolicy::Fixed(d) => d,
                        DeltaPolicy::DynamicVariance => neighbours_delta(&[])?,
                    };
                    let victim = Victim {
                        id: Some(id),
                        model: &user.model,
                        own_update: Some(own),
                    };
                    let crafted = self.craft(&victim, &updates, epoch, craft_delta)?;
                    let extra: Vec<ParamVector> = crafted.values().cloned().collect();
                    let rms = neighbours_delta(&extra)?;
                    deltas.push(rms);
                    let delta = match self.config.aggregator.delta {
                        DeltaPolicy::Fixed(d) => d,
                        DeltaPolicy::DynamicVariance => rms,
                    };
                    let (senders, received) = merge(&updates, &crafted);
                    let own_index = senders.iter().position(|&s| s == id);
                    let out = aggregate(
                        &self.config.aggregator,
                        AggregationInput {
                            updates: &received,
                            own_index,
                            current_model: &user.model,
                            eval_set: self.local_eval[id].as_ref(),
                            delta,
                        },
                    )?;
                    record(format!("user:{id}"), &out, &senders, &advs, &mut trace);
                    if self.config.record_updates {
                        for (s, u) in senders.iter().zip(&received) {
                            if advs.contains(s) {
                                // crafted updates differ per victim
                                trace.updates.entry(*s).or_insert_with(|| u.clone());
                            } else {
                                trace.updates.insert(*s, u.clone());
                            }
                        }
                    }
                    next_models.push((id, user.model.apply_update(&out.aggregate)?));
                }
                for (id, model) in next_models {
                    self.users[id].model = model;
                }
            }
        }
        if !deltas.is_empty() {
            trace.metrics.insert(
                "dynamic_delta_mean".into(),
                deltas.iter().sum::<f64>() / deltas.len() as f64,
            );
        }
        if received_total > 0 && self.config.aggregator.kind == EvaluatorKind::Scc {
            trace.metrics.insert("clipped_fraction".into(), clipped as f64 / received_total as f64);
        }
        if self.config.attack.is_active() {
            trace.metrics.insert(
                "distance_to_target".into(),
                distance_to_target(self.honest_models(), &self.config.attack.target)?,
            );
            if adv_sent > 0 {
                trace.metrics.insert("adversary_accept_rate".into(), adv_accepted as f64 / adv_sent as f64);
            }
        }
        self.previous_updates = Some(updates);

        if self.config.is_eval_epoch(epoch) {
            self.evaluate_into(&mut trace)?;
        }
        Ok(trace)
    }

    fn fixed_delta(&self) -> f64 {
        match self.config.aggregator.delta {
            DeltaPolicy::Fixed(d) => d,
            DeltaPolicy::DynamicVariance => f64::NAN,
        }
    }

    /// Updates the adversaries send to one aggregation point, keyed by id.
    fn craft(
        &self,
        victim: &Victim<'_>,
        current: &BTreeMap<usize, ParamVector>,
        epoch: usize,
        delta: f64,
    ) -> Result<BTreeMap<usize, ParamVector>> {
        let attack = &self.config.attack;
        let advs = self.adversary_ids();
        if !attack.is_active() || advs.is_empty() {
            return Ok(BTreeMap::new());
        }
        let len = attack.target.len();
        let observed = match attack.observation {
            Observation::LastMover => Some(current),
            Observation::PreviousEpoch => self.previous_updates.as_ref(),
        };
        let Some(observed) = observed else {
            return Ok(advs.iter().map(|&a| (a, ParamVector::zeros(len))).collect());
        };
        let n_adv = advs.len();
        let n = observed.len() + n_adv;
        let target_update = attack.target.try_sub(victim.model.params())?;
        let honest: Vec<&ParamVector> = observed.values().collect();
        let crafted = match attack.kind {
            AttackKind::None => unreachable!("inactive attacks return early"),
            AttackKind::StateOverride => {
                let share = state_override_split(&honest, &target_update, n, n_adv)?;
                if !attack.fit_acceptance {
                    share
                } else {
                    match self.config.aggregator.kind {
                        EvaluatorKind::MultiKrum => {
                            let f = self.config.aggregator.f;
                            let kept = multi_krum_kept_honest(&honest, n_adv, f)?;
                            let aimed = aim_at_kept(&honest, &kept, &target_update, n_adv)?;
                            fit_multi_krum(&honest, &aimed, n_adv, f)?.0
                        }
                        EvaluatorKind::RoflNorm => {
                            let kept: Vec<bool> = honest.iter().map(|h| h.norm() <= delta).collect();
                            fit_norm_bound(&aim_at_kept(&honest, &kept, &target_update, n_adv)?, delta)
                        }
                        _ => share,
                    }
                }
            }
            AttackKind::StateOverrideScc => {
                let id = victim
                    .id
                    .ok_or_else(|| Error::precondition("SCC attack needs a peer-to-peer victim"))?;
                let own = observed.get(&id).or(victim.own_update).ok_or_else(|| {
                    Error::precondition(format!("no update of victim {id} observed"))
                })?;
                let view = AdversaryView {
                    victim_id: id,
                    visible_updates: observed.iter().map(|(&k, v)| (k, v)).collect(),
                    victim_own_update: Some(own),
                    epoch,
                };
                let crafted = state_override_scc_toward(&view, &target_update, delta, n, n_adv)?;
                if crafted.dist(own) > delta {
                    log::debug!("epoch {epoch}: crafted update for user {id} will be clipped");
                }
                crafted
            }
            AttackKind::Dissensus => {
                let id = victim
                    .id
                    .ok_or_else(|| Error::precondition("dissensus needs a peer-to-peer victim"))?;
                let initial = self
                    .initial_updates
                    .as_ref()
                    .ok_or_else(|| Error::precondition("dissensus needs the epoch-0 updates"))?;
                dissensus(initial, id)?
            }
        };
        Ok(advs.into_iter().map(|a| (a, crafted.clone())).collect())
    }

    fn evaluate_into(&self, trace: &mut EpochTrace) -> Result<()> {
        let classifier = self.config.shape.output_head().is_classifier();
        let mut metrics = vec![Metric::MeanLoss];
        if classifier {
            metrics.extend([Metric::Accuracy, Metric::ErrorRate]);
        } else {
            metrics.push(Metric::Rmse);
        }
        let score = |model: &Model| -> Result<BTreeMap<String, f64>> {
            let mut out = BTreeMap::new();
            for &m in &metrics {
                let key = if m == Metric::MeanLoss { "val_loss" } else { m.name() };
                out.insert(key.to_string(), evaluate(model, &self.validation, m)?);
            }
            if let Some(probe) = &self.train_probe {
                out.insert("train_loss".into(), evaluate(model, probe, Metric::MeanLoss)?);
            }
            Ok(out)
        };
        if let Some(global) = &self.global {
            trace.metrics.extend(score(global)?);
            return Ok(());
        }
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let honest = self.honest_ids();
        for &id in &honest {
            let s = score(&self.users[id].model)?;
            for (k, v) in &s {
                *sums.entry(k.clone()).or_default() += v;
            }
            trace.user_metrics.insert(id, s);
        }
        for (k, v) in sums {
            trace.metrics.insert(k, v / honest.len() as f64);
        }
        Ok(())
    }
}

/// Honest updates Multi-KRUM would keep with the adversaries parked at the
/// honest centroid.
fn multi_krum_kept_honest(honest: &[&ParamVector], n_adv: usize, f: usize) -> Result<Vec<bool>> {
    let centroid = ParamVector::mean_of(honest.iter().copied())?;
    let mut probe: Vec<ParamVector> = honest.iter().map(|h| (*h).clone()).collect();
    probe.extend(std::iter::repeat(centroid).take(n_adv));
    let mut kept = crate::aggregators::multi_krum_aggregate(&probe, f)?.accepted;
    kept.truncate(honest.len());
    Ok(kept)
}

/// State override restricted to the honest updates the aggregator keeps:
/// the per-adversary share that makes the mean of the kept honest updates
/// and the adversarial ones equal the target.
fn aim_at_kept(
    honest: &[&ParamVector],
    kept: &[bool],
    target_update: &ParamVector,
    n_adv: usize,
) -> Result<ParamVector> {
    let kept_honest: Vec<&ParamVector> = honest
        .iter()
        .zip(kept)
        .filter(|(_, &k)| k)
        .map(|(h, _)| *h)
        .collect();
    let n_kept = kept_honest.len() + n_adv;
    state_override_split(&kept_honest, target_update, n_kept, n_adv)
}

/// Received updates in ascending sender id.
fn merge(honest: &BTreeMap<usize, ParamVector>, crafted: &BTreeMap<usize, ParamVector>) -> (Vec<usize>, Vec<ParamVector>) {
    let mut all: BTreeMap<usize, &ParamVector> = honest.iter().map(|(&k, v)| (k, v)).collect();
    all.extend(crafted.iter().map(|(&k, v)| (k, v)));
    all.into_iter().map(|(k, v)| (k, v.clone())).unzip()
}

/// Builds and runs a simulation to completion.
pub fn run(config: RunConfig, data: SimulationData) -> Result<Vec<EpochTrace>> {
    Simulation::new(config, data)?.run()
}
