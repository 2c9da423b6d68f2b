use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::deviation::{aggregate, aggregation_deviation};
use crate::federation::metrics::{accuracy, macro_f1, MetricLog, MetricRow};
use crate::federation::schedule::{Phase, RoundSchedule};
use crate::lora::{local_train, AdapterCheckpoint, BaseModel, LocalTrainConfig, LoraAdapter, LoraModel, TrainableSelector};
use crate::numerics::{Matrix, RngSnapshot, RngState};
use crate::privacy::{
    clip_update, mechanism_noise, noise_decomposition, regulate_for_a, regulate_for_b, NoisePhase, NoiseTrace, PrivacySpec,
};

/// User-level privacy budget; sigma is calibrated from it at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpBudget {
    pub epsilon: f64,
    /// `None` means `1 / K`.
    pub delta: Option<f64>,
    pub clip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub schedule: RoundSchedule,
    pub rounds: usize,
    pub local: LocalTrainConfig,
    pub rank: usize,
    pub alpha: f64,
    pub init_std: f64,
    /// Indices of the base layers that receive adapters.
    pub adapt_layers: Vec<usize>,
    pub privacy: Option<DpBudget>,
    /// Pseudo-inverse noise regulation on the single-factor half-rounds of
    /// alternating schedules. Joint and freeze-A rounds, and `TrainBoth`
    /// phases, always get raw factor noise.
    pub regulate_noise: bool,
    /// Also record the deviation of the clipped, pre-noise factors.
    pub record_pre_noise: bool,
    /// Run client updates on the rayon pool.
    pub parallel: bool,
}

impl FederationConfig {
    pub fn privacy_spec(&self, clients: usize) -> Result<PrivacySpec> {
        match self.privacy {
            None => Ok(PrivacySpec::disabled()),
            Some(b) => PrivacySpec::calibrated(
                b.epsilon,
                b.delta,
                b.clip,
                clients,
                self.schedule.releases(self.rounds, self.adapt_layers.len()),
            ),
        }
    }
}

/// One server-side aggregation (a half-round, or a joint round).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationEvent {
    pub round: usize,
    pub phase: Phase,
    /// Root-sum-square over adapted layers of the uploaded-factor deviation.
    pub deviation_norm: f64,
    pub pre_noise_deviation_norm: Option<f64>,
}

#[derive(Debug, Clone)]
struct Client {
    data: Dataset,
    model: LoraModel,
    rng: RngState,
}

/// What one client uploads for one adapted layer.
struct LayerUpload {
    b: Matrix,
    a: Matrix,
    pre_b: Matrix,
    pre_a: Matrix,
    norms: Option<[f64; 4]>,
}

/// Server plus simulated clients.
#[derive(Debug, Clone)]
pub struct FederationState {
    cfg: FederationConfig,
    privacy: PrivacySpec,
    global: LoraModel,
    clients: Vec<Client>,
    round: usize,
    releases: usize,
    events: Vec<AggregationEvent>,
    traces: Vec<NoiseTrace>,
}

/// Rng stream used to initialize the shared adapters.
pub fn init_rng(seed: u64) -> RngState {
    RngState::new(seed).split(0)
}

/// Rng stream of client `k`.
pub fn client_rng(seed: u64, k: usize) -> RngState {
    RngState::new(seed).split(1 + k as u64)
}

impl FederationState {
    pub fn new(base: Arc<BaseModel>, shards: Vec<Dataset>, cfg: FederationConfig, seed: u64) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::InvalidArgument("federation needs at least one client".into()));
        }
        if cfg.adapt_layers.is_empty() {
            return Err(Error::InvalidArgument("no layers selected for adaptation".into()));
        }
        for (k, s) in shards.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!("client {k} has an empty shard")));
            }
            if s.dim() != base.input_dim() || s.classes != base.classes() {
                return Err(Error::shape(
                    "federation",
                    format!("client {k} data is {}-dim/{} classes, model expects {}/{}", s.dim(), s.classes, base.input_dim(), base.classes()),
                ));
            }
        }
        let mut layers = cfg.adapt_layers.clone();
        layers.sort_unstable();
        layers.dedup();
        if layers.len() != cfg.adapt_layers.len() {
            return Err(Error::InvalidArgument("adapt_layers lists a layer twice".into()));
        }
        let privacy = cfg.privacy_spec(shards.len())?;
        let global = LoraModel::with_adapters(base, &cfg.adapt_layers, cfg.rank, cfg.alpha, cfg.init_std, &mut init_rng(seed))?;
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(k, data)| Client {
                data,
                model: global.clone(),
                rng: client_rng(seed, k),
            })
            .collect();
        Ok(Self {
            cfg,
            privacy,
            global,
            clients,
            round: 0,
            releases: 0,
            events: Vec::new(),
            traces: Vec::new(),
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn privacy(&self) -> &PrivacySpec {
        &self.privacy
    }

    pub fn global(&self) -> &LoraModel {
        &self.global
    }

    pub fn client_model(&self, k: usize) -> Option<&LoraModel> {
        self.clients.get(k).map(|c| &c.model)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.data.len()).collect()
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Noisy factor releases per client so far.
    pub fn releases(&self) -> usize {
        self.releases
    }

    pub fn epsilon_spent(&self) -> f64 {
        self.privacy.epsilon_spent(self.releases)
    }

    pub fn events(&self) -> &[AggregationEvent] {
        &self.events
    }

    pub fn traces(&self) -> &[NoiseTrace] {
        &self.traces
    }

    pub fn run_round_joint(&mut self) -> Result<()> {
        self.expect_schedule(matches!(self.cfg.schedule, RoundSchedule::Joint), "joint")?;
        self.run_round()
    }

    pub fn run_round_ffa(&mut self) -> Result<()> {
        self.expect_schedule(matches!(self.cfg.schedule, RoundSchedule::FreezeA), "freeze-A")?;
        self.run_round()
    }

    pub fn run_round_deer(&mut self) -> Result<()> {
        self.expect_schedule(self.cfg.schedule.is_alternating(), "alternating")?;
        self.run_round()
    }

    fn expect_schedule(&self, ok: bool, want: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{want} round requested but schedule is {:?}", self.cfg.schedule)))
        }
    }

    /// One communication round under the configured schedule.
    pub fn run_round(&mut self) -> Result<()> {
        let round = self.round + 1;
        let phases = self.cfg.schedule.phases(round).to_vec();
        for phase in phases {
            self.run_phase(round, phase)?;
        }
        self.round = round;
        Ok(())
    }

    fn run_phase(&mut self, round: usize, phase: Phase) -> Result<()> {
        let layers = self.cfg.adapt_layers.clone();
        let uploads: Vec<Vec<LayerUpload>> = {
            let global = &self.global;
            let cfg = &self.cfg;
            let privacy = &self.privacy;
            let work = |c: &mut Client| client_update(c, global, phase, &layers, cfg, privacy);
            let res: Vec<Result<Vec<LayerUpload>>> = if cfg.parallel {
                self.clients.par_iter_mut().map(work).collect()
            } else {
                self.clients.iter_mut().map(work).collect()
            };
            res.into_iter().collect::<Result<_>>()?
        };

        let mut dev_sq = 0.0;
        let mut pre_sq = 0.0;
        let k = uploads.len() as f64;
        for (li, &layer) in layers.iter().enumerate() {
            let bs: Vec<Matrix> = uploads.iter().map(|u| u[li].b.clone()).collect();
            let as_: Vec<Matrix> = uploads.iter().map(|u| u[li].a.clone()).collect();
            let (_, dev) = aggregation_deviation(&bs, &as_, self.cfg.alpha, self.cfg.rank)?;
            dev_sq += dev * dev;
            if self.cfg.record_pre_noise {
                let pbs: Vec<Matrix> = uploads.iter().map(|u| u[li].pre_b.clone()).collect();
                let pas: Vec<Matrix> = uploads.iter().map(|u| u[li].pre_a.clone()).collect();
                let (_, d) = aggregation_deviation(&pbs, &pas, self.cfg.alpha, self.cfg.rank)?;
                pre_sq += d * d;
            }

            let adapter = self.global.adapter_mut(layer).expect("adapted layer");
            if phase != Phase::TrainA {
                adapter.b = aggregate(&bs)?;
            }
            if phase != Phase::TrainB {
                adapter.a = aggregate(&as_)?;
            }

            if self.privacy.enabled {
                let mut mean = [0.0; 4];
                for u in &uploads {
                    let n = u[li].norms.expect("noise norms recorded under DP");
                    for (m, v) in mean.iter_mut().zip(n) {
                        *m += v / k;
                    }
                }
                self.traces.push(NoiseTrace {
                    round,
                    layer,
                    phase: match phase {
                        Phase::TrainB => NoisePhase::B,
                        Phase::TrainA => NoisePhase::A,
                        Phase::TrainBoth => NoisePhase::Both,
                    },
                    norm_linear_b: mean[0],
                    norm_linear_a: mean[1],
                    norm_base: mean[2],
                    norm_quadratic: mean[3],
                });
            }
        }

        for c in &mut self.clients {
            for &layer in &layers {
                let g = self.global.adapter(layer).expect("adapted layer").clone();
                c.model.set_adapter(layer, g)?;
            }
        }
        if self.privacy.enabled {
            self.releases += phase.factors() * layers.len();
        }
        self.events.push(AggregationEvent {
            round,
            phase,
            deviation_norm: dev_sq.sqrt(),
            pre_noise_deviation_norm: self.cfg.record_pre_noise.then(|| pre_sq.sqrt()),
        });
        Ok(())
    }

    /// Accuracy and macro-F1 of the global model.
    pub fn evaluate(&self, test: &Dataset) -> Result<(f64, f64)> {
        let pred = self.global.predict(&test.x)?;
        Ok((accuracy(&pred, &test.y)?, macro_f1(&pred, &test.y, test.classes)?))
    }

    pub fn checkpoint(&self) -> FederationCheckpoint {
        let ckpt = |m: &LoraModel| m.adapters().iter().map(|a| a.as_ref().map(LoraAdapter::to_checkpoint)).collect();
        FederationCheckpoint {
            round: self.round,
            releases: self.releases,
            global: ckpt(&self.global),
            clients: self
                .clients
                .iter()
                .map(|c| ClientCheckpoint {
                    adapters: ckpt(&c.model),
                    rng: c.rng.snapshot(),
                })
                .collect(),
        }
    }

    /// Restores adapters, rng positions and counters from `ckpt`. The state
    /// must have been built with the same base model, shards and config.
    pub fn restore(&mut self, ckpt: &FederationCheckpoint) -> Result<()> {
        if ckpt.clients.len() != self.clients.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} clients, state has {}",
                ckpt.clients.len(),
                self.clients.len()
            )));
        }
        let load = |model: &mut LoraModel, ads: &[Option<AdapterCheckpoint>]| -> Result<()> {
            if ads.len() != model.num_layers() {
                return Err(Error::InvalidArgument("checkpoint layer count differs from model".into()));
            }
            for (l, a) in ads.iter().enumerate() {
                match (a, model.adapter(l).is_some()) {
                    (Some(a), true) => model.set_adapter(l, LoraAdapter::from_checkpoint(a)?)?,
                    (None, false) => {}
                    _ => return Err(Error::InvalidArgument(format!("checkpoint adapter layout differs at layer {l}"))),
                }
            }
            Ok(())
        };
        let mut next = self.clone();
        load(&mut next.global, &ckpt.global)?;
        for (c, cc) in next.clients.iter_mut().zip(&ckpt.clients) {
            load(&mut c.model, &cc.adapters)?;
            c.rng = RngState::restore(&cc.rng);
        }
        next.round = ckpt.round;
        next.releases = ckpt.releases;
        next.events.clear();
        next.traces.clear();
        *self = next;
        Ok(())
    }
}

fn client_update(
    c: &mut Client,
    global: &LoraModel,
    phase: Phase,
    layers: &[usize],
    cfg: &FederationConfig,
    privacy: &PrivacySpec,
) -> Result<Vec<LayerUpload>> {
    for &l in layers {
        c.model.set_adapter(l, global.adapter(l).expect("adapted layer").clone())?;
    }
    let selector = match phase {
        Phase::TrainB => TrainableSelector::OnlyB,
        Phase::TrainA => TrainableSelector::OnlyA,
        Phase::TrainBoth => TrainableSelector::Both,
    };
    local_train(&mut c.model, &c.data, selector, &cfg.local, &mut c.rng)?;

    let mut out = Vec::with_capacity(layers.len());
    for &l in layers {
        let g = global.adapter(l).expect("adapted layer");
        let local = c.model.adapter(l).expect("adapted layer");
        if !privacy.enabled {
            out.push(LayerUpload {
                b: local.b.clone(),
                a: local.a.clone(),
                pre_b: local.b.clone(),
                pre_a: local.a.clone(),
                norms: None,
            });
            continue;
        }
        let clipped = |trained: bool, now: &Matrix, start: &Matrix| -> Result<Matrix> {
            if trained {
                start.add(&clip_update(&now.sub(start)?, privacy.clip)?)
            } else {
                Ok(start.clone())
            }
        };
        let pre_b = clipped(selector.trains_b(), &local.b, &g.b)?;
        let pre_a = clipped(selector.trains_a(), &local.a, &g.a)?;
        let (m, r, n) = (g.b.rows(), g.rank(), g.a.cols());
        let regulated = cfg.regulate_noise && cfg.schedule.is_alternating() && phase != Phase::TrainBoth;
        let (xi_b, xi_a, base) = match phase {
            Phase::TrainB if regulated => {
                let xi_w = mechanism_noise(m, n, privacy, &mut c.rng)?;
                (regulate_for_b(&xi_w, &g.a)?, Matrix::zeros(r, n), xi_w.frobenius_norm())
            }
            Phase::TrainA if regulated => {
                let xi_w = mechanism_noise(m, n, privacy, &mut c.rng)?;
                (Matrix::zeros(m, r), regulate_for_a(&xi_w, &g.b)?, xi_w.frobenius_norm())
            }
            Phase::TrainB => {
                let xi = mechanism_noise(m, r, privacy, &mut c.rng)?;
                let nb = xi.frobenius_norm();
                (xi, Matrix::zeros(r, n), nb)
            }
            Phase::TrainA => {
                let xi = mechanism_noise(r, n, privacy, &mut c.rng)?;
                let na = xi.frobenius_norm();
                (Matrix::zeros(m, r), xi, na)
            }
            Phase::TrainBoth => {
                let xb = mechanism_noise(m, r, privacy, &mut c.rng)?;
                let xa = mechanism_noise(r, n, privacy, &mut c.rng)?;
                let nb = xb.frobenius_norm().hypot(xa.frobenius_norm());
                (xb, xa, nb)
            }
        };
        let terms = noise_decomposition(&pre_b, &pre_a, &xi_b, &xi_a, cfg.alpha, cfg.rank)?;
        out.push(LayerUpload {
            b: pre_b.add(&xi_b)?.ensure_finite("noisy B upload")?,
            a: pre_a.add(&xi_a)?.ensure_finite("noisy A upload")?,
            pre_b,
            pre_a,
            norms: Some([
                terms.linear_b.frobenius_norm(),
                terms.linear_a.frobenius_norm(),
                base,
                terms.quadratic.frobenius_norm(),
            ]),
        });
    }
    Ok(out)
}

/// JSON-serializable snapshot sufficient to resume a federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationCheckpoint {
    pub round: usize,
    pub releases: usize,
    pub global: Vec<Option<AdapterCheckpoint>>,
    pub clients: Vec<ClientCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientCheckpoint {
    pub adapters: Vec<Option<AdapterCheckpoint>>,
    pub rng: RngSnapshot,
}

/// Runs `cfg.rounds` rounds, evaluating the global model on `test` before the
/// first round and after every round.
pub fn run_federation(
    base: Arc<BaseModel>,
    shards: Vec<Dataset>,
    test: &Dataset,
    cfg: &FederationConfig,
    seed: u64,
) -> Result<(MetricLog, FederationState)> {
    let mut state = FederationState::new(base, shards, cfg.clone(), seed)?;
    let mut log = MetricLog::default();
    let (acc, f1) = state.evaluate(test)?;
    log.rows.push(MetricRow {
        seed,
        round: 0,
        accuracy: acc,
        macro_f1: f1,
        deviation_norm: 0.0,
        mean_linear_b: 0.0,
        mean_linear_a: 0.0,
        epsilon_spent: 0.0,
    });
    for _ in 0..cfg.rounds {
        let (ev0, tr0) = (state.events.len(), state.traces.len());
        state.run_round()?;
        let round = state.round;
        let deviation = state.events[ev0..].iter().map(|e| e.deviation_norm).fold(0.0, f64::max);
        let traces = &state.traces[tr0..];
        let mean_of = |want: fn(&NoiseTrace) -> Option<f64>| {
            let v: Vec<f64> = traces.iter().filter_map(want).collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let mean_linear_b = mean_of(|t| (t.phase != NoisePhase::A).then_some(t.norm_linear_b));
        let mean_linear_a = mean_of(|t| (t.phase != NoisePhase::B).then_some(t.norm_linear_a));
        let (acc, f1) = state.evaluate(test)?;
        log.rows.push(MetricRow {
            seed,
            round,
            accuracy: acc,
            macro_f1: f1,
            deviation_norm: deviation,
            mean_linear_b,
            mean_linear_a,
            epsilon_spent: state.epsilon_spent(),
        });
    }
    Ok((log, state))
}
