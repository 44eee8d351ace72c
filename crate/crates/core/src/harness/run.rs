//! The round loop: sync, local training, poisoning, aggregation, evaluation.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::config::RunConfig;
use crate::attacks::{apply_ipm, apply_mpaf, apply_sf, AttackKind};
use crate::baselines::{self, AggregatorKind};
use crate::client::{ClientState, LocalReport, Upload};
use crate::data::partition::{dirichlet_partition_indices, iid_partition_indices, PartitionSpec};
use crate::error::{FedFgError, Result};
use crate::model::{PublicModel, SplitModel, EXTRACTOR_PREFIX};
use crate::rng::{self, derive_seed, Stream};
use crate::server::{GlobalState, ScoreBoard, Server};

/// One row of the per-round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean over benign clients of (own extractor + global classifier) accuracy
    /// on their held-out shards.
    pub accuracy: f64,
    /// Mean classification loss of benign clients' local training this round.
    pub loss: f64,
    /// Hampel threshold; NaN for aggregators that do not score clients.
    pub tau: f64,
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub o: Vec<f64>,
    pub flagged: Vec<bool>,
    pub alpha_bar: Vec<f64>,
    pub degenerate: bool,
    pub wall_time: Duration,
}

/// Counts from the run-wide privacy boundary check.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrivacyAudit {
    pub uploads_checked: usize,
    pub server_states_checked: usize,
    pub segments_checked: usize,
    pub extractor_segments_seen: usize,
}

impl PrivacyAudit {
    fn check<'a>(&mut self, names: impl Iterator<Item = &'a str>, location: &str) -> Result<()> {
        for name in names {
            self.segments_checked += 1;
            if name.starts_with(EXTRACTOR_PREFIX) {
                self.extractor_segments_seen += 1;
                return Err(FedFgError::PrivacyViolation {
                    segment: name.to_string(),
                    location: location.to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub global: PublicModel,
    pub malicious: Vec<usize>,
    pub audit: PrivacyAudit,
}

/// Fully built experiment, ready to step through rounds.
pub struct Simulation {
    config: RunConfig,
    model: SplitModel,
    clients: Vec<ClientState>,
    global: GlobalState,
    malicious: Vec<usize>,
    mpaf_base: Option<PublicModel>,
    audit: PrivacyAudit,
    round: usize,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let dataset = config.dataset.load(seed)?;
        let model = SplitModel::new(dataset.input_width(), dataset.classes(), &config.arch)?;

        let shards = match config.beta {
            None => iid_partition_indices(&dataset, config.clients, derive_seed(seed, Stream::Partition, 0, 0))?,
            Some(beta) => dirichlet_partition_indices(
                &dataset,
                &PartitionSpec {
                    clients: config.clients,
                    beta,
                    seed: derive_seed(seed, Stream::Partition, 0, 0),
                },
            )?,
        };

        let initial = PublicModel {
            generator: model
                .generator
                .init_params(derive_seed(seed, Stream::Init, 1, 0)),
            classifier: model
                .classifier
                .init_params(derive_seed(seed, Stream::Init, 2, 0)),
        };
        let extractor = model.extractor.init_params(derive_seed(seed, Stream::Init, 0, 0));
        let malicious = if config.attack.is_none() {
            Vec::new()
        } else {
            config.schedule.malicious_set(config.clients, seed)
        };

        let mut clients = Vec::with_capacity(config.clients);
        for (id, idx) in shards.iter().enumerate() {
            let shard = dataset.subset(idx)?;
            let mut split_rng = rng::substream(seed, Stream::Shuffle, id as u64, 0);
            let (train, test) = shard.split_holdout(config.test_fraction, &mut split_rng)?;
            clients.push(ClientState::new(
                id,
                extractor.clone(),
                initial.clone(),
                train,
                test,
                malicious.contains(&id),
                seed,
            ));
        }
        let sizes: Vec<usize> = clients.iter().map(ClientState::data_size).collect();
        let global = GlobalState::new(initial, &sizes)?;

        let mpaf_base = match config.attack {
            AttackKind::Mpaf { .. } => Some(PublicModel {
                generator: model
                    .generator
                    .init_params(derive_seed(seed, Stream::Attack, 1, 0)),
                classifier: model
                    .classifier
                    .init_params(derive_seed(seed, Stream::Attack, 2, 0)),
            }),
            _ => None,
        };

        Ok(Self {
            config,
            model,
            clients,
            global,
            malicious,
            mpaf_base,
            audit: PrivacyAudit::default(),
            round: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &SplitModel {
        &self.model
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn global(&self) -> &GlobalState {
        &self.global
    }

    pub fn malicious(&self) -> &[usize] {
        &self.malicious
    }

    pub fn audit(&self) -> &PrivacyAudit {
        &self.audit
    }

    fn poison(&self, honest: Vec<Upload>, previous: &PublicModel) -> Result<Vec<Upload>> {
        let attack = self.config.attack;
        if attack.is_none() || !self.config.schedule.is_active(self.round) || self.malicious.is_empty() {
            return Ok(honest);
        }
        let benign: Vec<&Upload> = honest
            .iter()
            .filter(|u| !self.malicious.contains(&u.client_id))
            .collect();
        let mut out = honest.clone();
        for &i in &self.malicious {
            out[i] = match attack {
                AttackKind::None => unreachable!(),
                AttackKind::Sf { scale } => apply_sf(&honest[i], previous, scale)?,
                AttackKind::Ipm { epsilon } => apply_ipm(i, previous, &benign, epsilon)?,
                AttackKind::Mpaf { lambda } => {
                    apply_mpaf(i, previous, self.mpaf_base.as_ref().expect("base drawn"), lambda)?
                }
            };
        }
        Ok(out)
    }

    fn aggregate(&mut self, uploads: &[Upload]) -> Result<Option<ScoreBoard>> {
        let n = uploads.len();
        match self.config.aggregator {
            AggregatorKind::Fedfg => {
                let server = Server::new(&self.model, self.config.server);
                let mut probe_rng = rng::substream(self.config.seed, Stream::Probes, 0, self.round as u64);
                let board = server.round(&mut self.global, uploads, &mut probe_rng)?;
                Ok(Some(board))
            }
            kind => {
                self.global.model = match kind {
                    AggregatorKind::Fedavg => {
                        let sizes: Vec<usize> = self.clients.iter().map(ClientState::data_size).collect();
                        baselines::fedavg(uploads, &sizes)?
                    }
                    AggregatorKind::CoordMedian => baselines::coord_median(uploads)?,
                    AggregatorKind::TrimmedMean { .. } => {
                        let b = self.config.trim_fraction().expect("trimmed mean");
                        baselines::trimmed_mean(uploads, b)?
                    }
                    AggregatorKind::GeometricMedian { tol, max_iters } => {
                        baselines::geometric_median(uploads, tol, max_iters)?
                    }
                    AggregatorKind::Fedfg => unreachable!(),
                };
                debug_assert_eq!(self.global.weights.len(), n);
                Ok(None)
            }
        }
    }

    fn evaluate(&self) -> Result<f64> {
        let mut accs = Vec::new();
        for c in &self.clients {
            if c.is_malicious() {
                continue;
            }
            if let Some(test) = c.test_data() {
                accs.push(c.accuracy_with(&self.model, &self.global.model.classifier, test)?);
            }
        }
        Ok(if accs.is_empty() {
            f64::NAN
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        })
    }

    /// Executes one full round and returns its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let start = Instant::now();
        let round = self.round;
        let previous = self.global.model.clone();
        let model = &self.model;
        let train = &self.config.train;
        let sigma = self.config.server.sigma;

        let reports: Vec<LocalReport> = self
            .clients
            .par_iter_mut()
            .map(|c| {
                c.sync_from_global(&previous)?;
                c.local_update(model, train, sigma, round)
            })
            .collect::<Result<_>>()?;

        let honest: Vec<Upload> = self.clients.iter().map(ClientState::make_upload).collect();
        let uploads = self.poison(honest, &previous)?;
        for up in &uploads {
            self.audit.uploads_checked += 1;
            self.audit
                .check(up.segment_names(), &format!("upload from client {}", up.client_id))?;
        }

        let board = self.aggregate(&uploads)?;
        self.audit.server_states_checked += 1;
        self.audit.check(self.global.segment_names(), "global state")?;

        let accuracy = self.evaluate()?;
        let benign_losses: Vec<f64> = reports
            .iter()
            .zip(&self.clients)
            .filter(|(r, c)| !c.is_malicious() && r.cls_loss.is_finite())
            .map(|(r, _)| r.cls_loss)
            .collect();
        let loss = if benign_losses.is_empty() {
            f64::NAN
        } else {
            benign_losses.iter().sum::<f64>() / benign_losses.len() as f64
        };

        let n = self.clients.len();
        let record = match board {
            Some(b) => RoundRecord {
                round,
                accuracy,
                loss,
                tau: b.tau,
                flagged: b.flagged(),
                s: b.s,
                alpha: b.alpha,
                o: b.o,
                alpha_bar: b.alpha_bar,
                degenerate: b.degenerate,
                wall_time: start.elapsed(),
            },
            None => RoundRecord {
                round,
                accuracy,
                loss,
                tau: f64::NAN,
                s: vec![f64::NAN; n],
                alpha: vec![f64::NAN; n],
                o: vec![f64::NAN; n],
                flagged: vec![false; n],
                alpha_bar: vec![f64::NAN; n],
                degenerate: false,
                wall_time: start.elapsed(),
            },
        };
        self.round += 1;
        Ok(record)
    }

    pub fn run(mut self) -> Result<RunOutput> {
        let mut records = Vec::with_capacity(self.config.rounds);
        for _ in 0..self.config.rounds {
            records.push(self.step()?);
        }
        Ok(RunOutput {
            records,
            global: self.global.model,
            malicious: self.malicious,
            audit: self.audit,
        })
    }
}

/// Builds and runs `config` on a dedicated worker pool of `config.threads` threads.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| FedFgError::config("threads", e.to_string()))?;
    pool.install(|| Simulation::new(config.clone())?.run())
}
