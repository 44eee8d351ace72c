//! Server-side round: preliminary aggregation, synthetic probe generation,
//! per-client accuracy and outlier scoring, Hampel detection and
//! accuracy-weighted aggregation over the clients that survive filtering.
//!
//! Every cross-client reduction goes through [`canonical_sum`], so relabeling
//! clients permutes the scores and leaves the aggregate bit-identical.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::Upload;
use crate::error::{FedFgError, Result};
use crate::flow::{self, SamplerConfig, VectorFieldSpec};
use crate::model::{PublicModel, SplitModel};
use crate::nn::{argmax, MlpSpec, ParamVector};
use crate::rng::SimRng;
use crate::stats::{canonical_sum, median};

/// Scales the MAD to a standard-deviation estimate under Gaussian noise.
pub const MAD_CONSISTENCY: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    /// Hampel cutoff in MAD-scale units.
    pub gamma: f64,
    /// Relative-accuracy floor; `None` means `1 / (2N)`.
    pub kappa: Option<f64>,
    pub probe_count: usize,
    pub eps_stab: f64,
    /// Path-noise scale used by client generator training.
    pub sigma: f64,
    pub euler_steps: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            gamma: 3.0,
            kappa: None,
            probe_count: 512,
            eps_stab: 1e-12,
            sigma: 0.0,
            euler_steps: 20,
        }
    }
}

impl ServerConfig {
    pub fn kappa_for(&self, clients: usize) -> f64 {
        self.kappa.unwrap_or(1.0 / (2.0 * clients as f64))
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            euler_steps: self.euler_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(FedFgError::config("server.gamma", "must be a positive finite number"));
        }
        if let Some(k) = self.kappa {
            if !(0.0..1.0).contains(&k) {
                return Err(FedFgError::config("server.kappa", "must lie in [0, 1)"));
            }
        }
        if self.probe_count == 0 {
            return Err(FedFgError::config("server.probe_count", "must be at least 1"));
        }
        if !(self.eps_stab > 0.0 && self.eps_stab < 1e-3) {
            return Err(FedFgError::config("server.eps_stab", "must lie in (0, 1e-3)"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(FedFgError::config("server.sigma", "must be a finite number >= 0"));
        }
        if self.euler_steps == 0 {
            return Err(FedFgError::config("server.euler_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Global public model plus the prior weights used by the next preliminary aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub model: PublicModel,
    pub weights: Vec<f64>,
}

impl GlobalState {
    /// Prior weights proportional to local data sizes.
    pub fn new(model: PublicModel, data_sizes: &[usize]) -> Result<Self> {
        let total: usize = data_sizes.iter().sum();
        if total == 0 {
            return Err(FedFgError::invalid("prior weights need positive data sizes"));
        }
        let weights = data_sizes.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Self { model, weights })
    }

    pub fn segment_names(&self) -> impl Iterator<Item = &str> {
        self.model.segment_names()
    }
}

/// Label-conditioned synthetic features drawn from the global generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ProbeBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-round scoring state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreBoard {
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub o: Vec<f64>,
    pub median: f64,
    pub mad: f64,
    pub tau: f64,
    /// Ascending ids of clients kept for aggregation.
    pub benign: Vec<usize>,
    /// Renormalised weights; zero for filtered clients.
    pub alpha_bar: Vec<f64>,
    pub gamma: f64,
    pub kappa: f64,
    pub eps_stab: f64,
    /// No client survived filtering; the previous globals were retained.
    pub degenerate: bool,
}

impl ScoreBoard {
    pub fn flagged(&self) -> Vec<bool> {
        let mut flagged = vec![true; self.s.len()];
        for &i in &self.benign {
            flagged[i] = false;
        }
        flagged
    }
}

fn check_uploads(uploads: &[Upload]) -> Result<()> {
    let first = uploads
        .first()
        .ok_or_else(|| FedFgError::invalid("no uploads"))?;
    for up in &uploads[1..] {
        first.generator.ensure_same_layout(&up.generator, "upload generator")?;
        first.classifier.ensure_same_layout(&up.classifier, "upload classifier")?;
    }
    Ok(())
}

/// `sum_i weights[i] * theta_i` per component. Zero-weight terms are skipped so
/// non-finite uploads with no weight cannot contaminate the result.
pub fn weighted_sum(uploads: &[Upload], weights: &[f64]) -> Result<PublicModel> {
    check_uploads(uploads)?;
    if uploads.len() != weights.len() {
        return Err(FedFgError::DimensionMismatch {
            context: "aggregation weights",
            expected: uploads.len(),
            got: weights.len(),
        });
    }
    let active: Vec<(f64, &Upload)> = weights
        .iter()
        .copied()
        .zip(uploads)
        .filter(|(w, _)| *w != 0.0)
        .collect();
    let combine = |pick: &dyn Fn(&Upload) -> &ParamVector| -> ParamVector {
        let template = pick(&uploads[0]);
        let mut out = ParamVector::zeros(template.layout().clone());
        let mut terms = Vec::with_capacity(active.len());
        for (c, slot) in out.values_mut().iter_mut().enumerate() {
            terms.clear();
            terms.extend(active.iter().map(|(w, up)| w * pick(up).values()[c]));
            *slot = canonical_sum(&mut terms);
        }
        out
    };
    Ok(PublicModel {
        generator: combine(&|u: &Upload| &u.generator),
        classifier: combine(&|u: &Upload| &u.classifier),
    })
}

/// Prior-weighted average over all clients, malicious ones included.
pub fn preliminary_aggregate(uploads: &[Upload], weights: &[f64]) -> Result<PublicModel> {
    let total = canonical_sum(&mut weights.to_vec());
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(FedFgError::invalid(format!(
            "prior weights must be non-negative and sum to 1 (sum {total})"
        )));
    }
    weighted_sum(uploads, weights)
}

/// Samples `count` labels uniformly and generates a feature for each.
pub fn gen_probes(
    generator: &ParamVector,
    spec: &VectorFieldSpec,
    count: usize,
    sampler: SamplerConfig,
    rng: &mut SimRng,
) -> Result<ProbeBatch> {
    if count == 0 {
        return Err(FedFgError::invalid("probe count must be >= 1"));
    }
    let gen = flow::Generator::new(spec, generator)?;
    let draws: Vec<(usize, Vec<f64>)> = (0..count)
        .map(|_| {
            let y = rng.random_range(0..spec.classes());
            let z = (0..spec.feature_dim()).map(|_| rng.sample(StandardNormal)).collect();
            (y, z)
        })
        .collect();
    let features = draws
        .par_iter()
        .map(|(y, z)| flow::integrate(&gen, z, *y, sampler))
        .collect();
    let labels = draws.into_iter().map(|(y, _)| y).collect();
    Ok(ProbeBatch { features, labels })
}

/// Softmax that stays a probability vector for any input: NaN logits count as
/// `-inf`, `+inf` logits share the mass, and all `-inf` gives the uniform vector.
pub fn robust_softmax(logits: &[f64]) -> Vec<f64> {
    let clean: Vec<f64> = logits
        .iter()
        .map(|&z| if z.is_nan() { f64::NEG_INFINITY } else { z })
        .collect();
    let max = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = clean.len() as f64;
    if max == f64::NEG_INFINITY {
        return vec![1.0 / k; clean.len()];
    }
    if max == f64::INFINITY {
        let hits = clean.iter().filter(|&&z| z == f64::INFINITY).count() as f64;
        return clean
            .iter()
            .map(|&z| if z == f64::INFINITY { 1.0 / hits } else { 0.0 })
            .collect();
    }
    let mut p: Vec<f64> = clean.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// Predictive distribution of one uploaded classifier on a synthetic feature.
pub fn predictive_dist(classifier: &MlpSpec, upload: &Upload, feature: &[f64]) -> Result<Vec<f64>> {
    Ok(robust_softmax(&classifier.forward(&upload.classifier, feature)?))
}

/// Hellinger distance `||sqrt(p) - sqrt(q)||_2 / sqrt(2)`.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(FedFgError::DimensionMismatch {
            context: "hellinger",
            expected: p.len(),
            got: q.len(),
        });
    }
    if p.iter().chain(q).any(|&v| !(v >= 0.0)) {
        return Err(FedFgError::invalid("hellinger needs non-negative probabilities"));
    }
    Ok(hellinger_sqrt(
        &p.iter().map(|v| v.sqrt()).collect::<Vec<_>>(),
        &q.iter().map(|v| v.sqrt()).collect::<Vec<_>>(),
    ))
}

fn hellinger_sqrt(sp: &[f64], sq: &[f64]) -> f64 {
    let ss: f64 = sp.iter().zip(sq).map(|(a, b)| (a - b) * (a - b)).sum();
    (ss.sqrt() / std::f64::consts::SQRT_2).min(1.0)
}

/// Logits of every client classifier on every probe: `[client][probe][class]`.
pub fn client_logits(classifier: &MlpSpec, uploads: &[Upload], probes: &ProbeBatch) -> Result<Vec<Vec<Vec<f64>>>> {
    uploads
        .par_iter()
        .map(|up| {
            if up.classifier.layout() != classifier.layout() {
                return Err(FedFgError::LayoutMismatch("client classifier"));
            }
            probes
                .features
                .iter()
                .map(|h| classifier.forward_raw(up.classifier.values(), h))
                .collect()
        })
        .collect()
}

/// `s_i` = probe accuracy, `alpha_i = s_i / (sum_j s_j + eps)`.
pub fn accuracy_scores_from_logits(logits: &[Vec<Vec<f64>>], labels: &[usize], eps_stab: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if labels.is_empty() {
        return Err(FedFgError::invalid("accuracy scores need at least one probe"));
    }
    let s: Vec<f64> = logits
        .iter()
        .map(|client| {
            let correct = client
                .iter()
                .zip(labels)
                .filter(|(z, &y)| argmax(z) == y)
                .count();
            correct as f64 / labels.len() as f64
        })
        .collect();
    let denom = canonical_sum(&mut s.clone()) + eps_stab;
    let alpha = s.iter().map(|v| v / denom).collect();
    Ok((s, alpha))
}

pub fn accuracy_scores(classifier: &MlpSpec, uploads: &[Upload], probes: &ProbeBatch, eps_stab: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let logits = client_logits(classifier, uploads, probes)?;
    accuracy_scores_from_logits(&logits, &probes.labels, eps_stab)
}

/// Mean pairwise Hellinger distance of each client to all others, averaged
/// over probes. `dists` is `[client][probe][class]` probabilities.
pub fn outlier_scores_from_dists(dists: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let n = dists.len();
    if n < 2 {
        return Err(FedFgError::invalid("outlier scores need at least two clients"));
    }
    let probes = dists[0].len();
    if probes == 0 || dists.iter().any(|d| d.len() != probes) {
        return Err(FedFgError::invalid("every client needs the same non-empty probe set"));
    }
    let roots: Vec<Vec<Vec<f64>>> = dists
        .iter()
        .map(|d| d.iter().map(|p| p.iter().map(|v| v.max(0.0).sqrt()).collect()).collect())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let pair_means: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let total: f64 = (0..probes)
                .map(|k| hellinger_sqrt(&roots[i][k], &roots[j][k]))
                .sum();
            total / probes as f64
        })
        .collect();
    let mut matrix = vec![vec![0.0; n]; n];
    for (&(i, j), &d) in pairs.iter().zip(&pair_means) {
        matrix[i][j] = d;
        matrix[j][i] = d;
    }
    Ok((0..n)
        .map(|i| {
            let mut terms: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| matrix[i][j]).collect();
            canonical_sum(&mut terms) / (n - 1) as f64
        })
        .collect())
}

pub fn predictive_dists(logits: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    logits
        .iter()
        .map(|c| c.iter().map(|z| robust_softmax(z)).collect())
        .collect()
}

pub fn outlier_scores(classifier: &MlpSpec, uploads: &[Upload], probes: &ProbeBatch) -> Result<Vec<f64>> {
    let logits = client_logits(classifier, uploads, probes)?;
    outlier_scores_from_dists(&predictive_dists(&logits))
}

/// Hampel cutoff over the outlier scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HampelThreshold {
    pub median: f64,
    /// `median |o - m| + eps`.
    pub mad: f64,
    pub tau: f64,
}

pub fn hampel_threshold(o: &[f64], gamma: f64, eps_stab: f64) -> Result<HampelThreshold> {
    let m = median(o).ok_or_else(|| FedFgError::invalid("Hampel rule on an empty score set"))?;
    let dev: Vec<f64> = o.iter().map(|v| (v - m).abs()).collect();
    let mad = median(&dev).expect("non-empty") + eps_stab;
    Ok(HampelThreshold {
        median: m,
        mad,
        tau: m + gamma * MAD_CONSISTENCY * mad,
    })
}

/// Clients with `o_i < tau` and `alpha_i > kappa`; boundary cases are filtered.
pub fn detect(o: &[f64], alpha: &[f64], tau: f64, kappa: f64) -> Vec<usize> {
    o.iter()
        .zip(alpha)
        .enumerate()
        .filter(|(_, (&oi, &ai))| oi < tau && ai > kappa)
        .map(|(i, _)| i)
        .collect()
}

/// Renormalises `alpha` over `benign` and aggregates those uploads only.
/// Returns the new globals and `alpha_bar` (zero outside `benign`).
pub fn robust_aggregate(uploads: &[Upload], benign: &[usize], alpha: &[f64], eps_stab: f64) -> Result<(PublicModel, Vec<f64>)> {
    if benign.is_empty() {
        return Err(FedFgError::invalid("robust aggregation over an empty benign set"));
    }
    if alpha.len() != uploads.len() || benign.iter().any(|&i| i >= uploads.len()) {
        return Err(FedFgError::invalid("benign ids or scores do not match the uploads"));
    }
    let mut kept: Vec<f64> = benign.iter().map(|&i| alpha[i]).collect();
    let denom = canonical_sum(&mut kept) + eps_stab;
    let mut alpha_bar = vec![0.0; uploads.len()];
    for &i in benign {
        alpha_bar[i] = alpha[i] / denom;
    }
    Ok((weighted_sum(uploads, &alpha_bar)?, alpha_bar))
}

/// Next-round prior weights: `alpha` renormalised, uniform if it carries no mass.
pub fn carry_weights(alpha: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let clean: Vec<f64> = alpha.iter().map(|&a| if a.is_finite() && a > 0.0 { a } else { 0.0 }).collect();
    let total = canonical_sum(&mut clean.clone());
    if total > 0.0 {
        clean.iter().map(|a| a / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// The verification-and-aggregation pipeline for one round.
#[derive(Debug, Clone)]
pub struct Server<'a> {
    pub model: &'a SplitModel,
    pub config: ServerConfig,
}

impl<'a> Server<'a> {
    pub fn new(model: &'a SplitModel, config: ServerConfig) -> Self {
        Self { model, config }
    }

    /// Runs one round, updating `state` in place. Uploads must be ordered by client id.
    pub fn round(&self, state: &mut GlobalState, uploads: &[Upload], rng: &mut SimRng) -> Result<ScoreBoard> {
        let n = uploads.len();
        if n < 2 || state.weights.len() != n {
            return Err(FedFgError::invalid(format!(
                "server round needs >= 2 uploads matching {} prior weights, got {n}",
                state.weights.len()
            )));
        }
        if uploads.iter().enumerate().any(|(i, u)| u.client_id != i) {
            return Err(FedFgError::invalid("uploads must be ordered by client id"));
        }
        let cfg = &self.config;
        let kappa = cfg.kappa_for(n);

        let preliminary = preliminary_aggregate(uploads, &state.weights)?;
        let probes = gen_probes(
            &preliminary.generator,
            &self.model.generator,
            cfg.probe_count,
            cfg.sampler(),
            rng,
        )?;
        let logits = client_logits(&self.model.classifier, uploads, &probes)?;
        let (s, alpha) = accuracy_scores_from_logits(&logits, &probes.labels, cfg.eps_stab)?;
        let o = outlier_scores_from_dists(&predictive_dists(&logits))?;
        let hampel = hampel_threshold(&o, cfg.gamma, cfg.eps_stab)?;
        let benign = detect(&o, &alpha, hampel.tau, kappa);

        let mut board = ScoreBoard {
            s,
            alpha,
            o,
            median: hampel.median,
            mad: hampel.mad,
            tau: hampel.tau,
            benign,
            alpha_bar: vec![0.0; n],
            gamma: cfg.gamma,
            kappa,
            eps_stab: cfg.eps_stab,
            degenerate: false,
        };
        if board.benign.is_empty() {
            board.degenerate = true;
            state.weights = vec![1.0 / n as f64; n];
        } else {
            let (model, alpha_bar) = robust_aggregate(uploads, &board.benign, &board.alpha, cfg.eps_stab)?;
            state.model = model;
            board.alpha_bar = alpha_bar;
            state.weights = carry_weights(&board.alpha);
        }
        Ok(board)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;
    use crate::nn::{Activation, Layout, Segment};
    use crate::rng::seeded;

    fn scalar_upload(id: usize, g: f64, c: f64) -> Upload {
        let gl = Layout::new(vec![Segment::new("generator.w", vec![1])]);
        let cl = Layout::new(vec![Segment::new("classifier.w", vec![1])]);
        Upload {
            client_id: id,
            generator: ParamVector::new(gl, vec![g]).unwrap(),
            classifier: ParamVector::new(cl, vec![c]).unwrap(),
        }
    }

    fn small_model() -> SplitModel {
        let arch = ArchConfig {
            extractor_hidden: vec![4],
            feature_dim: 3,
            field_hidden: vec![5],
            label_embed_dim: 2,
            ..ArchConfig::default()
        };
        SplitModel::new(4, 3, &arch).unwrap()
    }

    fn random_upload(model: &SplitModel, id: usize, seed: u64) -> Upload {
        Upload {
            client_id: id,
            generator: model.generator.init_params(seed),
            classifier: model.classifier.init_params(seed + 100),
        }
    }

    fn dist_fixture(n: usize, probes: usize, k: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                (0..probes)
                    .map(|_| {
                        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let t: f64 = raw.iter().sum();
                        raw.iter().map(|v| v / t).collect()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn preliminary_single_client_is_identity() {
        let up = scalar_upload(0, 1.5, -2.0);
        assert_eq!(preliminary_aggregate(&[up.clone()], &[1.0]).unwrap(), up.public());
    }

    #[test]
    fn preliminary_identical_uploads_for_any_weights() {
        let a = scalar_upload(0, 0.7, 3.0);
        let b = scalar_upload(1, 0.7, 3.0);
        let out = preliminary_aggregate(&[a.clone(), b], &[0.125, 0.875]).unwrap();
        assert_eq!(out, a.public());
    }

    #[test]
    fn preliminary_weighted_example() {
        let out = preliminary_aggregate(&[scalar_upload(0, 2.0, 2.0), scalar_upload(1, 4.0, 4.0)], &[0.25, 0.75]).unwrap();
        assert_eq!(out.generator.values(), &[3.5]);
        assert_eq!(out.classifier.values(), &[3.5]);
    }

    #[test]
    fn preliminary_rejects_bad_weights() {
        let ups = [scalar_upload(0, 1.0, 1.0), scalar_upload(1, 2.0, 2.0)];
        assert!(preliminary_aggregate(&ups, &[0.5, 0.6]).is_err());
        assert!(preliminary_aggregate(&ups, &[1.5, -0.5]).is_err());
        assert!(preliminary_aggregate(&ups, &[1.0]).is_err());
    }

    #[test]
    fn preliminary_rejects_layout_mismatch() {
        let model = small_model();
        let ups = [scalar_upload(0, 1.0, 1.0), random_upload(&model, 1, 3)];
        assert!(matches!(
            preliminary_aggregate(&ups, &[0.5, 0.5]),
            Err(FedFgError::LayoutMismatch(_))
        ));
    }

    #[test]
    fn zero_weight_uploads_cannot_poison_the_sum() {
        let ups = [scalar_upload(0, 1.0, 2.0), scalar_upload(1, f64::NAN, f64::INFINITY)];
        let out = weighted_sum(&ups, &[1.0, 0.0]).unwrap();
        assert_eq!(out, ups[0].public());
    }

    #[test]
    fn probes_are_reproducible() {
        let model = small_model();
        let g = model.generator.init_params(1);
        let sampler = SamplerConfig::default();
        let a = gen_probes(&g, &model.generator, 64, sampler, &mut seeded(5)).unwrap();
        let b = gen_probes(&g, &model.generator, 64, sampler, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn probe_labels_are_uniform() {
        let arch = ArchConfig {
            feature_dim: 2,
            field_hidden: vec![2],
            label_embed_dim: 1,
            ..ArchConfig::default()
        };
        let model = SplitModel::new(2, 10, &arch).unwrap();
        let g = model.generator.init_params(0);
        let probes = gen_probes(&g, &model.generator, 10_000, SamplerConfig { euler_steps: 1 }, &mut seeded(9)).unwrap();
        let mut counts = [0usize; 10];
        for &y in &probes.labels {
            counts[y] += 1;
        }
        for c in counts {
            let f = c as f64 / 1e4;
            assert!((0.08..=0.12).contains(&f), "class frequency {f}");
        }
    }

    #[test]
    fn zero_field_returns_the_prior_draw() {
        let model = small_model();
        let zero = ParamVector::zeros(model.generator.layout().clone());
        let probes = gen_probes(&zero, &model.generator, 20, SamplerConfig::default(), &mut seeded(2)).unwrap();
        // Sampling contract: label first, then the prior draw, per probe.
        let mut rng = seeded(2);
        for (h, &y) in probes.features.iter().zip(&probes.labels) {
            assert_eq!(rng.random_range(0..3), y);
            let z: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            assert_eq!(h, &z);
        }
    }

    #[test]
    fn gen_probes_rejects_zero_count() {
        let model = small_model();
        let g = model.generator.init_params(0);
        assert!(gen_probes(&g, &model.generator, 0, SamplerConfig::default(), &mut seeded(0)).is_err());
    }

    fn onehot(k: usize, hot: usize) -> Vec<f64> {
        (0..k).map(|i| if i == hot { 5.0 } else { 0.0 }).collect()
    }

    #[test]
    fn oracle_classifier_scores_one() {
        let labels = vec![0, 1, 2, 1];
        let logits = vec![labels.iter().map(|&y| onehot(3, y)).collect::<Vec<_>>()];
        let (s, alpha) = accuracy_scores_from_logits(&logits, &labels, 1e-12).unwrap();
        assert_eq!(s, vec![1.0]);
        assert!((alpha[0] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn relative_scores_example() {
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let nine_right: Vec<Vec<f64>> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| onehot(3, if i == 0 { (y + 1) % 3 } else { y }))
            .collect();
        let all_wrong: Vec<Vec<f64>> = labels.iter().map(|&y| onehot(3, (y + 1) % 3)).collect();
        let logits = vec![nine_right.clone(), nine_right, all_wrong];
        let (s, alpha) = accuracy_scores_from_logits(&logits, &labels, 1e-12).unwrap();
        assert_eq!(s, vec![0.9, 0.9, 0.0]);
        assert!((alpha[0] - 0.5).abs() < 1e-11 && (alpha[1] - 0.5).abs() < 1e-11);
        assert_eq!(alpha[2], 0.0);
    }

    #[test]
    fn all_zero_scores_do_not_blow_up() {
        let labels = vec![0, 0];
        let logits = vec![vec![onehot(2, 1); 2]; 3];
        let (s, alpha) = accuracy_scores_from_logits(&logits, &labels, 1e-12).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        assert_eq!(alpha, vec![0.0; 3]);
        assert!(accuracy_scores_from_logits(&logits, &[], 1e-12).is_err());
    }

    #[test]
    fn predictive_dist_examples() {
        let model = small_model();
        let zero = Upload {
            client_id: 0,
            generator: ParamVector::zeros(model.generator.layout().clone()),
            classifier: ParamVector::zeros(model.classifier.layout().clone()),
        };
        let p = predictive_dist(&model.classifier, &zero, &[1.0, -2.0, 0.5]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let p = robust_softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);

        let base = [0.3, -1.2, 2.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 17.0).collect();
        let (a, b) = (robust_softmax(&base), robust_softmax(&shifted));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn robust_softmax_handles_non_finite_logits() {
        assert_eq!(robust_softmax(&[f64::NAN, f64::NAN]), vec![0.5, 0.5]);
        assert_eq!(robust_softmax(&[f64::INFINITY, 0.0, f64::INFINITY]), vec![0.5, 0.0, 0.5]);
        assert_eq!(robust_softmax(&[f64::NAN, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let h = hellinger(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((h - (1.0 - 0.5f64.sqrt()).sqrt()).abs() < 1e-15);
        assert!((h - 0.5412).abs() < 1e-4);
        assert!(hellinger(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(hellinger(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn hellinger_is_a_metric_on_random_triples() {
        let mut rng = seeded(11);
        let mut draw = |k: usize| {
            let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let t: f64 = raw.iter().sum();
            raw.iter().map(|v| v / t).collect::<Vec<f64>>()
        };
        for i in 0..10_000 {
            let k = 2 + i % 9;
            let (p, q, r) = (draw(k), draw(k), draw(k));
            let pq = hellinger(&p, &q).unwrap();
            assert_eq!(pq, hellinger(&q, &p).unwrap());
            assert!((0.0..=1.0).contains(&pq));
            let pr = hellinger(&p, &r).unwrap();
            let rq = hellinger(&r, &q).unwrap();
            assert!(pq <= pr + rq + 1e-15, "triangle violated: {pq} > {pr} + {rq}");
        }
    }

    #[test]
    fn identical_clients_have_zero_outlier_score() {
        let one = dist_fixture(1, 7, 4, 3).pop().unwrap();
        let o = outlier_scores_from_dists(&vec![one; 4]).unwrap();
        assert_eq!(o, vec![0.0; 4]);
    }

    #[test]
    fn outlier_scores_disjoint_example() {
        let a = vec![vec![1.0, 0.0]; 5];
        let c = vec![vec![0.0, 1.0]; 5];
        let o = outlier_scores_from_dists(&[a.clone(), a, c]).unwrap();
        assert_eq!(o, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn outlier_scores_are_permutation_equivariant() {
        let dists = dist_fixture(5, 9, 3, 4);
        let o = outlier_scores_from_dists(&dists).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<_> = perm.iter().map(|&i| dists[i].clone()).collect();
        let op = outlier_scores_from_dists(&permuted).unwrap();
        for (slot, &i) in perm.iter().enumerate() {
            assert_eq!(op[slot], o[i]);
        }
        assert!(o.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn outlier_scores_need_two_clients() {
        assert!(outlier_scores_from_dists(&dist_fixture(1, 3, 2, 0)).is_err());
    }

    #[test]
    fn hampel_fixture() {
        let o = [0.1, 0.11, 0.12, 0.9];
        let h = hampel_threshold(&o, 3.0, 1e-12).unwrap();
        assert!((h.median - 0.115).abs() < 1e-15);
        assert!((h.mad - 0.01).abs() < 1e-11);
        assert!((h.tau - 0.159478).abs() < 1e-10);
        let flagged: Vec<usize> = (0..4).filter(|&i| o[i] > h.tau).collect();
        assert_eq!(flagged, vec![3]);
    }

    #[test]
    fn hampel_constant_scores_flag_nothing() {
        let o = [0.25; 6];
        let h = hampel_threshold(&o, 3.0, 1e-12).unwrap();
        assert_eq!(h.tau, 0.25 + 3.0 * MAD_CONSISTENCY * 1e-12);
        assert_eq!(detect(&o, &[1.0 / 6.0; 6], h.tau, 0.05).len(), 6);
        assert!(hampel_threshold(&[], 3.0, 1e-12).is_err());
    }

    #[test]
    fn detect_drops_the_outlier() {
        let o = [0.1, 0.11, 0.12, 0.9];
        let h = hampel_threshold(&o, 3.0, 1e-12).unwrap();
        assert_eq!(detect(&o, &[0.25; 4], h.tau, 0.125), vec![0, 1, 2]);
    }

    #[test]
    fn detect_drops_inaccurate_clients() {
        let o = [0.2, 0.2, 0.2];
        let (_, alpha) = accuracy_scores_from_logits(
            &[
                vec![onehot(2, 0); 4],
                vec![onehot(2, 0); 4],
                vec![onehot(2, 1); 4],
            ],
            &[0, 0, 0, 0],
            1e-12,
        )
        .unwrap();
        assert_eq!(detect(&o, &alpha, 0.3, 0.05), vec![0, 1]);
    }

    #[test]
    fn detect_filters_exact_boundaries() {
        assert_eq!(detect(&[0.5, 0.4], &[0.5, 0.5], 0.5, 0.1), vec![1]);
        assert_eq!(detect(&[0.1, 0.1], &[0.1, 0.5], 0.5, 0.1), vec![1]);
    }

    #[test]
    fn robust_aggregate_single_member() {
        let ups = [scalar_upload(0, 1.0, 2.0), scalar_upload(1, 5.0, -3.0)];
        let (model, alpha_bar) = robust_aggregate(&ups, &[1], &[0.4, 0.6], 1e-12).unwrap();
        assert!((model.generator.values()[0] - 5.0).abs() < 1e-10);
        assert!((model.classifier.values()[0] + 3.0).abs() < 1e-10);
        assert_eq!(alpha_bar[0], 0.0);
    }

    #[test]
    fn robust_aggregate_renormalizes_over_members() {
        let ups = [scalar_upload(0, 1.0, 0.0), scalar_upload(1, 0.0, 1.0), scalar_upload(2, 9.0, 9.0)];
        let (model, alpha_bar) = robust_aggregate(&ups, &[0, 1], &[0.3, 0.1, 0.6], 1e-12).unwrap();
        assert!((alpha_bar[0] - 0.75).abs() < 1e-11);
        assert!((alpha_bar[1] - 0.25).abs() < 1e-11);
        assert_eq!(alpha_bar[2], 0.0);
        assert!((model.generator.values()[0] - 0.75).abs() < 1e-11);
        assert!((model.classifier.values()[0] - 0.25).abs() < 1e-11);
    }

    #[test]
    fn excluded_uploads_do_not_matter() {
        let mut ups = vec![scalar_upload(0, 1.0, 0.5), scalar_upload(1, 2.0, 0.25), scalar_upload(2, 3.0, 3.0)];
        let alpha = [0.3, 0.3, 0.4];
        let (a, _) = robust_aggregate(&ups, &[0, 1], &alpha, 1e-12).unwrap();
        ups[2] = scalar_upload(2, f64::NAN, -1e300);
        let (b, _) = robust_aggregate(&ups, &[0, 1], &alpha, 1e-12).unwrap();
        assert_eq!(a.stacked(), b.stacked());
        assert!(robust_aggregate(&ups, &[], &alpha, 1e-12).is_err());
    }

    #[test]
    fn carry_weights_examples() {
        assert_eq!(carry_weights(&[0.25; 4]), vec![0.25; 4]);
        assert_eq!(carry_weights(&[0.5, 0.3, 0.2]), vec![0.5, 0.3, 0.2]);
        assert_eq!(carry_weights(&[0.4, 0.4, 0.0]), vec![0.5, 0.5, 0.0]);
        assert_eq!(carry_weights(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    fn round_fixture(n: usize) -> (SplitModel, Vec<Upload>, GlobalState) {
        let model = small_model();
        let ups: Vec<Upload> = (0..n).map(|i| random_upload(&model, i, 10 + i as u64)).collect();
        let sizes: Vec<usize> = (0..n).map(|i| 10 + 3 * i).collect();
        let state = GlobalState::new(ups[0].public(), &sizes).unwrap();
        (model, ups, state)
    }

    #[test]
    fn round_scoreboard_invariants() {
        let (model, ups, mut state) = round_fixture(6);
        let server = Server::new(&model, ServerConfig { probe_count: 64, kappa: Some(0.0), ..ServerConfig::default() });
        let board = server.round(&mut state, &ups, &mut seeded(1)).unwrap();
        assert!(board.s.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(board.o.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(board.alpha.iter().sum::<f64>() <= 1.0 + 1e-12);
        let flagged = board.flagged();
        for i in 0..6 {
            assert_ne!(flagged[i], board.benign.contains(&i));
        }
        if !board.benign.is_empty() {
            assert!((board.alpha_bar.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(board.alpha_bar.iter().all(|&a| a >= 0.0));
            assert!((state.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn round_is_permutation_equivariant() {
        let (model, ups, state) = round_fixture(5);
        let server = Server::new(&model, ServerConfig { probe_count: 48, kappa: Some(0.0), ..ServerConfig::default() });
        let mut s1 = state.clone();
        let b1 = server.round(&mut s1, &ups, &mut seeded(3)).unwrap();

        let perm = [2, 4, 0, 1, 3];
        let permuted: Vec<Upload> = perm
            .iter()
            .enumerate()
            .map(|(slot, &i)| Upload { client_id: slot, ..ups[i].clone() })
            .collect();
        let mut s2 = GlobalState {
            model: state.model.clone(),
            weights: perm.iter().map(|&i| state.weights[i]).collect(),
        };
        let b2 = server.round(&mut s2, &permuted, &mut seeded(3)).unwrap();

        for (slot, &i) in perm.iter().enumerate() {
            assert_eq!(b2.s[slot], b1.s[i]);
            assert_eq!(b2.alpha[slot], b1.alpha[i]);
            assert_eq!(b2.o[slot], b1.o[i]);
            assert_eq!(b2.alpha_bar[slot], b1.alpha_bar[i]);
            assert_eq!(b2.benign.contains(&slot), b1.benign.contains(&i));
            assert_eq!(s2.weights[slot], s1.weights[i]);
        }
        assert_eq!(b1.tau, b2.tau);
        assert_eq!(s1.model.stacked(), s2.model.stacked());
    }

    #[test]
    fn empty_benign_set_keeps_globals() {
        let (model, ups, mut state) = round_fixture(4);
        let before = state.model.clone();
        let server = Server::new(&model, ServerConfig { probe_count: 16, kappa: Some(0.999), ..ServerConfig::default() });
        let board = server.round(&mut state, &ups, &mut seeded(0)).unwrap();
        assert!(board.degenerate && board.benign.is_empty());
        assert_eq!(state.model, before);
        assert_eq!(state.weights, vec![0.25; 4]);
        assert!(board.flagged().iter().all(|&f| f));
    }

    #[test]
    fn round_validates_uploads() {
        let (model, mut ups, mut state) = round_fixture(3);
        let server = Server::new(&model, ServerConfig::default());
        ups.swap(0, 1);
        assert!(server.round(&mut state, &ups, &mut seeded(0)).is_err());
        assert!(server.round(&mut state, &ups[..1], &mut seeded(0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ServerConfig::default().validate().is_ok());
        assert_eq!(ServerConfig::default().kappa_for(10), 0.05);
        for bad in [
            ServerConfig { gamma: 0.0, ..ServerConfig::default() },
            ServerConfig { kappa: Some(1.0), ..ServerConfig::default() },
            ServerConfig { probe_count: 0, ..ServerConfig::default() },
            ServerConfig { eps_stab: 0.0, ..ServerConfig::default() },
            ServerConfig { sigma: -1.0, ..ServerConfig::default() },
            ServerConfig { euler_steps: 0, ..ServerConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn activation_default_is_tanh_for_the_field() {
        assert_eq!(ArchConfig::default().field_activation, Activation::Tanh);
    }
}
