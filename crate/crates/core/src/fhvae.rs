//! Factorized hierarchical VAE over fixed-length segments.
//!
//! Two latent levels: z1 captures segment-level content, z2 captures
//! sequence-level factors pulled toward a per-sequence s-vector prior mean.
//! The discriminative segmental lower bound adds a term that classifies the
//! owning sequence from the z2 posterior mean, which keeps z2 from
//! collapsing to a shared value. Reconstruction with s-vector unification
//! shifts z2 toward a representative speaker before decoding, producing
//! speaker-invariant features.
//!
//! Encoders and decoder are feedforward nets over flattened segments; all
//! gradients are exact and checked against finite differences in the tests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_segments, Corpus, Utterance};
use crate::error::{AudError, Result};
use crate::io::Checkpoint;
use crate::nnkit::{
    adam_step, log_sum_exp, AdamState, Activation, LayerSpec, NetParams,
};

#[derive(Debug, Clone)]
pub struct FhvaeConfig {
    pub z1_dim: usize,
    pub z2_dim: usize,
    /// Prior variance of the s-vector.
    pub var_mu2: f64,
    /// Prior variance of z1.
    pub var_z1: f64,
    /// Prior variance of z2 around its s-vector.
    pub var_z2: f64,
    /// Weight of the sequence-discriminative term.
    pub alpha_dis: f64,
    pub seg_len: usize,
    /// Hidden layer widths shared by both encoders and the decoder.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Shift between training segments (1 = fully overlapping).
    pub train_shift: usize,
    /// Probability of decoding a training segment from z2 alone (z1 zeroed).
    ///
    /// Without this the decoder can explain every segment from z1 — whose
    /// encoder sees the raw input — and never learns to route the
    /// sequence-level factor through z2, which makes s-vector unification a
    /// no-op. On dropped segments the decoder receives a z1 prior draw, so
    /// it must reconstruct the predictable sequence-level component from z2.
    pub z1_dropout: f64,
}

impl Default for FhvaeConfig {
    fn default() -> Self {
        Self {
            z1_dim: 32,
            z2_dim: 32,
            var_mu2: 1.0,
            var_z1: 1.0,
            var_z2: 0.25,
            alpha_dis: 10.0,
            seg_len: 10,
            hidden: vec![256, 256],
            epochs: 15,
            batch_size: 32,
            lr: 1e-3,
            train_shift: 5,
            z1_dropout: 0.5,
        }
    }
}

impl FhvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.var_mu2 <= 0.0 || self.var_z1 <= 0.0 || self.var_z2 <= 0.0 {
            return Err(AudError::Parameter("variances must be positive".into()));
        }
        if self.alpha_dis < 0.0 {
            return Err(AudError::Parameter("alpha_dis must be nonnegative".into()));
        }
        if self.z1_dim == 0 || self.z2_dim == 0 || self.seg_len == 0 {
            return Err(AudError::Parameter("dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.z1_dropout) {
            return Err(AudError::Parameter("z1_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianParams {
    fn split(raw: &[f64]) -> Self {
        let half = raw.len() / 2;
        Self { mean: raw[..half].to_vec(), logvar: raw[half..].to_vec() }
    }
}

#[derive(Debug, Clone)]
pub struct FhvaeModel {
    pub config: FhvaeConfig,
    pub feat_dim: usize,
    /// segment -> (mean, logvar) of z2
    pub z2_encoder: NetParams,
    /// segment ++ z2 -> (mean, logvar) of z1
    pub z1_encoder: NetParams,
    /// z1 -> (mean, logvar) over the segment
    pub decoder: NetParams,
    /// Linear z2 -> segment-mean offset added to the decoder mean output.
    ///
    /// z2 reaches the observation only through this path, so the decoder
    /// factorizes into content from z1 plus a linear sequence-level offset
    /// from z2. Shifting z2 between s-vectors then translates the output
    /// exactly, without driving the content network off its training
    /// distribution.
    pub z2_skip: NetParams,
    /// Posterior mean of the s-vector per training sequence.
    pub svector_table: BTreeMap<String, Vec<f64>>,
    /// Segments per training sequence (weights the s-vector prior term).
    pub seq_seg_counts: BTreeMap<String, usize>,
}

fn mlp_specs(in_dim: usize, hidden: &[usize], out_dim: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = in_dim;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, Activation::Sigmoid));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, out_dim, Activation::Linear));
    specs
}

impl FhvaeModel {
    pub fn init(config: FhvaeConfig, feat_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let seg_dim = config.seg_len * feat_dim;
        let z2_encoder =
            NetParams::init(&mlp_specs(seg_dim, &config.hidden, 2 * config.z2_dim), rng)?;
        let z1_encoder = NetParams::init(
            &mlp_specs(seg_dim + config.z2_dim, &config.hidden, 2 * config.z1_dim),
            rng,
        )?;
        let decoder =
            NetParams::init(&mlp_specs(config.z1_dim, &config.hidden, 2 * seg_dim), rng)?;
        let z2_skip =
            NetParams::init(&[LayerSpec::new(config.z2_dim, seg_dim, Activation::Linear)], rng)?;
        Ok(Self {
            config,
            feat_dim,
            z2_encoder,
            z1_encoder,
            decoder,
            z2_skip,
            svector_table: BTreeMap::new(),
            seq_seg_counts: BTreeMap::new(),
        })
    }

    pub fn seg_dim(&self) -> usize {
        self.config.seg_len * self.feat_dim
    }

    /// Posterior parameters of z2 and of z1 evaluated at the z2 posterior
    /// mean.
    pub fn encode(&self, segment: &[f64]) -> Result<(GaussianParams, GaussianParams)> {
        if segment.len() != self.seg_dim() {
            return Err(AudError::DimMismatch { expected: self.seg_dim(), got: segment.len() });
        }
        let (z2_raw, _) = self.z2_encoder.forward(segment)?;
        let z2 = GaussianParams::split(&z2_raw);
        let mut joint = segment.to_vec();
        joint.extend_from_slice(&z2.mean);
        let (z1_raw, _) = self.z1_encoder.forward(&joint)?;
        Ok((z2, GaussianParams::split(&z1_raw)))
    }

    /// Decodes latents to the mean/logvar of a diagonal Gaussian over the
    /// flattened segment.
    pub fn decode(&self, z1: &[f64], z2: &[f64]) -> Result<GaussianParams> {
        if z1.len() != self.config.z1_dim || z2.len() != self.config.z2_dim {
            return Err(AudError::DimMismatch {
                expected: self.config.z1_dim + self.config.z2_dim,
                got: z1.len() + z2.len(),
            });
        }
        let (mut raw, _) = self.decoder.forward(z1)?;
        let (skip, _) = self.z2_skip.forward(z2)?;
        for (r, sk) in raw.iter_mut().zip(&skip) {
            *r += sk;
        }
        Ok(GaussianParams::split(&raw))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            nets: vec![
                ("z2_encoder".into(), self.z2_encoder.clone()),
                ("z1_encoder".into(), self.z1_encoder.clone()),
                ("decoder".into(), self.decoder.clone()),
                ("z2_skip".into(), self.z2_skip.clone()),
            ],
            tables: vec![
                ("svectors".into(), self.svector_table.clone()),
                (
                    "seq_seg_counts".into(),
                    self.seq_seg_counts
                        .iter()
                        .map(|(k, &v)| (k.clone(), vec![v as f64]))
                        .collect(),
                ),
            ],
        }
    }

    pub fn from_checkpoint(config: FhvaeConfig, feat_dim: usize, ckpt: &Checkpoint) -> Result<Self> {
        let find_net = |name: &str| {
            ckpt.nets
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, net)| net.clone())
                .ok_or_else(|| AudError::Parameter(format!("checkpoint missing net {name}")))
        };
        let find_table = |name: &str| {
            ckpt.tables
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| AudError::Parameter(format!("checkpoint missing table {name}")))
        };
        Ok(Self {
            config,
            feat_dim,
            z2_encoder: find_net("z2_encoder")?,
            z1_encoder: find_net("z1_encoder")?,
            decoder: find_net("decoder")?,
            z2_skip: find_net("z2_skip")?,
            svector_table: find_table("svectors")?,
            seq_seg_counts: find_table("seq_seg_counts")?
                .into_iter()
                .map(|(k, v)| (k, v[0].round() as usize))
                .collect(),
        })
    }
}

/// One reparameterization noise draw per segment.
#[derive(Debug, Clone)]
pub struct SegNoise {
    pub eps2: Vec<f64>,
    pub eps1: Vec<f64>,
    /// When false the decoder sees a z1 prior draw for this segment instead
    /// of the posterior sample; the z1 KL terms still apply.
    pub keep_z1: bool,
}

impl SegNoise {
    pub fn zeros(config: &FhvaeConfig) -> Self {
        Self { eps2: vec![0.0; config.z2_dim], eps1: vec![0.0; config.z1_dim], keep_z1: true }
    }

    pub fn sample(config: &FhvaeConfig, rng: &mut ChaCha8Rng) -> Self {
        let gauss = |rng: &mut ChaCha8Rng| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut n = Self {
            eps2: (0..config.z2_dim).map(|_| gauss(rng)).collect(),
            eps1: (0..config.z1_dim).map(|_| gauss(rng)).collect(),
            keep_z1: true,
        };
        n.keep_z1 = rng.gen::<f64>() >= config.z1_dropout;
        n
    }
}

/// Gradients of the lower bound (ascent direction) for every trainable
/// quantity.
pub struct FhvaeGrads {
    pub z2_encoder: NetParams,
    pub z1_encoder: NetParams,
    pub decoder: NetParams,
    pub z2_skip: NetParams,
    pub table: BTreeMap<String, Vec<f64>>,
}

struct TermAccum {
    reconstruction: f64,
    kl_z1: f64,
    kl_z2: f64,
    log_p_mu2: f64,
    discriminative: f64,
}

/// Mean discriminative segmental lower bound over a batch and its exact
/// gradients.
///
/// Per segment with owning sequence s and table entries t_j:
///   L = E_q[log p(x|z1,z2)] - KL(q(z1|x,z2) || p(z1))
///       - KL(q(z2|x) || p(z2|t_s)) + log p(t_s)/N_s + alpha * log p(s|z2)
/// with log p(s|z2) the softmax over -||mu_z2 - t_j||^2 / (2 var_z2).
pub fn lower_bound(
    model: &FhvaeModel,
    batch: &[(Vec<f64>, String)],
    noise: &[SegNoise],
) -> Result<(f64, FhvaeGrads)> {
    if batch.is_empty() {
        return Err(AudError::Parameter("empty batch".into()));
    }
    if batch.len() != noise.len() {
        return Err(AudError::Parameter("noise length must match batch".into()));
    }
    let cfg = &model.config;
    let table_ids: Vec<&String> = model.svector_table.keys().collect();
    let mut grads = FhvaeGrads {
        z2_encoder: model.z2_encoder.zeros_like(),
        z1_encoder: model.z1_encoder.zeros_like(),
        decoder: model.decoder.zeros_like(),
        z2_skip: model.z2_skip.zeros_like(),
        table: model
            .svector_table
            .iter()
            .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
            .collect(),
    };
    let mut total = 0.0;
    let inv_b = 1.0 / batch.len() as f64;

    for ((segment, seq_id), eps) in batch.iter().zip(noise) {
        let t_s = model
            .svector_table
            .get(seq_id)
            .ok_or_else(|| AudError::UnknownSequence(seq_id.clone()))?;
        let n_s = *model.seq_seg_counts.get(seq_id).unwrap_or(&1) as f64;

        // Forward.
        let (z2_raw, z2_cache) = model.z2_encoder.forward(segment)?;
        let z2p = GaussianParams::split(&z2_raw);
        let z2: Vec<f64> = z2p
            .mean
            .iter()
            .zip(&z2p.logvar)
            .zip(&eps.eps2)
            .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
            .collect();
        let mut joint1 = segment.clone();
        joint1.extend_from_slice(&z2);
        let (z1_raw, z1_cache) = model.z1_encoder.forward(&joint1)?;
        let z1p = GaussianParams::split(&z1_raw);
        let z1: Vec<f64> = z1p
            .mean
            .iter()
            .zip(&z1p.logvar)
            .zip(&eps.eps1)
            .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
            .collect();
        // Dropped segments decode from a z1 prior draw rather than zeros so
        // the decoder cannot detect the dropout and selectively inflate its
        // output variance; it has to explain the predictable part from z2.
        let joint_dec: Vec<f64> = if eps.keep_z1 {
            z1.clone()
        } else {
            eps.eps1.iter().map(|e| e * cfg.var_z1.sqrt()).collect()
        };
        let (mut dec_raw, dec_cache) = model.decoder.forward(&joint_dec)?;
        let (skip_out, skip_cache) = model.z2_skip.forward(&z2)?;
        for (r, sk) in dec_raw.iter_mut().zip(&skip_out) {
            *r += sk;
        }
        let xp = GaussianParams::split(&dec_raw);

        let terms = segment_terms(cfg, segment, t_s, n_s, &z2p, &z1p, &xp, &table_ids, model);
        total += terms.reconstruction - terms.kl_z1 - terms.kl_z2
            + terms.log_p_mu2 / n_s
            + cfg.alpha_dis * terms.discriminative;

        // Backward: all gradients are of L (ascent).
        // Reconstruction w.r.t. decoder outputs.
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let _ = ln2pi;
        let mut dec_out_grad = vec![0.0; dec_raw.len()];
        let seg_dim = segment.len();
        for d in 0..seg_dim {
            let inv_var = (-xp.logvar[d]).exp();
            let diff = segment[d] - xp.mean[d];
            dec_out_grad[d] = diff * inv_var;
            dec_out_grad[seg_dim + d] = -0.5 + 0.5 * diff * diff * inv_var;
        }
        let (dec_grads, dec_in_grad) = model.decoder.backward(&dec_cache, &dec_out_grad);
        grads.decoder.add_scaled(&dec_grads, inv_b);
        let g_z1 = &dec_in_grad;
        let (skip_grads, skip_in_grad) =
            model.z2_skip.backward(&skip_cache, &dec_out_grad[..seg_dim]);
        grads.z2_skip.add_scaled(&skip_grads, inv_b);

        // z1 head: reparameterization plus -KL(z1) terms. When z1 was
        // dropped the decoder input does not depend on the z1 head, so only
        // the KL terms flow back.
        let mut z1_out_grad = vec![0.0; z1_raw.len()];
        for j in 0..cfg.z1_dim {
            let g = if eps.keep_z1 { g_z1[j] } else { 0.0 };
            z1_out_grad[j] = g - z1p.mean[j] / cfg.var_z1;
            z1_out_grad[cfg.z1_dim + j] = g * eps.eps1[j] * 0.5 * (z1p.logvar[j] / 2.0).exp()
                - 0.5 * ((z1p.logvar[j].exp()) / cfg.var_z1 - 1.0);
        }
        let (z1_grads, z1_in_grad) = model.z1_encoder.backward(&z1_cache, &z1_out_grad);
        grads.z1_encoder.add_scaled(&z1_grads, inv_b);
        let g_z2_from_z1 = &z1_in_grad[seg_dim..];

        // Softmax over the discriminative logits.
        let logits: Vec<f64> = table_ids
            .iter()
            .map(|id| {
                let t = &model.svector_table[*id];
                -sq_dist(&z2p.mean, t) / (2.0 * cfg.var_z2)
            })
            .collect();
        let lse = log_sum_exp(&logits);
        let probs: Vec<f64> = logits.iter().map(|&a| (a - lse).exp()).collect();

        // z2 head.
        let mut z2_out_grad = vec![0.0; z2_raw.len()];
        for j in 0..cfg.z2_dim {
            let g_z2 = g_z2_from_z1[j] + skip_in_grad[j];
            // Discriminative gradient w.r.t. the z2 posterior mean.
            let mut disc = -(z2p.mean[j] - t_s[j]);
            for (p, id) in probs.iter().zip(&table_ids) {
                disc += p * (z2p.mean[j] - model.svector_table[*id][j]);
            }
            disc /= cfg.var_z2;
            z2_out_grad[j] =
                g_z2 - (z2p.mean[j] - t_s[j]) / cfg.var_z2 + cfg.alpha_dis * disc;
            z2_out_grad[cfg.z2_dim + j] = g_z2 * eps.eps2[j] * 0.5 * (z2p.logvar[j] / 2.0).exp()
                - 0.5 * ((z2p.logvar[j].exp()) / cfg.var_z2 - 1.0);
        }
        let (z2_grads, _) = model.z2_encoder.backward(&z2_cache, &z2_out_grad);
        grads.z2_encoder.add_scaled(&z2_grads, inv_b);

        // Table gradients.
        for ((id, p), logit_idx) in table_ids.iter().zip(&probs).zip(0..) {
            let _ = logit_idx;
            let t_j = &model.svector_table[*id];
            let g = grads.table.get_mut(*id).unwrap();
            for j in 0..cfg.z2_dim {
                let mut dv = -cfg.alpha_dis * p * (z2p.mean[j] - t_j[j]) / cfg.var_z2;
                if *id == seq_id {
                    // -KL(z2) pulls t_s toward the posterior mean; the prior
                    // and the discriminative target term add on top.
                    dv += (z2p.mean[j] - t_s[j]) / cfg.var_z2;
                    dv += -t_s[j] / (cfg.var_mu2 * n_s);
                    dv += cfg.alpha_dis * (z2p.mean[j] - t_s[j]) / cfg.var_z2;
                }
                g[j] += inv_b * dv;
            }
        }
    }
    Ok((total * inv_b, grads))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[allow(clippy::too_many_arguments)]
fn segment_terms(
    cfg: &FhvaeConfig,
    segment: &[f64],
    t_s: &[f64],
    _n_s: f64,
    z2p: &GaussianParams,
    z1p: &GaussianParams,
    xp: &GaussianParams,
    table_ids: &[&String],
    model: &FhvaeModel,
) -> TermAccum {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let reconstruction: f64 = segment
        .iter()
        .zip(&xp.mean)
        .zip(&xp.logvar)
        .map(|((x, m), lv)| -0.5 * (ln2pi + lv + (x - m) * (x - m) * (-lv).exp()))
        .sum();
    let kl_z1: f64 = z1p
        .mean
        .iter()
        .zip(&z1p.logvar)
        .map(|(m, lv)| {
            0.5 * ((m * m + lv.exp()) / cfg.var_z1 - 1.0 - lv + cfg.var_z1.ln())
        })
        .sum();
    let kl_z2: f64 = z2p
        .mean
        .iter()
        .zip(&z2p.logvar)
        .zip(t_s)
        .map(|((m, lv), t)| {
            0.5 * (((m - t) * (m - t) + lv.exp()) / cfg.var_z2 - 1.0 - lv + cfg.var_z2.ln())
        })
        .sum();
    let log_p_mu2: f64 = t_s
        .iter()
        .map(|t| -0.5 * ((2.0 * std::f64::consts::PI * cfg.var_mu2).ln() + t * t / cfg.var_mu2))
        .sum();
    let logits: Vec<f64> = table_ids
        .iter()
        .map(|id| -sq_dist(&z2p.mean, &model.svector_table[*id]) / (2.0 * cfg.var_z2))
        .collect();
    let own = -sq_dist(&z2p.mean, t_s) / (2.0 * cfg.var_z2);
    let discriminative = own - log_sum_exp(&logits);
    TermAccum { reconstruction, kl_z1, kl_z2, log_p_mu2, discriminative }
}

/// Closed-form KL between a diagonal Gaussian posterior and a diagonal
/// Gaussian prior with the given mean and variance.
pub fn diag_gaussian_kl(q: &GaussianParams, prior_mean: &[f64], prior_var: f64) -> f64 {
    q.mean
        .iter()
        .zip(&q.logvar)
        .zip(prior_mean)
        .map(|((m, lv), pm)| {
            0.5 * (((m - pm) * (m - pm) + lv.exp()) / prior_var - 1.0 - lv + prior_var.ln())
        })
        .sum()
}

/// Training sequences: utterances of one speaker concatenated in corpus
/// order.
pub fn speaker_sequences(corpus: &Corpus) -> Vec<(String, Vec<Vec<f64>>)> {
    corpus
        .speakers
        .iter()
        .map(|spk| {
            let mut frames = Vec::new();
            for utt in corpus.utterances_of(spk) {
                frames.extend(utt.frames.iter().cloned());
            }
            (spk.clone(), frames)
        })
        .collect()
}

fn sequence_segments(
    frames: &[Vec<f64>],
    seg_len: usize,
    shift: usize,
) -> Vec<Vec<f64>> {
    let mut segments = Vec::new();
    if frames.len() < seg_len {
        return segments;
    }
    let mut start = 0;
    while start + seg_len <= frames.len() {
        let mut data = Vec::with_capacity(seg_len * frames[0].len());
        for f in &frames[start..start + seg_len] {
            data.extend_from_slice(f);
        }
        segments.push(data);
        start += shift;
    }
    segments
}

pub struct TrainStats {
    pub heldout_lb: Vec<f64>,
    pub best_epoch: usize,
}

/// Trains on per-speaker sequences; the s-vector table is updated jointly
/// with the networks by gradient ascent. Returns the parameters from the
/// epoch with the best held-out lower bound.
pub fn train_fhvae(
    corpus: &Corpus,
    config: FhvaeConfig,
    seed: u64,
) -> Result<(FhvaeModel, TrainStats)> {
    if corpus.speakers.len() < 2 {
        return Err(AudError::Parameter("need at least 2 speakers".into()));
    }
    config.validate()?;
    let feat_dim = corpus.utterances[0].feat_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = FhvaeModel::init(config, feat_dim, &mut rng)?;
    let cfg = model.config.clone();

    let mut all: Vec<(Vec<f64>, String)> = Vec::new();
    for (seq_id, frames) in speaker_sequences(corpus) {
        let segments = sequence_segments(&frames, cfg.seg_len, cfg.train_shift);
        if segments.is_empty() {
            continue;
        }
        model.seq_seg_counts.insert(seq_id.clone(), segments.len());
        model.svector_table.insert(seq_id.clone(), vec![0.0; cfg.z2_dim]);
        for s in segments {
            all.push((s, seq_id.clone()));
        }
    }
    if model.svector_table.len() < 2 {
        return Err(AudError::Parameter("need at least 2 usable sequences".into()));
    }

    // Held-out split: every 10th segment.
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (i, item) in all.into_iter().enumerate() {
        if i % 10 == 9 {
            heldout.push(item);
        } else {
            train.push(item);
        }
    }
    if heldout.is_empty() {
        heldout.push(train[train.len() - 1].clone());
    }

    let mut adam_z2 = AdamState::new(&model.z2_encoder);
    let mut adam_z1 = AdamState::new(&model.z1_encoder);
    let mut adam_dec = AdamState::new(&model.decoder);
    let mut adam_skip = AdamState::new(&model.z2_skip);
    let mut table_m: BTreeMap<String, (Vec<f64>, Vec<f64>)> = model
        .svector_table
        .keys()
        .map(|k| (k.clone(), (vec![0.0; cfg.z2_dim], vec![0.0; cfg.z2_dim])))
        .collect();
    let mut table_step = 0u64;

    let eval_lb = |model: &FhvaeModel, set: &[(Vec<f64>, String)]| -> f64 {
        let noise: Vec<SegNoise> = set.iter().map(|_| SegNoise::zeros(&cfg)).collect();
        lower_bound(model, set, &noise).map(|(lb, _)| lb).unwrap_or(f64::NEG_INFINITY)
    };

    let mut stats = TrainStats { heldout_lb: Vec::new(), best_epoch: 0 };
    let mut best_lb = f64::NEG_INFINITY;
    let mut best_model = model.clone();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(Vec<f64>, String)> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let noise: Vec<SegNoise> =
                batch.iter().map(|_| SegNoise::sample(&cfg, &mut rng)).collect();
            let (_, grads) = lower_bound(&model, &batch, &noise)?;
            // Ascent: negate for the minimizing optimizer.
            let mut neg = grads;
            neg.z2_encoder.scale(-1.0);
            neg.z1_encoder.scale(-1.0);
            neg.decoder.scale(-1.0);
            neg.z2_skip.scale(-1.0);
            adam_step(&mut model.z2_encoder, &neg.z2_encoder, &mut adam_z2, cfg.lr);
            adam_step(&mut model.z1_encoder, &neg.z1_encoder, &mut adam_z1, cfg.lr);
            adam_step(&mut model.decoder, &neg.decoder, &mut adam_dec, cfg.lr);
            adam_step(&mut model.z2_skip, &neg.z2_skip, &mut adam_skip, cfg.lr);
            table_step += 1;
            adam_table(&mut model.svector_table, &neg.table, &mut table_m, table_step, cfg.lr);
        }
        let lb = eval_lb(&model, &heldout);
        stats.heldout_lb.push(lb);
        if lb > best_lb {
            best_lb = lb;
            stats.best_epoch = epoch;
            best_model = model.clone();
        }
    }
    Ok((best_model, stats))
}

fn adam_table(
    table: &mut BTreeMap<String, Vec<f64>>,
    neg_grads: &BTreeMap<String, Vec<f64>>,
    moments: &mut BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    step: u64,
    lr: f64,
) {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let t = step as f64;
    let bc1 = 1.0 - b1f(b1, t);
    let bc2 = 1.0 - b1f(b2, t);
    for (id, entry) in table.iter_mut() {
        let g = &neg_grads[id];
        let (m, v) = moments.get_mut(id).unwrap();
        for j in 0..entry.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            entry[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
        }
    }
}

fn b1f(b: f64, t: f64) -> f64 {
    b.powf(t)
}

/// MAP estimate of the s-vector for an unseen sequence from its segments'
/// z2 posterior means.
pub fn infer_svector_map(model: &FhvaeModel, segments: &[Vec<f64>]) -> Result<Vec<f64>> {
    if segments.is_empty() {
        return Err(AudError::Parameter("need at least one segment".into()));
    }
    let cfg = &model.config;
    let mut sum = vec![0.0; cfg.z2_dim];
    for seg in segments {
        let (z2, _) = model.encode(seg)?;
        for (s, m) in sum.iter_mut().zip(&z2.mean) {
            *s += m;
        }
    }
    let denom = segments.len() as f64 + cfg.var_z2 / cfg.var_mu2;
    Ok(sum.into_iter().map(|s| s / denom).collect())
}

/// S-vector of the sequence an utterance belongs to, as the MAP estimate
/// from its own segments' z2 posteriors.
///
/// The trained table entries are anchors for the discriminative term and can
/// sit away from the realized z2 posterior means, so reconstruction always
/// re-estimates the s-vector from the data.
pub fn sequence_svector(model: &FhvaeModel, utt: &Utterance) -> Result<Vec<f64>> {
    let segs = make_segments(utt, model.config.seg_len, 1)?
        .ok_or_else(|| AudError::Parameter(format!("utterance {} too short", utt.utt_id)))?;
    infer_svector_map(model, &segs.iter().map(|s| s.data.clone()).collect::<Vec<_>>())
}

/// MAP s-vector of a speaker pooled over all of their utterances.
pub fn speaker_svector_map(model: &FhvaeModel, corpus: &Corpus, speaker: &str) -> Result<Vec<f64>> {
    let mut segs: Vec<Vec<f64>> = Vec::new();
    for utt in corpus.utterances_of(speaker) {
        if let Some(us) = make_segments(utt, model.config.seg_len, 1)? {
            segs.extend(us.into_iter().map(|s| s.data));
        }
    }
    infer_svector_map(model, &segs)
}

/// The training speaker with the most frames; its s-vector is the
/// unification target.
pub fn representative_speaker(corpus: &Corpus) -> Result<String> {
    corpus
        .speakers
        .iter()
        .map(|spk| {
            let frames: usize = corpus.utterances_of(spk).map(|u| u.n_frames()).sum();
            (spk.clone(), frames)
        })
        .max_by_key(|&(_, frames)| frames)
        .map(|(spk, _)| spk)
        .ok_or_else(|| AudError::Parameter("empty corpus".into()))
}

/// Reconstructs an utterance with its z2 shifted onto the target s-vector.
///
/// Segments are shifted by one frame; each output frame is taken from the
/// decoded segment whose center covers it, with the first and last segment
/// reused toward the edges so the frame count is preserved.
pub fn reconstruct_unified(
    model: &FhvaeModel,
    utt: &Utterance,
    target_svector: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let seg_len = model.config.seg_len;
    let segs = make_segments(utt, seg_len, 1)?
        .ok_or_else(|| AudError::Parameter(format!("utterance {} too short", utt.utt_id)))?;
    let own_sv = sequence_svector(model, utt)?;
    let n_frames = utt.n_frames();
    let n_segs = segs.len();
    let center = seg_len / 2;

    let mut decoded: Vec<Option<Vec<f64>>> = vec![None; n_segs];
    let decode_seg = |model: &FhvaeModel, data: &[f64]| -> Result<Vec<f64>> {
        let (z2, z1) = model.encode(data)?;
        let shifted: Vec<f64> = z2
            .mean
            .iter()
            .zip(&own_sv)
            .zip(target_svector)
            .map(|((z, own), tgt)| z - own + tgt)
            .collect();
        let out = model.decode(&z1.mean, &shifted)?;
        Ok(out.mean)
    };

    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let seg_idx = t.saturating_sub(center).min(n_segs - 1);
        if decoded[seg_idx].is_none() {
            decoded[seg_idx] = Some(decode_seg(model, &segs[seg_idx].data)?);
        }
        let mean = decoded[seg_idx].as_ref().unwrap();
        let row_in_seg = t - seg_idx;
        debug_assert!(row_in_seg < seg_len);
        let d = model.feat_dim;
        frames.push(mean[row_in_seg * d..(row_in_seg + 1) * d].to_vec());
    }
    Ok(frames)
}

/// Reconstructs every utterance of a corpus against the representative
/// speaker's s-vector.
pub fn reconstruct_corpus(model: &FhvaeModel, corpus: &Corpus) -> Result<Corpus> {
    let rep = representative_speaker(corpus)?;
    let target = speaker_svector_map(model, corpus, &rep)?;
    let mut out = corpus.clone();
    for utt in out.utterances.iter_mut() {
        utt.frames = reconstruct_unified(model, utt, &target)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> FhvaeConfig {
        FhvaeConfig {
            z1_dim: 2,
            z2_dim: 2,
            var_mu2: 1.0,
            var_z1: 1.0,
            var_z2: 0.25,
            alpha_dis: 10.0,
            seg_len: 2,
            hidden: vec![5],
            epochs: 1,
            batch_size: 4,
            lr: 1e-3,
            train_shift: 1,
            z1_dropout: 0.5,
        }
    }

    fn tiny_model(seed: u64) -> FhvaeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = FhvaeModel::init(tiny_config(), 3, &mut rng).unwrap();
        for (i, id) in ["seq_a", "seq_b", "seq_c"].iter().enumerate() {
            let sv: Vec<f64> = (0..2).map(|j| 0.3 * (i as f64 + 1.0) - 0.2 * j as f64).collect();
            model.svector_table.insert(id.to_string(), sv);
            model.seq_seg_counts.insert(id.to_string(), 4);
        }
        model
    }

    fn rand_segment(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn encode_is_deterministic_with_expected_dims() {
        let model = tiny_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seg = rand_segment(&mut rng, model.seg_dim());
        let (z2a, z1a) = model.encode(&seg).unwrap();
        let (z2b, z1b) = model.encode(&seg).unwrap();
        assert_eq!(z2a.mean, z2b.mean);
        assert_eq!(z1a.mean, z1b.mean);
        assert_eq!(z2a.mean.len(), model.config.z2_dim);
        assert_eq!(z1a.mean.len(), model.config.z1_dim);
        assert!(model.encode(&seg[1..]).is_err());
    }

    #[test]
    fn default_latent_dims_are_32() {
        let cfg = FhvaeConfig::default();
        assert_eq!(cfg.z1_dim, 32);
        assert_eq!(cfg.z2_dim, 32);
    }

    #[test]
    fn decode_shape_and_determinism() {
        let model = tiny_model(3);
        let out = model.decode(&[0.1, -0.2], &[0.3, 0.4]).unwrap();
        assert_eq!(out.mean.len(), model.seg_dim());
        assert_eq!(out.logvar.len(), model.seg_dim());
        let again = model.decode(&[0.1, -0.2], &[0.3, 0.4]).unwrap();
        assert_eq!(out.mean, again.mean);
    }

    #[test]
    fn kl_closed_form_cases() {
        let q = GaussianParams { mean: vec![0.0; 3], logvar: vec![0.0; 3] };
        assert!(diag_gaussian_kl(&q, &[0.0; 3], 1.0).abs() < 1e-12);
        let q = GaussianParams { mean: vec![1.0; 4], logvar: vec![0.0; 4] };
        assert!((diag_gaussian_kl(&q, &[0.0; 4], 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gauss = |rng: &mut ChaCha8Rng| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        for _ in 0..3 {
            let dim = 3;
            let q = GaussianParams {
                mean: (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                logvar: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let prior_mean: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let prior_var = rng.gen_range(0.2..2.0);
            let analytic = diag_gaussian_kl(&q, &prior_mean, prior_var);
            // MC estimate of E_q[ln q(z) - ln p(z)].
            let samples = 100_000;
            let mut acc = 0.0;
            for _ in 0..samples {
                let mut lq = 0.0;
                let mut lp = 0.0;
                for j in 0..dim {
                    let sd = (q.logvar[j] / 2.0).exp();
                    let z = q.mean[j] + sd * gauss(&mut rng);
                    lq += -0.5
                        * ((2.0 * std::f64::consts::PI).ln()
                            + q.logvar[j]
                            + (z - q.mean[j]) * (z - q.mean[j]) / q.logvar[j].exp());
                    lp += -0.5
                        * ((2.0 * std::f64::consts::PI * prior_var).ln()
                            + (z - prior_mean[j]) * (z - prior_mean[j]) / prior_var);
                }
                acc += lq - lp;
            }
            let mc = acc / samples as f64;
            assert!(
                (analytic - mc).abs() / analytic.abs().max(0.1) < 0.03,
                "analytic {analytic} vs mc {mc}"
            );
        }
    }

    #[test]
    fn lower_bound_unknown_sequence_errors() {
        let model = tiny_model(5);
        let seg = vec![0.0; model.seg_dim()];
        let batch = vec![(seg, "nope".to_string())];
        let noise = vec![SegNoise::zeros(&model.config)];
        assert!(lower_bound(&model, &batch, &noise).is_err());
    }

    #[test]
    fn lower_bound_deterministic_with_zero_noise() {
        let model = tiny_model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<(Vec<f64>, String)> = (0..3)
            .map(|i| {
                (
                    rand_segment(&mut rng, model.seg_dim()),
                    ["seq_a", "seq_b", "seq_c"][i].to_string(),
                )
            })
            .collect();
        let noise: Vec<SegNoise> =
            batch.iter().map(|_| SegNoise::zeros(&model.config)).collect();
        let (lb1, _) = lower_bound(&model, &batch, &noise).unwrap();
        let (lb2, _) = lower_bound(&model, &batch, &noise).unwrap();
        assert_eq!(lb1, lb2);
    }

    /// Finite-difference check over every parameter of the three networks
    /// and the s-vector table, with nonzero reparameterization noise.
    #[test]
    fn lower_bound_gradients_match_finite_differences() {
        let model = tiny_model(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch: Vec<(Vec<f64>, String)> = vec![
            (rand_segment(&mut rng, model.seg_dim()), "seq_a".to_string()),
            (rand_segment(&mut rng, model.seg_dim()), "seq_b".to_string()),
        ];
        let noise: Vec<SegNoise> = batch
            .iter()
            .map(|_| SegNoise::sample(&model.config, &mut rng))
            .collect();
        let (_, grads) = lower_bound(&model, &batch, &noise).unwrap();

        let h = 1e-5;
        let lb_of = |m: &FhvaeModel| lower_bound(m, &batch, &noise).unwrap().0;
        let check = |analytic: f64, fd: f64, what: &str| {
            if fd.abs() > 1e-6 {
                assert!(
                    (analytic - fd).abs() / fd.abs().max(1e-6) < 1e-4,
                    "{what}: analytic {analytic} vs fd {fd}"
                );
            }
        };

        // Network parameters.
        for net_idx in 0..4 {
            let (param_count, g) = match net_idx {
                0 => (model.z2_encoder.param_count(), &grads.z2_encoder),
                1 => (model.z1_encoder.param_count(), &grads.z1_encoder),
                2 => (model.decoder.param_count(), &grads.decoder),
                _ => (model.z2_skip.param_count(), &grads.z2_skip),
            };
            let mut gflat = Vec::new();
            g.for_each_param(|p| gflat.push(p));
            // Sample a subset of parameters to keep the test quick.
            for i in (0..param_count).step_by(7) {
                let perturb = |m: &mut FhvaeModel, delta: f64| {
                    let net = match net_idx {
                        0 => &mut m.z2_encoder,
                        1 => &mut m.z1_encoder,
                        2 => &mut m.decoder,
                        _ => &mut m.z2_skip,
                    };
                    let mut idx = 0;
                    net.for_each_param_mut(|p| {
                        if idx == i {
                            *p += delta;
                        }
                        idx += 1;
                    });
                };
                let mut plus = model.clone();
                perturb(&mut plus, h);
                let mut minus = model.clone();
                perturb(&mut minus, -h);
                let fd = (lb_of(&plus) - lb_of(&minus)) / (2.0 * h);
                check(gflat[i], fd, &format!("net {net_idx} param {i}"));
            }
        }

        // Table entries.
        for id in ["seq_a", "seq_b", "seq_c"] {
            for j in 0..model.config.z2_dim {
                let mut plus = model.clone();
                plus.svector_table.get_mut(id).unwrap()[j] += h;
                let mut minus = model.clone();
                minus.svector_table.get_mut(id).unwrap()[j] -= h;
                let fd = (lb_of(&plus) - lb_of(&minus)) / (2.0 * h);
                check(grads.table[id][j], fd, &format!("table {id}[{j}]"));
            }
        }
    }

    /// Same finite-difference sweep but with z1 dropped on one of the two
    /// segments, exercising the KL-only gradient path for the z1 head.
    #[test]
    fn lower_bound_gradients_match_finite_differences_with_z1_dropped() {
        let model = tiny_model(17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let batch: Vec<(Vec<f64>, String)> = vec![
            (rand_segment(&mut rng, model.seg_dim()), "seq_a".to_string()),
            (rand_segment(&mut rng, model.seg_dim()), "seq_b".to_string()),
        ];
        let mut noise: Vec<SegNoise> = batch
            .iter()
            .map(|_| SegNoise::sample(&model.config, &mut rng))
            .collect();
        noise[0].keep_z1 = false;
        noise[1].keep_z1 = true;
        let (_, grads) = lower_bound(&model, &batch, &noise).unwrap();

        let h = 1e-5;
        let lb_of = |m: &FhvaeModel| lower_bound(m, &batch, &noise).unwrap().0;
        let check = |analytic: f64, fd: f64, what: &str| {
            if fd.abs() > 1e-6 {
                assert!(
                    (analytic - fd).abs() / fd.abs().max(1e-6) < 1e-4,
                    "{what}: analytic {analytic} vs fd {fd}"
                );
            }
        };
        for net_idx in 0..4 {
            let (param_count, g) = match net_idx {
                0 => (model.z2_encoder.param_count(), &grads.z2_encoder),
                1 => (model.z1_encoder.param_count(), &grads.z1_encoder),
                2 => (model.decoder.param_count(), &grads.decoder),
                _ => (model.z2_skip.param_count(), &grads.z2_skip),
            };
            let mut gflat = Vec::new();
            g.for_each_param(|p| gflat.push(p));
            for i in (0..param_count).step_by(7) {
                let perturb = |m: &mut FhvaeModel, delta: f64| {
                    let net = match net_idx {
                        0 => &mut m.z2_encoder,
                        1 => &mut m.z1_encoder,
                        2 => &mut m.decoder,
                        _ => &mut m.z2_skip,
                    };
                    let mut idx = 0;
                    net.for_each_param_mut(|p| {
                        if idx == i {
                            *p += delta;
                        }
                        idx += 1;
                    });
                };
                let mut plus = model.clone();
                perturb(&mut plus, h);
                let mut minus = model.clone();
                perturb(&mut minus, -h);
                let fd = (lb_of(&plus) - lb_of(&minus)) / (2.0 * h);
                check(gflat[i], fd, &format!("net {net_idx} param {i}"));
            }
        }
    }

    #[test]
    fn map_svector_closed_form() {
        let model = tiny_model(13);
        // Single segment: result is z2_mean / (1 + var_z2/var_mu2) = m/1.25.
        let seg = vec![0.2; model.seg_dim()];
        let (z2, _) = model.encode(&seg).unwrap();
        let sv = infer_svector_map(&model, &[seg.clone()]).unwrap();
        for (s, m) in sv.iter().zip(&z2.mean) {
            assert!((s - m / 1.25).abs() < 1e-12);
        }
        // Replicating the same segment approaches the raw mean from below.
        let many: Vec<Vec<f64>> = (0..50).map(|_| seg.clone()).collect();
        let sv50 = infer_svector_map(&model, &many).unwrap();
        for (s, m) in sv50.iter().zip(&z2.mean) {
            assert!((s - m * 50.0 / 50.25).abs() < 1e-12);
        }
        assert!(infer_svector_map(&model, &[]).is_err());
    }

    #[test]
    fn unification_with_own_svector_is_identity() {
        let model = tiny_model(19);
        let utt = Utterance {
            utt_id: "u".into(),
            speaker_id: "seq_b".into(),
            frames: (0..6).map(|t| vec![0.1 * t as f64, -0.2, 0.3]).collect(),
            phone_labels: None,
        };
        let own = model.svector_table["seq_b"].clone();
        let unified = reconstruct_unified(&model, &utt, &own).unwrap();
        // Plain reconstruction: same path with zero shift.
        let plain = reconstruct_unified(&model, &utt, &own).unwrap();
        assert_eq!(unified, plain);
        assert_eq!(unified.len(), utt.n_frames());

        // A different target changes the output.
        let other = model.svector_table["seq_a"].clone();
        let moved = reconstruct_unified(&model, &utt, &other).unwrap();
        assert_ne!(unified, moved);
    }

    #[test]
    fn training_learns_sequence_discrimination() {
        use crate::corpus::{generate_corpus, SyntheticSpec};
        let spec = SyntheticSpec {
            n_phones: 4,
            n_speakers: 2,
            feat_dim: 4,
            utt_per_speaker: 3,
            dur_range: (3, 6),
            speaker_shift_scale: 3.0,
            noise_std: 0.0,
            frame_rate: 100.0,
            phones_per_utt: 8,
        };
        // Raw features: speaker normalization would strip the sequence-level
        // factor that z2 is meant to capture.
        let corpus = generate_corpus(&spec, 5).unwrap();
        let config = FhvaeConfig {
            z1_dim: 4,
            z2_dim: 4,
            seg_len: 4,
            hidden: vec![32],
            epochs: 40,
            batch_size: 16,
            lr: 3e-3,
            train_shift: 2,
            ..FhvaeConfig::default()
        };
        let (model, stats) = train_fhvae(&corpus, config.clone(), 3).unwrap();
        assert_eq!(model.svector_table.len(), 2);
        assert!(stats.heldout_lb[stats.best_epoch] >= stats.heldout_lb[0]);

        // Discriminative accuracy: argmax over the table of p(seq | z2).
        let mut correct = 0;
        let mut total = 0;
        for (seq_id, frames) in speaker_sequences(&corpus) {
            for seg in sequence_segments(&frames, config.seg_len, config.seg_len) {
                let (z2, _) = model.encode(&seg).unwrap();
                let best = model
                    .svector_table
                    .iter()
                    .min_by(|(_, a), (_, b)| {
                        sq_dist(&z2.mean, a).partial_cmp(&sq_dist(&z2.mean, b)).unwrap()
                    })
                    .map(|(id, _)| id.clone())
                    .unwrap();
                if best == seq_id {
                    correct += 1;
                }
                total += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc >= 0.9, "discriminative accuracy {acc}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        use crate::corpus::{generate_corpus, speaker_cmn, SyntheticSpec};
        let spec = SyntheticSpec {
            n_phones: 3,
            n_speakers: 2,
            feat_dim: 3,
            utt_per_speaker: 2,
            dur_range: (3, 5),
            speaker_shift_scale: 1.0,
            noise_std: 0.1,
            frame_rate: 100.0,
            phones_per_utt: 5,
        };
        let corpus = speaker_cmn(&generate_corpus(&spec, 1).unwrap()).unwrap();
        let config = FhvaeConfig {
            z1_dim: 2,
            z2_dim: 2,
            seg_len: 3,
            hidden: vec![8],
            epochs: 2,
            batch_size: 8,
            train_shift: 2,
            ..FhvaeConfig::default()
        };
        let (m1, _) = train_fhvae(&corpus, config.clone(), 42).unwrap();
        let (m2, _) = train_fhvae(&corpus, config, 42).unwrap();
        let mut v1 = Vec::new();
        m1.z2_encoder.for_each_param(|p| v1.push(p));
        let mut v2 = Vec::new();
        m2.z2_encoder.for_each_param(|p| v2.push(p));
        assert_eq!(v1, v2);
        assert_eq!(m1.svector_table, m2.svector_table);
    }

    #[test]
    fn train_rejects_single_speaker() {
        use crate::corpus::Utterance;
        let corpus = Corpus {
            utterances: vec![Utterance {
                utt_id: "u".into(),
                speaker_id: "s".into(),
                frames: vec![vec![0.0; 3]; 20],
                phone_labels: None,
            }],
            speakers: vec!["s".into()],
            frame_rate: 100.0,
        };
        assert!(train_fhvae(&corpus, tiny_config(), 0).is_err());
    }
}
