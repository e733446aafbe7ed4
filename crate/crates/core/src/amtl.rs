//! Speaker-adversarial multi-task bottleneck network.
//!
//! A shared extractor ends in a low-dimensional linear bottleneck; a subword
//! classifier head and an adversarial speaker head sit on top. The speaker
//! head's gradient passes through a gradient reversal layer, so the shared
//! extractor learns features that predict subword units while being
//! uninformative about the speaker. Per-frame bottleneck activations (BNFs)
//! and unit posteriorgrams are the exported representations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AudError, Result};
use crate::io::Checkpoint;
use crate::nnkit::{
    exp_decay_lr, grl_backward, sgd_step, softmax, softmax_xent, Activation, LayerSpec,
    NetParams,
};
use crate::units::Posteriorgram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrlPlacement {
    /// Speaker head consumes the bottleneck directly.
    OnMh,
    /// Speaker head consumes the subword head's feedforward-layer output.
    OnMpFfl,
}

#[derive(Debug, Clone)]
pub struct AmtlConfig {
    /// Window dimension: feature dim times (2 * context + 1).
    pub input_dim: usize,
    pub n_units: usize,
    pub n_speakers: usize,
    /// Hidden widths of the shared extractor before the bottleneck.
    pub mh_hidden: Vec<usize>,
    pub bottleneck_dim: usize,
    /// Width of each head's single feedforward layer.
    pub head_hidden: usize,
    pub lambda: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Frames of context on each side of the center frame.
    pub context: usize,
    pub grl_placement: GrlPlacement,
}

impl AmtlConfig {
    pub fn new(input_dim: usize, n_units: usize, n_speakers: usize) -> Self {
        Self {
            input_dim,
            n_units,
            n_speakers,
            mh_hidden: vec![1024; 5],
            bottleneck_dim: 40,
            head_hidden: 1024,
            lambda: 0.0,
            lr_start: 8e-3,
            lr_end: 8e-4,
            epochs: 5,
            batch_size: 128,
            context: 5,
            grl_placement: GrlPlacement::OnMh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(AudError::Parameter("lambda must be nonnegative".into()));
        }
        if self.input_dim == 0 || self.n_units == 0 || self.n_speakers == 0 {
            return Err(AudError::Parameter("dims must be >= 1".into()));
        }
        if self.lr_start <= 0.0 || self.lr_end <= 0.0 {
            return Err(AudError::Parameter("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AmtlModel {
    pub config: AmtlConfig,
    /// Shared extractor: window -> bottleneck (linear last layer).
    pub theta_h: NetParams,
    /// Subword head: bottleneck -> unit logits.
    pub theta_p: NetParams,
    /// Speaker head behind the GRL.
    pub theta_s: NetParams,
}

impl AmtlModel {
    pub fn init(config: AmtlConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut h_specs = Vec::new();
        let mut prev = config.input_dim;
        for &w in &config.mh_hidden {
            h_specs.push(LayerSpec::new(prev, w, Activation::Sigmoid));
            prev = w;
        }
        h_specs.push(LayerSpec::new(prev, config.bottleneck_dim, Activation::Linear));
        let theta_h = NetParams::init(&h_specs, rng)?;
        let theta_p = NetParams::init(
            &[
                LayerSpec::new(config.bottleneck_dim, config.head_hidden, Activation::Sigmoid),
                LayerSpec::new(config.head_hidden, config.n_units, Activation::Linear),
            ],
            rng,
        )?;
        let s_in = match config.grl_placement {
            GrlPlacement::OnMh => config.bottleneck_dim,
            GrlPlacement::OnMpFfl => config.head_hidden,
        };
        let theta_s = NetParams::init(
            &[
                LayerSpec::new(s_in, config.head_hidden, Activation::Sigmoid),
                LayerSpec::new(config.head_hidden, config.n_speakers, Activation::Linear),
            ],
            rng,
        )?;
        Ok(Self { config, theta_h, theta_p, theta_s })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            nets: vec![
                ("theta_h".into(), self.theta_h.clone()),
                ("theta_p".into(), self.theta_p.clone()),
                ("theta_s".into(), self.theta_s.clone()),
            ],
            tables: vec![],
        }
    }

    pub fn from_checkpoint(config: AmtlConfig, ckpt: &Checkpoint) -> Result<Self> {
        let find = |name: &str| {
            ckpt.nets
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, net)| net.clone())
                .ok_or_else(|| AudError::Parameter(format!("checkpoint missing net {name}")))
        };
        Ok(Self {
            config,
            theta_h: find("theta_h")?,
            theta_p: find("theta_p")?,
            theta_s: find("theta_s")?,
        })
    }
}

/// One frame window with its unit and speaker labels.
#[derive(Debug, Clone)]
pub struct AmtlSample {
    pub window: Vec<f64>,
    pub unit: usize,
    pub speaker: usize,
}

/// Per-frame inputs: the center frame with `context` frames on each side,
/// edges replicated.
pub fn context_windows(frames: &[Vec<f64>], context: usize) -> Vec<Vec<f64>> {
    let n = frames.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut w = Vec::with_capacity((2 * context + 1) * frames[0].len());
        for k in 0..=(2 * context) {
            let idx = (t + k).saturating_sub(context).min(n - 1);
            w.extend_from_slice(&frames[idx]);
        }
        out.push(w);
    }
    out
}

/// Forward pass: unit logits, speaker logits, and the bottleneck activation.
pub fn amtl_forward(
    model: &AmtlModel,
    window: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if window.len() != model.config.input_dim {
        return Err(AudError::DimMismatch {
            expected: model.config.input_dim,
            got: window.len(),
        });
    }
    let (bnf, _) = model.theta_h.forward(window)?;
    let (unit_logits, p_cache) = model.theta_p.forward(&bnf)?;
    let s_in = match model.config.grl_placement {
        GrlPlacement::OnMh => bnf.clone(),
        GrlPlacement::OnMpFfl => p_cache.layer_output(0).to_vec(),
    };
    let (speaker_logits, _) = model.theta_s.forward(&s_in)?;
    Ok((unit_logits, speaker_logits, bnf))
}

/// Mean losses over a batch and the descent-direction gradients for the
/// three parameter sets, with the speaker loss routed through the GRL.
pub struct AmtlStepGrads {
    pub loss_p: f64,
    pub loss_s: f64,
    pub grad_h: NetParams,
    pub grad_p: NetParams,
    pub grad_s: NetParams,
}

/// The update directions of one step:
///   theta_p gets d L_p / d theta_p,
///   theta_s gets d L_s / d theta_s,
///   theta_h gets d L_p / d theta_h  -  lambda * d L_s / d theta_h.
/// With the GRL on the subword head's feedforward layer, the reversed
/// speaker gradient still reaches only the shared parameters; the subword
/// head itself is updated by its own loss alone.
pub fn amtl_step_grads(model: &AmtlModel, batch: &[AmtlSample]) -> Result<AmtlStepGrads> {
    if batch.is_empty() {
        return Err(AudError::Parameter("empty batch".into()));
    }
    let cfg = &model.config;
    let inv_b = 1.0 / batch.len() as f64;
    let mut grad_h = model.theta_h.zeros_like();
    let mut grad_p = model.theta_p.zeros_like();
    let mut grad_s = model.theta_s.zeros_like();
    let mut loss_p = 0.0;
    let mut loss_s = 0.0;

    for sample in batch {
        if sample.unit >= cfg.n_units || sample.speaker >= cfg.n_speakers {
            return Err(AudError::Parameter("label out of range".into()));
        }
        let (bnf, h_cache) = model.theta_h.forward(&sample.window)?;
        let (unit_logits, p_cache) = model.theta_p.forward(&bnf)?;
        let (lp, dlogits_p) = softmax_xent(&unit_logits, sample.unit);
        loss_p += lp * inv_b;
        let (gp, g_bnf_from_p) = model.theta_p.backward(&p_cache, &dlogits_p);
        grad_p.add_scaled(&gp, inv_b);

        let s_in: Vec<f64> = match cfg.grl_placement {
            GrlPlacement::OnMh => bnf.clone(),
            GrlPlacement::OnMpFfl => p_cache.layer_output(0).to_vec(),
        };
        let (speaker_logits, s_cache) = model.theta_s.forward(&s_in)?;
        let (ls, dlogits_s) = softmax_xent(&speaker_logits, sample.speaker);
        loss_s += ls * inv_b;
        let (gs, g_s_in) = model.theta_s.backward(&s_cache, &dlogits_s);
        grad_s.add_scaled(&gs, inv_b);

        let reversed = grl_backward(&g_s_in, cfg.lambda);
        let g_bnf_total: Vec<f64> = match cfg.grl_placement {
            GrlPlacement::OnMh => g_bnf_from_p
                .iter()
                .zip(&reversed)
                .map(|(a, b)| a + b)
                .collect(),
            GrlPlacement::OnMpFfl => {
                // Route the reversed gradient through the subword head's
                // first layer to the bottleneck without touching theta_p.
                let mut ffl_grad = vec![0.0; model.theta_p.layers[0].out_dim];
                for (g, r) in ffl_grad.iter_mut().zip(&reversed) {
                    *g = *r;
                }
                let partial = partial_backward_through_layer0(&model.theta_p, &p_cache, &ffl_grad);
                g_bnf_from_p.iter().zip(&partial).map(|(a, b)| a + b).collect()
            }
        };
        let (gh, _) = model.theta_h.backward(&h_cache, &g_bnf_total);
        grad_h.add_scaled(&gh, inv_b);
    }
    Ok(AmtlStepGrads { loss_p, loss_s, grad_h, grad_p, grad_s })
}

/// Input gradient of the first layer of `net` for an upstream gradient at
/// its output, without producing parameter gradients.
fn partial_backward_through_layer0(
    net: &NetParams,
    cache: &crate::nnkit::NetCache,
    out_grad: &[f64],
) -> Vec<f64> {
    let layer = &net.layers[0];
    let out = cache.layer_output(0);
    // Sigmoid first layer: pre-activation gradient is g * y * (1 - y).
    let pre: Vec<f64> = match layer.activation {
        Activation::Sigmoid => out_grad
            .iter()
            .zip(out)
            .map(|(g, y)| g * y * (1.0 - y))
            .collect(),
        _ => out_grad.to_vec(),
    };
    let mut in_grad = vec![0.0; layer.in_dim];
    for o in 0..layer.out_dim {
        for i in 0..layer.in_dim {
            in_grad[i] += pre[o] * layer.weights[o * layer.in_dim + i];
        }
    }
    in_grad
}

/// Applies one SGD step with the composite update.
pub fn amtl_train_step(model: &mut AmtlModel, batch: &[AmtlSample], lr: f64) -> Result<(f64, f64)> {
    let grads = amtl_step_grads(model, batch)?;
    sgd_step(&mut model.theta_h, &grads.grad_h, lr);
    sgd_step(&mut model.theta_p, &grads.grad_p, lr);
    sgd_step(&mut model.theta_s, &grads.grad_s, lr);
    Ok((grads.loss_p, grads.loss_s))
}

/// Trains with per-epoch seeded shuffling and an exponentially decaying
/// learning rate.
pub fn train_amtl(samples: &[AmtlSample], config: AmtlConfig, seed: u64) -> Result<AmtlModel> {
    if samples.is_empty() {
        return Err(AudError::Parameter("no training samples".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = AmtlModel::init(config.clone(), &mut rng)?;
    let batches_per_epoch = samples.len().div_ceil(config.batch_size.max(1));
    let total_steps = (config.epochs * batches_per_epoch) as u64;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<AmtlSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let lr = exp_decay_lr(config.lr_start, config.lr_end, step, total_steps);
            amtl_train_step(&mut model, &batch, lr)?;
            step += 1;
        }
    }
    Ok(model)
}

/// Per-frame bottleneck features for one utterance.
pub fn extract_bnf(model: &AmtlModel, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let windows = context_windows(frames, model.config.context);
    windows
        .iter()
        .map(|w| model.theta_h.forward(w).map(|(bnf, _)| bnf))
        .collect()
}

/// Per-frame unit posteriorgram for one utterance.
pub fn extract_pg(model: &AmtlModel, frames: &[Vec<f64>]) -> Result<Posteriorgram> {
    let windows = context_windows(frames, model.config.context);
    let rows = windows
        .iter()
        .map(|w| {
            let (unit_logits, _, _) = amtl_forward(model, w)?;
            Ok(softmax(&unit_logits))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Posteriorgram { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config(placement: GrlPlacement) -> AmtlConfig {
        AmtlConfig {
            input_dim: 6,
            n_units: 3,
            n_speakers: 2,
            mh_hidden: vec![7, 7],
            bottleneck_dim: 4,
            head_hidden: 5,
            lambda: 0.3,
            lr_start: 8e-3,
            lr_end: 8e-4,
            epochs: 2,
            batch_size: 4,
            context: 1,
            grl_placement: placement,
        }
    }

    fn tiny_batch(rng: &mut ChaCha8Rng, n: usize, cfg: &AmtlConfig) -> Vec<AmtlSample> {
        (0..n)
            .map(|_| AmtlSample {
                window: (0..cfg.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                unit: rng.gen_range(0..cfg.n_units),
                speaker: rng.gen_range(0..cfg.n_speakers),
            })
            .collect()
    }

    #[test]
    fn forward_shapes_and_softmax_sums() {
        for placement in [GrlPlacement::OnMh, GrlPlacement::OnMpFfl] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let model = AmtlModel::init(tiny_config(placement), &mut rng).unwrap();
            let window: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
            let (u, s, bnf) = amtl_forward(&model, &window).unwrap();
            assert_eq!(u.len(), 3);
            assert_eq!(s.len(), 2);
            assert_eq!(bnf.len(), 4);
            let pu: f64 = softmax(&u).iter().sum();
            let ps: f64 = softmax(&s).iter().sum();
            assert!((pu - 1.0).abs() < 1e-9);
            assert!((ps - 1.0).abs() < 1e-9);
            let (u2, _, _) = amtl_forward(&model, &window).unwrap();
            assert_eq!(u, u2);
            assert!(amtl_forward(&model, &window[1..]).is_err());
        }
    }

    #[test]
    fn default_bottleneck_is_40_dim() {
        let cfg = AmtlConfig::new(143, 10, 8);
        assert_eq!(cfg.bottleneck_dim, 40);
        assert_eq!(cfg.mh_hidden, vec![1024; 5]);
        assert_eq!(cfg.epochs, 5);
        assert!((cfg.lr_start - 8e-3).abs() < 1e-12);
        assert!((cfg.lr_end - 8e-4).abs() < 1e-12);
    }

    /// The shared-extractor gradient matches finite differences of the
    /// composite objective L_p - lambda * L_s, for both GRL placements.
    #[test]
    fn theta_h_gradient_matches_composite_finite_differences() {
        for placement in [GrlPlacement::OnMh, GrlPlacement::OnMpFfl] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let cfg = tiny_config(placement);
            let model = AmtlModel::init(cfg.clone(), &mut rng).unwrap();
            let batch = tiny_batch(&mut rng, 3, &cfg);
            let grads = amtl_step_grads(&model, &batch).unwrap();
            let composite = |m: &AmtlModel| -> f64 {
                let g = amtl_step_grads(m, &batch).unwrap();
                g.loss_p - cfg.lambda * g.loss_s
            };
            let h = 1e-5;
            let mut gflat = Vec::new();
            grads.grad_h.for_each_param(|p| gflat.push(p));
            for i in (0..model.theta_h.param_count()).step_by(11) {
                let perturb = |m: &mut AmtlModel, delta: f64| {
                    let mut idx = 0;
                    m.theta_h.for_each_param_mut(|p| {
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
                let fd = (composite(&plus) - composite(&minus)) / (2.0 * h);
                if fd.abs() > 1e-7 {
                    assert!(
                        (gflat[i] - fd).abs() / fd.abs().max(1e-7) < 1e-4,
                        "{placement:?} param {i}: analytic {} vs fd {fd}",
                        gflat[i]
                    );
                }
            }
        }
    }

    /// The composite update equals the explicit two-term formula computed
    /// by two separate backward passes.
    #[test]
    fn composite_update_equals_two_term_formula() {
        for placement in [GrlPlacement::OnMh, GrlPlacement::OnMpFfl] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let cfg = tiny_config(placement);
            let model = AmtlModel::init(cfg.clone(), &mut rng).unwrap();
            let batch = tiny_batch(&mut rng, 4, &cfg);
            let composite = amtl_step_grads(&model, &batch).unwrap();

            // d L_p / d theta_h alone: lambda = 0.
            let mut m0 = model.clone();
            m0.config.lambda = 0.0;
            let only_p = amtl_step_grads(&m0, &batch).unwrap();
            // d L_s / d theta_h alone: lambda = -1 gives +dL_s on theta_h.
            let mut ms = model.clone();
            ms.config.lambda = -1.0;
            ms.config.lambda = -1.0;
            let with_plus_s = amtl_step_grads(&ms, &batch).unwrap();
            // dL_s/dtheta_h = with_plus_s - only_p.
            let mut a = Vec::new();
            composite.grad_h.for_each_param(|p| a.push(p));
            let mut gp = Vec::new();
            only_p.grad_h.for_each_param(|p| gp.push(p));
            let mut gps = Vec::new();
            with_plus_s.grad_h.for_each_param(|p| gps.push(p));
            for i in 0..a.len() {
                let gs = gps[i] - gp[i];
                let explicit = gp[i] - cfg.lambda * gs;
                assert!(
                    (a[i] - explicit).abs() < 1e-10,
                    "{placement:?} param {i}: {} vs {}",
                    a[i],
                    explicit
                );
            }
        }
    }

    #[test]
    fn lambda_zero_matches_no_speaker_branch_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut cfg = tiny_config(GrlPlacement::OnMh);
        cfg.lambda = 0.0;
        let model = AmtlModel::init(cfg.clone(), &mut rng).unwrap();
        let batch = tiny_batch(&mut rng, 4, &cfg);
        let grads = amtl_step_grads(&model, &batch).unwrap();

        // Reference: backprop only the subword loss.
        let inv_b = 1.0 / batch.len() as f64;
        let mut ref_h = model.theta_h.zeros_like();
        for sample in &batch {
            let (bnf, h_cache) = model.theta_h.forward(&sample.window).unwrap();
            let (logits, p_cache) = model.theta_p.forward(&bnf).unwrap();
            let (_, dlogits) = softmax_xent(&logits, sample.unit);
            let (_, g_bnf) = model.theta_p.backward(&p_cache, &dlogits);
            let (gh, _) = model.theta_h.backward(&h_cache, &g_bnf);
            ref_h.add_scaled(&gh, inv_b);
        }
        let mut a = Vec::new();
        grads.grad_h.for_each_param(|p| a.push(p));
        let mut b = Vec::new();
        ref_h.for_each_param(|p| b.push(p));
        assert_eq!(a, b);
    }

    /// update(lambda) = update(0) + lambda * (update(1) - update(0)).
    #[test]
    fn theta_h_update_is_linear_in_lambda() {
        for placement in [GrlPlacement::OnMh, GrlPlacement::OnMpFfl] {
            let mut rng = ChaCha8Rng::seed_from_u64(44);
            let cfg = tiny_config(placement);
            let model = AmtlModel::init(cfg.clone(), &mut rng).unwrap();
            let batch = tiny_batch(&mut rng, 3, &cfg);
            let at = |lam: f64| {
                let mut m = model.clone();
                m.config.lambda = lam;
                let mut v = Vec::new();
                amtl_step_grads(&m, &batch).unwrap().grad_h.for_each_param(|p| v.push(p));
                v
            };
            let g0 = at(0.0);
            let g1 = at(1.0);
            let lam = 0.37;
            let glam = at(lam);
            for i in 0..g0.len() {
                let predicted = g0[i] + lam * (g1[i] - g0[i]);
                assert!((glam[i] - predicted).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn speaker_update_decreases_speaker_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let cfg = tiny_config(GrlPlacement::OnMh);
        let mut model = AmtlModel::init(cfg.clone(), &mut rng).unwrap();
        let batch = tiny_batch(&mut rng, 8, &cfg);
        let before = amtl_step_grads(&model, &batch).unwrap().loss_s;
        let grads = amtl_step_grads(&model, &batch).unwrap();
        sgd_step(&mut model.theta_s, &grads.grad_s, 1e-2);
        let after = amtl_step_grads(&model, &batch).unwrap().loss_s;
        assert!(after < before);
    }

    #[test]
    fn context_windows_replicate_edges() {
        let frames = vec![vec![1.0], vec![2.0], vec![3.0]];
        let w = context_windows(&frames, 1);
        assert_eq!(w[0], vec![1.0, 1.0, 2.0]);
        assert_eq!(w[1], vec![1.0, 2.0, 3.0]);
        assert_eq!(w[2], vec![2.0, 3.0, 3.0]);
    }

    #[test]
    fn extraction_preserves_length_and_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let mut cfg = tiny_config(GrlPlacement::OnMh);
        cfg.input_dim = 3 * 2; // context 1, feat dim 2
        let model = AmtlModel::init(cfg, &mut rng).unwrap();
        let frames: Vec<Vec<f64>> =
            (0..9).map(|i| vec![0.1 * i as f64, -0.05 * i as f64]).collect();
        let bnf = extract_bnf(&model, &frames).unwrap();
        assert_eq!(bnf.len(), 9);
        assert_eq!(bnf[0].len(), 4);
        let pg = extract_pg(&model, &frames).unwrap();
        assert_eq!(pg.rows.len(), 9);
        pg.validate().unwrap();
        let again = extract_bnf(&model, &frames).unwrap();
        assert_eq!(bnf, again);
    }

    #[test]
    fn training_fits_separable_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut cfg = tiny_config(GrlPlacement::OnMh);
        cfg.epochs = 60;
        cfg.batch_size = 16;
        cfg.lr_start = 0.1;
        cfg.lr_end = 0.01;
        cfg.lambda = 0.0;
        // Three unit classes at distinct corners.
        let samples: Vec<AmtlSample> = (0..120)
            .map(|i| {
                let unit = i % 3;
                let center = [-1.0, 0.0, 1.0][unit];
                AmtlSample {
                    window: (0..cfg.input_dim)
                        .map(|_| center + 0.05 * rng.gen_range(-1.0..1.0))
                        .collect(),
                    unit,
                    speaker: i % 2,
                }
            })
            .collect();
        let model = train_amtl(&samples, cfg.clone(), 5).unwrap();
        let mut correct = 0;
        for s in &samples {
            let (logits, _, _) = amtl_forward(&model, &s.window).unwrap();
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == s.unit {
                correct += 1;
            }
        }
        assert!(correct as f64 / samples.len() as f64 > 0.95);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let cfg = tiny_config(GrlPlacement::OnMh);
        let samples = tiny_batch(&mut rng, 20, &cfg);
        let m1 = train_amtl(&samples, cfg.clone(), 7).unwrap();
        let m2 = train_amtl(&samples, cfg, 7).unwrap();
        let mut v1 = Vec::new();
        m1.theta_h.for_each_param(|p| v1.push(p));
        let mut v2 = Vec::new();
        m2.theta_h.for_each_param(|p| v2.push(p));
        assert_eq!(v1, v2);
    }
}
