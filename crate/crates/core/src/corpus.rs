//! Synthetic multi-speaker labeled corpus plus the feature-side plumbing:
//! speaker-level mean normalization, delta features and fixed-length
//! segmentation.
//!
//! The generator stands in for MFCC data. Each phone has a fixed prototype
//! vector and each speaker a fixed affine perturbation, so phone identity is
//! known per frame and speaker variation is controllable.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AudError, Result};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_phones: usize,
    pub n_speakers: usize,
    pub feat_dim: usize,
    pub utt_per_speaker: usize,
    /// (min, max) frames per phone occurrence, inclusive.
    pub dur_range: (usize, usize),
    pub speaker_shift_scale: f64,
    pub noise_std: f64,
    pub frame_rate: f64,
    /// Phones per utterance.
    pub phones_per_utt: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_phones: 10,
            n_speakers: 8,
            feat_dim: 13,
            utt_per_speaker: 4,
            dur_range: (3, 10),
            speaker_shift_scale: 1.0,
            noise_std: 0.3,
            frame_rate: 100.0,
            phones_per_utt: 10,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_phones < 2 {
            return Err(AudError::Parameter("n_phones must be >= 2".into()));
        }
        if self.n_speakers < 2 {
            return Err(AudError::Parameter("n_speakers must be >= 2".into()));
        }
        if self.dur_range.0 < 1 || self.dur_range.0 > self.dur_range.1 {
            return Err(AudError::Parameter("dur_range must satisfy 1 <= min <= max".into()));
        }
        if self.feat_dim < 1 {
            return Err(AudError::Parameter("feat_dim must be >= 1".into()));
        }
        if self.utt_per_speaker < 1 || self.phones_per_utt < 1 {
            return Err(AudError::Parameter("utt_per_speaker and phones_per_utt must be >= 1".into()));
        }
        if self.speaker_shift_scale < 0.0 || self.noise_std < 0.0 {
            return Err(AudError::Parameter("scales must be nonnegative".into()));
        }
        if self.frame_rate <= 0.0 {
            return Err(AudError::Parameter("frame_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    /// `n_frames` rows of `feat_dim` values.
    pub frames: Vec<Vec<f64>>,
    pub phone_labels: Option<Vec<usize>>,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub speakers: Vec<String>,
    pub frame_rate: f64,
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for utt in &self.utterances {
            if !self.speakers.contains(&utt.speaker_id) {
                return Err(AudError::Parameter(format!(
                    "speaker {} not in speaker list",
                    utt.speaker_id
                )));
            }
            if !seen.insert(&utt.utt_id) {
                return Err(AudError::Parameter(format!("duplicate utt_id {}", utt.utt_id)));
            }
            if let Some(labels) = &utt.phone_labels {
                if labels.len() != utt.frames.len() {
                    return Err(AudError::Parameter(format!(
                        "label length mismatch in {}",
                        utt.utt_id
                    )));
                }
            }
            if utt.frames.is_empty() {
                return Err(AudError::Parameter(format!("empty utterance {}", utt.utt_id)));
            }
        }
        Ok(())
    }

    pub fn utterances_of<'a>(
        &'a self,
        speaker: &'a str,
    ) -> impl Iterator<Item = &'a Utterance> + 'a {
        self.utterances.iter().filter(move |u| u.speaker_id == speaker)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates a corpus as a pure function of `(spec, seed)`.
///
/// Phone prototypes are drawn once per seed from N(0, 3^2) per dimension.
/// Each speaker gets an additive bias with scale `speaker_shift_scale` and a
/// per-dimension gain in [0.8, 1.2]; frames are
/// `gain * prototype + bias + noise`.
pub fn generate_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let prototypes: Vec<Vec<f64>> = (0..spec.n_phones)
        .map(|_| (0..spec.feat_dim).map(|_| 3.0 * gaussian(&mut rng)).collect())
        .collect();

    let speakers: Vec<String> = (0..spec.n_speakers).map(|i| format!("spk{i:03}")).collect();
    let biases: Vec<Vec<f64>> = (0..spec.n_speakers)
        .map(|_| {
            (0..spec.feat_dim).map(|_| spec.speaker_shift_scale * gaussian(&mut rng)).collect()
        })
        .collect();
    // Gain spread collapses with the shift scale so that a zero-shift corpus
    // reproduces prototypes exactly.
    let gain_spread = 0.2 * spec.speaker_shift_scale.min(1.0);
    let gains: Vec<Vec<f64>> = (0..spec.n_speakers)
        .map(|_| {
            (0..spec.feat_dim).map(|_| 1.0 + rng.gen_range(-gain_spread..=gain_spread)).collect()
        })
        .collect();

    let mut utterances = Vec::new();
    for (s, speaker) in speakers.iter().enumerate() {
        for u in 0..spec.utt_per_speaker {
            let mut frames = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..spec.phones_per_utt {
                let phone = rng.gen_range(0..spec.n_phones);
                let dur = rng.gen_range(spec.dur_range.0..=spec.dur_range.1);
                for _ in 0..dur {
                    let frame: Vec<f64> = (0..spec.feat_dim)
                        .map(|d| {
                            gains[s][d] * prototypes[phone][d]
                                + biases[s][d]
                                + spec.noise_std * gaussian(&mut rng)
                        })
                        .collect();
                    frames.push(frame);
                    labels.push(phone);
                }
            }
            utterances.push(Utterance {
                utt_id: format!("{speaker}_u{u:03}"),
                speaker_id: speaker.clone(),
                frames,
                phone_labels: Some(labels),
            });
        }
    }
    Ok(Corpus { utterances, speakers, frame_rate: spec.frame_rate })
}

/// Cepstral mean normalization at speaker level: subtracts each speaker's
/// frame mean from all of that speaker's frames.
pub fn speaker_cmn(corpus: &Corpus) -> Result<Corpus> {
    if corpus.utterances.is_empty() {
        return Err(AudError::Parameter("empty corpus".into()));
    }
    let dim = corpus.utterances[0].feat_dim();
    let mut out = corpus.clone();
    for speaker in &corpus.speakers {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for utt in corpus.utterances_of(speaker) {
            for frame in &utt.frames {
                for (m, x) in mean.iter_mut().zip(frame) {
                    *m += x;
                }
            }
            count += utt.frames.len();
        }
        if count == 0 {
            continue;
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        for utt in out.utterances.iter_mut().filter(|u| &u.speaker_id == speaker) {
            for frame in utt.frames.iter_mut() {
                for (x, m) in frame.iter_mut().zip(&mean) {
                    *x -= m;
                }
            }
        }
    }
    Ok(out)
}

/// Per-speaker mean and variance normalization, used for DNN input features.
pub fn speaker_cmvn(corpus: &Corpus) -> Result<Corpus> {
    let mut out = speaker_cmn(corpus)?;
    let dim = out.utterances[0].feat_dim();
    for speaker in &corpus.speakers.clone() {
        let mut var = vec![0.0; dim];
        let mut count = 0usize;
        for utt in out.utterances.iter().filter(|u| &u.speaker_id == speaker) {
            for frame in &utt.frames {
                for (v, x) in var.iter_mut().zip(frame) {
                    *v += x * x;
                }
            }
            count += utt.frames.len();
        }
        if count == 0 {
            continue;
        }
        let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt().max(1e-8)).collect();
        for utt in out.utterances.iter_mut().filter(|u| &u.speaker_id == speaker) {
            for frame in utt.frames.iter_mut() {
                for (x, s) in frame.iter_mut().zip(&std) {
                    *x /= s;
                }
            }
        }
    }
    Ok(out)
}

/// Corpus-level mean and variance normalization: one affine transform per
/// dimension shared by all speakers, so speaker structure is preserved.
pub fn global_cmvn(corpus: &Corpus) -> Result<Corpus> {
    if corpus.utterances.is_empty() {
        return Err(AudError::Parameter("empty corpus".into()));
    }
    let dim = corpus.utterances[0].feat_dim();
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for utt in &corpus.utterances {
        for frame in &utt.frames {
            for (m, x) in mean.iter_mut().zip(frame) {
                *m += x;
            }
        }
        count += utt.frames.len();
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; dim];
    for utt in &corpus.utterances {
        for frame in &utt.frames {
            for ((v, x), m) in var.iter_mut().zip(frame).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt().max(1e-8)).collect();
    let mut out = corpus.clone();
    for utt in out.utterances.iter_mut() {
        for frame in utt.frames.iter_mut() {
            for ((x, m), s) in frame.iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / s;
            }
        }
    }
    Ok(out)
}

/// Appends delta and delta-delta features: output dim is `3 * feat_dim`.
///
/// Delta uses the standard K=2 regression window with edge frames replicated.
pub fn add_deltas(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let deltas = compute_delta(frames);
    let ddeltas = compute_delta(&deltas);
    frames
        .iter()
        .zip(&deltas)
        .zip(&ddeltas)
        .map(|((x, d), dd)| {
            let mut row = x.clone();
            row.extend_from_slice(d);
            row.extend_from_slice(dd);
            row
        })
        .collect()
}

fn compute_delta(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = frames.len();
    let dim = frames.first().map_or(0, |f| f.len());
    let denom = 2.0 * (1.0 + 4.0); // 2 * sum k^2, K=2
    let clamp = |t: isize| frames[t.clamp(0, n as isize - 1) as usize].as_slice();
    (0..n as isize)
        .map(|t| {
            (0..dim)
                .map(|d| {
                    let mut acc = 0.0;
                    for k in 1..=2isize {
                        acc += k as f64 * (clamp(t + k)[d] - clamp(t - k)[d]);
                    }
                    acc / denom
                })
                .collect()
        })
        .collect()
}

/// A fixed-length window of frames, flattened row-major for network input.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start: usize,
    pub data: Vec<f64>,
}

/// Cuts an utterance into overlapping fixed-length segments.
///
/// Returns `Ok(None)` (skip with warning at the call site) when the
/// utterance is shorter than `seg_len`.
pub fn make_segments(
    utt: &Utterance,
    seg_len: usize,
    shift: usize,
) -> Result<Option<Vec<Segment>>> {
    if shift == 0 {
        return Err(AudError::Parameter("shift must be >= 1".into()));
    }
    let n = utt.n_frames();
    if n < seg_len {
        return Ok(None);
    }
    let mut segments = Vec::new();
    let mut start = 0;
    while start + seg_len <= n {
        let mut data = Vec::with_capacity(seg_len * utt.feat_dim());
        for frame in &utt.frames[start..start + seg_len] {
            data.extend_from_slice(frame);
        }
        segments.push(Segment { start, data });
        start += shift;
    }
    Ok(Some(segments))
}
