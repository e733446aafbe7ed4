//! ABX subword discriminability over frame-level representations.
//!
//! Triplets are built from ground-truth phone spans; a triplet errs when the
//! DTW distance from A to X exceeds that from B to X (X shares A's phone).
//! Error rates are averaged within each phone-pair cell and then
//! macro-averaged over cells.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{AudError, Result};

pub const MIN_SPAN_FRAMES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbxMode {
    Within,
    Across,
}

/// Reference to a phone occurrence: utterance index plus a frame span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentRef {
    pub utt: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct AbxTriplet {
    pub a: SegmentRef,
    pub b: SegmentRef,
    pub x: SegmentRef,
    pub category_a: usize,
    pub category_b: usize,
}

#[derive(Debug, Clone)]
pub struct AbxReport {
    pub mode: AbxMode,
    /// Percent in [0, 100].
    pub error_rate: f64,
    /// Per unordered phone pair: (error rate percent, triplet count).
    pub per_pair: BTreeMap<(usize, usize), (f64, usize)>,
    pub triplet_count: usize,
}

/// `1 - cos(u, v)`; defined as 1 when either vector is zero.
pub fn cosine_frame_distance(u: &[f64], v: &[f64]) -> f64 {
    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    1.0 - dot / (nu * nv)
}

/// DTW with steps {(1,0),(0,1),(1,1)} and cosine frame cost, boundary to
/// boundary, total cost divided by the optimal path's length.
pub fn dtw_distance(seg1: &[Vec<f64>], seg2: &[Vec<f64>]) -> f64 {
    let n = seg1.len();
    let m = seg2.len();
    assert!(n > 0 && m > 0, "dtw on empty segment");
    // (cost, path length) per cell.
    let mut cost = vec![f64::INFINITY; n * m];
    let mut len = vec![0usize; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cosine_frame_distance(&seg1[i], &seg2[j]);
            let idx = i * m + j;
            if i == 0 && j == 0 {
                cost[idx] = c;
                len[idx] = 1;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_len = 0;
            // Diagonal preferred on ties, then vertical, then horizontal.
            if i > 0 && j > 0 {
                let p = (i - 1) * m + (j - 1);
                if cost[p] < best {
                    best = cost[p];
                    best_len = len[p];
                }
            }
            if i > 0 {
                let p = (i - 1) * m + j;
                if cost[p] < best {
                    best = cost[p];
                    best_len = len[p];
                }
            }
            if j > 0 {
                let p = i * m + (j - 1);
                if cost[p] < best {
                    best = cost[p];
                    best_len = len[p];
                }
            }
            cost[idx] = best + c;
            len[idx] = best_len + 1;
        }
    }
    cost[n * m - 1] / len[n * m - 1] as f64
}

/// Ground-truth phone spans per utterance, at least [`MIN_SPAN_FRAMES`] long.
fn phone_spans(corpus: &Corpus) -> Vec<(usize, usize, SegmentRef)> {
    // (phone, speaker index, segment)
    let spk_index: HashMap<&str, usize> = corpus
        .speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut spans = Vec::new();
    for (ui, utt) in corpus.utterances.iter().enumerate() {
        let Some(labels) = &utt.phone_labels else { continue };
        let spk = spk_index[utt.speaker_id.as_str()];
        let mut start = 0;
        for i in 1..=labels.len() {
            if i == labels.len() || labels[i] != labels[start] {
                if i - start >= MIN_SPAN_FRAMES {
                    spans.push((labels[start], spk, SegmentRef { utt: ui, start, end: i }));
                }
                start = i;
            }
        }
    }
    spans
}

/// Enumerates phone-pair/speaker-conditioned ABX triplets and subsamples to
/// `max_triplets` with the given seed.
pub fn build_abx_task(
    corpus: &Corpus,
    mode: AbxMode,
    max_triplets: usize,
    seed: u64,
) -> Result<Vec<AbxTriplet>> {
    if mode == AbxMode::Across && corpus.speakers.len() < 2 {
        return Err(AudError::Parameter("across mode needs at least 2 speakers".into()));
    }
    let spans = phone_spans(corpus);
    // Group by (phone, speaker).
    let mut by_phone_spk: BTreeMap<(usize, usize), Vec<SegmentRef>> = BTreeMap::new();
    let mut phones: Vec<usize> = Vec::new();
    let mut speakers: Vec<usize> = Vec::new();
    for &(phone, spk, seg) in &spans {
        by_phone_spk.entry((phone, spk)).or_default().push(seg);
        if !phones.contains(&phone) {
            phones.push(phone);
        }
        if !speakers.contains(&spk) {
            speakers.push(spk);
        }
    }
    phones.sort_unstable();
    speakers.sort_unstable();

    let mut triplets = Vec::new();
    for &pa in &phones {
        for &pb in &phones {
            if pa == pb {
                continue;
            }
            for &spk_ab in &speakers {
                let Some(a_pool) = by_phone_spk.get(&(pa, spk_ab)) else { continue };
                let Some(b_pool) = by_phone_spk.get(&(pb, spk_ab)) else { continue };
                match mode {
                    AbxMode::Within => {
                        // X: same speaker, phone pa, distinct from A.
                        for &a in a_pool {
                            for &b in b_pool {
                                for &x in a_pool {
                                    if x != a {
                                        triplets.push(AbxTriplet {
                                            a,
                                            b,
                                            x,
                                            category_a: pa,
                                            category_b: pb,
                                        });
                                    }
                                }
                            }
                        }
                    }
                    AbxMode::Across => {
                        for &spk_x in &speakers {
                            if spk_x == spk_ab {
                                continue;
                            }
                            let Some(x_pool) = by_phone_spk.get(&(pa, spk_x)) else {
                                continue;
                            };
                            for &a in a_pool {
                                for &b in b_pool {
                                    for &x in x_pool {
                                        triplets.push(AbxTriplet {
                                            a,
                                            b,
                                            x,
                                            category_a: pa,
                                            category_b: pb,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if triplets.is_empty() {
        return Err(AudError::Parameter("no valid ABX triplets".into()));
    }
    if triplets.len() > max_triplets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        triplets.shuffle(&mut rng);
        triplets.truncate(max_triplets);
    }
    Ok(triplets)
}

/// Scores a task over per-utterance frame matrices (indexed like the corpus
/// the task was built from).
pub fn score_abx(
    features: &[Vec<Vec<f64>>],
    task: &[AbxTriplet],
    mode: AbxMode,
) -> Result<AbxReport> {
    let slice = |r: &SegmentRef| -> Result<Vec<Vec<f64>>> {
        let utt = features
            .get(r.utt)
            .ok_or_else(|| AudError::UnknownUtterance(format!("index {}", r.utt)))?;
        if r.end > utt.len() {
            return Err(AudError::UnknownUtterance(format!(
                "span {}..{} beyond utterance {} ({} frames)",
                r.start,
                r.end,
                r.utt,
                utt.len()
            )));
        }
        Ok(utt[r.start..r.end].to_vec())
    };
    let mut cells: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for t in task {
        let a = slice(&t.a)?;
        let b = slice(&t.b)?;
        let x = slice(&t.x)?;
        let dax = dtw_distance(&a, &x);
        let dbx = dtw_distance(&b, &x);
        let err = if dax > dbx {
            1.0
        } else if dax == dbx {
            0.5
        } else {
            0.0
        };
        let key = (t.category_a.min(t.category_b), t.category_a.max(t.category_b));
        let cell = cells.entry(key).or_insert((0.0, 0));
        cell.0 += err;
        cell.1 += 1;
    }
    let mut per_pair = BTreeMap::new();
    let mut macro_sum = 0.0;
    for (&key, &(errs, count)) in &cells {
        let rate = 100.0 * errs / count as f64;
        per_pair.insert(key, (rate, count));
        macro_sum += rate;
    }
    Ok(AbxReport {
        mode,
        error_rate: macro_sum / per_pair.len() as f64,
        per_pair,
        triplet_count: task.len(),
    })
}
