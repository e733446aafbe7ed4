//! Dirichlet-process Gaussian mixture clustering of frames by sequential
//! collapsed Gibbs sampling with a Normal-inverse-Wishart prior.
//!
//! Sufficient statistics are maintained incrementally per cluster; the
//! posterior predictive is a multivariate Student-t whose Cholesky factor is
//! cached until the cluster mutates.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{AudError, Result};
use crate::nnkit::log_sum_exp;

#[derive(Debug, Clone)]
pub struct NiwPrior {
    pub m0: DVector<f64>,
    pub k0: f64,
    pub v0: f64,
    pub s0: DMatrix<f64>,
}

impl NiwPrior {
    pub fn validate(&self) -> Result<()> {
        let d = self.m0.len() as f64;
        if self.k0 <= 0.0 {
            return Err(AudError::Parameter("k0 must be > 0".into()));
        }
        if self.v0 <= d - 1.0 {
            return Err(AudError::Parameter("v0 must exceed dim - 1".into()));
        }
        if Cholesky::new(self.s0.clone()).is_none() {
            return Err(AudError::Parameter("S0 must be positive definite".into()));
        }
        Ok(())
    }

    /// Data-driven default: mean at the data mean, diagonal scatter at a
    /// tenth of the per-dimension variances, v0 = dim + 3, k0 = 0.1.
    ///
    /// The small k0 keeps a freshly opened cluster's predictive centered on
    /// its first point instead of being pulled toward the global mean, which
    /// is what lets the sequential sampler escape merged clusters.
    pub fn from_data(data: &[Vec<f64>]) -> Result<Self> {
        if data.is_empty() {
            return Err(AudError::Parameter("empty feature set".into()));
        }
        let d = data[0].len();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for x in data {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for x in data {
            for ((v, xi), m) in var.iter_mut().zip(x).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let s0 = DMatrix::from_diagonal(&DVector::from_iterator(
            d,
            var.iter().map(|v| (0.1 * v / n).max(1e-6)),
        ));
        Ok(Self { m0: DVector::from_vec(mean), k0: 0.1, v0: d as f64 + 3.0, s0 })
    }
}

#[derive(Debug, Clone)]
struct PredCache {
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    logdet: f64,
    dof: f64,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub count: usize,
    pub sum: DVector<f64>,
    pub outer: DMatrix<f64>,
    cache: Option<PredCache>,
}

impl Cluster {
    fn empty(dim: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(dim),
            outer: DMatrix::zeros(dim, dim),
            cache: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DpgmmState {
    /// Per-frame cluster id (key into `clusters`).
    pub assignments: Vec<usize>,
    pub clusters: BTreeMap<usize, Cluster>,
    pub alpha: f64,
    pub prior: NiwPrior,
    next_id: usize,
}

/// Posterior NIW parameters and the resulting Student-t predictive pieces
/// for a set of sufficient statistics (empty stats give the prior).
fn predictive_cache(prior: &NiwPrior, count: usize, sum: &DVector<f64>, outer: &DMatrix<f64>) -> PredCache {
    let d = prior.m0.len();
    let n = count as f64;
    let kn = prior.k0 + n;
    let vn = prior.v0 + n;
    let (mn, sn) = if count == 0 {
        (prior.m0.clone(), prior.s0.clone())
    } else {
        let xbar = sum / n;
        let mn = (&prior.m0 * prior.k0 + sum) / kn;
        let centered = outer - (&xbar * xbar.transpose()) * n;
        let dm = &xbar - &prior.m0;
        let sn = &prior.s0 + centered + (&dm * dm.transpose()) * (prior.k0 * n / kn);
        (mn, sn)
    };
    let dof = vn - d as f64 + 1.0;
    let scale = sn * ((kn + 1.0) / (kn * dof));
    let chol = Cholesky::new(scale.clone())
        .or_else(|| {
            // Regularize marginally ill-conditioned scatter.
            let mut s = scale;
            for i in 0..d {
                s[(i, i)] += 1e-9;
            }
            Cholesky::new(s)
        })
        .expect("predictive scale not positive definite");
    let logdet = 2.0 * (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    PredCache { mean: mn, chol, logdet, dof }
}

fn student_t_logpdf(cache: &PredCache, x: &DVector<f64>) -> f64 {
    let d = cache.mean.len() as f64;
    let nu = cache.dof;
    let diff = x - &cache.mean;
    let solved = cache.chol.solve(&DMatrix::from_column_slice(diff.len(), 1, diff.as_slice()));
    let maha: f64 = diff.dot(&DVector::from_column_slice(solved.as_slice()));
    ln_gamma((nu + d) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * d * (nu * std::f64::consts::PI).ln()
        - 0.5 * cache.logdet
        - 0.5 * (nu + d) * (1.0 + maha / nu).ln()
}

impl DpgmmState {
    /// All frames start in a single cluster.
    pub fn init_single_cluster(data: &[DVector<f64>], alpha: f64, prior: NiwPrior) -> Result<Self> {
        if data.is_empty() {
            return Err(AudError::Parameter("empty feature set".into()));
        }
        if alpha <= 0.0 {
            return Err(AudError::Parameter("alpha must be > 0".into()));
        }
        prior.validate()?;
        let dim = prior.m0.len();
        let mut state = Self {
            assignments: vec![0; data.len()],
            clusters: BTreeMap::new(),
            alpha,
            prior,
            next_id: 1,
        };
        let mut cluster = Cluster::empty(dim);
        for x in data {
            cluster.count += 1;
            cluster.sum += x;
            cluster.outer += x * x.transpose();
        }
        state.clusters.insert(0, cluster);
        Ok(state)
    }

    /// Frames start spread round-robin over `k_init` clusters. Starting from
    /// many clusters lets the sampler merge its way down; starting from one
    /// cluster mixes far too slowly on tightly clustered data.
    pub fn init_round_robin(
        data: &[DVector<f64>],
        k_init: usize,
        alpha: f64,
        prior: NiwPrior,
    ) -> Result<Self> {
        if k_init == 0 {
            return Err(AudError::Parameter("k_init must be >= 1".into()));
        }
        let mut state = Self::init_single_cluster(data, alpha, prior)?;
        if k_init == 1 {
            return Ok(state);
        }
        for (i, x) in data.iter().enumerate() {
            let target = i % k_init;
            if target != 0 {
                state.remove_point(0, x)?;
                state.add_point(target, x);
                state.assignments[i] = target;
            }
        }
        state.next_id = k_init;
        Ok(state)
    }

    pub fn add_point(&mut self, cluster_id: usize, x: &DVector<f64>) {
        let dim = self.prior.m0.len();
        let cluster = self
            .clusters
            .entry(cluster_id)
            .or_insert_with(|| Cluster::empty(dim));
        cluster.count += 1;
        cluster.sum += x;
        cluster.outer += x * x.transpose();
        cluster.cache = None;
    }

    /// Removes a point's statistics; deletes the cluster when it empties.
    pub fn remove_point(&mut self, cluster_id: usize, x: &DVector<f64>) -> Result<()> {
        let cluster = self.clusters.get_mut(&cluster_id).ok_or_else(|| {
            AudError::Logic(format!("remove from unknown cluster {cluster_id}"))
        })?;
        if cluster.count == 0 {
            return Err(AudError::Logic("cluster count underflow".into()));
        }
        cluster.count -= 1;
        cluster.sum -= x;
        cluster.outer -= x * x.transpose();
        cluster.cache = None;
        if cluster.count == 0 {
            self.clusters.remove(&cluster_id);
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Log posterior predictive of `x` under an existing cluster
    /// (`Some(id)`) or a new one drawn from the prior (`None`).
    pub fn predictive_logpdf(&mut self, cluster_id: Option<usize>, x: &DVector<f64>) -> f64 {
        match cluster_id {
            Some(id) => {
                let prior = &self.prior;
                let cluster = self.clusters.get_mut(&id).expect("unknown cluster");
                if cluster.cache.is_none() {
                    cluster.cache =
                        Some(predictive_cache(prior, cluster.count, &cluster.sum, &cluster.outer));
                }
                student_t_logpdf(cluster.cache.as_ref().unwrap(), x)
            }
            None => {
                let dim = self.prior.m0.len();
                let cache = predictive_cache(
                    &self.prior,
                    0,
                    &DVector::zeros(dim),
                    &DMatrix::zeros(dim, dim),
                );
                student_t_logpdf(&cache, x)
            }
        }
    }

    /// One collapsed Gibbs sweep over all frames in index order.
    pub fn gibbs_sweep(&mut self, data: &[DVector<f64>], rng: &mut ChaCha8Rng) {
        for i in 0..data.len() {
            let x = &data[i];
            let old = self.assignments[i];
            self.remove_point(old, x).expect("state consistent with data");

            let ids: Vec<usize> = self.clusters.keys().copied().collect();
            let mut log_weights = Vec::with_capacity(ids.len() + 1);
            for &id in &ids {
                let n_k = self.clusters[&id].count as f64;
                log_weights.push(n_k.ln() + self.predictive_logpdf(Some(id), x));
            }
            log_weights.push(self.alpha.ln() + self.predictive_logpdf(None, x));

            let lse = log_sum_exp(&log_weights);
            let u: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut choice = log_weights.len() - 1;
            for (j, &lw) in log_weights.iter().enumerate() {
                acc += (lw - lse).exp();
                if u < acc {
                    choice = j;
                    break;
                }
            }
            let new_id = if choice < ids.len() { ids[choice] } else { self.fresh_id() };
            self.add_point(new_id, x);
            self.assignments[i] = new_id;
        }
    }

    /// Recomputes all sufficient statistics from scratch and returns the
    /// largest absolute deviation from the incremental ones.
    pub fn stats_deviation(&self, data: &[DVector<f64>]) -> f64 {
        let dim = self.prior.m0.len();
        let mut batch: BTreeMap<usize, Cluster> = BTreeMap::new();
        for (i, x) in data.iter().enumerate() {
            let c = batch
                .entry(self.assignments[i])
                .or_insert_with(|| Cluster::empty(dim));
            c.count += 1;
            c.sum += x;
            c.outer += x * x.transpose();
        }
        let mut max_dev: f64 = 0.0;
        if batch.len() != self.clusters.len() {
            return f64::INFINITY;
        }
        for (id, b) in &batch {
            let Some(c) = self.clusters.get(id) else { return f64::INFINITY };
            if b.count != c.count {
                return f64::INFINITY;
            }
            max_dev = max_dev.max((&b.sum - &c.sum).abs().max());
            max_dev = max_dev.max((&b.outer - &c.outer).abs().max());
        }
        max_dev
    }
}

#[derive(Debug, Clone)]
pub struct ClusterSummary {
    pub id: usize,
    pub count: usize,
    pub mean_norm: f64,
}

/// Runs collapsed Gibbs clustering and returns densely renumbered per-frame
/// labels plus the number of clusters.
pub fn run_clustering(
    features: &[Vec<f64>],
    iters: usize,
    alpha: f64,
    seed: u64,
) -> Result<(Vec<usize>, usize)> {
    run_clustering_init(features, iters, alpha, seed, DEFAULT_INIT_CLUSTERS)
}

/// Default number of initial round-robin clusters for [`run_clustering`].
pub const DEFAULT_INIT_CLUSTERS: usize = 50;

/// [`run_clustering`] with an explicit initial cluster count.
pub fn run_clustering_init(
    features: &[Vec<f64>],
    iters: usize,
    alpha: f64,
    seed: u64,
    k_init: usize,
) -> Result<(Vec<usize>, usize)> {
    if iters < 1 {
        return Err(AudError::Parameter("iters must be >= 1".into()));
    }
    let prior = NiwPrior::from_data(features)?;
    let data: Vec<DVector<f64>> = features
        .iter()
        .map(|f| DVector::from_column_slice(f))
        .collect();
    let k_init = k_init.min(data.len()).max(1);
    let mut state = DpgmmState::init_round_robin(&data, k_init, alpha, prior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..iters {
        state.gibbs_sweep(&data, &mut rng);
    }
    Ok(renumber(&state.assignments))
}

/// Densely renumbers cluster ids to 0..K-1 in order of first appearance.
pub fn renumber(assignments: &[usize]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut labels = Vec::with_capacity(assignments.len());
    for &a in assignments {
        let next = map.len();
        let id = *map.entry(a).or_insert(next);
        labels.push(id);
    }
    (labels, map.len())
}

pub fn cluster_summaries(features: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<ClusterSummary> {
    let dim = features.first().map_or(0, |f| f.len());
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (f, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(f) {
            *s += x;
        }
    }
    (0..k)
        .map(|id| {
            let norm = if counts[id] > 0 {
                sums[id]
                    .iter()
                    .map(|s| (s / counts[id] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            } else {
                0.0
            };
            ClusterSummary { id, count: counts[id], mean_norm: norm }
        })
        .collect()
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |&m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let comb2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_a: f64 = table.iter().map(|row| comb2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| comb2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = comb2(n);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}
