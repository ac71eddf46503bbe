//! Gradient-based posterior sampling.
//!
//! [`nuts_sample`] runs independent chains of the No-U-Turn sampler (with
//! multinomial trajectory sampling) in parallel. Warmup adapts the step size
//! by dual averaging toward `target_accept` and estimates the inverse mass
//! matrix (diagonal by default, optionally dense) over doubling windows. Chain `i` draws from its own stream of
//! a ChaCha8 generator seeded with the master seed, so results depend only on
//! the seed and the chain index.

mod adapt;
pub mod diagnostics;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use adapt::{DualAveraging, MetricEstimator, RunningCovariance, RunningVariance, WarmupSchedule};
use nuts::{Hamiltonian, Metric, PhasePoint};

pub use diagnostics::{ess, split_rhat, Diagnostic};
pub use nuts::MAX_ENERGY_ERROR;

/// A differentiable log density over `R^dim`.
///
/// Implementations return `-∞` (not an error) outside the support; the
/// gradient is then ignored.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Number of leading coordinates a dense metric couples; the rest get
    /// a diagonal metric.
    fn dense_block(&self) -> usize {
        self.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    /// Half-width of the uniform perturbation applied to the initial point of
    /// each chain.
    pub init_jitter: f64,
    pub metric: MetricKind,
}

/// Shape of the adapted inverse mass matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Diagonal,
    /// Full covariance over the target's leading block (see
    /// [`LogDensity::dense_block`]), diagonal elsewhere. Worth its cost
    /// when those parameters are strongly correlated.
    Dense,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            n_warmup: 1000,
            n_draws: 5000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
            init_jitter: 0.1,
            metric: MetricKind::Diagonal,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_warmup == 0 || self.n_draws == 0 || self.max_tree_depth == 0
        {
            return Err(Error::Config(
                "sampler counts must all be at least 1".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub chain: usize,
    /// Post-warmup draws, one row per iteration.
    pub draws: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    pub mean_accept: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    /// Diagonal of the adapted inverse mass matrix.
    pub inv_mass: Vec<f64>,
    pub mean_tree_depth: f64,
    pub max_depth_hits: usize,
    /// Gradient evaluations over warmup and sampling.
    pub n_leapfrog: usize,
}

impl ChainResult {
    /// More than 10% of post-warmup transitions diverged.
    pub fn divergence_warning(&self) -> bool {
        self.divergences * 10 > self.draws.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}

/// Largest log-density drop accepted when jittering the initial point.
/// Without a bound, a jitter can land somewhere finite but hopeless (for
/// example an explosive autoregression) where the step size collapses.
const MAX_INIT_DROP: f64 = 1000.0;

fn chain_init<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> PhasePoint {
    let start = PhasePoint::new(target, init.to_vec());
    let mut scale = jitter;
    if scale > 0.0 {
        for attempt in 0..100 {
            if attempt > 0 && attempt % 10 == 0 {
                scale *= 0.5;
            }
            let q: Vec<f64> = init
                .iter()
                .map(|x| x + rng.random_range(-scale..=scale))
                .collect();
            let z = PhasePoint::new(target, q);
            let near = !start.logp.is_finite() || z.logp >= start.logp - MAX_INIT_DROP;
            if z.logp.is_finite() && near && z.grad.iter().all(|g| g.is_finite()) {
                return z;
            }
        }
    }
    start
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainResult> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);

    let mut z = chain_init(target, init, cfg.init_jitter, &mut rng);
    if !z.logp.is_finite() {
        return Err(Error::Sampler(format!(
            "log density is not finite at the initial point of chain {chain}"
        )));
    }
    let mut metric = Metric::Diagonal(vec![1.0; dim]);
    let mut eps = Hamiltonian {
        target,
        metric: &metric,
    }
    .find_reasonable_step(&z, 1.0, &mut rng);
    let mut da = DualAveraging::new(cfg.target_accept, eps);
    let mut schedule = WarmupSchedule::new(cfg.n_warmup);
    let mut var_est = match cfg.metric {
        MetricKind::Diagonal => MetricEstimator::Diagonal(RunningVariance::new(dim)),
        MetricKind::Dense => {
            let k = target.dense_block().min(dim);
            MetricEstimator::Dense(RunningCovariance::new(k), RunningVariance::new(dim - k))
        }
    };

    let mut out = ChainResult {
        chain,
        draws: Vec::with_capacity(cfg.n_draws),
        logp: Vec::with_capacity(cfg.n_draws),
        mean_accept: 0.0,
        divergences: 0,
        warmup_divergences: 0,
        step_size: 0.0,
        inv_mass: Vec::new(),
        mean_tree_depth: 0.0,
        max_depth_hits: 0,
        n_leapfrog: 0,
    };
    let mut accept_sum = 0.0;
    let mut depth_sum = 0usize;

    for iter in 0..cfg.n_warmup + cfg.n_draws {
        let ham = Hamiltonian {
            target,
            metric: &metric,
        };
        ham.sample_momentum(&mut z, &mut rng);
        let (next, info) = ham.transition(&z, eps, cfg.max_tree_depth, &mut rng);
        z = next;
        out.n_leapfrog += info.n_leapfrog;

        if iter < cfg.n_warmup {
            if info.divergent {
                out.warmup_divergences += 1;
            }
            eps = da.update(info.accept_stat);
            if let Some(m) = schedule.observe(&z.q, &mut var_est) {
                metric = m;
                let ham = Hamiltonian {
                    target,
                    metric: &metric,
                };
                eps = ham.find_reasonable_step(&z, eps, &mut rng);
                da.restart(eps);
            }
            if iter + 1 == cfg.n_warmup {
                eps = da.final_step_size();
            }
        } else {
            if info.divergent {
                out.divergences += 1;
            }
            if info.depth >= cfg.max_tree_depth {
                out.max_depth_hits += 1;
            }
            accept_sum += info.accept_stat;
            depth_sum += info.depth;
            out.draws.push(z.q.clone());
            out.logp.push(z.logp);
        }
    }
    let n = cfg.n_draws as f64;
    out.mean_accept = accept_sum / n;
    out.mean_tree_depth = depth_sum as f64 / n;
    out.step_size = eps;
    out.inv_mass = metric.diagonal();
    if out.divergence_warning() {
        log::warn!(
            "chain {chain}: {} of {} transitions diverged",
            out.divergences,
            cfg.n_draws
        );
    }
    Ok(out)
}

/// Runs `cfg.n_chains` independent NUTS chains from `init`.
pub fn nuts_sample<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<ChainResult>> {
    cfg.validate()?;
    if init.len() != target.dim() {
        return Err(Error::Dimension {
            expected: target.dim(),
            got: init.len(),
        });
    }
    let mut grad = vec![0.0; init.len()];
    if !target.logp_and_grad(init, &mut grad).is_finite() {
        return Err(Error::Sampler(
            "log density is not finite at the initial point".into(),
        ));
    }
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, init, cfg, c))
        .collect()
}

/// Per-parameter convergence summaries over all chains.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSummary {
    pub rhat: Vec<Diagnostic>,
    pub ess: Vec<Diagnostic>,
    pub divergences: usize,
}

impl ConvergenceSummary {
    pub fn from_chains(chains: &[ChainResult]) -> Self {
        let draws: Vec<&[Vec<f64>]> = chains.iter().map(|c| c.draws.as_slice()).collect();
        Self::from_draws(&draws, chains.iter().map(|c| c.divergences).sum())
    }

    /// Summaries of arbitrary per-chain draw rows (for example constrained
    /// parameters rather than the sampler's coordinates).
    pub fn from_draws(chains: &[&[Vec<f64>]], divergences: usize) -> Self {
        let dim = chains.first().map_or(0, |c| c.first().map_or(0, Vec::len));
        let mut rhat = Vec::with_capacity(dim);
        let mut ess_v = Vec::with_capacity(dim);
        for j in 0..dim {
            let cols: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.iter().map(|d| d[j]).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            rhat.push(split_rhat(&refs));
            ess_v.push(ess(&refs));
        }
        Self {
            rhat,
            ess: ess_v,
            divergences,
        }
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat
            .iter()
            .map(|d| d.value)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess
            .iter()
            .map(|d| d.value)
            .fold(f64::INFINITY, f64::min)
    }

    /// Fraction of parameters whose R-hat exceeds `threshold`.
    pub fn fraction_rhat_above(&self, threshold: f64) -> f64 {
        if self.rhat.is_empty() {
            return 0.0;
        }
        self.rhat.iter().filter(|d| !(d.value <= threshold)).count() as f64 / self.rhat.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent Gaussian with per-coordinate standard deviations.
    struct DiagGaussian(Vec<f64>);

    impl LogDensity for DiagGaussian {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let s2 = self.0[i] * self.0[i];
                lp -= 0.5 * x[i] * x[i] / s2;
                grad[i] = -x[i] / s2;
            }
            lp
        }
    }

    struct Correlated2D;

    impl LogDensity for Correlated2D {
        fn dim(&self) -> usize {
            2
        }
        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let rho: f64 = 0.9;
            let det = 1.0 - rho * rho;
            let (a, b) = (x[0], x[1]);
            grad[0] = -(a - rho * b) / det;
            grad[1] = -(b - rho * a) / det;
            -0.5 * (a * a - 2.0 * rho * a * b + b * b) / det
        }
    }

    /// Standard normal restricted to x > 0.
    struct HalfLine;

    impl LogDensity for HalfLine {
        fn dim(&self) -> usize {
            1
        }
        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = -x[0];
            if x[0] <= 0.0 {
                f64::NEG_INFINITY
            } else {
                -0.5 * x[0] * x[0]
            }
        }
    }

    fn pooled(chains: &[ChainResult], j: usize) -> Vec<f64> {
        chains.iter().flat_map(|c| c.column(j)).collect()
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (
            m,
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
        )
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = SamplerConfig {
            seed: 7,
            ..Default::default()
        };
        let chains = nuts_sample(&DiagGaussian(vec![1.0]), &[0.5], &cfg).unwrap();
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[0].draws.len(), 5000);
        let xs = pooled(&chains, 0);
        let (m, v) = mean_var(&xs);
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(0)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let n_eff = ess(&refs).value;
        assert!(m.abs() < 3.0 * (v / n_eff).sqrt(), "mean {m}, ess {n_eff}");
        assert!((v - 1.0).abs() < 0.1, "variance {v}");
        assert_eq!(chains.iter().map(|c| c.divergences).sum::<usize>(), 0);
    }

    #[test]
    fn correlated_gaussian() {
        let cfg = SamplerConfig {
            seed: 3,
            n_draws: 4000,
            ..Default::default()
        };
        let chains = nuts_sample(&Correlated2D, &[0.0, 0.0], &cfg).unwrap();
        let a = pooled(&chains, 0);
        let b = pooled(&chains, 1);
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (a.len() as f64 - 1.0);
        let corr = cov / (va * vb).sqrt();
        assert!((corr - 0.9).abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn dense_metric_learns_correlation() {
        let cfg = SamplerConfig {
            seed: 3,
            n_draws: 4000,
            metric: MetricKind::Dense,
            ..Default::default()
        };
        let chains = nuts_sample(&Correlated2D, &[0.0, 0.0], &cfg).unwrap();
        let a = pooled(&chains, 0);
        let b = pooled(&chains, 1);
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (a.len() as f64 - 1.0);
        assert!((cov / (va * vb).sqrt() - 0.9).abs() < 0.05);
        // the adapted metric whitens the target, so short trees suffice
        assert!(
            chains.iter().all(|c| c.mean_tree_depth < 2.5),
            "{:?}",
            chains.iter().map(|c| c.mean_tree_depth).collect::<Vec<_>>()
        );
        assert!(chains.iter().all(|c| (c.inv_mass[0] - 1.0).abs() < 0.3));
    }

    #[test]
    fn hard_support_bound_is_respected() {
        let cfg = SamplerConfig {
            seed: 1,
            n_warmup: 300,
            n_draws: 2000,
            ..Default::default()
        };
        let chains = nuts_sample(&HalfLine, &[1.0], &cfg).unwrap();
        assert!(chains.iter().all(|c| c.draws.iter().all(|d| d[0] > 0.0)));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SamplerConfig {
            seed: 99,
            n_warmup: 200,
            n_draws: 300,
            ..Default::default()
        };
        let target = DiagGaussian(vec![1.0, 3.0, 0.2]);
        let a = nuts_sample(&target, &[0.1, 0.1, 0.1], &cfg).unwrap();
        let b = nuts_sample(&target, &[0.1, 0.1, 0.1], &cfg).unwrap();
        assert_eq!(a, b);
        let c = nuts_sample(
            &target,
            &[0.1, 0.1, 0.1],
            &SamplerConfig { seed: 100, ..cfg },
        )
        .unwrap();
        assert_ne!(a[0].draws, c[0].draws);
    }

    #[test]
    fn chain_results_depend_only_on_chain_index() {
        let target = DiagGaussian(vec![1.0, 2.0]);
        let two = SamplerConfig {
            seed: 5,
            n_warmup: 150,
            n_draws: 200,
            ..Default::default()
        };
        let three = SamplerConfig {
            n_chains: 3,
            ..two.clone()
        };
        let a = nuts_sample(&target, &[0.0, 0.0], &two).unwrap();
        let b = nuts_sample(&target, &[0.0, 0.0], &three).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn rejects_bad_configuration_and_init() {
        let target = DiagGaussian(vec![1.0]);
        let bad = SamplerConfig {
            target_accept: 1.0,
            ..Default::default()
        };
        assert!(nuts_sample(&target, &[0.0], &bad).is_err());
        let bad = SamplerConfig {
            n_draws: 0,
            ..Default::default()
        };
        assert!(nuts_sample(&target, &[0.0], &bad).is_err());
        assert!(nuts_sample(&HalfLine, &[-1.0], &SamplerConfig::default()).is_err());
        assert!(nuts_sample(&target, &[0.0, 1.0], &SamplerConfig::default()).is_err());
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = DiagGaussian(vec![1.0, 0.5, 4.0]);
        let inv_mass = vec![1.0, 0.3, 5.0];
        let metric = Metric::Diagonal(inv_mass);
        let ham = Hamiltonian {
            target: &target,
            metric: &metric,
        };
        let mut z = PhasePoint::new(&target, vec![0.3, -1.2, 2.0]);
        z.p = vec![0.7, 0.1, -0.4];
        let start = z.clone();
        for _ in 0..25 {
            ham.leapfrog(&mut z, 0.1);
        }
        for p in z.p.iter_mut() {
            *p = -*p;
        }
        for _ in 0..25 {
            ham.leapfrog(&mut z, 0.1);
        }
        for i in 0..3 {
            assert!((z.q[i] - start.q[i]).abs() < 1e-10);
            assert!((z.p[i] + start.p[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn leapfrog_preserves_volume() {
        // The leapfrog map is linear on a Gaussian target; its Jacobian
        // determinant, estimated column by column, must be 1.
        let target = DiagGaussian(vec![1.0, 2.0]);
        let inv_mass = vec![1.0, 1.0];
        let metric = Metric::Diagonal(inv_mass);
        let ham = Hamiltonian {
            target: &target,
            metric: &metric,
        };
        let map = |q: [f64; 2], p: [f64; 2]| {
            let mut z = PhasePoint::new(&target, q.to_vec());
            z.p = p.to_vec();
            for _ in 0..10 {
                ham.leapfrog(&mut z, 0.3);
            }
            [z.q[0], z.q[1], z.p[0], z.p[1]]
        };
        let base = map([0.0, 0.0], [0.0, 0.0]);
        let mut jac = nalgebra::Matrix4::<f64>::zeros();
        for k in 0..4 {
            let mut x = [0.0; 4];
            x[k] = 1.0;
            let out = map([x[0], x[1]], [x[2], x[3]]);
            for r in 0..4 {
                jac[(r, k)] = out[r] - base[r];
            }
        }
        assert!((jac.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn energy_error_stays_bounded() {
        use rand_distr::StandardNormal;
        let sds: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let target = DiagGaussian(sds.clone());
        let inv_mass: Vec<f64> = sds.iter().map(|s| s * s).collect();
        let metric = Metric::Diagonal(inv_mass);
        let ham = Hamiltonian {
            target: &target,
            metric: &metric,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q: Vec<f64> = sds
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut z = PhasePoint::new(&target, q);
        ham.sample_momentum(&mut z, &mut rng);
        let h0 = ham.energy(&z);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            ham.leapfrog(&mut z, 0.5);
            worst = worst.max((ham.energy(&z) - h0).abs());
        }
        assert!(worst < 0.5, "energy error {worst}");
    }
}
