//! Multinomial No-U-Turn transitions with a Euclidean (diagonal or dense)
//! metric.
//!
//! Trajectories grow by doubling in a random direction. Each new subtree is
//! merged by multinomial sampling over its states (biased toward the newer
//! subtree at the top level), and expansion stops when the generalized
//! no-U-turn criterion fails on the whole trajectory, on either subtree, or
//! on the two extended "bridge" segments that join the subtrees.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

/// Energy error above which a trajectory is declared divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub(crate) fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_and_grad(&q, &mut grad);
        let p = vec![0.0; q.len()];
        Self { q, p, grad, logp }
    }
}

/// Outcome of a single transition.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
    pub divergent: bool,
}

/// Inverse mass matrix.
#[derive(Debug, Clone)]
pub(crate) enum Metric {
    Diagonal(Vec<f64>),
    /// Full covariance over the leading block (with its lower Cholesky
    /// factor) and a diagonal over the remaining coordinates.
    Dense {
        cov: DMatrix<f64>,
        chol: DMatrix<f64>,
        tail: Vec<f64>,
    },
}

impl Metric {
    /// Dense metric from a block covariance estimate; `None` if it is not
    /// positive definite.
    pub(crate) fn dense(cov: DMatrix<f64>, tail: Vec<f64>) -> Option<Self> {
        let chol = cov.clone().cholesky()?.unpack();
        Some(Metric::Dense { cov, chol, tail })
    }

    pub(crate) fn diagonal(&self) -> Vec<f64> {
        match self {
            Metric::Diagonal(m) => m.clone(),
            Metric::Dense { cov, tail, .. } => cov.diagonal().iter().chain(tail).copied().collect(),
        }
    }

    /// `M⁻¹ p`.
    fn apply(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Metric::Diagonal(m) => p.iter().zip(m).map(|(pi, m)| pi * m).collect(),
            Metric::Dense { cov, tail, .. } => {
                let k = cov.nrows();
                let head = cov * DVector::from_column_slice(&p[..k]);
                head.iter()
                    .copied()
                    .chain(p[k..].iter().zip(tail).map(|(pi, m)| pi * m))
                    .collect()
            }
        }
    }
}

pub(crate) struct Hamiltonian<'a, T: LogDensity + ?Sized> {
    pub target: &'a T,
    pub metric: &'a Metric,
}

impl<T: LogDensity + ?Sized> Hamiltonian<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        match self.metric {
            Metric::Diagonal(m) => 0.5 * p.iter().zip(m).map(|(pi, m)| pi * pi * m).sum::<f64>(),
            Metric::Dense { .. } => 0.5 * dot(p, &self.metric.apply(p)),
        }
    }

    pub(crate) fn energy(&self, z: &PhasePoint) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        self.metric.apply(p)
    }

    pub(crate) fn sample_momentum<R: Rng>(&self, z: &mut PhasePoint, rng: &mut R) {
        match self.metric {
            Metric::Diagonal(m) => {
                for (pi, m) in z.p.iter_mut().zip(m) {
                    let n: f64 = rng.sample(StandardNormal);
                    *pi = n / m.sqrt();
                }
            }
            Metric::Dense { chol, tail, .. } => {
                // p ~ N(0, M) with M = (L L')⁻¹ on the block: solve L' p = n
                let k = chol.nrows();
                let n = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let p = chol
                    .transpose()
                    .solve_upper_triangular(&n)
                    .expect("Cholesky factor is nonsingular");
                z.p[..k].copy_from_slice(p.as_slice());
                for (pi, m) in z.p[k..].iter_mut().zip(tail) {
                    let n: f64 = rng.sample(StandardNormal);
                    *pi = n / m.sqrt();
                }
            }
        }
    }

    /// One leapfrog step of size `eps` (negative to integrate backward).
    pub(crate) fn leapfrog(&self, z: &mut PhasePoint, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        match self.metric {
            Metric::Diagonal(m) => {
                for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(m) {
                    *q += eps * m * p;
                }
            }
            Metric::Dense { .. } => {
                for (q, v) in z.q.iter_mut().zip(self.metric.apply(&z.p)) {
                    *q += eps * v;
                }
            }
        }
        z.logp = self.target.logp_and_grad(&z.q, &mut z.grad);
        if z.logp.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.grad) {
                *p += 0.5 * eps * g;
            }
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct Accumulator {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
    h0: f64,
}

/// Edge momenta and momentum sum of a (sub)trajectory.
struct Span {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    rho: Vec<f64>,
}

impl<T: LogDensity + ?Sized> Hamiltonian<'_, T> {
    /// Builds a subtree of `2^depth` states starting from `z`, which is left
    /// at the far edge. Returns the span, the subtree's multinomial proposal,
    /// its log weight, and whether it is valid.
    fn build_tree<R: Rng>(
        &self,
        depth: usize,
        z: &mut PhasePoint,
        eps: f64,
        acc: &mut Accumulator,
        rng: &mut R,
    ) -> (Span, PhasePoint, f64, bool) {
        if depth == 0 {
            self.leapfrog(z, eps);
            acc.n_leapfrog += 1;
            let h = self.energy(z);
            if h - acc.h0 > MAX_ENERGY_ERROR {
                acc.divergent = true;
            }
            let log_w = acc.h0 - h;
            acc.sum_metro_prob += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            let ps = self.p_sharp(&z.p);
            let span = Span {
                p_sharp_beg: ps.clone(),
                p_sharp_end: ps,
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                rho: z.p.clone(),
            };
            return (span, z.clone(), log_w, !acc.divergent);
        }

        let (init, prop_init, lw_init, ok) = self.build_tree(depth - 1, z, eps, acc, rng);
        if !ok {
            return (init, prop_init, lw_init, false);
        }
        let (fin, prop_final, lw_final, ok) = self.build_tree(depth - 1, z, eps, acc, rng);
        let lw_subtree = log_sum_exp(lw_init, lw_final);
        if !ok {
            return (init, prop_init, lw_subtree, false);
        }

        let take_final = if lw_final > lw_subtree {
            true
        } else {
            rng.random::<f64>() < (lw_final - lw_subtree).exp()
        };
        let proposal = if take_final { prop_final } else { prop_init };

        let rho = add(&init.rho, &fin.rho);
        let mut persist = criterion(&init.p_sharp_beg, &fin.p_sharp_end, &rho);
        let rho_ext = add(&init.rho, &fin.p_beg);
        persist &= criterion(&init.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&fin.rho, &init.p_end);
        persist &= criterion(&init.p_sharp_end, &fin.p_sharp_end, &rho_ext);

        let span = Span {
            p_sharp_beg: init.p_sharp_beg,
            p_sharp_end: fin.p_sharp_end,
            p_beg: init.p_beg,
            p_end: fin.p_end,
            rho,
        };
        (span, proposal, lw_subtree, persist)
    }

    /// One NUTS transition from `current`, which must carry fresh momentum.
    pub(crate) fn transition<R: Rng>(
        &self,
        current: &PhasePoint,
        eps: f64,
        max_depth: usize,
        rng: &mut R,
    ) -> (PhasePoint, TransitionInfo) {
        let mut acc = Accumulator {
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
            h0: self.energy(current),
        };
        let mut z_fwd = current.clone();
        let mut z_bck = current.clone();
        let mut sample = current.clone();

        // whole-trajectory span; "fwd" edge is the last state in time order
        let ps0 = self.p_sharp(&current.p);
        let mut bck = (ps0.clone(), current.p.clone()); // (p_sharp, p) at the backward edge
        let mut fwd = (ps0, current.p.clone());
        let mut rho = current.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;

        while depth < max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let (span, proposal, lw_subtree, valid) = if forward {
                self.build_tree(depth, &mut z_fwd, eps, &mut acc, rng)
            } else {
                self.build_tree(depth, &mut z_bck, -eps, &mut acc, rng)
            };
            if !valid {
                break;
            }
            depth += 1;

            if lw_subtree > log_sum_weight
                || rng.random::<f64>() < (lw_subtree - log_sum_weight).exp()
            {
                sample = proposal;
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lw_subtree);

            // Orient the new subtree in time order and join it to the old trajectory.
            let (old_beg, old_end, new_beg, new_end, old_rho, new_rho);
            if forward {
                old_beg = bck.clone();
                old_end = fwd.clone();
                new_beg = (span.p_sharp_beg.clone(), span.p_beg.clone());
                new_end = (span.p_sharp_end.clone(), span.p_end.clone());
                old_rho = rho.clone();
                new_rho = span.rho.clone();
            } else {
                // a backward subtree is built in reverse time
                old_beg = (span.p_sharp_end.clone(), span.p_end.clone());
                old_end = (span.p_sharp_beg.clone(), span.p_beg.clone());
                new_beg = bck.clone();
                new_end = fwd.clone();
                old_rho = span.rho.clone();
                new_rho = rho.clone();
            }
            rho = add(&old_rho, &new_rho);
            let mut persist = criterion(&old_beg.0, &new_end.0, &rho);
            let rho_ext = add(&old_rho, &new_beg.1);
            persist &= criterion(&old_beg.0, &new_beg.0, &rho_ext);
            let rho_ext = add(&new_rho, &old_end.1);
            persist &= criterion(&old_end.0, &new_end.0, &rho_ext);

            bck = old_beg;
            fwd = new_end;
            if !persist {
                break;
            }
        }

        let info = TransitionInfo {
            accept_stat: if acc.n_leapfrog > 0 {
                acc.sum_metro_prob / acc.n_leapfrog as f64
            } else {
                0.0
            },
            n_leapfrog: acc.n_leapfrog,
            depth,
            divergent: acc.divergent,
        };
        (sample, info)
    }

    /// Doubles or halves `eps` until a single leapfrog step crosses an
    /// acceptance probability of 0.8.
    pub(crate) fn find_reasonable_step<R: Rng>(
        &self,
        start: &PhasePoint,
        mut eps: f64,
        rng: &mut R,
    ) -> f64 {
        let log08 = 0.8f64.ln();
        let probe = |eps: f64, rng: &mut R| {
            let mut z = start.clone();
            self.sample_momentum(&mut z, rng);
            let h0 = self.energy(&z);
            self.leapfrog(&mut z, eps);
            h0 - self.energy(&z)
        };
        let delta = probe(eps, rng);
        let up = delta > log08;
        for _ in 0..100 {
            let delta = probe(eps, rng);
            if up && !(delta > log08) || !up && !(delta < log08) {
                break;
            }
            eps = if up { 2.0 * eps } else { 0.5 * eps };
            if !(1e-12..=1e7).contains(&eps) {
                break;
            }
        }
        eps.clamp(1e-12, 1e7)
    }
}
