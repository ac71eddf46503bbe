//! Warmup adaptation: dual averaging of the step size and windowed
//! estimation of the inverse mass matrix.

use nalgebra::{DMatrix, DVector};

use super::nuts::Metric;

/// Nesterov dual averaging toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    target: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub(crate) fn new(target: f64, step_size: f64) -> Self {
        let mut da = Self {
            target,
            mu: 0.0,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        da.restart(step_size);
        da
    }

    pub(crate) fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub(crate) fn update(&mut self, accept_stat: f64) -> f64 {
        let accept = if accept_stat.is_finite() {
            accept_stat.min(1.0)
        } else {
            0.0
        };
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Step size to use once adaptation has finished.
    pub(crate) fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
pub(crate) struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub(crate) fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *s += delta * (xi - *m);
        }
    }

    /// Sample variances shrunk toward `1e-3`, with weight 5 pseudo-draws.
    pub(crate) fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub(crate) fn reset(&mut self) {
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }
}

/// Welford accumulator for a full covariance matrix.
#[derive(Debug, Clone)]
pub(crate) struct RunningCovariance {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningCovariance {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    /// Sample covariance shrunk toward `1e-3 I` with weight 5 pseudo-draws.
    pub(crate) fn regularized(&self) -> DMatrix<f64> {
        let n = self.n as f64;
        let dim = self.mean.len();
        let mut cov = if self.n > 1 {
            &self.m2 / (n - 1.0)
        } else {
            DMatrix::identity(dim, dim)
        };
        cov *= n / (n + 5.0);
        for i in 0..dim {
            cov[(i, i)] += 1e-3 * (5.0 / (n + 5.0));
        }
        // symmetrize against accumulated rounding
        (&cov + cov.transpose()) * 0.5
    }

    pub(crate) fn reset(&mut self) {
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }
}

/// Either accumulator, matching the metric being adapted.
#[derive(Debug, Clone)]
pub(crate) enum MetricEstimator {
    Diagonal(RunningVariance),
    /// Covariance of the leading block, variances of the rest.
    Dense(RunningCovariance, RunningVariance),
}

impl MetricEstimator {
    fn add(&mut self, x: &[f64]) {
        match self {
            MetricEstimator::Diagonal(e) => e.add(x),
            MetricEstimator::Dense(head, tail) => {
                let k = head.dim();
                head.add(&x[..k]);
                tail.add(&x[k..]);
            }
        }
    }

    /// Finishes a window; a dense estimate that is not positive definite
    /// falls back to its diagonal.
    fn finish(&mut self) -> Metric {
        let m = match self {
            MetricEstimator::Diagonal(e) => Metric::Diagonal(e.regularized()),
            MetricEstimator::Dense(head, tail) => {
                let cov = head.regularized();
                let tail = tail.regularized();
                let diag: Vec<f64> = cov.diagonal().iter().chain(&tail).copied().collect();
                Metric::dense(cov, tail).unwrap_or(Metric::Diagonal(diag))
            }
        };
        match self {
            MetricEstimator::Diagonal(e) => e.reset(),
            MetricEstimator::Dense(head, tail) => {
                head.reset();
                tail.reset();
            }
        }
        m
    }
}

/// Staged warmup: an initial fast interval for the step size, doubling
/// slow windows for the mass matrix, and a terminal fast interval.
#[derive(Debug, Clone)]
pub(crate) struct WarmupSchedule {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
}

impl WarmupSchedule {
    pub(crate) fn new(n_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut window) = (75, 50, 25);
        let enabled = n_warmup >= 20;
        if enabled && init_buffer + term_buffer + window > n_warmup {
            init_buffer = (0.15 * n_warmup as f64) as usize;
            term_buffer = (0.1 * n_warmup as f64) as usize;
            window = n_warmup - init_buffer - term_buffer;
        }
        Self {
            n_warmup,
            init_buffer,
            term_buffer,
            window_size: window,
            next_window: init_buffer + window - 1,
            counter: 0,
            enabled,
        }
    }

    fn in_slow_window(&self) -> bool {
        self.enabled
            && self.counter >= self.init_buffer
            && self.counter < self.n_warmup - self.term_buffer
            && self.counter != self.n_warmup
    }

    fn end_of_window(&self) -> bool {
        self.enabled && self.counter == self.next_window && self.counter != self.n_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.n_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last
            && self.next_window + 2 * self.window_size >= self.n_warmup - self.term_buffer
        {
            self.next_window = last;
        }
    }

    /// Records one warmup draw. Returns the updated metric at the end of a
    /// slow window.
    pub(crate) fn observe(&mut self, q: &[f64], estimator: &mut MetricEstimator) -> Option<Metric> {
        if self.in_slow_window() {
            estimator.add(q);
        }
        let out = if self.end_of_window() {
            self.compute_next_window();
            Some(estimator.finish())
        } else {
            None
        };
        self.counter += 1;
        out
    }
}
