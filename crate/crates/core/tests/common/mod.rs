#![allow(dead_code)]

use iocl_core::lqr::SystemParams;
use iocl_core::matops::{self, Matrix, SpdMatrix};
use iocl_core::scenarios::{gaussian_matrix, random_dynamics, random_spd};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stabilizable system with PD `Q` and `R`.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SystemParams {
    loop {
        let a = random_dynamics(rng, n);
        let b = gaussian_matrix(rng, n, m);
        let q = random_spd(rng, n, 0.1);
        let r = random_spd(rng, m, 0.1);
        if let Ok(sys) = SystemParams::new(a, b, q, r) {
            return sys;
        }
    }
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> (usize, usize) {
    (rng.random_range(1..=max), rng.random_range(1..=max))
}

pub fn rel_fro(estimate: &Matrix, truth: &Matrix) -> f64 {
    (estimate - truth).norm() / truth.norm()
}

pub fn rel_2(estimate: &Matrix, truth: &Matrix) -> f64 {
    matops::norm2(&(estimate - truth)) / matops::norm2(truth)
}

/// Exact joint-Gaussian posterior of a time-invariant LG-SSM, computed from
/// the full `(T+1) n` state covariance without any recursion.
pub struct JointGaussian {
    pub means: Vec<DVector<f64>>,
    /// Full posterior covariance of the stacked states.
    pub cov: Matrix,
    pub log_likelihood: f64,
    pub n: usize,
}

impl JointGaussian {
    pub fn block(&self, s: usize, t: usize) -> Matrix {
        self.cov.view((s * self.n, t * self.n), (self.n, self.n)).into_owned()
    }
}

pub fn prior_state_covariance(f: &Matrix, w0: &Matrix, w: &Matrix, steps: usize) -> Matrix {
    let n = f.nrows();
    let total = (steps + 1) * n;
    let mut marg = vec![w0.clone()];
    for t in 1..=steps {
        let prev = &marg[t - 1];
        marg.push(f * prev * f.transpose() + w);
    }
    let mut big = Matrix::zeros(total, total);
    for s in 0..=steps {
        let mut block = marg[s].clone();
        for t in s..=steps {
            big.view_mut((t * n, s * n), (n, n)).copy_from(&block);
            big.view_mut((s * n, t * n), (n, n)).copy_from(&block.transpose());
            block = f * block;
        }
    }
    big
}

pub fn joint_gaussian_posterior(f: &Matrix, c: &Matrix, w0: &Matrix, w: &Matrix, v: &Matrix, y: &Matrix) -> JointGaussian {
    let n = f.nrows();
    let d = c.nrows();
    let steps = y.nrows() - 1;
    let sxx = prior_state_covariance(f, w0, w, steps);
    let mut big_c = Matrix::zeros((steps + 1) * d, (steps + 1) * n);
    let mut big_v = Matrix::zeros((steps + 1) * d, (steps + 1) * d);
    for t in 0..=steps {
        big_c.view_mut((t * d, t * n), (d, n)).copy_from(c);
        big_v.view_mut((t * d, t * d), (d, d)).copy_from(v);
    }
    let syy = &big_c * &sxx * big_c.transpose() + big_v;
    let sxy = &sxx * big_c.transpose();
    let yvec = DVector::from_iterator((steps + 1) * d, (0..=steps).flat_map(|t| (0..d).map(move |j| (t, j))).map(|(t, j)| y[(t, j)]));
    let chol = syy.clone().cholesky().expect("observation covariance is PD");
    let alpha = chol.solve(&yvec);
    let mean = &sxy * &alpha;
    let cov = &sxx - &sxy * chol.solve(&sxy.transpose());
    let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let dim = yvec.len() as f64;
    let log_likelihood = -0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + logdet + yvec.dot(&alpha));
    let means = (0..=steps).map(|t| mean.rows(t * n, n).into_owned()).collect();
    JointGaussian {
        means,
        cov,
        log_likelihood,
        n,
    }
}

pub fn spd(m: Matrix) -> SpdMatrix {
    SpdMatrix::positive_definite(m).expect("PD test matrix")
}
