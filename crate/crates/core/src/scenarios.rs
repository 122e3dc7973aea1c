//! Reference systems and random instance generators.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::ioc::Instance;
use crate::lqr::{self, SystemParams};
use crate::matops::{self, Matrix, SpdMatrix};

/// Block-diagonal scaled rotations, one 2x2 block per angle (radians).
/// An odd `n` gets a trailing `scale` entry.
pub fn rotation_dynamics(n: usize, angles: &[f64], scale: f64) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    let mut i = 0;
    for &theta in angles {
        if i + 1 >= n {
            break;
        }
        let (s, c) = theta.sin_cos();
        a[(i, i)] = scale * c;
        a[(i, i + 1)] = -scale * s;
        a[(i + 1, i)] = scale * s;
        a[(i + 1, i + 1)] = scale * c;
        i += 2;
    }
    while i < n {
        a[(i, i)] = scale;
        i += 1;
    }
    a
}

/// The 4-state rotation plant with `B = R = Q = I`.
pub fn rotation_system() -> Result<SystemParams> {
    let n = 4;
    SystemParams::new(
        rotation_dynamics(n, &[0.3, 0.7], 1.0),
        Matrix::identity(n, n),
        SpdMatrix::identity(n),
        SpdMatrix::identity(n),
    )
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian `A` rescaled to a spectral radius uniform in `[0.5, 1.2]`.
/// Rejects draws that are close to singular.
pub fn random_dynamics<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    random_dynamics_in(rng, n, 0.5, 1.2)
}

/// Like [`random_dynamics`] with spectral radius uniform in `[lo, hi)`.
pub fn random_dynamics_in<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Matrix {
    loop {
        let a = gaussian_matrix(rng, n, n);
        let rho = matops::spectral_radius(&a);
        let target = rng.random_range(lo..hi);
        if rho > 1e-6 {
            let a = a * (target / rho);
            if matops::condition_number(&a) < 1e4 {
                return a;
            }
        }
    }
}

/// `G G^T / n + floor I` with Gaussian `G`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> SpdMatrix {
    let g = gaussian_matrix(rng, n, n);
    let m = &g * g.transpose() / n as f64 + Matrix::identity(n, n) * floor;
    SpdMatrix::projected(&m, 0.0)
}

/// Random `B = R = I` instance with its exact steady-state closed loop.
///
/// The plant has spectral radius in `[0.5, 1)`. For strongly unstable plants
/// a second plant with the same optimal closed loop exists and both
/// A-recovery methods converge to the smaller one.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> Result<Instance> {
    let a = random_dynamics_in(rng, n, 0.5, 1.0);
    let q = random_spd(rng, n, 0.1);
    let sys = SystemParams::new(a.clone(), Matrix::identity(n, n), q.clone(), SpdMatrix::identity(n))?;
    let closed = lqr::infinite_horizon_solution(&sys)?;
    Ok(Instance {
        a,
        q,
        f_ss: closed.dynamics_at(0).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rotation_is_orthogonal() {
        let a = rotation_dynamics(5, &[0.3, 0.7], 1.0);
        assert!((a.transpose() * &a - Matrix::identity(5, 5)).abs().max() < 1e-15);
        assert!((matops::spectral_radius(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_instances_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 3).unwrap();
            assert!(matops::spectral_radius(&inst.f_ss) < 1.0);
        }
    }
}
