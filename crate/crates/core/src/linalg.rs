//! Small dense Hermitian eigenproblems.
//!
//! Spin Hamiltonians here are at most a few tens of rows, so a cyclic
//! complex Jacobi sweep is accurate to machine precision and fast enough.
//! The powder loop only needs eigenvalues on a dense field mesh; for the
//! 2×2 and 3×3 cases those come from closed forms.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance on `max|H - H†| / max|H|` accepted as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 64;

/// Eigenvalues ascending and the unitary whose columns are the eigenvectors.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigensystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest elementwise deviation `max|H - H†|`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn check_hermitian(m: &CMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let dev = hermitian_deviation(m);
    let scale = max_abs(m);
    if dev > HERMITIAN_TOL * scale || !dev.is_finite() {
        return Err(Error::NotHermitian(dev));
    }
    Ok(())
}

/// Full eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMatrix) -> Result<Eigensystem> {
    check_hermitian(m)?;
    Ok(jacobi(m))
}

fn jacobi(m: &CMatrix) -> Eigensystem {
    let n = m.nrows();
    // symmetrize so rounding in the input cannot leak into the rotations
    let mut a = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(m[(i, i)].re, 0.0)
        } else {
            (m[(i, j)] + m[(j, i)].conj()) * 0.5
        }
    });
    let mut v = CMatrix::identity(n, n);

    let total: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let floor = f64::EPSILON * f64::EPSILON * total.max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)].norm_sqr();
            }
        }
        if off <= floor {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let phase = apq / r;
                let zeta = (aqq - app) / (2.0 * r);
                let t = if zeta.is_infinite() {
                    0.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = diag(1, conj(phase)) · [[c, s], [-s, c]]
                let gpp = Complex64::new(c, 0.0);
                let gpq = Complex64::new(s, 0.0);
                let gqp = -phase.conj() * s;
                let gqq = phase.conj() * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * gpp + akq * gqp;
                    a[(k, q)] = akp * gpq + akq * gqq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = gpp.conj() * apk + gqp.conj() * aqk;
                    a[(q, k)] = gpq.conj() * apk + gqq.conj() * aqk;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * gpp + vkq * gqp;
                    v[(k, q)] = vkp * gpq + vkq * gqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Eigensystem { values, vectors }
}

/// Eigenvalues (ascending) of a Hermitian matrix without eigenvectors.
///
/// Uses closed forms for dimension 2 and 3; no Hermiticity check.
pub fn eigvalsh_into(m: &CMatrix, out: &mut [f64]) {
    match m.nrows() {
        1 => out[0] = m[(0, 0)].re,
        2 => {
            let v = eigvals2(m[(0, 0)].re, m[(1, 1)].re, m[(0, 1)]);
            out.copy_from_slice(&v);
        }
        3 => {
            let v = eigvals3(
                [m[(0, 0)].re, m[(1, 1)].re, m[(2, 2)].re],
                [m[(0, 1)], m[(0, 2)], m[(1, 2)]],
            );
            out.copy_from_slice(&v);
        }
        _ => out.copy_from_slice(&jacobi(m).values),
    }
}

/// Ascending eigenvalues of `[[a, b], [b*, d]]`.
pub fn eigvals2(a: f64, d: f64, b: Complex64) -> [f64; 2] {
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let rad = half.hypot(b.norm());
    [mean - rad, mean + rad]
}

/// Ascending eigenvalues of a 3×3 Hermitian matrix from its diagonal and
/// upper triangle `[a01, a02, a12]` (trigonometric solution of the cubic).
pub fn eigvals3(diag: [f64; 3], upper: [Complex64; 3]) -> [f64; 3] {
    let [a00, a11, a22] = diag;
    let [a01, a02, a12] = upper;
    let p1 = a01.norm_sqr() + a02.norm_sqr() + a12.norm_sqr();
    let q = (a00 + a11 + a22) / 3.0;
    let (d0, d1, d2) = (a00 - q, a11 - q, a22 - q);
    let p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1;
    if p2 <= 0.0 {
        return [q, q, q];
    }
    let p = (p2 / 6.0).sqrt();
    // det((A - qI) / p), real for Hermitian input
    let det = d0 * d1 * d2 + 2.0 * (a01 * a12 * a02.conj()).re
        - d0 * a12.norm_sqr()
        - d1 * a02.norm_sqr()
        - d2 * a01.norm_sqr();
    let r = (det / (p * p * p) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let mid = 3.0 * q - hi - lo;
    let mut v = [lo, mid, hi];
    v.sort_by(f64::total_cmp);
    v
}

/// `V† A V` for a square `A`.
pub fn to_eigenbasis(a: &CMatrix, v: &CMatrix) -> CMatrix {
    v.adjoint() * a * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c(rng.random_range(-5.0..5.0), 0.0);
            for j in (i + 1)..n {
                let z = c(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    fn residual(m: &CMatrix, es: &Eigensystem) -> f64 {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            es.dim(),
            es.values.iter().map(|&x| c(x, 0.0)),
        ));
        max_abs(&(m * &es.vectors - &es.vectors * d))
    }

    #[test]
    fn diagonal_input_is_returned_unchanged() {
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0.0, 0.0),
            c(19.1, 0.0),
            c(22.9, 0.0),
        ]));
        let es = eigh(&m).unwrap();
        assert_eq!(es.values, vec![0.0, 19.1, 22.9]);
        assert!(max_abs(&(es.vectors - CMatrix::identity(3, 3))) == 0.0);
    }

    #[test]
    fn pauli_x_has_plus_minus_one() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
        let es = eigh(&m).unwrap();
        assert!((es.values[0] + 1.0).abs() < 1e-15);
        assert!((es.values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_hermitian_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 3, 4, 6, 9] {
            for _ in 0..20 {
                let m = random_hermitian(n, &mut rng);
                let es = eigh(&m).unwrap();
                assert!(residual(&m, &es) < 1e-10, "n={n}");
                let u = es.vectors.adjoint() * &es.vectors;
                assert!(max_abs(&(u - CMatrix::identity(n, n))) < 1e-12);
                assert!(es.values.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn closed_forms_match_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3] {
            for _ in 0..200 {
                let m = random_hermitian(n, &mut rng);
                let mut fast = vec![0.0; n];
                eigvalsh_into(&m, &mut fast);
                let slow = eigh(&m).unwrap().values;
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-9, "{fast:?} vs {slow:?}");
                }
            }
        }
    }

    #[test]
    fn degenerate_3x3_closed_form() {
        let v = eigvals3([21.0, 0.0, 21.0], [c(0., 0.), c(0., 0.), c(0., 0.)]);
        assert_eq!(v, [0.0, 21.0, 21.0]);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(2., 0.), c(0., 0.)]);
        assert!(matches!(eigh(&m), Err(Error::NotHermitian(_))));
        let rect = CMatrix::zeros(2, 3);
        assert!(eigh(&rect).is_err());
    }
}
