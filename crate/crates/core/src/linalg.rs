//! Dense complex linear algebra: Hermitian eigendecomposition and polynomial
//! roots via companion-matrix eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hermitian eigendecomposition with eigenvalues sorted descending.
///
/// Each eigenvector's phase is fixed so that its largest-magnitude component
/// is real and positive.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
            .unwrap_or(Complex64::new(1.0, 0.0));
        let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { Complex64::new(1.0, 0.0) };
        vectors.set_column(dst, &(v * phase));
    }
    (values, vectors)
}

/// Eigenvalues of a Hermitian matrix, sorted descending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Evaluate `sum_k coeffs[k] z^k` and its derivative.
pub fn poly_eval(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All roots of `sum_k coeffs[k] z^k` (ascending coefficients).
///
/// Roots are eigenvalues of the balanced companion matrix, found by shifted
/// QR iteration, then polished with a few Newton steps on the polynomial.
pub fn poly_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let top = coeffs
        .iter()
        .rposition(|c| c.norm() > 0.0)
        .ok_or_else(|| Error::Domain("zero polynomial has no isolated roots".into()))?;
    let coeffs = &coeffs[..=top];
    let zeros_at_origin = coeffs.iter().position(|c| c.norm() > 0.0).unwrap_or(0);
    let reduced = &coeffs[zeros_at_origin..];
    let degree = reduced.len() - 1;

    let mut roots = vec![Complex64::new(0.0, 0.0); zeros_at_origin];
    if degree == 0 {
        return Ok(roots);
    }

    let lead = reduced[degree];
    let mut companion = DMatrix::<Complex64>::zeros(degree, degree);
    for j in 0..degree {
        companion[(0, j)] = -reduced[degree - 1 - j] / lead;
    }
    for i in 1..degree {
        companion[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    balance(&mut companion);
    let eigs = hessenberg_eigenvalues(companion)?;

    for z0 in eigs {
        roots.push(newton_polish(coeffs, z0));
    }
    Ok(roots)
}

fn newton_polish(coeffs: &[Complex64], z0: Complex64) -> Complex64 {
    let mut z = z0;
    let mut best = poly_eval(coeffs, z).0.norm();
    for _ in 0..8 {
        let (p, dp) = poly_eval(coeffs, z);
        if dp.norm() == 0.0 || p.norm() == 0.0 {
            break;
        }
        let next = z - p / dp;
        let val = poly_eval(coeffs, next).0.norm();
        if !(val < best) {
            break;
        }
        best = val;
        z = next;
    }
    z
}

/// Diagonal similarity scaling by powers of two so that row and column norms
/// are comparable.
fn balance(a: &mut DMatrix<Complex64>) {
    let n = a.nrows();
    let radix = 2.0f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].l1_norm();
                    r += a[(i, j)].l1_norm();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= radix * radix;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= radix * radix;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Eigenvalues of an upper Hessenberg matrix by single-shift QR with
/// Wilkinson shifts and deflation.
fn hessenberg_eigenvalues(mut h: DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let n = h.nrows();
    let mut eigs = Vec::with_capacity(n);
    let eps = f64::EPSILON;
    let mut hi = n as isize - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi >= 0 {
        let hiu = hi as usize;
        if hiu == 0 {
            eigs.push(h[(0, 0)]);
            break;
        }
        let mut lo = hiu;
        while lo > 0 {
            let scale = h[(lo, lo)].l1_norm() + h[(lo - 1, lo - 1)].l1_norm();
            let scale = if scale == 0.0 { 1.0 } else { scale };
            if h[(lo, lo - 1)].l1_norm() <= eps * scale {
                h[(lo, lo - 1)] = Complex64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hiu {
            eigs.push(h[(hiu, hiu)]);
            hi -= 1;
            iter = 0;
            continue;
        }

        iter += 1;
        total += 1;
        if total > 100 * n.max(10) {
            return Err(Error::Estimation("QR iteration for polynomial roots did not converge".into()));
        }

        let shift = if iter % 11 == 10 {
            // exceptional shift to break cycles
            h[(hiu, hiu)] + Complex64::new(h[(hiu, hiu - 1)].norm(), 0.0) * 1.5
        } else {
            wilkinson_shift(
                h[(hiu - 1, hiu - 1)],
                h[(hiu - 1, hiu)],
                h[(hiu, hiu - 1)],
                h[(hiu, hiu)],
            )
        };

        for i in lo..=hiu {
            h[(i, i)] -= shift;
        }
        let mut rotations = Vec::with_capacity(hiu - lo);
        for k in lo..hiu {
            let x = h[(k, k)];
            let y = h[(k + 1, k)];
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (c, s) = if r == 0.0 {
                (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
            } else {
                (x / r, y / r)
            };
            for j in k..=hiu {
                let a = h[(k, j)];
                let b = h[(k + 1, j)];
                h[(k, j)] = c.conj() * a + s.conj() * b;
                h[(k + 1, j)] = -s * a + c * b;
            }
            rotations.push((c, s));
        }
        for (idx, (c, s)) in rotations.into_iter().enumerate() {
            let k = lo + idx;
            for i in lo..=(k + 1).min(hiu) {
                let a = h[(i, k)];
                let b = h[(i, k + 1)];
                h[(i, k)] = a * c + b * s;
                h[(i, k + 1)] = -(a * s.conj()) + b * c.conj();
            }
        }
        for i in lo..=hiu {
            h[(i, i)] += shift;
        }
    }
    Ok(eigs)
}

fn wilkinson_shift(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Complex64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let m1 = (a + d) * 0.5 + disc;
    let m2 = (a + d) * 0.5 - disc;
    if (m1 - d).norm() < (m2 - d).norm() {
        m1
    } else {
        m2
    }
}

/// `x^H y`.
pub fn inner(x: &DVector<Complex64>, y: &DVector<Complex64>) -> Complex64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}
