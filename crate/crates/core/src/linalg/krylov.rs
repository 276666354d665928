//! Krylov methods: restarted right-preconditioned GMRES and complex Arnoldi.

use super::C64;

/// Outcome of a GMRES solve.
#[derive(Clone, Debug)]
pub struct GmresReport {
    /// Total inner iterations.
    pub iterations: usize,
    /// Final residual relative to the right-hand side norm.
    pub relative_residual: f64,
    /// Whether the tolerance was met.
    pub converged: bool,
}

/// Settings for [`gmres`].
#[derive(Clone, Copy, Debug)]
pub struct GmresSettings {
    /// Relative residual target.
    pub tol: f64,
    /// Krylov dimension between restarts.
    pub restart: usize,
    /// Cap on total inner iterations.
    pub max_iter: usize,
}

impl Default for GmresSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            restart: 40,
            max_iter: 400,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` with right preconditioning `A M⁻¹ y = b`, `x = M⁻¹ y`.
///
/// `x` holds the initial guess on entry and the solution on exit.
pub fn gmres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    settings: GmresSettings,
) -> GmresReport {
    let n = b.len();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut total = 0usize;
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut rel: f64;
    loop {
        apply(x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= settings.tol || total >= settings.max_iter {
            return GmresReport {
                iterations: total,
                relative_residual: rel,
                converged: rel <= settings.tol,
            };
        }
        let m = settings.restart.min(settings.max_iter - total).max(1);
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut zk = vec![0.0; n];
            precond(&v[k], &mut zk);
            let mut w = vec![0.0; n];
            apply(&zk, &mut w);
            z.push(zk);
            for pass in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let hj = dot(&w, vj);
                    if pass == 0 {
                        h[j][k] = hj;
                    } else {
                        h[j][k] += hj;
                    }
                    for i in 0..n {
                        w[i] -= hj * vj[i];
                    }
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if d == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / d;
                sn[k] = h[k + 1][k] / d;
            }
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= settings.tol || hn == 0.0 || total >= settings.max_iter {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * z[j][i];
            }
        }
        if total >= settings.max_iter {
            apply(x, &mut tmp);
            for i in 0..n {
                r[i] = b[i] - tmp[i];
            }
            rel = norm(&r) / bnorm;
            return GmresReport {
                iterations: total,
                relative_residual: rel,
                converged: rel <= settings.tol,
            };
        }
    }
}

fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn cnorm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Arnoldi factorization `A V_m = V_{m+1} H` with Euclidean orthonormal `V`.
pub struct Arnoldi {
    /// Orthonormal basis, `m + 1` vectors (fewer after breakdown).
    pub basis: Vec<Vec<C64>>,
    /// Upper Hessenberg matrix of size `(m + 1) × m`, row-major.
    pub hessenberg: Vec<Vec<C64>>,
    /// Number of completed steps.
    pub steps: usize,
}

/// Runs `m` Arnoldi steps with two-pass classical Gram–Schmidt.
pub fn arnoldi(mut apply: impl FnMut(&[C64], &mut [C64]), start: &[C64], m: usize) -> Arnoldi {
    let n = start.len();
    let s = cnorm(start);
    let mut basis = vec![start.iter().map(|x| x / s).collect::<Vec<_>>()];
    let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
    let mut steps = 0;
    for k in 0..m {
        let mut w = vec![C64::new(0.0, 0.0); n];
        apply(&basis[k], &mut w);
        for _ in 0..2 {
            for (j, vj) in basis.iter().enumerate() {
                let c = cdot(vj, &w);
                h[j][k] += c;
                for i in 0..n {
                    w[i] -= c * vj[i];
                }
            }
        }
        let hn = cnorm(&w);
        h[k + 1][k] = C64::new(hn, 0.0);
        steps = k + 1;
        if hn <= 1e-14 * h[k][k].norm().max(1e-300) {
            break;
        }
        basis.push(w.iter().map(|x| x / hn).collect());
    }
    Arnoldi {
        basis,
        hessenberg: h,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 30;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = 3.0 * x[i] + if i > 0 { -x[i - 1] } else { 0.0 } + if i + 1 < n { 0.5 * x[i + 1] } else { 0.0 };
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let rep = gmres(apply, |r, z| z.copy_from_slice(r), &b, &mut x, GmresSettings { restart: 8, ..Default::default() });
        assert!(rep.converged, "{rep:?}");
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn arnoldi_recovers_diagonal_spectrum() {
        let d = [1.0, 2.0, 3.0, 4.0];
        let apply = |x: &[C64], y: &mut [C64]| {
            for i in 0..4 {
                y[i] = x[i] * d[i];
            }
        };
        let start = vec![C64::new(1.0, 0.0); 4];
        let ar = arnoldi(apply, &start, 4);
        let hm: Vec<Vec<C64>> = (0..ar.steps).map(|i| ar.hessenberg[i][..ar.steps].to_vec()).collect();
        let (vals, _) = crate::linalg::complex_eigen(&hm).unwrap();
        let mut re: Vec<f64> = vals.iter().map(|v| v.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in re.iter().zip(d) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
