//! Linear-algebra infrastructure: sparse storage, direct and Krylov solvers,
//! dense helpers, and complex vector utilities.

mod dense;
mod krylov;
mod solve;
mod sparse;

pub use dense::{
    complex_eigen, complex_matmul, complex_singular_values, complex_solve, real_eigen,
    real_null_space, real_singular_values, real_solve, symmetric_eigen, DenseComplex, DenseReal,
};
pub use krylov::{arnoldi, gmres, Arnoldi, GmresReport, GmresSettings};
pub use solve::{DenseLu, LinearSolve, MatrixFamily, Scalar, SparseLu};
pub use sparse::{CsrMatrix, TripletList};

/// Double-precision complex scalar (identical to `faer::c64`).
pub type C64 = num_complex::Complex64;

/// Euclidean dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximum absolute entry.
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Bilinear complex product `Σ aᵢ bᵢ` (no conjugation).
pub fn cdot_bilinear(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sesquilinear complex product `Σ conj(aᵢ) bᵢ`.
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Euclidean norm of a complex vector.
pub fn cnorm2(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Lifts a real vector.
pub fn to_complex(a: &[f64]) -> Vec<C64> {
    a.iter().map(|&x| C64::new(x, 0.0)).collect()
}

/// Real parts.
pub fn real_part(a: &[C64]) -> Vec<f64> {
    a.iter().map(|x| x.re).collect()
}

/// Imaginary parts.
pub fn imag_part(a: &[C64]) -> Vec<f64> {
    a.iter().map(|x| x.im).collect()
}

/// Applies a real linear map to a complex vector through its real and imaginary parts.
pub fn apply_real_to_complex(mut f: impl FnMut(&[f64], &mut [f64]), x: &[C64], y: &mut [C64]) {
    let n = y.len();
    let re = real_part(x);
    let im = imag_part(x);
    let mut yr = vec![0.0; n];
    let mut yi = vec![0.0; n];
    f(&re, &mut yr);
    f(&im, &mut yi);
    for i in 0..n {
        y[i] = C64::new(yr[i], yi[i]);
    }
}
