//! Sampled fields and pointwise arithmetic.

pub type ScalarField = Vec<f64>;
pub type VectorField = [Vec<f64>; 3];
/// Row-major 3x3 tensor field, `t[3 * i + j]`.
pub type TensorField = [Vec<f64>; 9];

pub fn zeros(n: usize) -> ScalarField {
    vec![0.0; n]
}

pub fn zeros_vec(n: usize) -> VectorField {
    [vec![0.0; n], vec![0.0; n], vec![0.0; n]]
}

pub fn constant(n: usize, c: f64) -> ScalarField {
    vec![c; n]
}

pub fn add(a: &[f64], b: &[f64]) -> ScalarField {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> ScalarField {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> ScalarField {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn scale(a: &[f64], c: f64) -> ScalarField {
    a.iter().map(|x| c * x).collect()
}

pub fn map(a: &[f64], f: impl Fn(f64) -> f64) -> ScalarField {
    a.iter().map(|&x| f(x)).collect()
}

/// `a += c * b`
pub fn axpy(a: &mut [f64], c: f64, b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
}

/// `a += b * c` pointwise
pub fn add_product(a: &mut [f64], b: &[f64], c: &[f64]) {
    for ((x, y), z) in a.iter_mut().zip(b).zip(c) {
        *x += y * z;
    }
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn remove_mean(a: &mut [f64]) -> f64 {
    let m = mean(a);
    a.iter_mut().for_each(|x| *x -= m);
    m
}

pub fn vec_add(a: &VectorField, b: &VectorField) -> VectorField {
    [add(&a[0], &b[0]), add(&a[1], &b[1]), add(&a[2], &b[2])]
}

pub fn vec_sub(a: &VectorField, b: &VectorField) -> VectorField {
    [sub(&a[0], &b[0]), sub(&a[1], &b[1]), sub(&a[2], &b[2])]
}

pub fn vec_scale(a: &VectorField, c: f64) -> VectorField {
    [scale(&a[0], c), scale(&a[1], c), scale(&a[2], c)]
}

/// Scalar field times vector field.
pub fn vec_mul(s: &[f64], a: &VectorField) -> VectorField {
    [mul(s, &a[0]), mul(s, &a[1]), mul(s, &a[2])]
}

pub fn dot(a: &VectorField, b: &VectorField) -> ScalarField {
    let mut out = mul(&a[0], &b[0]);
    add_product(&mut out, &a[1], &b[1]);
    add_product(&mut out, &a[2], &b[2]);
    out
}

pub fn norm2(a: &VectorField) -> ScalarField {
    dot(a, a)
}

pub fn vec_axpy(a: &mut VectorField, c: f64, b: &VectorField) {
    for i in 0..3 {
        axpy(&mut a[i], c, &b[i]);
    }
}

pub fn vec_max_abs(a: &VectorField) -> f64 {
    a.iter().map(|c| max_abs(c)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_removal_leaves_zero_mean() {
        let mut a = vec![1.0, 2.0, 3.0, 6.0];
        let m = remove_mean(&mut a);
        assert_eq!(m, 3.0);
        assert!(mean(&a).abs() < 1e-15);
    }

    #[test]
    fn dot_of_unit_vectors() {
        let a = [vec![1.0], vec![0.0], vec![0.0]];
        let b = [vec![0.5], vec![2.0], vec![0.0]];
        assert_eq!(dot(&a, &b), vec![0.5]);
        assert_eq!(norm2(&b), vec![4.25]);
    }
}
