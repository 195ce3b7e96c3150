//! Reflected-Brownian-motion heat kernel on axis-aligned boxes with unit
//! density, used as the continuum reference wherever the geometry is a
//! rectangle and the density is flat.
//!
//! Two evaluation routes: a cosine eigenfunction series (efficient for
//! moderate and large times) and a reflected-image Gaussian sum (efficient
//! for small times). The generator is half the Laplacian, so the free
//! density at time `t` has variance `t`.

use std::f64::consts::PI;

/// Series/image switch point for interval length `len` is `t = len^2 / 2`.
fn use_series(len: f64, t: f64) -> bool {
    t >= 0.5 * len * len
}

/// One-dimensional Neumann kernel on `(0, len)` against Lebesgue measure.
/// Arguments are ordered before evaluation so symmetry is bit-exact.
pub fn kernel_1d(len: f64, t: f64, a: f64, b: f64) -> f64 {
    assert!(t > 0.0, "kernel needs positive time");
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if use_series(len, t) {
        kernel_1d_series(len, t, a, b)
    } else {
        kernel_1d_images(len, t, a, b)
    }
}

/// Cosine eigenfunction route: `1/L + (2/L) sum_k e^(-k^2 pi^2 t / 2L^2) cos cos`.
pub fn kernel_1d_series(len: f64, t: f64, a: f64, b: f64) -> f64 {
    let alpha = PI * PI * t / (2.0 * len * len);
    let mut acc = 1.0;
    let mut k = 1usize;
    loop {
        let kf = k as f64;
        let decay = (-alpha * kf * kf).exp();
        if decay < 1e-17 && k > 2 {
            break;
        }
        acc += 2.0 * decay * (kf * PI * a / len).cos() * (kf * PI * b / len).cos();
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    acc / len
}

/// Reflected-image route: `sum_n g_t(a-b-2nL) + g_t(a+b-2nL)`.
pub fn kernel_1d_images(len: f64, t: f64, a: f64, b: f64) -> f64 {
    let g = |x: f64| (-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt();
    // images beyond 9 standard deviations are below 1e-18
    let reach = (9.0 * t.sqrt() / (2.0 * len)).ceil() as i64 + 1;
    let mut acc = 0.0;
    for n in -reach..=reach {
        let shift = 2.0 * (n as f64) * len;
        acc += g(a - b - shift) + g(a + b - shift);
    }
    acc
}

/// Axis-aligned box with the product Neumann kernel.
#[derive(Debug, Clone)]
pub struct NeumannBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl NeumannBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(l, h)| l < h));
        NeumannBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    /// `p(t, x, y)` for `x`, `y` in absolute coordinates inside the box.
    pub fn kernel(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 1.0;
        for i in 0..self.dim() {
            acc *= kernel_1d(self.side(i), t, x[i] - self.lo[i], y[i] - self.lo[i]);
        }
        acc
    }
}

/// Heat evolution of an initial function on a box in the cosine basis.
///
/// Coefficients are computed once by composite Simpson quadrature; the
/// zero mode is preserved exactly by the evolution, so the evolved mass
/// equals the initial mass to quadrature accuracy.
#[derive(Debug, Clone)]
pub struct HeatField {
    pub bx: NeumannBox,
    kmax: usize,
    /// Tensor coefficients, flattened row-major over per-axis mode indices.
    coeffs: Vec<f64>,
}

impl HeatField {
    pub fn project<F: Fn(&[f64]) -> f64>(bx: NeumannBox, f: F, kmax: usize) -> Self {
        let d = bx.dim();
        let coeffs = match d {
            1 => project_1d(&bx, |x| f(&[x]), kmax),
            2 => project_2d(&bx, |x, y| f(&[x, y]), kmax),
            _ => panic!("HeatField supports d <= 2"),
        };
        HeatField { bx, kmax, coeffs }
    }

    fn lambda(&self, axis: usize, k: usize) -> f64 {
        let len = self.bx.side(axis);
        let kf = k as f64;
        kf * kf * PI * PI / (2.0 * len * len)
    }

    fn phi(&self, axis: usize, k: usize, x: f64) -> f64 {
        let len = self.bx.side(axis);
        let rel = x - self.bx.lo[axis];
        if k == 0 {
            1.0 / len.sqrt()
        } else {
            (2.0 / len).sqrt() * (k as f64 * PI * rel / len).cos()
        }
    }

    /// `(P_t f)(x)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self.bx.dim() {
            1 => {
                let mut acc = 0.0;
                for k in 0..self.kmax {
                    let w = (-self.lambda(0, k) * t).exp();
                    if w < 1e-18 && k > 0 {
                        break;
                    }
                    acc += self.coeffs[k] * w * self.phi(0, k, x[0]);
                }
                acc
            }
            2 => {
                let mut acc = 0.0;
                for k in 0..self.kmax {
                    let wk = (-self.lambda(0, k) * t).exp();
                    if wk < 1e-18 && k > 0 {
                        continue;
                    }
                    let pk = self.phi(0, k, x[0]);
                    for l in 0..self.kmax {
                        let w = wk * (-self.lambda(1, l) * t).exp();
                        if w < 1e-18 && (k > 0 || l > 0) {
                            continue;
                        }
                        acc += self.coeffs[k * self.kmax + l] * w * pk * self.phi(1, l, x[1]);
                    }
                }
                acc
            }
            _ => unreachable!(),
        }
    }

    /// `integral of (P_t f) dx`, exact in the evolution (zero mode only).
    pub fn mass(&self) -> f64 {
        let root_vol = self.bx.volume().sqrt();
        self.coeffs[0] * root_vol
    }
}

const QUAD_PANELS: usize = 1024;

/// Composite Simpson over `[0, len]` with `QUAD_PANELS` panels.
fn simpson<F: Fn(f64) -> f64>(len: f64, f: F) -> f64 {
    let n = QUAD_PANELS;
    let h = len / n as f64;
    let mut acc = f(0.0) + f(len);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

fn project_1d<F: Fn(f64) -> f64>(bx: &NeumannBox, f: F, kmax: usize) -> Vec<f64> {
    let len = bx.side(0);
    let lo = bx.lo[0];
    (0..kmax)
        .map(|k| {
            let norm = if k == 0 {
                1.0 / len.sqrt()
            } else {
                (2.0 / len).sqrt()
            };
            simpson(len, |x| f(lo + x) * norm * (k as f64 * PI * x / len).cos())
        })
        .collect()
}

fn project_2d<F: Fn(f64, f64) -> f64>(bx: &NeumannBox, f: F, kmax: usize) -> Vec<f64> {
    let (lx, ly) = (bx.side(0), bx.side(1));
    let (lox, loy) = (bx.lo[0], bx.lo[1]);
    let norm = |k: usize, len: f64| {
        if k == 0 {
            1.0 / len.sqrt()
        } else {
            (2.0 / len).sqrt()
        }
    };
    // inner pass: for each x quadrature node, the y-transforms
    let n = QUAD_PANELS;
    let hx = lx / n as f64;
    let mut coeffs = vec![0.0f64; kmax * kmax];
    for i in 0..=n {
        let x = i as f64 * hx;
        let wx = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        } * hx
            / 3.0;
        let ytrans: Vec<f64> = (0..kmax)
            .map(|l| {
                simpson(ly, |y| f(lox + x, loy + y) * norm(l, ly) * (l as f64 * PI * y / ly).cos())
            })
            .collect();
        for k in 0..kmax {
            let px = norm(k, lx) * (k as f64 * PI * x / lx).cos();
            for l in 0..kmax {
                coeffs[k * kmax + l] += wx * px * ytrans[l];
            }
        }
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_and_images_agree_across_scales() {
        for &t in &[0.001, 0.01, 0.1, 0.5, 2.0] {
            for &(a, b) in &[(0.1, 0.9), (0.5, 0.5), (0.0, 1.0), (0.37, 0.61)] {
                let s = kernel_1d_series(1.0, t, a, b);
                let i = kernel_1d_images(1.0, t, a, b);
                assert!(
                    (s - i).abs() <= 1e-12 * s.abs().max(1.0),
                    "t={t} a={a} b={b}: {s} vs {i}"
                );
            }
        }
    }

    #[test]
    fn golden_value_midpoint() {
        // 1D, t = 0.1, x = y = 0.5: only even modes survive,
        // 1 + 2(e^(-2 pi^2 /10) + e^(-8 pi^2 /10) + ...). Frozen from a
        // 200-term summation cross-checked against the image route.
        let mut oracle = 1.0;
        for m in 1..=200usize {
            let k = 2.0 * m as f64;
            oracle += 2.0 * (-k * k * PI * PI * 0.05).exp();
        }
        let v = kernel_1d(1.0, 0.1, 0.5, 0.5);
        assert!((v - oracle).abs() < 2e-12);
        assert!((v - 1.2785669994156845).abs() < 1e-12);
    }

    #[test]
    fn long_time_limit_is_uniform() {
        let bx = NeumannBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let v = bx.kernel(50.0, &[0.3, 0.8], &[0.9, 0.1]);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetry_is_exact_by_construction() {
        let bx = NeumannBox::new(vec![-1.0, 0.0], vec![0.0, 1.0]);
        let x = [-0.3, 0.7];
        let y = [-0.9, 0.2];
        assert_eq!(bx.kernel(0.17, &x, &y), bx.kernel(0.17, &y, &x));
    }

    #[test]
    fn chapman_kolmogorov_by_quadrature() {
        // integral p(s,x,z) p(t,z,y) dz = p(s+t,x,y) on (0,1)
        let (s, t) = (0.08, 0.15);
        let (x, y) = (0.3, 0.65);
        let conv = simpson(1.0, |z| kernel_1d(1.0, s, x, z) * kernel_1d(1.0, t, z, y));
        let direct = kernel_1d(1.0, s + t, x, y);
        assert!((conv - direct).abs() < 1e-10, "{conv} vs {direct}");
    }

    #[test]
    fn kernel_integrates_to_one() {
        for &t in &[0.01, 0.3] {
            let total = simpson(1.0, |z| kernel_1d(1.0, t, 0.25, z));
            assert!((total - 1.0).abs() < 1e-10, "t={t}: {total}");
        }
    }

    #[test]
    fn heat_field_matches_kernel_quadrature() {
        let bx = NeumannBox::new(vec![0.0], vec![1.0]);
        let f = |x: &[f64]| 1.0 + 0.5 * (PI * x[0]).cos();
        let field = HeatField::project(bx.clone(), f, 32);
        let t = 0.2;
        let x = 0.4;
        let direct = simpson(1.0, |y| kernel_1d(1.0, t, x, y) * f(&[y]));
        let spectral = field.eval(t, &[x]);
        assert!((spectral - direct).abs() < 1e-10);
        // the cosine mode decays at rate pi^2/2
        let exact = 1.0 + 0.5 * (-PI * PI * t / 2.0).exp() * (PI * x).cos();
        assert!((spectral - exact).abs() < 1e-12);
        assert!((field.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heat_field_2d_constant_is_preserved() {
        let bx = NeumannBox::new(vec![-1.0, 0.0], vec![0.0, 1.0]);
        let field = HeatField::project(bx, |_| 3.0, 16);
        assert!((field.eval(0.5, &[-0.5, 0.5]) - 3.0).abs() < 1e-12);
        assert!((field.mass() - 3.0).abs() < 1e-12);
    }
}
