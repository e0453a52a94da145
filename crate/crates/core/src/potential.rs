//! Energy landscapes with analytic gradients.

/// A differentiable potential `V : R^n -> R`.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn energy(&self, x: &[f64]) -> f64;
    /// Writes `∇V(x)` into `grad` (length `dim`).
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    /// Short identifier, used in cache keys and reports.
    fn name(&self) -> String;
}

/// The two-well "banana" landscape
/// `V(x) = (x1² − 1)² + 10 (x1² + x2 − 1)²`.
///
/// Minima at A = (−1, 0) and B = (1, 0); the minimum energy pathway between
/// them is the parabola `x2 = 1 − x1²`, with saddle (0, 1) at energy 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct Banana;

impl Potential for Banana {
    fn dim(&self) -> usize {
        2
    }

    #[inline]
    fn energy(&self, x: &[f64]) -> f64 {
        let a = x[0] * x[0] - 1.0;
        let b = x[0] * x[0] + x[1] - 1.0;
        a * a + 10.0 * b * b
    }

    #[inline]
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let x1 = x[0];
        let a = x1 * x1 - 1.0;
        let b = x1 * x1 + x[1] - 1.0;
        grad[0] = 4.0 * x1 * a + 40.0 * x1 * b;
        grad[1] = 20.0 * b;
    }

    fn name(&self) -> String {
        "banana".into()
    }
}

/// `V ≡ 0`: pure diffusion.
#[derive(Debug, Clone, Copy)]
pub struct Flat {
    pub dim: usize,
}

impl Potential for Flat {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, _x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
    }

    fn name(&self) -> String {
        format!("flat{}", self.dim)
    }
}

/// Isotropic harmonic well `V(x) = k/2 |x − c|²`.
#[derive(Debug, Clone)]
pub struct Harmonic {
    pub center: Vec<f64>,
    pub stiffness: f64,
}

impl Potential for Harmonic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        0.5 * self.stiffness * r2
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for ((g, a), c) in grad.iter_mut().zip(x).zip(&self.center) {
            *g = self.stiffness * (a - c);
        }
    }

    fn name(&self) -> String {
        format!("harmonic{}k{}", self.center.len(), self.stiffness)
    }
}

pub fn banana_potential() -> Banana {
    Banana
}

/// Largest relative deviation between the analytic gradient and central
/// differences of the energy at `x`. Components are compared relative to
/// `max(|g|, 1)` so that near-stationary points do not divide by zero.
pub fn gradient_check<P: Potential + ?Sized>(potential: &P, x: &[f64], h: f64) -> f64 {
    let n = potential.dim();
    let mut grad = vec![0.0; n];
    potential.gradient(x, &mut grad);
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        xp[i] = x[i] + h;
        let ep = potential.energy(&xp);
        xp[i] = x[i] - h;
        let em = potential.energy(&xp);
        xp[i] = x[i];
        let fd = (ep - em) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn banana_known_values() {
        let v = Banana;
        assert_eq!(v.energy(&[-1.0, 0.0]), 0.0);
        assert_eq!(v.energy(&[1.0, 0.0]), 0.0);
        assert_eq!(v.energy(&[0.0, 1.0]), 1.0);
        let mut g = [1.0; 2];
        v.gradient(&[1.0, 0.0], &mut g);
        assert_eq!(g, [0.0, 0.0]);
        v.gradient(&[0.0, 1.0], &mut g);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn banana_is_mirror_symmetric() {
        let v = Banana;
        for &(a, b) in &[(0.3, -1.7), (1.2, 0.4), (-0.9, 1.9)] {
            assert_eq!(v.energy(&[a, b]), v.energy(&[-a, b]));
        }
    }

    #[test]
    fn harmonic_gradient() {
        let h = Harmonic {
            center: vec![1.0, -2.0, 0.5],
            stiffness: 3.0,
        };
        assert!(gradient_check(&h, &[0.2, 0.1, -0.4], 1e-5) < 1e-7);
        assert_eq!(h.energy(&[1.0, -2.0, 0.5]), 0.0);
    }

    proptest! {
        #[test]
        fn banana_gradient_matches_finite_differences(x1 in -2.0..2.0f64, x2 in -2.0..2.0f64) {
            prop_assert!(gradient_check(&Banana, &[x1, x2], 1e-5) < 1e-5);
        }
    }
}
