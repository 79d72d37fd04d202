//! Small numerical helpers: compensated sums, Gauss–Legendre rules, smooth cutoffs,
//! time-grid quadrature and differentiation.

use std::f64::consts::PI;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

impl std::iter::FromIterator<f64> for Sum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Sum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of an iterator.
pub fn csum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().collect::<Sum>().value()
}

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate `f` over [a, b] split into `panels` equal panels.
    pub fn composite<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let w = (b - a) / panels as f64;
        let mut acc = Sum::new();
        for p in 0..panels {
            let lo = a + w * p as f64;
            let mid = lo + 0.5 * w;
            for (x, wt) in self.nodes.iter().zip(&self.weights) {
                acc.add(wt * f(mid + 0.5 * w * x));
            }
        }
        acc.value() * 0.5 * w
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Quintic smoothstep: 0 for s <= 0, 1 for s >= 1, C² in between.
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

pub fn smoothstep_d1(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        30.0 * s * s * (1.0 - s) * (1.0 - s)
    }
}

pub fn smoothstep_d2(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    }
}

/// Even plateau cutoff: 1 on |x| <= inner, 0 on |x| >= outer.
/// Returns (value, first derivative, second derivative).
pub fn plateau(x: f64, inner: f64, outer: f64) -> (f64, f64, f64) {
    let r = x.abs();
    let w = outer - inner;
    let s = (outer - r) / w;
    let sg = if x < 0.0 { -1.0 } else { 1.0 };
    (
        smoothstep(s),
        -sg * smoothstep_d1(s) / w,
        smoothstep_d2(s) / (w * w),
    )
}

/// Trapezoid weights for `n` samples with spacing `dt`.
pub fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![dt; n];
    if n == 1 {
        w[0] = 0.0;
    } else if n > 1 {
        w[0] = 0.5 * dt;
        w[n - 1] = 0.5 * dt;
    }
    w
}

/// Coefficients of the first-derivative stencil at sample `n` of `len` samples:
/// fourth-order central inside, second-order one/centered near the ends.
pub fn ddt_stencil(n: usize, len: usize, dt: f64) -> Vec<(usize, f64)> {
    assert!(len >= 3);
    let c = 1.0 / dt;
    if n == 0 {
        vec![(0, -1.5 * c), (1, 2.0 * c), (2, -0.5 * c)]
    } else if n == len - 1 {
        vec![(n, 1.5 * c), (n - 1, -2.0 * c), (n - 2, 0.5 * c)]
    } else if n == 1 || n == len - 2 || len < 5 {
        vec![(n + 1, 0.5 * c), (n - 1, -0.5 * c)]
    } else {
        vec![
            (n - 2, c / 12.0),
            (n - 1, -8.0 * c / 12.0),
            (n + 1, 8.0 * c / 12.0),
            (n + 2, -c / 12.0),
        ]
    }
}

/// Least-squares slope of log(err) against log(h).
pub fn log_slope(h: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|x| x.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1usize, 2, 5, 16, 32] {
            let g = GaussLegendre::new(n);
            let wsum: f64 = g.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13, "n={n} sum={wsum}");
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 1 { 2.0 / (deg as f64) } else { 0.0 };
            // ∫ x^(deg-1) over [-1,1]
            let got: f64 = g
                .nodes
                .iter()
                .zip(&g.weights)
                .map(|(x, w)| w * x.powi(deg as i32 - 1))
                .sum();
            assert!((got - exact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn composite_rule_on_exponential() {
        let g = GaussLegendre::new(16);
        let got = g.composite(0.0, 1.0, 4, |x| (30.0 * x).exp());
        let exact = ((30.0f64).exp() - 1.0) / 30.0;
        assert!((got / exact - 1.0).abs() < 1e-13);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut v = vec![1.0; 1000];
        v.insert(0, 1e16);
        v.push(-1e16);
        assert_eq!(csum(v.iter().copied()), 1000.0);
    }

    #[test]
    fn smoothstep_is_c2_at_ends() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep_d1(0.0), 0.0);
        assert!(smoothstep_d2(1e-9).abs() < 1e-6);
        let (v, d, _) = plateau(0.3, 0.5, 1.0);
        assert_eq!((v, d), (1.0, 0.0));
    }

    #[test]
    fn derivative_stencil_is_exact_on_cubics() {
        let dt = 0.1;
        let f: Vec<f64> = (0..9).map(|i| (i as f64 * dt).powi(2)).collect();
        for n in 0..9 {
            let d: f64 = ddt_stencil(n, 9, dt).iter().map(|(k, c)| c * f[*k]).sum();
            assert!((d - 2.0 * n as f64 * dt).abs() < 1e-12);
        }
    }
}
