//! Gauss–Legendre rules and composite panels.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// A quadrature rule as a list of `(node, weight)` pairs.
#[derive(Clone, Debug, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    fn push_panel(&mut self, a: f64, b: f64, base: &(Vec<f64>, Vec<f64>)) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in base.0.iter().zip(&base.1) {
            self.nodes.push(mid + half * x);
            self.weights.push(half * w);
        }
    }
}

/// Composite rule over `[a, b]` with `panels` equal panels of `order` points.
pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Rule {
    let base = gauss_legendre(order);
    let mut rule = Rule::default();
    let h = (b - a) / panels as f64;
    for p in 0..panels {
        rule.push_panel(a + p as f64 * h, a + (p + 1) as f64 * h, &base);
    }
    rule
}

/// Composite rule whose first panel is geometrically graded toward `a`,
/// suited to integrands with an algebraic singularity at the left end.
///
/// The graded levels cover `[a + h r^levels, a + h]` with ratio `r = 0.15`;
/// the innermost interval `[a, a + h r^levels]` is returned separately so the
/// caller can treat it analytically.
pub fn graded(a: f64, b: f64, panels: usize, order: usize, levels: usize) -> (Rule, f64) {
    const RATIO: f64 = 0.15;
    let base = gauss_legendre(order);
    let mut rule = Rule::default();
    let h = (b - a) / panels as f64;
    let mut hi = h;
    for _ in 0..levels {
        let lo = hi * RATIO;
        rule.push_panel(a + lo, a + hi, &base);
        hi = lo;
    }
    for p in 1..panels {
        rule.push_panel(a + p as f64 * h, a + (p + 1) as f64 * h, &base);
    }
    (rule, hi)
}

/// Periodic trapezoid nodes on `[-pi, pi)`.
pub fn periodic_nodes(n: usize) -> (Vec<f64>, f64) {
    let h = 2.0 * PI / n as f64;
    ((0..n).map(|k| -PI + k as f64 * h).collect(), h)
}
