//! Quadrature rules and exact integrals of piecewise polynomials.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
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
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Real polynomial `Σ c_k s^k` in a local variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn linear(c0: f64, c1: f64) -> Self {
        Poly(vec![c0, c1])
    }

    pub fn zero() -> Self {
        Poly(vec![0.0])
    }

    /// Degree after trimming trailing zeros; zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly::zero();
        }
        Poly(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    /// Antiderivative vanishing at `s = 0`.
    pub fn antiderivative(&self) -> Poly {
        let mut out = vec![0.0];
        out.extend(self.0.iter().enumerate().map(|(k, c)| c / (k as f64 + 1.0)));
        Poly(out)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let p = self.antiderivative();
        p.eval(b) - p.eval(a)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n).map(|k| self.0.get(k).unwrap_or(&0.0) + other.0.get(k).unwrap_or(&0.0)).collect())
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    /// `p(s + shift)` as a polynomial in `s`.
    pub fn shift(&self, shift: f64) -> Poly {
        let mut out = Poly::zero();
        for &c in self.0.iter().rev() {
            out = out.mul(&Poly::linear(shift, 1.0)).add(&Poly::constant(c));
        }
        out
    }

    /// Sorted real roots in `[a, b]`, found by isolating them between the
    /// critical points and bisecting.
    pub fn roots_in(&self, a: f64, b: f64) -> Vec<f64> {
        let deg = self.degree();
        if deg == 0 {
            return Vec::new();
        }
        let mut marks = vec![a];
        if deg >= 2 {
            marks.extend(self.derivative().roots_in(a, b));
        }
        marks.push(b);
        let mut roots: Vec<f64> = Vec::new();
        for w in marks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (flo, fhi) = (self.eval(lo), self.eval(hi));
            if flo == 0.0 {
                roots.push(lo);
            }
            if flo * fhi < 0.0 {
                roots.push(bisect(|s| self.eval(s), lo, hi, flo));
            }
        }
        if self.eval(b) == 0.0 {
            roots.push(b);
        }
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (1.0 + y.abs()));
        roots
    }

    /// `∫_a^b |p(s)| ds`, exact up to root location.
    pub fn abs_integral(&self, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        cuts.extend(self.roots_in(a, b).into_iter().filter(|&r| r > a && r < b));
        cuts.push(b);
        let anti = self.antiderivative();
        cuts.windows(2).map(|w| (anti.eval(w[1]) - anti.eval(w[0])).abs()).sum()
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
