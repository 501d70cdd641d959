//! Small numerical helpers shared across modules: interleaved complex vectors,
//! Gauss-Legendre rules, Halton points, a runtime-dimension kd-tree and seeded
//! random streams.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Hermitian product `sum_j a_j conj(b_j)` of two interleaved complex vectors.
pub fn cdot(a: &[f64], b: &[f64]) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for (pa, pb) in a.chunks_exact(2).zip(b.chunks_exact(2)) {
        let x = Complex64::new(pa[0], pa[1]);
        let y = Complex64::new(pb[0], pb[1]);
        s += x * y.conj();
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `z + lambda * u` for a complex scalar and interleaved complex vectors.
pub fn add_scaled(z: &[f64], lambda: Complex64, u: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    add_scaled_into(&mut out, lambda, u);
    out
}

pub fn add_scaled_into(out: &mut [f64], lambda: Complex64, u: &[f64]) {
    for (o, pu) in out.chunks_exact_mut(2).zip(u.chunks_exact(2)) {
        let v = lambda * Complex64::new(pu[0], pu[1]);
        o[0] += v.re;
        o[1] += v.im;
    }
}

/// Multiply an interleaved complex vector by a complex scalar.
pub fn cscale(u: &[f64], c: Complex64) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    add_scaled_into(&mut out, c, u);
    out
}

pub fn normalize(u: &mut [f64]) -> f64 {
    let n = norm(u);
    if n > 0.0 {
        u.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Remove from `u` its components along the orthonormal complex vectors `basis`.
pub fn complex_orthogonalize(u: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = cdot(u, b);
        add_scaled_into(u, -c, b);
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Radical inverse of `index` in the given base (Halton coordinate).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

pub const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Deterministic random stream: a ChaCha8 generator keyed by `seed`, on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform direction on the unit sphere of `R^dim`.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if normalize(&mut v) > 1e-12 {
            return v;
        }
    }
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Balanced kd-tree over points of runtime dimension.
///
/// Ties in nearest-neighbour queries resolve to the smaller point index.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    perm: Vec<usize>,
    axis: Vec<usize>,
}

impl KdTree {
    pub fn new(points: &[Vec<f64>]) -> Self {
        let dim = points.first().map_or(0, |p| p.len());
        let coords: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let n = points.len();
        let mut tree = KdTree {
            dim,
            coords,
            perm: (0..n).collect(),
            axis: vec![0; n],
        };
        tree.build(0, n);
        tree
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    fn coord(&self, p: usize, a: usize) -> f64 {
        self.coords[p * self.dim + a]
    }

    fn point(&self, p: usize) -> &[f64] {
        &self.coords[p * self.dim..(p + 1) * self.dim]
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi <= lo {
            return;
        }
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for a in 0..self.dim {
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for &p in &self.perm[lo..hi] {
                let c = self.coord(p, a);
                mn = mn.min(c);
                mx = mx.max(c);
            }
            if mx - mn > best_spread {
                best_spread = mx - mn;
                best_axis = a;
            }
        }
        let mid = (lo + hi) / 2;
        let (dim, coords) = (self.dim, &self.coords);
        self.perm[lo..hi].select_nth_unstable_by(mid - lo, |&x, &y| {
            coords[x * dim + best_axis]
                .total_cmp(&coords[y * dim + best_axis])
                .then(x.cmp(&y))
        });
        self.axis[mid] = best_axis;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Index of the nearest point and its squared distance.
    pub fn nearest(&self, q: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(q, 0, self.perm.len(), &mut best);
        best
    }

    fn nearest_rec(&self, q: &[f64], lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi <= lo {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.perm[mid];
        let d2 = dist2(q, self.point(p));
        if d2 < best.1 || (d2 == best.1 && p < best.0) {
            *best = (p, d2);
        }
        let a = self.axis[mid];
        let diff = q[a] - self.coord(p, a);
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(q, first.0, first.1, best);
        if diff * diff <= best.1 {
            self.nearest_rec(q, second.0, second.1, best);
        }
    }

    /// Indices of all points within Euclidean distance `radius` of `q`, sorted.
    pub fn within(&self, q: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_rec(q, radius * radius, 0, self.perm.len(), &mut out);
        out.sort_unstable();
        out
    }

    fn within_rec(&self, q: &[f64], r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if hi <= lo {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.perm[mid];
        if dist2(q, self.point(p)) <= r2 {
            out.push(p);
        }
        let a = self.axis[mid];
        let diff = q[a] - self.coord(p, a);
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, mid + 1, hi, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(4);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - 1.0 / 8.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(1);
        assert!((x[0] - 0.5).abs() < 1e-15 && (w[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kdtree_matches_brute_force() {
        let mut rng = stream_rng(3, 0);
        let pts: Vec<Vec<f64>> = (0..500).map(|_| random_direction(&mut rng, 4)).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q: Vec<f64> = random_direction(&mut rng, 4).iter().map(|x| x * 1.1).collect();
            let (i, d2) = tree.nearest(&q);
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(j, p)| (j, dist2(p, &q)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(i, bi);
            assert_eq!(d2, bd);
            let near = tree.within(&q, 0.5);
            let brute: Vec<usize> = (0..pts.len()).filter(|&j| dist(&pts[j], &q) <= 0.5).collect();
            assert_eq!(near, brute);
        }
    }

    #[test]
    fn hermitian_product_conventions() {
        let a = [0.0, 1.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(cdot(&a, &b), Complex64::new(0.0, 1.0));
        assert_eq!(cdot(&b, &a), Complex64::new(0.0, -1.0));
    }
}
