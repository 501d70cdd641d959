//! Model domains `Omega = {r < 0}` and their scaled defining functions.
//!
//! Points of `C^n` are stored as `2n` reals with real and imaginary parts
//! interleaved: `(x_1, y_1, ..., x_n, y_n)`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{norm, random_direction, stream_rng};

pub type Point = Vec<f64>;

/// Largest ellipsoid exponent accepted by [`DomainSpec::ellipsoid`].
pub const MAX_EXPONENT: u32 = 4;
pub const DEFAULT_NBHD_WIDTH: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Ball,
    Ellipsoid,
    /// `r = x_1`; an unbounded test fixture with flat level sets.
    Halfspace,
}

/// Defining function, dimension, type and neighbourhood band of a model domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub n: usize,
    pub exponents: Vec<u32>,
    pub type_m: u32,
    /// Divisor applied to the raw defining function.
    pub scale: f64,
    pub c_omega: Option<f64>,
    pub nbhd_width: f64,
}

/// Value, gradient and Hessian of `r` at a point.
#[derive(Clone, Debug)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct DomainDoc {
    kind: DomainKind,
    n: usize,
    #[serde(default)]
    exponents: Vec<u32>,
    #[serde(default = "default_width")]
    nbhd_width: f64,
}

fn default_width() -> f64 {
    DEFAULT_NBHD_WIDTH
}

impl DomainSpec {
    /// Unit ball, `r = (|z|^2 - 1) / 2`.
    pub fn ball(n: usize) -> Result<Self> {
        Self::build(DomainKind::Ball, vec![1; n])
    }

    /// Complex ellipsoid `sum |z_j|^{2 m_j} < 1`, scaled so that `|grad r| = 1` at `(1, 0, ..., 0)`.
    pub fn ellipsoid(exponents: &[u32]) -> Result<Self> {
        if exponents.iter().any(|&m| m > MAX_EXPONENT) {
            return Err(Error::InvalidInput(format!(
                "ellipsoid exponents are limited to m_j <= {MAX_EXPONENT}, got {exponents:?}"
            )));
        }
        Self::build(DomainKind::Ellipsoid, exponents.to_vec())
    }

    pub fn halfspace(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("complex dimension must be >= 2, got {n}")));
        }
        Ok(DomainSpec {
            kind: DomainKind::Halfspace,
            n,
            exponents: Vec::new(),
            type_m: 2,
            scale: 1.0,
            c_omega: None,
            nbhd_width: DEFAULT_NBHD_WIDTH,
        })
    }

    fn build(kind: DomainKind, exponents: Vec<u32>) -> Result<Self> {
        let n = exponents.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("complex dimension must be >= 2, got {n}")));
        }
        if exponents.contains(&0) {
            return Err(Error::InvalidInput("ellipsoid exponents must be >= 1".into()));
        }
        let type_m = 2 * exponents.iter().copied().max().unwrap_or(1);
        // |grad raw| at (1, 0, ..., 0) equals 2 m_1.
        let scale = 2.0 * exponents[0] as f64;
        Ok(DomainSpec {
            kind,
            n,
            exponents,
            type_m,
            scale,
            c_omega: None,
            nbhd_width: DEFAULT_NBHD_WIDTH,
        })
    }

    pub fn with_nbhd_width(mut self, width: f64) -> Result<Self> {
        if !(width > 0.0 && width < 1.0) {
            return Err(Error::InvalidInput(format!("nbhd_width must lie in (0, 1), got {width}")));
        }
        self.nbhd_width = width;
        Ok(self)
    }

    pub fn with_c_omega(mut self, c: f64) -> Self {
        self.c_omega = Some(c);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DomainDoc = serde_json::from_str(text)?;
        let spec = match doc.kind {
            DomainKind::Ball => Self::ball(doc.n)?,
            DomainKind::Halfspace => Self::halfspace(doc.n)?,
            DomainKind::Ellipsoid => {
                if doc.exponents.len() != doc.n {
                    return Err(Error::InvalidInput(format!(
                        "ellipsoid with n = {} needs {} exponents, got {}",
                        doc.n,
                        doc.n,
                        doc.exponents.len()
                    )));
                }
                Self::ellipsoid(&doc.exponents)?
            }
        };
        spec.with_nbhd_width(doc.nbhd_width)
    }

    pub fn to_json(&self) -> String {
        let doc = DomainDoc {
            kind: self.kind,
            n: self.n,
            exponents: if self.kind == DomainKind::Ellipsoid {
                self.exponents.clone()
            } else {
                Vec::new()
            },
            nbhd_width: self.nbhd_width,
        };
        serde_json::to_string(&doc).expect("domain document serializes")
    }

    /// Short label such as `ball2` or `ellipsoid1-2`.
    pub fn name(&self) -> String {
        match self.kind {
            DomainKind::Ball => format!("ball{}", self.n),
            DomainKind::Ellipsoid => format!("ellipsoid{}", self.exponents.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("-")),
            DomainKind::Halfspace => format!("halfspace{}", self.n),
        }
    }

    /// Number of real coordinates, `2n`.
    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    pub fn is_bounded(&self) -> bool {
        self.kind != DomainKind::Halfspace
    }

    /// Largest flow time `t_0`; half the band width.
    pub fn flow_time(&self) -> f64 {
        self.nbhd_width / 2.0
    }

    /// Reference boundary point `(1, 0, ..., 0)` (the origin for the half-space).
    pub fn reference_point(&self) -> Point {
        let mut p = vec![0.0; self.real_dim()];
        if self.is_bounded() {
            p[0] = 1.0;
        }
        p
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.real_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.real_dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// `r(z)` without dimension checks.
    pub fn value(&self, z: &[f64]) -> f64 {
        match self.kind {
            DomainKind::Halfspace => z[0],
            _ => {
                let mut s = -1.0;
                for (j, &m) in self.exponents.iter().enumerate() {
                    let q = z[2 * j] * z[2 * j] + z[2 * j + 1] * z[2 * j + 1];
                    s += q.powi(m as i32);
                }
                s / self.scale
            }
        }
    }

    /// `grad r(z)` written into `out`, without dimension checks.
    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
        match self.kind {
            DomainKind::Halfspace => {
                out.iter_mut().for_each(|g| *g = 0.0);
                out[0] = 1.0;
            }
            _ => {
                for (j, &m) in self.exponents.iter().enumerate() {
                    let (x, y) = (z[2 * j], z[2 * j + 1]);
                    let q = x * x + y * y;
                    let c = 2.0 * m as f64 * q.powi(m as i32 - 1) / self.scale;
                    out[2 * j] = c * x;
                    out[2 * j + 1] = c * y;
                }
            }
        }
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        self.gradient_into(z, &mut g);
        g
    }

    pub fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let d = z.len();
        let mut h = DMatrix::zeros(d, d);
        if self.kind == DomainKind::Halfspace {
            return h;
        }
        for (j, &m) in self.exponents.iter().enumerate() {
            let (x, y) = (z[2 * j], z[2 * j + 1]);
            let q = x * x + y * y;
            let m_f = m as f64;
            let a = 2.0 * m_f * q.powi(m as i32 - 1);
            let b = if m >= 2 {
                4.0 * m_f * (m_f - 1.0) * q.powi(m as i32 - 2)
            } else {
                0.0
            };
            let (i0, i1) = (2 * j, 2 * j + 1);
            h[(i0, i0)] = (a + b * x * x) / self.scale;
            h[(i1, i1)] = (a + b * y * y) / self.scale;
            h[(i0, i1)] = b * x * y / self.scale;
            h[(i1, i0)] = h[(i0, i1)];
        }
        h
    }

    /// Value, gradient and Hessian of the scaled defining function.
    pub fn eval_jet(&self, z: &[f64]) -> Result<Jet2> {
        self.check_dim(z)?;
        Ok(Jet2 {
            value: self.value(z),
            gradient: self.gradient(z),
            hessian: self.hessian(z),
        })
    }

    /// Radius `R` with `r(R theta) = 0` along the ray through the unit vector `theta`.
    pub fn ray_boundary_radius(&self, theta: &[f64]) -> Result<f64> {
        if !self.is_bounded() {
            return Err(Error::InvalidInput("rays from the origin need a bounded domain".into()));
        }
        let at = |s: f64| -> f64 {
            let p: Vec<f64> = theta.iter().map(|t| t * s).collect();
            self.value(&p)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while at(hi) < 0.0 {
            hi *= 2.0;
            if hi > 64.0 {
                return Err(Error::Diagnostic("ray never leaves the domain".into()));
            }
        }
        // Newton with bisection safeguard; r is convex and increasing along the ray past its minimum.
        let mut s = hi;
        for _ in 0..200 {
            let p: Vec<f64> = theta.iter().map(|t| t * s).collect();
            let v = self.value(&p);
            if v.abs() < 1e-15 {
                return Ok(s);
            }
            if v < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let g = self.gradient(&p);
            let slope: f64 = g.iter().zip(theta).map(|(a, b)| a * b).sum();
            let newton = s - v / slope;
            s = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(s)
    }

    /// Point on the ray through `theta` at which `r` equals `level` (`-1/scale < level <= 0`).
    pub fn ray_point_at_level(&self, theta: &[f64], level: f64) -> Result<Point> {
        let big_r = self.ray_boundary_radius(theta)?;
        let (mut lo, mut hi) = (0.0, big_r);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let p: Vec<f64> = theta.iter().map(|t| t * mid).collect();
            if self.value(&p) < level {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        Ok(theta.iter().map(|t| t * 0.5 * (lo + hi)).collect())
    }

    /// Random point of `U ∩ Omega` with `r` uniform in `(-width, 0)`.
    pub fn sample_band_point<R: Rng + ?Sized>(&self, rng: &mut R, width: f64) -> Result<Point> {
        let level = -width * rng.random::<f64>();
        match self.kind {
            DomainKind::Halfspace => {
                let mut p: Vec<f64> = (0..self.real_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                p[0] = level;
                Ok(p)
            }
            _ => {
                let theta = random_direction(rng, self.real_dim());
                self.ray_point_at_level(&theta, level)
            }
        }
    }

    /// Random boundary point (ray projection of a uniform direction).
    pub fn sample_boundary_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Point> {
        self.sample_band_point(rng, 0.0)
    }
}

/// Outcome of the sampled convexity check.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

/// Minimum Hessian eigenvalue over sampled points of the band `|r| < nbhd_width`.
pub fn convexity_check(domain: &DomainSpec, samples: usize, seed: u64) -> Result<ConvexityReport> {
    let mut rng = stream_rng(seed, 11);
    let mut min_eig = f64::INFINITY;
    for _ in 0..samples {
        // both sides of the boundary
        let mut z = domain.sample_band_point(&mut rng, domain.nbhd_width)?;
        if rng.random::<bool>() && domain.is_bounded() {
            let r0 = domain.value(&z);
            let theta: Vec<f64> = {
                let nz = norm(&z);
                z.iter().map(|x| x / nz).collect()
            };
            z = domain.ray_point_at_level(&theta, 0.0)?;
            let g = domain.gradient(&z);
            let gn = norm(&g);
            // step outward by roughly |r0| along the normal
            z.iter_mut().zip(&g).for_each(|(x, gi)| *x += -r0 * gi / (gn * gn));
        }
        min_eig = min_eig.min(min_eigenvalue(&domain.hessian(&z)));
    }
    Ok(ConvexityReport {
        samples,
        min_eigenvalue: min_eig,
        pass: min_eig >= -1e-9,
    })
}

pub fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    h.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Gradient magnitude statistics over the band and on the boundary.
#[derive(Clone, Debug, Serialize)]
pub struct GradientBandReport {
    pub samples: usize,
    pub band_min: f64,
    pub band_max: f64,
    pub boundary_max_rel_dev: f64,
    /// `2/3 <= |grad r| <= 3/2` on every sampled band point.
    pub pass: bool,
}

pub fn gradient_band_check(domain: &DomainSpec, samples: usize, seed: u64) -> Result<GradientBandReport> {
    let mut rng = stream_rng(seed, 12);
    let (mut lo, mut hi, mut dev) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let z = domain.sample_band_point(&mut rng, domain.nbhd_width)?;
        let g = norm(&domain.gradient(&z));
        lo = lo.min(g);
        hi = hi.max(g);
        let b = domain.sample_boundary_point(&mut rng)?;
        dev = dev.max((norm(&domain.gradient(&b)) - 1.0).abs());
    }
    Ok(GradientBandReport {
        samples,
        band_min: lo,
        band_max: hi,
        boundary_max_rel_dev: dev,
        pass: lo >= 2.0 / 3.0 && hi <= 1.5,
    })
}

/// Largest relative deviation between analytic derivatives and central differences.
#[derive(Clone, Debug, Serialize)]
pub struct FiniteDifferenceReport {
    pub samples: usize,
    pub gradient_rel_err: f64,
    pub hessian_rel_err: f64,
    pub hessian_asymmetry: f64,
    pub pass: bool,
}

pub fn finite_difference_check(domain: &DomainSpec, samples: usize, seed: u64) -> Result<FiniteDifferenceReport> {
    let h = 1e-5;
    let mut rng = stream_rng(seed, 13);
    let d = domain.real_dim();
    let (mut ge, mut he, mut asym) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let z = domain.sample_band_point(&mut rng, domain.nbhd_width)?;
        let jet = domain.eval_jet(&z)?;
        let gscale = norm(&jet.gradient).max(1.0);
        let hscale = jet.hessian.norm().max(1.0);
        for i in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (domain.value(&zp) - domain.value(&zm)) / (2.0 * h);
            ge = ge.max((fd - jet.gradient[i]).abs() / gscale);
            let gp = domain.gradient(&zp);
            let gm = domain.gradient(&zm);
            for j in 0..d {
                let fdh = (gp[j] - gm[j]) / (2.0 * h);
                he = he.max((fdh - jet.hessian[(j, i)]).abs() / hscale);
                asym = asym.max((jet.hessian[(i, j)] - jet.hessian[(j, i)]).abs());
            }
        }
    }
    Ok(FiniteDifferenceReport {
        samples,
        gradient_rel_err: ge,
        hessian_rel_err: he,
        hessian_asymmetry: asym,
        pass: ge <= 1e-6 && he <= 1e-6 && asym <= 1e-14,
    })
}

/// Distance-comparability constant `C_Omega`, estimated by sampling the band.
///
/// For each sample the boundary distance comes from the nearest-point projection;
/// the result is the largest of `dist/|r|` and `|r|/dist`.
pub fn estimate_c_omega(domain: &DomainSpec, samples: usize, seed: u64) -> Result<f64> {
    if samples < 100 {
        return Err(Error::InvalidInput(format!("C_Omega estimation needs >= 100 samples, got {samples}")));
    }
    let mut rng = stream_rng(seed, 14);
    let mut worst: f64 = 0.0;
    let mut discarded = 0usize;
    for _ in 0..samples {
        let z = domain.sample_band_point(&mut rng, domain.nbhd_width)?;
        let r = domain.value(&z).abs();
        if r < 1e-12 {
            discarded += 1;
            continue;
        }
        match crate::flow::nearest_project(domain, &z) {
            Ok(w) => {
                let d = crate::numeric::dist(&z, &w);
                worst = worst.max((d / r).max(r / d));
            }
            Err(_) => discarded += 1,
        }
    }
    if discarded * 10 > samples {
        return Err(Error::Diagnostic(format!(
            "{discarded} of {samples} C_Omega samples discarded"
        )));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_values() {
        let d = DomainSpec::ball(2).unwrap();
        assert_eq!(d.value(&[0.0; 4]), -0.5);
        let j = d.eval_jet(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(j.value, 0.0);
        assert_eq!(norm(&j.gradient), 1.0);
        assert_eq!(j.hessian, DMatrix::identity(4, 4));
    }

    #[test]
    fn ellipsoid_value_and_scale() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        assert_eq!(d.scale, 2.0);
        assert_eq!(d.type_m, 4);
        let z = [0.0, 0.0, 2f64.powf(-0.25), 0.0];
        assert!((d.value(&z) - (-1.0 / (2.0 * d.scale))).abs() < 1e-15);
        assert!((norm(&d.gradient(&d.reference_point())) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let d = DomainSpec::ball(2).unwrap();
        assert!(matches!(d.eval_jet(&[0.0; 3]), Err(Error::DimensionMismatch { expected: 4, got: 3 })));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(DomainSpec::ball(1).is_err());
        assert!(DomainSpec::ellipsoid(&[1, 0]).is_err());
        assert!(DomainSpec::ellipsoid(&[1, 5]).is_err());
        assert!(DomainSpec::from_json(r#"{"kind":"ellipsoid","n":2,"exponents":[1]}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap().with_nbhd_width(0.2).unwrap();
        let back = DomainSpec::from_json(&d.to_json()).unwrap();
        assert_eq!(d, back);
        let b = DomainSpec::from_json(r#"{"kind":"ball","n":3}"#).unwrap();
        assert_eq!(b.nbhd_width, DEFAULT_NBHD_WIDTH);
        assert_eq!(b.n, 3);
    }

    #[test]
    fn finite_differences_agree() {
        for d in [DomainSpec::ball(2).unwrap(), DomainSpec::ellipsoid(&[1, 2]).unwrap(), DomainSpec::ellipsoid(&[2, 3, 1]).unwrap()] {
            let rep = finite_difference_check(&d, 100, 1).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn convexity() {
        let ball = convexity_check(&DomainSpec::ball(2).unwrap(), 200, 2).unwrap();
        assert!((ball.min_eigenvalue - 1.0).abs() < 1e-12);
        let e = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        assert!(convexity_check(&e, 200, 2).unwrap().pass);
        // z_2 = 0: the |z_2|^4 term contributes a vanishing Hessian block
        assert_eq!(min_eigenvalue(&e.hessian(&[0.5, 0.1, 0.0, 0.0])), 0.0);
        let mut rng = stream_rng(9, 0);
        let b = e.sample_boundary_point(&mut rng).unwrap();
        assert!(min_eigenvalue(&e.hessian(&b)) > 0.0);
    }

    #[test]
    fn scaling_preserves_the_zero_set() {
        let e = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let mut rng = stream_rng(4, 0);
        for _ in 0..200 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.2..1.2)).collect();
            let raw = z[0] * z[0] + z[1] * z[1] + (z[2] * z[2] + z[3] * z[3]).powi(2) - 1.0;
            assert_eq!(raw.signum(), e.value(&z).signum());
        }
    }
}
