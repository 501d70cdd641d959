//! Extremal frames, McNeal-Stein polydiscs `P_eps(xi)` and the boundary quasimetric `rho`.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainKind, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::numeric::{add_scaled, cdot, complex_orthogonalize, normalize, random_direction, stream_rng, KdTree};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Resolution of the inner maximum in `tau`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SliceResolution {
    pub angles: usize,
    pub radial: usize,
}

impl Default for SliceResolution {
    fn default() -> Self {
        SliceResolution { angles: 64, radial: 33 }
    }
}

fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `max_{|lambda| <= c} |r(xi + lambda u) - r(xi)|`.
pub fn slice_sup(domain: &DomainSpec, xi: &[f64], u: &[f64], c: f64, res: SliceResolution) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let r0 = domain.value(xi);
    let mut buf = xi.to_vec();
    let mut f = |lambda: Complex64| -> f64 {
        buf.copy_from_slice(xi);
        crate::numeric::add_scaled_into(&mut buf, lambda, u);
        domain.value(&buf) - r0
    };
    let dth = std::f64::consts::TAU / res.angles as f64;
    let (mut imax, mut imin) = (0, 0);
    let (mut vmax, mut vmin) = (f64::NEG_INFINITY, f64::INFINITY);
    for j in 0..res.angles {
        let v = f(Complex64::from_polar(c, j as f64 * dth));
        if v > vmax {
            vmax = v;
            imax = j;
        }
        if v < vmin {
            vmin = v;
            imin = j;
        }
    }
    let th = imax as f64 * dth;
    let (_, bmax) = golden_max(|t| f(Complex64::from_polar(c, t)), th - dth, th + dth, 1e-10);
    let top = vmax.max(bmax);
    // interior minimum of the convex slice, searched on the ray through the lowest boundary angle
    let tm = {
        let t = imin as f64 * dth;
        let (t, _) = golden_max(|s| -f(Complex64::from_polar(c, s)), t - dth, t + dth, 1e-8);
        t
    };
    let ds = c / (res.radial - 1) as f64;
    let (mut k_best, mut low) = (0, 0.0f64);
    for k in 0..res.radial {
        let v = f(Complex64::from_polar(k as f64 * ds, tm));
        if v < low {
            low = v;
            k_best = k;
        }
    }
    if k_best > 0 {
        let a = (k_best as f64 - 1.0) * ds;
        let b = ((k_best as f64 + 1.0) * ds).min(c);
        let (_, v) = golden_max(|s| -f(Complex64::from_polar(s, tm)), a, b, 1e-12 * c.max(1e-3));
        low = low.min(-v);
    }
    top.max(-low)
}

/// `tau(xi, u, eps) = sup{c : |r(xi + lambda u) - r(xi)| <= eps for |lambda| <= c}`.
pub fn tau(domain: &DomainSpec, xi: &[f64], u: &[f64], eps: f64) -> Result<f64> {
    tau_with(domain, xi, u, eps, SliceResolution::default(), 1e-11)
}

pub fn tau_with(domain: &DomainSpec, xi: &[f64], u: &[f64], eps: f64, res: SliceResolution, rel_tol: f64) -> Result<f64> {
    let max = domain.flow_time();
    if !(eps > 0.0 && eps <= max) {
        return Err(Error::ScaleRange { eps, max });
    }
    tau_unchecked(domain, xi, u, eps, res, rel_tol)
}

const BRACKET_BOUND: f64 = 4.0;

/// `tau` without the scale-range check (scales above `t_0` are allowed).
pub fn tau_unchecked(domain: &DomainSpec, xi: &[f64], u: &[f64], eps: f64, res: SliceResolution, rel_tol: f64) -> Result<f64> {
    let g = |c: f64| slice_sup(domain, xi, u, c, res);
    let mut hi = eps.min(1.0);
    let mut lo = 0.0;
    while g(hi) < eps {
        lo = hi;
        hi *= 2.0;
        if hi > BRACKET_BOUND {
            return Err(Error::Bracket {
                target: eps,
                bound: BRACKET_BOUND,
            });
        }
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid) < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// An `eps`-extremal basis at `xi` with its radii.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtremalFrame {
    pub xi: Point,
    pub eps: f64,
    pub basis: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExtremalFrame {
    /// Complex coordinates `lambda_k = <z - xi, u_k>`.
    pub fn coordinates(&self, z: &[f64]) -> Vec<Complex64> {
        let v = crate::numeric::sub(z, &self.xi);
        self.basis.iter().map(|u| cdot(&v, u)).collect()
    }

    pub fn reconstruct(&self, lambda: &[Complex64]) -> Point {
        let mut z = self.xi.clone();
        for (l, u) in lambda.iter().zip(&self.basis) {
            crate::numeric::add_scaled_into(&mut z, *l, u);
        }
        z
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }
}

/// Closed polydisc membership `|lambda_k| <= tau_k` for all `k`.
pub fn polydisc_contains(frame: &ExtremalFrame, z: &[f64]) -> bool {
    frame
        .coordinates(z)
        .iter()
        .zip(&frame.radii)
        .all(|(l, t)| l.norm() <= t * (1.0 + 1e-12))
}

/// Unit complex normal `grad r / |grad r|` (Step I).
pub fn normal_direction(domain: &DomainSpec, xi: &[f64]) -> Vec<f64> {
    let mut u = domain.gradient(xi);
    normalize(&mut u);
    u
}

/// Unit vector in the complement of `basis`, from the coordinate vector with the
/// largest projection (lowest index on ties).
fn projected_coordinate(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in 0..dim / 2 {
        let mut e = vec![0.0; dim];
        e[2 * j] = 1.0;
        complex_orthogonalize(&mut e, basis);
        complex_orthogonalize(&mut e, basis);
        let nrm = crate::numeric::norm(&e);
        if best.as_ref().is_none_or(|(b, _)| nrm > b + 1e-12) {
            best = Some((nrm, e));
        }
    }
    let mut e = best.expect("dimension >= 2").1;
    normalize(&mut e);
    e
}

/// True when the extremal basis at a point does not depend on `eps`
/// (complex dimension 2, where the complement of `u_1` is a line, and the ball).
pub fn frame_is_scale_free(domain: &DomainSpec) -> bool {
    domain.n == 2 || domain.kind != DomainKind::Ellipsoid
}

/// Basis at `xi` for scale-free domains.
pub fn scale_free_basis(domain: &DomainSpec, xi: &[f64]) -> Vec<Vec<f64>> {
    let mut basis = vec![normal_direction(domain, xi)];
    while basis.len() < domain.n {
        let e = projected_coordinate(&basis, xi.len());
        basis.push(e);
    }
    basis
}

/// Steps I-III: `u_1` along the complex normal, then successive maximizers of
/// `tau` over unit vectors orthogonal to the previous ones.
pub fn extremal_frame(domain: &DomainSpec, xi: &[f64], eps: f64, seed: u64) -> Result<ExtremalFrame> {
    if xi.len() != domain.real_dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.real_dim(),
            got: xi.len(),
        });
    }
    let max = domain.flow_time();
    if !(eps > 0.0 && eps <= max) {
        return Err(Error::ScaleRange { eps, max });
    }
    let res = SliceResolution::default();
    let mut warnings = Vec::new();
    let basis = if frame_is_scale_free(domain) {
        scale_free_basis(domain, xi)
    } else {
        let mut basis = vec![normal_direction(domain, xi)];
        let mut rng = stream_rng(seed, 21);
        while basis.len() < domain.n {
            if basis.len() + 1 == domain.n {
                basis.push(projected_coordinate(&basis, xi.len()));
                break;
            }
            let (u, warn) = maximize_tau(domain, xi, eps, &basis, &mut rng, res)?;
            if let Some(w) = warn {
                warnings.push(w);
            }
            basis.push(u);
        }
        basis
    };
    let radii = basis
        .iter()
        .map(|u| tau_with(domain, xi, u, eps, res, 1e-11))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtremalFrame {
        xi: xi.to_vec(),
        eps,
        basis,
        radii,
        warnings,
    })
}

fn maximize_tau<R: Rng>(
    domain: &DomainSpec,
    xi: &[f64],
    eps: f64,
    basis: &[Vec<f64>],
    rng: &mut R,
    res: SliceResolution,
) -> Result<(Vec<f64>, Option<String>)> {
    let dim = xi.len();
    let t = |u: &[f64]| tau_with(domain, xi, u, eps, res, 1e-7).unwrap_or(0.0);
    let project = |v: &mut Vec<f64>| {
        complex_orthogonalize(v, basis);
        complex_orthogonalize(v, basis);
        normalize(v)
    };
    let mut results: Vec<(f64, Vec<f64>)> = Vec::new();
    for _ in 0..32 {
        let mut u = random_direction(rng, dim);
        if project(&mut u) < 1e-8 {
            continue;
        }
        let mut best = t(&u);
        let mut step = 0.25;
        while step > 1e-3 {
            let mut improved = false;
            for i in 0..dim {
                for sgn in [1.0, -1.0] {
                    let mut v = u.clone();
                    v[i] += sgn * step;
                    if project(&mut v) < 1e-8 {
                        continue;
                    }
                    let tv = t(&v);
                    if tv > best {
                        best = tv;
                        u = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        results.push((best, u));
    }
    results.sort_by(|a, b| b.0.total_cmp(&a.0));
    let warn = match results.get(1) {
        Some((second, _)) if (results[0].0 - second) > 0.01 * results[0].0 => Some(format!(
            "optimizer stagnation at basis vector {}: best starts give tau {:.6e} and {:.6e}",
            basis.len() + 1,
            results[0].0,
            second
        )),
        _ => None,
    };
    let e = projected_coordinate(basis, dim);
    if t(&e) >= results[0].0 * (1.0 - 1e-6) {
        return Ok((e, warn));
    }
    Ok((results.swap_remove(0).1, warn))
}

/// `inf{eps : w in P_eps(zeta)}`, no upper cap.
///
/// Direct route for scale-free frames: `max_k g_k(|lambda_k|)` with `g_k` the
/// slice supremum along `u_k`.
pub fn polydisc_scale(domain: &DomainSpec, zeta: &[f64], w: &[f64]) -> f64 {
    let res = SliceResolution::default();
    let basis = scale_free_basis(domain, zeta);
    let v = crate::numeric::sub(w, zeta);
    basis
        .iter()
        .map(|u| slice_sup(domain, zeta, u, cdot(&v, u).norm(), res))
        .fold(0.0, f64::max)
}

/// Ladder ratio for the monotone-envelope predicate.
pub const LADDER_RATIO: f64 = 1.090_507_732_665_257_7; // 2^{1/8}

/// `inf{eps : w in P_eps'(zeta) for some eps' <= eps}` on a geometric ladder in `[eps_min, cap]`.
/// Returns `None` when no ladder scale contains `w`.
pub fn polydisc_scale_ladder(domain: &DomainSpec, zeta: &[f64], w: &[f64], eps_min: f64, cap: f64, seed: u64) -> Result<Option<f64>> {
    let mut eps = eps_min;
    while eps <= cap * (1.0 + 1e-12) {
        let frame = extremal_frame(domain, zeta, eps, seed)?;
        if polydisc_contains(&frame, w) {
            return Ok(Some(eps));
        }
        eps *= LADDER_RATIO;
    }
    Ok(None)
}

/// Value of the quasimetric, flagged when the cap was reached.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RhoValue {
    pub value: f64,
    pub at_cap: bool,
}

/// `rho(z1, z2) = inf{eps : z1 in P_eps(z2), z2 in P_eps(z1)}`, capped at `cap`.
pub fn rho_capped(domain: &DomainSpec, z1: &[f64], z2: &[f64], cap: f64) -> Result<RhoValue> {
    if z1 == z2 {
        return Ok(RhoValue { value: 0.0, at_cap: false });
    }
    let v = if frame_is_scale_free(domain) {
        polydisc_scale(domain, z1, z2).max(polydisc_scale(domain, z2, z1))
    } else {
        let a = polydisc_scale_ladder(domain, z1, z2, 1e-7, cap, 0)?;
        let b = polydisc_scale_ladder(domain, z2, z1, 1e-7, cap, 0)?;
        match (a, b) {
            (Some(a), Some(b)) => a.max(b),
            _ => f64::INFINITY,
        }
    };
    if v > cap {
        Ok(RhoValue { value: cap, at_cap: true })
    } else {
        Ok(RhoValue { value: v, at_cap: false })
    }
}

/// `rho` with the default cap `nbhd_width / 2`.
pub fn rho(domain: &DomainSpec, z1: &[f64], z2: &[f64]) -> Result<RhoValue> {
    rho_capped(domain, z1, z2, domain.flow_time())
}

/// Uncapped `rho` for scale-free domains; the workhorse of grid construction.
pub fn rho_value(domain: &DomainSpec, z1: &[f64], z2: &[f64]) -> f64 {
    if z1 == z2 {
        return 0.0;
    }
    if frame_is_scale_free(domain) {
        polydisc_scale(domain, z1, z2).max(polydisc_scale(domain, z2, z1))
    } else {
        rho_capped(domain, z1, z2, 1.0).map(|r| r.value).unwrap_or(f64::INFINITY)
    }
}

/// Euclidean radius of `P_eps(zeta)`: `rho(zeta, w) < eps` implies `|w - zeta| <= ` this.
pub fn euclidean_reach(domain: &DomainSpec, zeta: &[f64], eps: f64) -> f64 {
    let res = SliceResolution::default();
    let basis = scale_free_basis(domain, zeta);
    basis
        .iter()
        .map(|u| {
            tau_unchecked(domain, zeta, u, eps, res, 1e-9)
                .map(|t| t * (1.0 + 1e-6))
                .unwrap_or(BRACKET_BOUND)
        })
        .map(|t| t * t)
        .sum::<f64>()
        .sqrt()
}

/// Empirical quasi-triangle and doubling constants.
#[derive(Clone, Debug, Serialize)]
pub struct QuasimetricParams {
    pub kappa: f64,
    pub doubling_k: f64,
    /// Max doubling ratio per scale, paired with the scale.
    pub doubling_by_scale: Vec<(f64, f64)>,
    pub skipped_triples: usize,
    pub skipped_balls: usize,
}

/// Scales used for the doubling check.
pub fn doubling_scales() -> Vec<f64> {
    (3..=8).map(|k| 2f64.powi(-k)).collect()
}

/// `kappa` from random triples and `K` from ball masses at the scales of [`doubling_scales`].
pub fn estimate_structure_constants(
    domain: &DomainSpec,
    points: &[Point],
    weights: &[f64],
    triples: usize,
    seed: u64,
) -> Result<QuasimetricParams> {
    if points.len() < 200 {
        return Err(Error::InvalidInput(format!(
            "structure constants need >= 200 boundary points, got {}",
            points.len()
        )));
    }
    let np = points.len();
    let ratios: Vec<Option<f64>> = (0..triples)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, 1000 + t as u64);
            let (a, b, c) = (rng.random_range(0..np), rng.random_range(0..np), rng.random_range(0..np));
            let r12 = rho_value(domain, &points[a], &points[b]);
            let den = rho_value(domain, &points[a], &points[c]) + rho_value(domain, &points[b], &points[c]);
            if den < 1e-12 {
                None
            } else {
                Some(r12 / den)
            }
        })
        .collect();
    let skipped_triples = ratios.iter().filter(|r| r.is_none()).count();
    let kappa = ratios.iter().flatten().copied().fold(1.0, f64::max);

    let tree = KdTree::new(points);
    let centers = 100.min(np);
    let mut by_scale = Vec::new();
    let mut skipped_balls = 0;
    for (si, &eps) in doubling_scales().iter().enumerate() {
        let per: Vec<Option<f64>> = (0..centers)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(seed, 50_000 + (si * centers + c) as u64);
                let z = &points[rng.random_range(0..np)];
                let mass = |e: f64| -> (f64, usize) {
                    let cand = tree.within(z, euclidean_reach(domain, z, e));
                    let mut m = 0.0;
                    let mut count = 0;
                    for i in cand {
                        if rho_value(domain, z, &points[i]) < e {
                            m += weights[i];
                            count += 1;
                        }
                    }
                    (m, count)
                };
                let (small, cs) = mass(eps);
                if cs < 5 {
                    return None;
                }
                Some(mass(2.0 * eps).0 / small)
            })
            .collect();
        skipped_balls += per.iter().filter(|r| r.is_none()).count();
        let k = per.iter().flatten().copied().fold(1.0, f64::max);
        by_scale.push((eps, k));
    }
    let doubling_k = by_scale.iter().map(|s| s.1).fold(1.0, f64::max);
    Ok(QuasimetricParams {
        kappa,
        doubling_k,
        doubling_by_scale: by_scale,
        skipped_triples,
        skipped_balls,
    })
}

/// Coordinates of a point `z = xi + lambda u` for a single complex direction.
pub fn along(xi: &[f64], u: &[f64], lambda: Complex64) -> Point {
    add_scaled(xi, lambda, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::linear_fit;

    fn e(j: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[j] = 1.0;
        v
    }

    #[test]
    fn ball_tau_closed_forms() {
        let b = DomainSpec::ball(2).unwrap();
        let xi = e(0);
        for eps in [0.001, 0.01, 0.05] {
            let t1 = tau(&b, &xi, &e(0), eps).unwrap();
            assert!((t1 - ((1.0 + 2.0 * eps).sqrt() - 1.0)).abs() < 1e-8 * t1);
            let t2 = tau(&b, &xi, &e(2), eps).unwrap();
            assert!((t2 - (2.0 * eps).sqrt()).abs() < 1e-8 * t2);
        }
        assert!(matches!(tau(&b, &xi, &e(0), 0.2), Err(Error::ScaleRange { .. })));
    }

    #[test]
    fn ellipsoid_tangential_slope() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap().with_nbhd_width(0.3).unwrap();
        let xi = d.reference_point();
        let (xs, ys): (Vec<f64>, Vec<f64>) = (4..=10)
            .map(|k| {
                let eps = 2f64.powi(-k);
                (eps.ln(), tau(&d, &xi, &e(2), eps).unwrap().ln())
            })
            .unzip();
        let (slope, _) = linear_fit(&xs, &ys);
        assert!((slope - 0.25).abs() < 0.02, "{slope}");
    }

    #[test]
    fn doubling_resolution_changes_little() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let mut rng = stream_rng(1, 0);
        for _ in 0..5 {
            let xi = d.sample_boundary_point(&mut rng).unwrap();
            let u = random_direction(&mut rng, 4);
            let a = tau(&d, &xi, &u, 0.01).unwrap();
            let b = tau_with(&d, &xi, &u, 0.01, SliceResolution { angles: 128, radial: 65 }, 1e-11).unwrap();
            assert!((a - b).abs() < 0.005 * a);
        }
    }

    #[test]
    fn frame_properties() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let f = extremal_frame(&d, &d.reference_point(), 0.01, 3).unwrap();
        assert!((f.basis[0][0] - 1.0).abs() < 1e-12);
        assert!((cdot(&f.basis[1], &e(2)).norm() - 1.0).abs() < 1e-12);
        assert!(f.radii[0] <= 1.5 * f.radii[1]);
        let lambda = vec![Complex64::new(0.3, -0.1), Complex64::new(0.05, 0.2)];
        let z = f.reconstruct(&lambda);
        let back = f.coordinates(&z);
        for (a, b) in back.iter().zip(&lambda) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn polydisc_membership() {
        let b = DomainSpec::ball(2).unwrap();
        let f = extremal_frame(&b, &e(0), 0.01, 0).unwrap();
        assert!(polydisc_contains(&f, &e(0)));
        assert!(polydisc_contains(&f, &along(&e(0), &f.basis[0], Complex64::new(f.radii[0], 0.0))));
        let far = along(&e(0), &e(2), Complex64::new(2.0 * 0.02f64.sqrt(), 0.0));
        assert!(!polydisc_contains(&f, &far));
    }

    #[test]
    fn rho_ball_examples() {
        let b = DomainSpec::ball(2).unwrap();
        let z1 = e(0);
        assert_eq!(rho(&b, &z1, &z1).unwrap().value, 0.0);
        let anti = vec![-1.0, 0.0, 0.0, 0.0];
        let r = rho_capped(&b, &z1, &anti, 10.0).unwrap();
        assert!(!r.at_cap && (1.0..=4.0).contains(&r.value), "{r:?}");
        assert!(rho(&b, &z1, &anti).unwrap().at_cap);
        let th: f64 = 0.1;
        let z2 = vec![th.cos(), 0.0, th.sin(), 0.0];
        let v = rho(&b, &z1, &z2).unwrap().value;
        assert!(v > 0.01 / 4.0 && v < 0.04, "{v}");
    }

    #[test]
    fn ladder_route_agrees_with_direct() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let mut rng = stream_rng(2, 0);
        for _ in 0..4 {
            let a = d.sample_boundary_point(&mut rng).unwrap();
            let dir = random_direction(&mut rng, 4);
            let w: Vec<f64> = a.iter().zip(&dir).map(|(x, y)| x + 0.05 * y).collect();
            let w = crate::flow::nearest_project(&d, &w).unwrap();
            let direct = polydisc_scale(&d, &a, &w);
            let ladder = polydisc_scale_ladder(&d, &a, &w, 1e-6, 0.05, 0).unwrap().unwrap();
            assert!(ladder >= direct * (1.0 - 1e-6) && ladder <= direct * LADDER_RATIO * (1.0 + 1e-6));
        }
    }

    #[test]
    fn reach_bounds_polydisc() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let mut rng = stream_rng(8, 0);
        let pts: Vec<Point> = (0..400).map(|_| d.sample_boundary_point(&mut rng).unwrap()).collect();
        let z = &pts[0];
        let reach = euclidean_reach(&d, z, 0.01);
        for p in &pts {
            if rho_value(&d, z, p) < 0.01 {
                assert!(crate::numeric::dist(z, p) <= reach);
            }
        }
    }
}
