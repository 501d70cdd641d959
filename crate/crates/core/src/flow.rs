//! Normal gradient flow `dphi/dt = -grad r / |grad r|^2` and the two boundary
//! projections (along flow lines and nearest point).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::domain::{DomainSpec, Point};
use crate::error::{Error, Result};
use crate::geometry::trace_mean_curvature;
use crate::numeric::norm;

pub const MAX_STEPS: usize = 1 << 14;

/// Classical RK4 with step halving until `|r(phi) - (r(z) - t)| <= tolerance`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlowIntegrator {
    pub step_size: f64,
    pub max_time: f64,
    pub tolerance: f64,
    /// Trajectories must keep `|r| < band`.
    pub band: f64,
}

impl FlowIntegrator {
    pub fn for_domain(domain: &DomainSpec) -> Self {
        FlowIntegrator {
            step_size: 0.01,
            max_time: domain.flow_time(),
            tolerance: 1e-11,
            band: domain.nbhd_width + domain.flow_time(),
        }
    }
}

/// End point of a flow together with the log of the area-element ratio `sqrt(g_t)/sqrt(g_0)`.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub point: Point,
    pub log_area: f64,
    pub steps: usize,
}

fn field(domain: &DomainSpec, x: &[f64], with_area: bool, out: &mut [f64]) -> f64 {
    let d = x.len();
    domain.gradient_into(x, &mut out[..d]);
    let g2: f64 = out[..d].iter().map(|g| g * g).sum();
    out[..d].iter_mut().for_each(|g| *g = -*g / g2);
    if with_area {
        // d log sqrt(g_t)/dt = -H / |grad r| with H the trace mean curvature
        -trace_mean_curvature(domain, x).unwrap_or(f64::NAN) / g2.sqrt()
    } else {
        0.0
    }
}

fn rk4(domain: &DomainSpec, z: &[f64], t: f64, steps: usize, with_area: bool, band: f64) -> Result<FlowState> {
    let d = z.len();
    let h = t / steps as f64;
    let mut x = z.to_vec();
    let mut la = 0.0;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for s in 0..steps {
        let a1 = field(domain, &x, with_area, &mut k1);
        tmp.iter_mut().zip(&x).zip(&k1).for_each(|((o, xi), k)| *o = xi + 0.5 * h * k);
        let a2 = field(domain, &tmp, with_area, &mut k2);
        tmp.iter_mut().zip(&x).zip(&k2).for_each(|((o, xi), k)| *o = xi + 0.5 * h * k);
        let a3 = field(domain, &tmp, with_area, &mut k3);
        tmp.iter_mut().zip(&x).zip(&k3).for_each(|((o, xi), k)| *o = xi + h * k);
        let a4 = field(domain, &tmp, with_area, &mut k4);
        for i in 0..d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        la += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        let r = domain.value(&x);
        if !r.is_finite() || r.abs() >= band {
            return Err(Error::BandExit {
                time: h * (s + 1) as f64,
                width: band,
                last: x,
            });
        }
    }
    Ok(FlowState {
        point: x,
        log_area: la,
        steps,
    })
}

fn flow_impl(domain: &DomainSpec, z: &[f64], t: f64, integ: &FlowIntegrator, with_area: bool) -> Result<FlowState> {
    if z.len() != domain.real_dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.real_dim(),
            got: z.len(),
        });
    }
    if t == 0.0 {
        return Ok(FlowState {
            point: z.to_vec(),
            log_area: 0.0,
            steps: 0,
        });
    }
    let target = domain.value(z) - t;
    if target.abs() >= integ.band {
        return Err(Error::BandExit {
            time: 0.0,
            width: integ.band,
            last: z.to_vec(),
        });
    }
    let mut steps = ((t.abs() / integ.step_size).ceil() as usize).max(1);
    loop {
        let st = rk4(domain, z, t, steps, with_area, integ.band)?;
        let res = (domain.value(&st.point) - target).abs();
        if res <= integ.tolerance || steps >= MAX_STEPS {
            if res > integ.tolerance {
                return Err(Error::Diagnostic(format!(
                    "flow residual {res:e} above tolerance after {steps} steps"
                )));
            }
            return Ok(st);
        }
        steps = (steps * 2).min(MAX_STEPS);
    }
}

/// `phi(z, t)`; negative `t` runs the flow backwards.
pub fn flow(domain: &DomainSpec, z: &[f64], t: f64, integ: &FlowIntegrator) -> Result<Point> {
    flow_impl(domain, z, t, integ, false).map(|s| s.point)
}

/// `phi(z, t)` plus the accumulated log area-element ratio along the trajectory.
pub fn flow_with_area(domain: &DomainSpec, z: &[f64], t: f64, integ: &FlowIntegrator) -> Result<FlowState> {
    flow_impl(domain, z, t, integ, true)
}

/// States of the flow from `z` at each of the nondecreasing `times`.
pub fn flow_path(domain: &DomainSpec, z: &[f64], times: &[f64], integ: &FlowIntegrator) -> Result<Vec<FlowState>> {
    let mut out = Vec::with_capacity(times.len());
    let mut cur = z.to_vec();
    let (mut t_prev, mut la) = (0.0, 0.0);
    for &t in times {
        let st = flow_with_area(domain, &cur, t - t_prev, integ)?;
        la += st.log_area;
        cur = st.point;
        t_prev = t;
        out.push(FlowState {
            point: cur.clone(),
            log_area: la,
            steps: st.steps,
        });
    }
    Ok(out)
}

/// `phi(z, t)` with exactly `steps` RK4 steps (no residual control), for
/// finite-difference work that needs smooth dependence on `z` and `t`.
pub fn flow_fixed(domain: &DomainSpec, z: &[f64], t: f64, steps: usize, integ: &FlowIntegrator) -> Result<Point> {
    rk4(domain, z, t, steps.max(1), false, integ.band).map(|s| s.point)
}

/// `Pi^flow(z)`: follow the flow line through `z` back to `r = 0`.
pub fn flow_project(domain: &DomainSpec, z: &[f64]) -> Result<Point> {
    let integ = FlowIntegrator::for_domain(domain);
    let r = domain.value(z);
    if r.abs() >= integ.band {
        return Err(Error::BandExit {
            time: 0.0,
            width: integ.band,
            last: z.to_vec(),
        });
    }
    flow(domain, z, r, &integ)
}

/// `Pi^proj(z)`: nearest boundary point, by Newton on the Lagrange system
/// `w - z + mu grad r(w) = 0, r(w) = 0`, started at `Pi^flow(z)`.
pub fn nearest_project(domain: &DomainSpec, z: &[f64]) -> Result<Point> {
    let d = domain.real_dim();
    let mut w = flow_project(domain, z)?;
    let g = domain.gradient(&w);
    let mut mu = -crate::numeric::dot(&crate::numeric::sub(&w, z), &g) / crate::numeric::dot(&g, &g);
    let scale = norm(z).max(1.0);
    let mut last_res = f64::INFINITY;
    for _ in 0..200 {
        let g = domain.gradient(&w);
        let r = domain.value(&w);
        let mut f = DVector::zeros(d + 1);
        for i in 0..d {
            f[i] = w[i] - z[i] + mu * g[i];
        }
        f[d] = r;
        let res = f.norm();
        last_res = res;
        if res <= 1e-13 * scale {
            return Ok(w);
        }
        let h = domain.hessian(&w);
        let mut jac = DMatrix::zeros(d + 1, d + 1);
        for i in 0..d {
            for j in 0..d {
                jac[(i, j)] = mu * h[(i, j)] + if i == j { 1.0 } else { 0.0 };
            }
            jac[(i, d)] = g[i];
            jac[(d, i)] = g[i];
        }
        let step = match jac.lu().solve(&(-f)) {
            Some(s) => s,
            None => break,
        };
        for i in 0..d {
            w[i] += step[i];
        }
        mu += step[d];
    }
    // Accept when the constraint and stationarity targets hold even if the residual stalled.
    if domain.value(&w).abs() <= 1e-9 && stationarity(domain, z, &w) <= 1e-8 {
        return Ok(w);
    }
    Err(Error::ProjectionFailed {
        iterations: 200,
        residual: last_res,
    })
}

/// Norm of the component of `z - w` orthogonal to `grad r(w)`.
pub fn stationarity(domain: &DomainSpec, z: &[f64], w: &[f64]) -> f64 {
    let g = domain.gradient(w);
    let gn = norm(&g);
    let v = crate::numeric::sub(z, w);
    let c = crate::numeric::dot(&v, &g) / (gn * gn);
    v.iter().zip(&g).map(|(vi, gi)| (vi - c * gi).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;

    #[test]
    fn ball_radial_closed_form() {
        let d = DomainSpec::ball(2).unwrap();
        let integ = FlowIntegrator::for_domain(&d);
        let z = [0.6, 0.0, 0.0, 0.8];
        let p = flow(&d, &z, 0.1, &integ).unwrap();
        assert!((norm(&p) - 0.8f64.sqrt()).abs() < 1e-8);
        assert_eq!(flow(&d, &z, 0.0, &integ).unwrap(), z.to_vec());
    }

    #[test]
    fn residual_and_round_trip() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let integ = FlowIntegrator::for_domain(&d);
        let mut rng = stream_rng(3, 0);
        for _ in 0..50 {
            let z = d.sample_boundary_point(&mut rng).unwrap();
            let p = flow(&d, &z, 0.04, &integ).unwrap();
            assert!((d.value(&p) + 0.04).abs() < 1e-8);
            let back = flow_project(&d, &p).unwrap();
            assert!(crate::numeric::dist(&back, &z) < 1e-6);
        }
    }

    #[test]
    fn area_ratio_ball() {
        let d = DomainSpec::ball(2).unwrap();
        let integ = FlowIntegrator::for_domain(&d);
        let st = flow_with_area(&d, &[1.0, 0.0, 0.0, 0.0], 0.05, &integ).unwrap();
        // sqrt(g_t)/sqrt(g_0) = (1 - 2t)^{3/2} on S^3
        assert!((st.log_area - 1.5 * (0.9f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn band_exit_reported() {
        let d = DomainSpec::ball(2).unwrap();
        let integ = FlowIntegrator::for_domain(&d);
        assert!(matches!(flow(&d, &[1.0, 0.0, 0.0, 0.0], 0.3, &integ), Err(Error::BandExit { .. })));
    }

    #[test]
    fn projections() {
        let b = DomainSpec::ball(2).unwrap();
        let p = nearest_project(&b, &[0.9, 0.0, 0.0, 0.0]).unwrap();
        assert!(crate::numeric::dist(&p, &[1.0, 0.0, 0.0, 0.0]) < 1e-12);
        let h = DomainSpec::halfspace(2).unwrap();
        let p = nearest_project(&h, &[-0.05, 0.3, -0.2, 0.1]).unwrap();
        assert!(crate::numeric::dist(&p, &[0.0, 0.3, -0.2, 0.1]) < 1e-12);
        let e = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let mut rng = stream_rng(5, 0);
        for _ in 0..50 {
            let z = e.sample_band_point(&mut rng, 0.08).unwrap();
            let w = nearest_project(&e, &z).unwrap();
            assert!(e.value(&w).abs() <= 1e-9);
            let v = crate::numeric::sub(&z, &w);
            let g = e.gradient(&w);
            let cos = crate::numeric::dot(&v, &g).abs() / (norm(&v) * norm(&g));
            if norm(&v) > 1e-9 {
                assert!((1.0 - cos).max(0.0).sqrt() * 2f64.sqrt() < 1e-6);
            }
        }
    }
}
