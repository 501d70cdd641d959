//! Level-set geometry: mean curvature, the area-element evolution law along
//! the flow, and tent/Whitney volumes.

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::numeric::norm;

/// `H = (grad r Hess grad r^T - |grad r|^2 tr Hess) / (2 |grad r|^3)`.
///
/// Negative on convex level sets (the ball gives `(1 - 2n)/2` on the sphere).
pub fn mean_curvature(domain: &DomainSpec, z: &[f64]) -> Result<f64> {
    let (g2, ghg, tr) = curvature_parts(domain, z, 0.5)?;
    Ok((ghg - g2 * tr) / (2.0 * g2 * g2.sqrt()))
}

/// Trace of the second fundamental form, `div(grad r/|grad r|) = -2 H`.
///
/// This is the curvature for which `d_t sqrt(g_t) = -H sqrt(g_t)/|grad r|` holds.
pub fn trace_mean_curvature(domain: &DomainSpec, z: &[f64]) -> Result<f64> {
    let (g2, ghg, tr) = curvature_parts(domain, z, 1e-8)?;
    Ok((g2 * tr - ghg) / (g2 * g2.sqrt()))
}

fn curvature_parts(domain: &DomainSpec, z: &[f64], min_grad: f64) -> Result<(f64, f64, f64)> {
    let g = domain.gradient(z);
    let gn = norm(&g);
    if gn <= min_grad {
        return Err(Error::Singular(gn));
    }
    let h = domain.hessian(z);
    let d = g.len();
    let mut ghg = 0.0;
    for i in 0..d {
        for j in 0..d {
            ghg += g[i] * h[(i, j)] * g[j];
        }
    }
    Ok((gn * gn, ghg, h.trace()))
}

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{BoundarySample, CubeRef, DyadicGrid, GridFamily};
use crate::domain::{DomainKind, Point};
use crate::flow::{flow_fixed, flow_path, flow_project, FlowIntegrator};
use crate::numeric::{gauss_legendre, random_direction, stream_rng};

/// Constancy of `H` on the ball sphere.
#[derive(Clone, Debug, Serialize)]
pub struct CurvatureReport {
    pub samples: usize,
    pub expected: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub max_abs_error: Option<f64>,
    /// Largest `|H_tr + 2 H|`, the agreement of the two normalizations.
    pub trace_consistency: f64,
}

pub fn curvature_check(domain: &DomainSpec, samples: usize, seed: u64) -> Result<CurvatureReport> {
    let mut rng = stream_rng(seed, 61);
    let expected = (domain.kind == DomainKind::Ball).then(|| (1.0 - 2.0 * domain.n as f64) / 2.0);
    let (mut lo, mut hi, mut err, mut cons) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let z = domain.sample_boundary_point(&mut rng)?;
        let h = mean_curvature(domain, &z)?;
        lo = lo.min(h);
        hi = hi.max(h);
        if let Some(e) = expected {
            err = err.max((h - e).abs());
        }
        cons = cons.max((trace_mean_curvature(domain, &z)? + 2.0 * h).abs());
    }
    Ok(CurvatureReport {
        samples,
        expected,
        min: lo,
        max: hi,
        max_abs_error: expected.map(|_| err),
        trace_consistency: cons,
    })
}

/// Orthonormal real basis of the tangent space at a boundary point.
pub fn tangent_basis(domain: &DomainSpec, p: &[f64]) -> Vec<Vec<f64>> {
    let d = p.len();
    let mut nu = domain.gradient(p);
    crate::numeric::normalize(&mut nu);
    let mut basis: Vec<Vec<f64>> = vec![nu];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = crate::numeric::dot(&e, b);
                e.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        if crate::numeric::normalize(&mut e) > 1e-6 {
            basis.push(e);
        }
        if basis.len() == d {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// Tangent-plane graph chart `F_0(u) = p + T u + eta(u) nu` onto `bOmega`.
pub struct Chart {
    pub base: Point,
    pub normal: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
}

impl Chart {
    pub fn new(domain: &DomainSpec, p: &[f64]) -> Self {
        let mut nu = domain.gradient(p);
        crate::numeric::normalize(&mut nu);
        Chart {
            base: p.to_vec(),
            normal: nu,
            tangents: tangent_basis(domain, p),
        }
    }

    pub fn point(&self, domain: &DomainSpec, u: &[f64]) -> Point {
        let mut q = self.base.clone();
        for (ui, t) in u.iter().zip(&self.tangents) {
            q.iter_mut().zip(t).for_each(|(x, y)| *x += ui * y);
        }
        let mut eta = 0.0;
        for _ in 0..50 {
            let z: Point = q.iter().zip(&self.normal).map(|(x, n)| x + eta * n).collect();
            let r = domain.value(&z);
            let slope = crate::numeric::dot(&domain.gradient(&z), &self.normal);
            let step = r / slope;
            eta -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        q.iter().zip(&self.normal).map(|(x, n)| x + eta * n).collect()
    }
}

/// Metric, second fundamental form and curvature of the flowed chart at `(u, t)`.
#[derive(Clone, Debug, Serialize)]
pub struct LevelSetFrame {
    pub chart_point: Vec<f64>,
    pub t: f64,
    pub metric: Vec<f64>,
    pub area_element: f64,
    pub second_fundamental: Vec<f64>,
    pub mean_curvature: f64,
    pub normal: Vec<f64>,
    pub condition: f64,
}

const FIXED_STEPS: usize = 400;

fn flowed_chart(domain: &DomainSpec, chart: &Chart, u: &[f64], t: f64, integ: &FlowIntegrator) -> Result<Point> {
    flow_fixed(domain, &chart.point(domain, u), t, FIXED_STEPS, integ)
}

/// Frame of `F_t` at chart point `u` with spatial step `h`.
pub fn level_set_frame(domain: &DomainSpec, chart: &Chart, u: &[f64], t: f64, h: f64) -> Result<LevelSetFrame> {
    let integ = FlowIntegrator::for_domain(domain);
    let m = u.len();
    let x = flowed_chart(domain, chart, u, t, &integ)?;
    let mut cols = Vec::with_capacity(m);
    for i in 0..m {
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        up[i] += h;
        um[i] -= h;
        let a = flowed_chart(domain, chart, &up, t, &integ)?;
        let b = flowed_chart(domain, chart, &um, t, &integ)?;
        cols.push(a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect::<Vec<f64>>());
    }
    let g = DMatrix::from_fn(m, m, |i, j| crate::numeric::dot(&cols[i], &cols[j]));
    let eig = g.clone().symmetric_eigen().eigenvalues;
    let (emin, emax) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    let grad = domain.gradient(&x);
    let gn = norm(&grad);
    let hess = domain.hessian(&x);
    // A_ij = F_i^T Hess(r) F_j / |grad r|
    let a = DMatrix::from_fn(m, m, |i, j| {
        let mut s = 0.0;
        for p in 0..x.len() {
            for q in 0..x.len() {
                s += cols[i][p] * hess[(p, q)] * cols[j][q];
            }
        }
        s / gn
    });
    let ginv = g.clone().try_inverse().ok_or(Error::Singular(emin))?;
    let hm = (&ginv * &a).trace();
    Ok(LevelSetFrame {
        chart_point: u.to_vec(),
        t,
        metric: g.iter().copied().collect(),
        area_element: g.determinant().sqrt(),
        second_fundamental: a.iter().copied().collect(),
        mean_curvature: hm,
        normal: grad.iter().map(|v| v / gn).collect(),
        condition: emax / emin,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolutionReport {
    pub patches: usize,
    pub rejected_patches: usize,
    pub evaluations: usize,
    /// `max |d_t sqrt(g_t) + H_tr sqrt(g_t)/|grad r|| / sqrt(g_t)`.
    pub max_residual: f64,
    /// `max |log(sqrt(g_t)/sqrt(g_0))| / t`.
    pub gronwall_c: f64,
    /// `max |H_tr| / min |grad r|` over sampled band points.
    pub curvature_bound: f64,
    /// Largest deviation of the ball ratio from `(1 - 2t)^{(2n-1)/2}`.
    pub ball_ratio_error: Option<f64>,
}

/// Area-element evolution along the flow on tangent-plane chart patches.
#[allow(clippy::too_many_arguments)]
pub fn area_evolution_check(
    domain: &DomainSpec,
    bases: &[Point],
    t_ladder: &[f64],
    points_per_patch: usize,
    patch_radius: f64,
    h_space: f64,
    h_time: f64,
    seed: u64,
) -> Result<EvolutionReport> {
    let t0 = domain.flow_time();
    if t_ladder.iter().any(|&t| !(t > h_time && t + h_time < t0 + domain.nbhd_width)) {
        return Err(Error::InvalidInput("t-ladder must lie in (h_time, t0)".into()));
    }
    let integ = FlowIntegrator::for_domain(domain);
    let m = domain.real_dim() - 1;
    let results: Vec<Result<Option<(f64, f64, f64, usize)>>> = bases
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let chart = Chart::new(domain, p);
            let mut rng = stream_rng(seed, 9_000 + pi as u64);
            let (mut res, mut c, mut ratio_err, mut evals) = (0.0f64, 0.0f64, 0.0f64, 0usize);
            for _ in 0..points_per_patch {
                let dir = random_direction(&mut rng, m);
                let rad = patch_radius * rng.random::<f64>();
                let u: Vec<f64> = dir.iter().map(|d| d * rad).collect();
                let f0 = level_set_frame(domain, &chart, &u, 0.0, h_space)?;
                if f0.condition > 1e6 {
                    return Ok(None);
                }
                for &t in t_ladder {
                    let fm = level_set_frame(domain, &chart, &u, t - h_time, h_space)?;
                    let fc = level_set_frame(domain, &chart, &u, t, h_space)?;
                    let fp = level_set_frame(domain, &chart, &u, t + h_time, h_space)?;
                    if fc.condition > 1e6 {
                        return Ok(None);
                    }
                    let dt = (fp.area_element - fm.area_element) / (2.0 * h_time);
                    let x = flowed_chart(domain, &chart, &u, t, &integ)?;
                    let hx = trace_mean_curvature(domain, &x)?;
                    let gx = norm(&domain.gradient(&x));
                    res = res.max((dt + hx * fc.area_element / gx).abs() / fc.area_element);
                    let lr = (fc.area_element / f0.area_element).ln();
                    c = c.max(lr.abs() / t);
                    if domain.kind == DomainKind::Ball {
                        let exact = (1.0 - 2.0 * t).powf((2 * domain.n - 1) as f64 / 2.0);
                        ratio_err = ratio_err.max((fc.area_element / f0.area_element - exact).abs());
                    }
                    evals += 1;
                }
            }
            Ok(Some((res, c, ratio_err, evals)))
        })
        .collect();
    let mut rep = EvolutionReport {
        patches: bases.len(),
        rejected_patches: 0,
        evaluations: 0,
        max_residual: 0.0,
        gronwall_c: 0.0,
        curvature_bound: curvature_bound(domain, 2000, seed)?,
        ball_ratio_error: (domain.kind == DomainKind::Ball).then_some(0.0),
    };
    for r in results {
        match r? {
            None => rep.rejected_patches += 1,
            Some((res, c, re, ev)) => {
                rep.max_residual = rep.max_residual.max(res);
                rep.gronwall_c = rep.gronwall_c.max(c);
                rep.evaluations += ev;
                if let Some(e) = rep.ball_ratio_error.as_mut() {
                    *e = e.max(re);
                }
            }
        }
    }
    Ok(rep)
}

/// `max |H_tr| / min |grad r|` over sampled points of the flow band `-t0 < r < 0`.
pub fn curvature_bound(domain: &DomainSpec, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 62);
    let (mut hmax, mut gmin) = (0.0f64, f64::INFINITY);
    for _ in 0..samples {
        let z = domain.sample_band_point(&mut rng, domain.flow_time())?;
        hmax = hmax.max(trace_mean_curvature(domain, &z)?.abs());
        gmin = gmin.min(norm(&domain.gradient(&z)));
    }
    Ok(hmax / gmin)
}

/// Volume with a standard error.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct VolumeEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub method: VolumeMethod,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMethod {
    MonteCarlo,
    CoareaQuadrature,
}

impl VolumeEstimate {
    pub fn zero(method: VolumeMethod) -> Self {
        VolumeEstimate {
            value: 0.0,
            stderr: 0.0,
            samples: 0,
            method,
        }
    }
}

/// Flow data for each sample point: depth nodes on layers between `breaks`,
/// with weights `gauss * J(s) / |grad r|`, and the positions `phi(x_i, s)`.
#[derive(Clone, Debug)]
pub struct FlowTable {
    /// Decreasing depths; the last layer is `[0, breaks.last()]`.
    pub breaks: Vec<f64>,
    pub nodes_per_layer: usize,
    /// `depth[j]` for node `j` (shared by all points).
    pub depth: Vec<f64>,
    /// Layer of node `j` (layer `l` spans `[breaks[l+1], breaks[l]]`).
    pub layer: Vec<usize>,
    /// `density[i][j] = gauss_j * J_i(s_j) / |grad r(phi(x_i, s_j))|`.
    pub density: Vec<Vec<f64>>,
    pub position: Vec<Vec<Point>>,
    /// `cumulative[i][l] = int_0^{breaks[l]} J_i / |grad r| ds`.
    pub cumulative: Vec<Vec<f64>>,
}

impl FlowTable {
    /// Layers cut at `breaks` (any order; duplicates removed) plus `halvings` dyadic
    /// layers below the smallest break.
    pub fn build(domain: &DomainSpec, sample: &BoundarySample, breaks: &[f64], halvings: usize, nodes_per_layer: usize) -> Result<Self> {
        let mut b: Vec<f64> = breaks.to_vec();
        let top = b.iter().copied().fold(0.0, f64::max);
        for j in 1..=halvings {
            b.push(top * 0.5f64.powi(j as i32));
        }
        b.sort_by(|x, y| y.total_cmp(x));
        b.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * y.abs());
        let (gx, gw) = gauss_legendre(nodes_per_layer);
        let mut depth = Vec::new();
        let mut layer = Vec::new();
        let mut gauss = Vec::new();
        for l in 0..b.len() {
            let hi = b[l];
            let lo = if l + 1 < b.len() { b[l + 1] } else { 0.0 };
            for (x, w) in gx.iter().zip(&gw) {
                depth.push(lo + (hi - lo) * x);
                layer.push(l);
                gauss.push((hi - lo) * w);
            }
        }
        let mut order: Vec<usize> = (0..depth.len()).collect();
        order.sort_by(|&a, &c| depth[a].total_cmp(&depth[c]));
        let integ = FlowIntegrator::for_domain(domain);
        let sorted_depths: Vec<f64> = order.iter().map(|&j| depth[j]).collect();
        let per_point: Vec<(Vec<f64>, Vec<Point>)> = sample
            .points
            .par_iter()
            .map(|x| {
                let path = flow_path(domain, x, &sorted_depths, &integ)?;
                let mut dens = vec![0.0; depth.len()];
                let mut pos = vec![Vec::new(); depth.len()];
                for (st, &j) in path.into_iter().zip(&order) {
                    let g = norm(&domain.gradient(&st.point));
                    dens[j] = gauss[j] * st.log_area.exp() / g;
                    pos[j] = st.point;
                }
                Ok((dens, pos))
            })
            .collect::<Result<Vec<_>>>()?;
        let (density, position): (Vec<_>, Vec<_>) = per_point.into_iter().unzip();
        let nl = b.len();
        let cumulative = density
            .iter()
            .map(|dens| {
                let mut per_layer = vec![0.0; nl];
                for (j, d) in dens.iter().enumerate() {
                    per_layer[layer[j]] += d;
                }
                // cumulative from the shallowest layer upward
                let mut c = vec![0.0; nl];
                let mut acc = 0.0;
                for l in (0..nl).rev() {
                    acc += per_layer[l];
                    c[l] = acc;
                }
                c
            })
            .collect();
        Ok(FlowTable {
            breaks: b,
            nodes_per_layer,
            depth,
            layer,
            density,
            position,
            cumulative,
        })
    }

    pub fn break_index(&self, s: f64) -> Option<usize> {
        self.breaks.iter().position(|b| (b - s).abs() <= 1e-12 * s)
    }

    /// `int_0^s J_i / |grad r|` for a depth `s` that is one of the breaks.
    pub fn column(&self, i: usize, s: f64) -> f64 {
        let l = self.break_index(s).expect("depth is a layer break");
        self.cumulative[i][l]
    }
}

/// Coarea volume of the flow tent of height `t` over `members`:
/// `sum_i w_i int_0^t J_i / |grad r| ds`; the error reflects the weight estimates.
pub fn coarea_volume(table: &FlowTable, sample: &BoundarySample, members: &[usize], t: f64) -> VolumeEstimate {
    let (mut v, mut var) = (0.0, 0.0);
    for &i in members {
        let f = table.column(i, t);
        v += sample.weights[i] * f;
        var += sample.weight_unit * sample.weights[i] * f * f;
    }
    VolumeEstimate {
        value: v,
        stderr: var.sqrt(),
        samples: members.len(),
        method: VolumeMethod::CoareaQuadrature,
    }
}

/// Exact ball tent volume `sigma (1 - (1 - 2t)^n) / (2n)`.
pub fn ball_tent_volume(n: usize, sigma: f64, t: f64) -> f64 {
    sigma * (1.0 - (1.0 - 2.0 * t).powi(n as i32)) / (2.0 * n as f64)
}

/// Monte-Carlo volumes of a flow tent and of its upper Whitney slab from one pass.
#[derive(Clone, Debug, Serialize)]
pub struct TentMc {
    pub tent: VolumeEstimate,
    pub whitney: VolumeEstimate,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub acceptance: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct McConfig {
    pub target_hits: usize,
    pub max_samples: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            target_hits: 4000,
            max_samples: 2_000_000,
        }
    }
}

/// Rejection sampling in a box of the local frame at `c(Q)` around the members
/// and their flow images; membership via `Pi^flow` and the nearest sample point.
pub fn tent_volume_mc(
    domain: &DomainSpec,
    sample: &BoundarySample,
    family: &GridFamily,
    cube: CubeRef,
    height: f64,
    whitney_lower: f64,
    cfg: McConfig,
    seed: u64,
) -> Result<TentMc> {
    if height <= 0.0 {
        let z = VolumeEstimate::zero(VolumeMethod::MonteCarlo);
        return Ok(TentMc {
            tent: z,
            whitney: z,
            ratio: f64::NAN,
            ratio_stderr: f64::NAN,
            acceptance: 0.0,
        });
    }
    let dim = domain.real_dim();
    let integ = FlowIntegrator::for_domain(domain);
    let (center, frame, lo, hi, grid_level) = match cube {
        CubeRef::Root => {
            let e: Vec<Vec<f64>> = (0..dim)
                .map(|j| {
                    let mut v = vec![0.0; dim];
                    v[j] = 1.0;
                    v
                })
                .collect();
            (vec![0.0; dim], e, vec![-1.0 - 1e-9; dim], vec![1.0 + 1e-9; dim], None)
        }
        CubeRef::Cube { grid, level, index } => {
            let g: &DyadicGrid = &family.grids[grid];
            let q = g.cube(level, index);
            let c = sample.points[q.center].clone();
            let mut nu = domain.gradient(&c);
            crate::numeric::normalize(&mut nu);
            let mut frame = vec![nu];
            frame.extend(tangent_basis(domain, &c));
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            let fracs = [0.0, 0.25, 0.5, 0.75, 1.0];
            for &m in &q.members {
                for f in fracs {
                    let p = if f == 0.0 {
                        sample.points[m].clone()
                    } else {
                        crate::flow::flow(domain, &sample.points[m], f * height, &integ)?
                    };
                    let d = crate::numeric::sub(&p, &c);
                    for (a, e) in frame.iter().enumerate() {
                        let y = crate::numeric::dot(&d, e);
                        lo[a] = lo[a].min(y);
                        hi[a] = hi[a].max(y);
                    }
                }
            }
            let cell = sample.cell_radius_of(&q.members);
            // the normal extent of a cell grows only quadratically in its radius
            let margins = [2.0 * cell * cell + 0.05 * height, 1.5 * cell + 0.05 * height];
            for a in 0..dim {
                let m = margins[(a > 0) as usize];
                lo[a] -= m;
                hi[a] += m;
            }
            (c, frame, lo, hi, Some((grid, level, index)))
        }
    };
    let box_vol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let mut rng = stream_rng(seed, 0);
    let (mut n, mut hits_t, mut hits_w) = (0usize, 0usize, 0usize);
    let mut z = vec![0.0; dim];
    while n < cfg.max_samples && hits_t < cfg.target_hits {
        n += 1;
        z.copy_from_slice(&center);
        for (a, e) in frame.iter().enumerate() {
            let y = rng.random_range(lo[a]..hi[a]);
            z.iter_mut().zip(e).for_each(|(x, v)| *x += y * v);
        }
        let r = domain.value(&z);
        if !(r < 0.0 && -r < height) {
            continue;
        }
        let inside = match grid_level {
            None => true,
            Some((g, k, idx)) => {
                let w = flow_project(domain, &z)?;
                family.grids[g].cube_of(k, sample.nearest(&w)) == idx
            }
        };
        if inside {
            hits_t += 1;
            if -r >= whitney_lower {
                hits_w += 1;
            }
        }
    }
    let p = hits_t as f64 / n as f64;
    if hits_t < 100 {
        return Err(Error::Diagnostic(format!(
            "tent acceptance {p:.2e}: {hits_t} hits after {n} samples"
        )));
    }
    let pw = hits_w as f64 / n as f64;
    let est = |p: f64| VolumeEstimate {
        value: box_vol * p,
        stderr: box_vol * (p * (1.0 - p) / n as f64).sqrt(),
        samples: n,
        method: VolumeMethod::MonteCarlo,
    };
    let q = hits_w as f64 / hits_t as f64;
    Ok(TentMc {
        tent: est(p),
        whitney: est(pw),
        ratio: 1.0 / q,
        ratio_stderr: ((1.0 - q) / (q * hits_t as f64)).sqrt() / q,
        acceptance: p,
    })
}

/// Per-cube comparison of tent and upper Whitney volumes at one level.
#[derive(Clone, Debug, Serialize)]
pub struct WhitneyRow {
    pub grid: usize,
    pub level: usize,
    pub cube: usize,
    pub members: usize,
    pub sigma: f64,
    pub side: f64,
    pub tent_coarea: f64,
    pub tent_coarea_stderr: f64,
    pub whitney_coarea: f64,
    pub ratio_coarea: f64,
    /// `Vol(T) / (sigma(Q) l(Q))`.
    pub prop35_ratio: f64,
    pub tent_mc: Option<f64>,
    pub tent_mc_stderr: Option<f64>,
    pub ratio_mc: Option<f64>,
    pub ratio_mc_stderr: Option<f64>,
    pub ball_exact: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct WhitneyReport {
    pub level: usize,
    pub bound: f64,
    pub rows: Vec<WhitneyRow>,
    pub skipped: Vec<(usize, String)>,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub pass: bool,
}

/// `1 <= Vol(T)/Vol(W) <= 4/(1 - delta)` (3 sigma margins) for the cubes of one level.
/// Coarea volumes cover every cube; Monte-Carlo runs on `mc_cubes` of them (all when `None`).
#[allow(clippy::too_many_arguments)]
pub fn whitney_volume_comparability(
    domain: &DomainSpec,
    sample: &BoundarySample,
    family: &GridFamily,
    table: &FlowTable,
    grid_index: usize,
    k: usize,
    mc_cubes: Option<usize>,
    cfg: McConfig,
    seed: u64,
) -> Result<WhitneyReport> {
    let grid = &family.grids[grid_index];
    if k < grid.n0 || k > grid.finest() {
        return Err(Error::InvalidInput(format!("level {k} is not a tent level")));
    }
    let delta = grid.effective_delta;
    let bound = 4.0 / (1.0 - delta);
    let (side, lower) = (grid.side(k), grid.side(k + 1));
    let cubes = &grid.level(k).unwrap().cubes;
    let mc_set: std::collections::HashSet<usize> = match mc_cubes {
        None => (0..cubes.len()).collect(),
        Some(m) => {
            let mut idx: Vec<usize> = (0..cubes.len()).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut stream_rng(seed, 63));
            idx.into_iter().take(m).collect()
        }
    };
    let rows: Vec<std::result::Result<WhitneyRow, (usize, String)>> = cubes
        .par_iter()
        .map(|q| {
            let t = coarea_volume(table, sample, &q.members, side);
            let inner = coarea_volume(table, sample, &q.members, lower);
            let w = t.value - inner.value;
            let ratio = t.value / w;
            let exact = (domain.kind == DomainKind::Ball).then(|| ball_tent_volume(domain.n, q.mass, side));
            let mut row = WhitneyRow {
                grid: grid_index,
                level: k,
                cube: q.index,
                members: q.members.len(),
                sigma: q.mass,
                side,
                tent_coarea: t.value,
                tent_coarea_stderr: t.stderr,
                whitney_coarea: w,
                ratio_coarea: ratio,
                prop35_ratio: t.value / (q.mass * side),
                tent_mc: None,
                tent_mc_stderr: None,
                ratio_mc: None,
                ratio_mc_stderr: None,
                ball_exact: exact,
                pass: (1.0..=bound).contains(&ratio),
            };
            if mc_set.contains(&q.index) {
                let cube = CubeRef::Cube {
                    grid: grid_index,
                    level: k,
                    index: q.index,
                };
                let cube_seed = seed ^ ((grid_index as u64) << 48) ^ ((k as u64) << 32) ^ q.index as u64;
                match tent_volume_mc(domain, sample, family, cube, side, lower, cfg, cube_seed) {
                    Ok(mc) => {
                        row.tent_mc = Some(mc.tent.value);
                        row.tent_mc_stderr = Some(mc.tent.stderr);
                        row.ratio_mc = Some(mc.ratio);
                        row.ratio_mc_stderr = Some(mc.ratio_stderr);
                        let s3 = 3.0 * mc.ratio_stderr;
                        row.pass = row.pass && mc.ratio >= 1.0 - s3 && mc.ratio <= bound + s3;
                    }
                    Err(e) => return Err((q.index, e.to_string())),
                }
            }
            Ok(row)
        })
        .collect();
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for r in rows {
        match r {
            Ok(row) => out.push(row),
            Err(s) => skipped.push(s),
        }
    }
    let ratios = out.iter().flat_map(|r| [Some(r.ratio_coarea), r.ratio_mc]).flatten();
    let (min_ratio, max_ratio) = ratios.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    let pass = out.iter().all(|r| r.pass);
    Ok(WhitneyReport {
        level: k,
        bound,
        rows: out,
        skipped,
        max_ratio,
        min_ratio,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{build_adjacent_family, sample_boundary, with_voronoi_weights, GridParams};

    #[test]
    fn ball_curvature_is_constant() {
        let d = DomainSpec::ball(3).unwrap();
        let r = curvature_check(&d, 50, 1).unwrap();
        assert!(r.max_abs_error.unwrap() < 1e-10);
        assert!(r.trace_consistency < 1e-10);
    }

    #[test]
    fn ball_area_ratio() {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = sample_boundary(&d, 500, 3).unwrap();
        let r = area_evolution_check(&d, &s.points[..2], &[0.05, 0.1], 2, 0.05, 1e-4, 1e-3, 1).unwrap();
        assert!(r.ball_ratio_error.unwrap() < 1e-8);
        assert!(r.max_residual < 1e-4);
        assert!(r.gronwall_c <= 1.1 * r.curvature_bound);
    }

    #[test]
    fn coarea_matches_ball_formula() {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = sample_boundary(&d, 600, 3).unwrap();
        let table = FlowTable::build(&d, &s, &[0.15, 0.05], 6, 2).unwrap();
        let all: Vec<usize> = (0..s.len()).collect();
        for t in [0.15, 0.05] {
            let v = coarea_volume(&table, &s, &all, t).value;
            let exact = ball_tent_volume(2, s.total_mass, t);
            assert!((v - exact).abs() < 1e-9 * exact, "{v} {exact}");
        }
    }

    #[test]
    fn whitney_ratio_in_bounds() {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = with_voronoi_weights(&d, &sample_boundary(&d, 600, 3).unwrap(), 10, 4).unwrap();
        let p = GridParams::new(0.125, 2, 2.0, 1.06).waived();
        let fam = build_adjacent_family(&d, &s, &p, &[0]).unwrap();
        let g = &fam.grids[0];
        let sides: Vec<f64> = (g.n0..=g.finest() + 1).map(|k| g.side(k)).collect();
        let table = FlowTable::build(&d, &s, &sides, 4, 2).unwrap();
        let cfg = McConfig { target_hits: 800, max_samples: 400_000 };
        let r = whitney_volume_comparability(&d, &s, &fam, &table, 0, g.n0, Some(2), cfg, 5).unwrap();
        assert!(r.min_ratio >= 1.0 - 0.1 && r.max_ratio <= r.bound, "{r:?}");
    }
}
