//! Boundary samples with surface quadrature weights, dyadic grids built from
//! `rho`-nets, adjacent grid families and cube lookup.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, Point};
use crate::error::{Error, Result};
use crate::extremal::{euclidean_reach, rho_value};
use crate::numeric::{dot, norm, random_direction, stream_rng, KdTree};

/// Area of the unit sphere `S^{2n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    let fact: f64 = (1..n).map(|k| k as f64).product();
    2.0 * std::f64::consts::PI.powi(n as i32) / fact
}

/// Boundary points with quadrature weights for surface measure.
#[derive(Clone, Debug)]
pub struct BoundarySample {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub total_mass: f64,
    pub tree: KdTree,
    /// Mass of one Monte-Carlo hit when the weights are Voronoi estimates (0 for ray weights).
    pub weight_unit: f64,
    /// Largest observed distance from a point to the hits of its Voronoi cell (empty for ray weights).
    pub cell_radius: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct SampleDoc {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub weight_unit: f64,
    #[serde(default)]
    pub cell_radius: Vec<f64>,
}

impl BoundarySample {
    pub fn from_points(points: Vec<Point>, weights: Vec<f64>, seed: u64) -> Self {
        let total_mass = weights.iter().sum();
        let tree = KdTree::new(&points);
        BoundarySample {
            points,
            weights,
            seed,
            total_mass,
            tree,
            weight_unit: 0.0,
            cell_radius: Vec::new(),
        }
    }

    /// Largest cell radius among `members`, or a global estimate for ray-weighted samples.
    pub fn cell_radius_of(&self, members: &[usize]) -> f64 {
        if self.cell_radius.is_empty() {
            let area_per_point = self.total_mass / self.len() as f64;
            let d = self.points[0].len() as f64 - 1.0;
            return 2.0 * area_per_point.powf(1.0 / d);
        }
        members.iter().map(|&m| self.cell_radius[m]).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the sample point nearest to `z` (smaller index on ties).
    pub fn nearest(&self, z: &[f64]) -> usize {
        self.tree.nearest(z).0
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn to_doc(&self) -> SampleDoc {
        SampleDoc {
            points: self.points.clone(),
            weights: self.weights.clone(),
            seed: self.seed,
            weight_unit: self.weight_unit,
            cell_radius: self.cell_radius.clone(),
        }
    }

    pub fn from_doc(doc: SampleDoc) -> Self {
        let mut s = Self::from_points(doc.points, doc.weights, doc.seed);
        s.weight_unit = doc.weight_unit;
        s.cell_radius = doc.cell_radius;
        s
    }
}

/// Ray-map weight of the boundary point on the ray through `theta`.
fn ray_point(domain: &DomainSpec, theta: &[f64]) -> Result<(Point, f64)> {
    let radius = domain.ray_boundary_radius(theta)?;
    let p: Point = theta.iter().map(|t| t * radius).collect();
    let mut nu = domain.gradient(&p);
    crate::numeric::normalize(&mut nu);
    let cos = dot(theta, &nu);
    if !(cos > 1e-6) || domain.value(&p).abs() >= 1e-9 {
        return Err(Error::Diagnostic("ray-boundary root finding failed".into()));
    }
    Ok((p, radius.powi(theta.len() as i32 - 1) / cos))
}

/// Boundary points from uniform directions, projected along rays from the origin.
/// Weights `|S^{2n-1}|/N * R^{2n-1}/(theta . nu)` integrate surface measure.
pub fn sample_boundary(domain: &DomainSpec, count: usize, seed: u64) -> Result<BoundarySample> {
    if count < 500 {
        return Err(Error::InvalidInput(format!("boundary sample needs >= 500 points, got {count}")));
    }
    if !domain.is_bounded() {
        return Err(Error::InvalidInput("boundary sampling needs a bounded domain".into()));
    }
    let mut rng = stream_rng(seed, 31);
    let dim = domain.real_dim();
    let base = sphere_area(domain.n) / count as f64;
    let mut points = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut failures = 0;
    while points.len() < count {
        let theta = random_direction(&mut rng, dim);
        match ray_point(domain, &theta) {
            Ok((p, w)) => {
                points.push(p);
                weights.push(base * w);
            }
            Err(_) => {
                failures += 1;
                if failures > count {
                    return Err(Error::Diagnostic("boundary sampling keeps failing".into()));
                }
            }
        }
    }
    Ok(BoundarySample::from_points(points, weights, seed))
}

/// Replace weights by Monte-Carlo masses of the nearest-sample (Voronoi) cells,
/// using `extra_per_point * N` additional ray samples. Empty cells get half a hit.
pub fn with_voronoi_weights(domain: &DomainSpec, sample: &BoundarySample, extra_per_point: usize, seed: u64) -> Result<BoundarySample> {
    let m = extra_per_point * sample.len();
    let base = sphere_area(domain.n) / m as f64;
    let dim = domain.real_dim();
    let chunks = 64;
    let per_chunk = m.div_ceil(chunks);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, 3_000 + c as u64);
            let mut acc = vec![0.0; sample.len()];
            let mut rad = vec![0.0f64; sample.len()];
            for _ in 0..per_chunk.min(m.saturating_sub(c * per_chunk)) {
                let theta = random_direction(&mut rng, dim);
                if let Ok((p, w)) = ray_point(domain, &theta) {
                    let (i, d2) = sample.tree.nearest(&p);
                    acc[i] += base * w;
                    rad[i] = rad[i].max(d2.sqrt());
                }
            }
            (acc, rad)
        })
        .collect();
    let mut weights = vec![0.0; sample.len()];
    let mut radius = vec![0.0f64; sample.len()];
    for (part, rad) in parts {
        weights.iter_mut().zip(part).for_each(|(w, a)| *w += a);
        radius.iter_mut().zip(rad).for_each(|(r, a)| *r = r.max(a));
    }
    for w in weights.iter_mut() {
        if *w <= 0.0 {
            *w = 0.5 * base;
        }
    }
    let mut out = BoundarySample::from_points(sample.points.clone(), weights, seed);
    out.weight_unit = base;
    out.cell_radius = radius;
    Ok(out)
}

/// Outcome of the two `delta` conditions `96 kappa^6 delta <= 1` and `delta <= 1/(100 C_Omega)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DeltaConditions {
    pub delta: f64,
    pub stride: usize,
    pub effective_delta: f64,
    pub kappa: f64,
    pub c_omega: f64,
    pub condition_a: f64,
    pub condition_a_ok: bool,
    pub condition_b_bound: f64,
    pub condition_b_ok: bool,
    pub waived: bool,
}

impl DeltaConditions {
    pub fn evaluate(delta: f64, stride: usize, kappa: f64, c_omega: f64, waived: bool) -> Self {
        let eff = delta.powi(stride as i32);
        let a = 96.0 * kappa.powi(6) * eff;
        let b = 1.0 / (100.0 * c_omega);
        DeltaConditions {
            delta,
            stride,
            effective_delta: eff,
            kappa,
            c_omega,
            condition_a: a,
            condition_a_ok: a <= 1.0,
            condition_b_bound: b,
            condition_b_ok: eff <= b,
            waived,
        }
    }

    pub fn ok(&self) -> bool {
        self.condition_a_ok && self.condition_b_ok
    }

    /// Human-readable list of violated conditions.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.condition_a_ok {
            v.push(format!(
                "condition (a): 96*kappa^6*delta = {:.4e} > 1 (kappa = {:.4}, delta = {:.4e})",
                self.condition_a, self.kappa, self.effective_delta
            ));
        }
        if !self.condition_b_ok {
            v.push(format!(
                "condition (b): delta = {:.4e} > 1/(100*C_Omega) = {:.4e}",
                self.effective_delta, self.condition_b_bound
            ));
        }
        v
    }

    /// Smallest level stride `N` for which `delta^N` meets both conditions.
    pub fn auto_stride(delta: f64, kappa: f64, c_omega: f64) -> usize {
        (1..=64)
            .find(|&s| Self::evaluate(delta, s, kappa, c_omega, false).ok())
            .unwrap_or(64)
    }
}

/// Grid construction parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridParams {
    pub delta: f64,
    /// Level stride; `None` picks the smallest stride meeting the delta conditions
    /// (or 1 when they are waived).
    pub stride: Option<usize>,
    pub depth: usize,
    pub kappa: f64,
    pub c_omega: f64,
    pub enforce_delta_conditions: bool,
    /// Small-scale thresholds bounding the top level; default to the flow time.
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    /// Levels kept above `N_0` (full-grid levels used for adjacent-family covering).
    #[serde(default = "one")]
    pub coarse_levels: usize,
}

fn one() -> usize {
    1
}

impl GridParams {
    pub fn new(delta: f64, depth: usize, kappa: f64, c_omega: f64) -> Self {
        GridParams {
            delta,
            stride: None,
            depth,
            kappa,
            c_omega,
            enforce_delta_conditions: true,
            tau1: None,
            tau2: None,
            coarse_levels: 1,
        }
    }

    fn first_level(&self, n0: usize) -> usize {
        n0.saturating_sub(self.coarse_levels)
    }

    /// Level sides `delta_eff^k` for `k = first..=N_0 + depth`.
    fn sides(&self, cond: &DeltaConditions, n0: usize) -> Vec<f64> {
        (self.first_level(n0)..=n0 + self.depth).map(|k| cond.effective_delta.powi(k as i32)).collect()
    }

    pub fn waived(mut self) -> Self {
        self.enforce_delta_conditions = false;
        self
    }

    /// Stride and condition report, or the violated condition when enforcement is on.
    pub fn resolve(&self) -> Result<DeltaConditions> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.depth < 1 {
            return Err(Error::InvalidInput("grid depth must be >= 1".into()));
        }
        let stride = match (self.stride, self.enforce_delta_conditions) {
            (Some(s), _) => s.max(1),
            (None, true) => DeltaConditions::auto_stride(self.delta, self.kappa, self.c_omega),
            (None, false) => 1,
        };
        let cond = DeltaConditions::evaluate(self.delta, stride, self.kappa, self.c_omega, !self.enforce_delta_conditions);
        if self.enforce_delta_conditions && !cond.ok() {
            return Err(Error::DeltaCondition(cond.violations().join("; ")));
        }
        Ok(cond)
    }

    /// `N_0`: smallest `k` with `delta_eff^k <= min(tau1, tau2, t0)`.
    pub fn top_level(&self, effective_delta: f64, flow_time: f64) -> usize {
        let cap = [self.tau1, self.tau2, Some(flow_time)]
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let mut k = 1;
        while effective_delta.powi(k as i32) > cap {
            k += 1;
        }
        k
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DyadicCube {
    pub level: usize,
    pub index: usize,
    /// Point index of `c(Q)`.
    pub center: usize,
    pub members: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub mass: f64,
    pub side: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridLevel {
    pub k: usize,
    pub side: f64,
    pub cubes: Vec<DyadicCube>,
    /// Cube index of every sample point.
    pub assignment: Vec<usize>,
}

/// Empirical grid constants and axiom checks.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridVerification {
    pub partition_violations: usize,
    pub nesting_violations: usize,
    pub childless_cubes: usize,
    pub parent_violations: usize,
    pub center_violations: usize,
    pub separation_violations: usize,
    /// Smallest `sigma(child)/sigma(parent)`.
    pub eps_grid: f64,
    /// Smallest constant with `Q ⊆ B(c(Q), frak_c * l(Q))`.
    pub frak_c: f64,
    /// Largest `a` with `B(c(Q), a l(Q)) ∩ sample ⊆ Q` over all cubes.
    pub inner_constant: f64,
    /// Cubes for which `B(c(Q), l(Q)) ∩ sample ⊆ Q` fails.
    pub inner_failures: usize,
    pub cubes: usize,
}

impl GridVerification {
    /// Properties (1)-(5) with zero violations.
    pub fn axioms_hold(&self) -> bool {
        self.partition_violations == 0
            && self.nesting_violations == 0
            && self.childless_cubes == 0
            && self.parent_violations == 0
            && self.center_violations == 0
            && self.separation_violations == 0
            && self.eps_grid > 0.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DyadicGrid {
    pub seed: u64,
    pub delta: f64,
    pub stride: usize,
    pub effective_delta: f64,
    pub n0: usize,
    pub levels: Vec<GridLevel>,
    pub conditions: DeltaConditions,
    pub verification: GridVerification,
    pub warnings: Vec<String>,
    pub retries: usize,
}

impl DyadicGrid {
    pub fn level(&self, k: usize) -> Option<&GridLevel> {
        k.checked_sub(self.levels[0].k).and_then(|i| self.levels.get(i))
    }

    /// Coarsest stored level (at most `N_0`).
    pub fn first(&self) -> usize {
        self.levels[0].k
    }

    pub fn finest(&self) -> usize {
        self.levels[0].k + self.levels.len() - 1
    }

    /// Levels `N_0..=finest` of the modified grid.
    pub fn tent_levels(&self) -> std::ops::RangeInclusive<usize> {
        self.n0..=self.finest()
    }

    pub fn cube(&self, k: usize, index: usize) -> &DyadicCube {
        &self.level(k).expect("level in range").cubes[index]
    }

    /// Cube index at level `k` of the cube containing sample point `p`.
    pub fn cube_of(&self, k: usize, p: usize) -> usize {
        self.level(k).expect("level in range").assignment[p]
    }

    pub fn side(&self, k: usize) -> f64 {
        self.effective_delta.powi(k as i32)
    }

    pub fn cube_count(&self) -> usize {
        self.levels.iter().map(|l| l.cubes.len()).sum()
    }

    pub fn tent_cube_count(&self) -> usize {
        self.tent_levels().map(|k| self.level(k).unwrap().cubes.len()).sum()
    }
}

/// Euclidean reach of `P_side(x)` for every sample point and level side.
pub fn reach_table(domain: &DomainSpec, sample: &BoundarySample, sides: &[f64]) -> Vec<Vec<f64>> {
    sides
        .iter()
        .map(|&s| sample.points.par_iter().map(|p| euclidean_reach(domain, p, s)).collect())
        .collect()
}

/// Greedy nested `rho`-nets, nearest-center assignment at the finest level and
/// nearest-coarser-center parents; membership lifted transitively.
pub fn build_grid(domain: &DomainSpec, sample: &BoundarySample, params: &GridParams, seed: u64) -> Result<DyadicGrid> {
    let cond = params.resolve()?;
    let n0 = params.top_level(cond.effective_delta, domain.flow_time());
    let sides = params.sides(&cond, n0);
    let reach = reach_table(domain, sample, &sides);
    build_grid_with_reach(domain, sample, params, &cond, n0, &sides, &reach, seed)
}

#[allow(clippy::too_many_arguments)]
fn build_grid_with_reach(
    domain: &DomainSpec,
    sample: &BoundarySample,
    params: &GridParams,
    cond: &DeltaConditions,
    n0: usize,
    sides: &[f64],
    reach: &[Vec<f64>],
    seed: u64,
) -> Result<DyadicGrid> {
    let mut last = None;
    for attempt in 0..=5 {
        let grid = construct(domain, sample, params, cond, n0, sides, reach, seed.wrapping_add(attempt as u64), attempt)?;
        if grid.verification.axioms_hold() {
            return Ok(grid);
        }
        last = Some(grid);
    }
    let g = last.expect("at least one attempt");
    Err(Error::Diagnostic(format!(
        "grid axioms violated after 5 retries: {:?}",
        g.verification
    )))
}

#[allow(clippy::too_many_arguments)]
fn construct(
    domain: &DomainSpec,
    sample: &BoundarySample,
    params: &GridParams,
    cond: &DeltaConditions,
    n0: usize,
    sides: &[f64],
    reach: &[Vec<f64>],
    seed: u64,
    retries: usize,
) -> Result<DyadicGrid> {
    let np = sample.len();
    let k_first = params.first_level(n0);
    if np == 0 {
        return Err(Error::InvalidInput("empty boundary sample".into()));
    }
    let pts = &sample.points;
    let mut order: Vec<usize> = (0..np).collect();
    order.shuffle(&mut stream_rng(seed, 41));

    // nested nets: centers of level j stay centers at level j + 1
    let mut is_center = vec![false; np];
    let mut nets: Vec<Vec<usize>> = Vec::with_capacity(sides.len());
    for (j, &side) in sides.iter().enumerate() {
        let mut centers: Vec<usize> = nets.last().cloned().unwrap_or_default();
        for &p in &order {
            if is_center[p] {
                continue;
            }
            let near = sample.tree.within(&pts[p], reach[j][p]);
            let blocked = near
                .iter()
                .any(|&c| is_center[c] && rho_value(domain, &pts[p], &pts[c]) < side);
            if !blocked {
                is_center[p] = true;
                centers.push(p);
            }
        }
        nets.push(centers);
    }

    // nearest center by rho with index tie-break among candidates
    let nearest_center = |p: usize, j: usize, centers_mask: &[bool]| -> usize {
        if centers_mask[p] {
            return p;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for c in sample.tree.within(&pts[p], reach[j][p]) {
            if centers_mask[c] {
                let d = rho_value(domain, &pts[p], &pts[c]);
                if d < best.0 || (d == best.0 && c < best.1) {
                    best = (d, c);
                }
            }
        }
        if best.1 == usize::MAX {
            // maximality guarantees a center within rho < side; fall back to a full scan
            for (c, &m) in centers_mask.iter().enumerate() {
                if m {
                    let d = rho_value(domain, &pts[p], &pts[c]);
                    if d < best.0 || (d == best.0 && c < best.1) {
                        best = (d, c);
                    }
                }
            }
        }
        best.1
    };

    let depth = sides.len();
    let masks: Vec<Vec<bool>> = nets
        .iter()
        .map(|net| {
            let mut m = vec![false; np];
            net.iter().for_each(|&c| m[c] = true);
            m
        })
        .collect();

    // finest assignment point -> center, then center -> coarser center
    let finest_center: Vec<usize> = (0..np).into_par_iter().map(|p| nearest_center(p, depth - 1, &masks[depth - 1])).collect();
    let mut parent_center: Vec<Vec<usize>> = vec![Vec::new(); depth];
    for j in (1..depth).rev() {
        parent_center[j] = nets[j].par_iter().map(|&c| nearest_center(c, j - 1, &masks[j - 1])).collect();
    }

    let mut levels: Vec<GridLevel> = Vec::with_capacity(depth);
    // cube index per center at each level
    let index_of: Vec<std::collections::HashMap<usize, usize>> = nets
        .iter()
        .map(|net| {
            let mut sorted = net.clone();
            sorted.sort_unstable();
            sorted.into_iter().enumerate().map(|(i, c)| (c, i)).collect()
        })
        .collect();
    let mut assign_center = finest_center.clone();
    for j in (0..depth).rev() {
        if j < depth - 1 {
            let up: std::collections::HashMap<usize, usize> =
                nets[j + 1].iter().copied().zip(parent_center[j + 1].iter().copied()).collect();
            assign_center = assign_center.iter().map(|c| up[c]).collect();
        }
        let mut cubes: Vec<DyadicCube> = {
            let mut sorted = nets[j].clone();
            sorted.sort_unstable();
            sorted
                .into_iter()
                .enumerate()
                .map(|(i, c)| DyadicCube {
                    level: k_first + j,
                    index: i,
                    center: c,
                    members: Vec::new(),
                    parent: None,
                    children: Vec::new(),
                    mass: 0.0,
                    side: sides[j],
                })
                .collect()
        };
        let assignment: Vec<usize> = assign_center.iter().map(|c| index_of[j][c]).collect();
        for (p, &q) in assignment.iter().enumerate() {
            cubes[q].members.push(p);
            cubes[q].mass += sample.weights[p];
        }
        levels.push(GridLevel {
            k: k_first + j,
            side: sides[j],
            cubes,
            assignment,
        });
    }
    levels.reverse();
    for j in 1..depth {
        let (coarse, fine) = levels.split_at_mut(j);
        let coarse = &mut coarse[j - 1];
        for q in fine[0].cubes.iter_mut() {
            let par = coarse.assignment[q.center];
            q.parent = Some(par);
            coarse.cubes[par].children.push(q.index);
        }
    }
    let mut warnings = Vec::new();
    for l in &levels {
        if l.cubes.len() < 2 && np > 1 {
            warnings.push(format!("level {} has a single cube", l.k));
        }
    }
    let mut grid = DyadicGrid {
        seed,
        delta: params.delta,
        stride: cond.stride,
        effective_delta: cond.effective_delta,
        n0,
        levels,
        conditions: cond.clone(),
        verification: GridVerification {
            partition_violations: 0,
            nesting_violations: 0,
            childless_cubes: 0,
            parent_violations: 0,
            center_violations: 0,
            separation_violations: 0,
            eps_grid: 0.0,
            frak_c: 0.0,
            inner_constant: 0.0,
            inner_failures: 0,
            cubes: 0,
        },
        warnings,
        retries,
    };
    grid.verification = verify_grid(domain, sample, &grid, reach);
    Ok(grid)
}

/// Exhaustive check of properties (1)-(5) and the sandwich constants.
pub fn verify_grid(domain: &DomainSpec, sample: &BoundarySample, grid: &DyadicGrid, reach: &[Vec<f64>]) -> GridVerification {
    let np = sample.len();
    let pts = &sample.points;
    let mut v = GridVerification {
        partition_violations: 0,
        nesting_violations: 0,
        childless_cubes: 0,
        parent_violations: 0,
        center_violations: 0,
        separation_violations: 0,
        eps_grid: f64::INFINITY,
        frak_c: 0.0,
        inner_constant: f64::INFINITY,
        inner_failures: 0,
        cubes: grid.cube_count(),
    };
    for (j, level) in grid.levels.iter().enumerate() {
        // (1) partition
        let mut seen = vec![0usize; np];
        for q in &level.cubes {
            for &m in &q.members {
                seen[m] += 1;
                if level.assignment[m] != q.index {
                    v.partition_violations += 1;
                }
            }
            if q.members.binary_search(&q.center).is_err() {
                v.center_violations += 1;
            }
        }
        v.partition_violations += seen.iter().filter(|&&s| s != 1).count();
        if j + 1 < grid.levels.len() {
            let fine = &grid.levels[j + 1];
            for q in &level.cubes {
                // (3) at least one child
                if q.children.is_empty() {
                    v.childless_cubes += 1;
                }
                // (2) nesting: children's members partition the parent's
                let mut union: Vec<usize> = q.children.iter().flat_map(|&c| fine.cubes[c].members.iter().copied()).collect();
                union.sort_unstable();
                if union != q.members {
                    v.nesting_violations += 1;
                }
                // (5) mass of children
                for &c in &q.children {
                    v.eps_grid = v.eps_grid.min(fine.cubes[c].mass / q.mass);
                }
            }
            // (4) exactly one parent: every fine cube lies inside one coarse cube
            for c in &fine.cubes {
                let parents: std::collections::BTreeSet<usize> = c.members.iter().map(|&m| level.assignment[m]).collect();
                if parents.len() != 1 || c.parent != parents.iter().next().copied() {
                    v.parent_violations += 1;
                }
            }
        }
        // net separation and sandwich
        let side = level.side;
        let outer: Vec<(f64, f64, usize)> = level
            .cubes
            .par_iter()
            .map(|q| {
                let c = &pts[q.center];
                let out = q.members.iter().map(|&m| rho_value(domain, c, &pts[m]) / side).fold(0.0, f64::max);
                let mut inner = f64::INFINITY;
                let mut sep = 0;
                // points outside Q within the reach of the l(Q)-ball
                let cand = sample.tree.within(c, reach[j][q.center]);
                for x in cand {
                    if x == q.center {
                        continue;
                    }
                    let d = rho_value(domain, c, &pts[x]) / side;
                    if level.assignment[x] != q.index {
                        inner = inner.min(d);
                    }
                    if d < 1.0 && level.cubes[level.assignment[x]].center == x {
                        sep += 1;
                    }
                }
                (out, inner, sep)
            })
            .collect();
        for (out, inner, sep) in outer {
            v.frak_c = v.frak_c.max(out);
            v.inner_constant = v.inner_constant.min(inner);
            if inner < 1.0 {
                v.inner_failures += 1;
            }
            v.separation_violations += sep;
        }
    }
    if !v.eps_grid.is_finite() {
        v.eps_grid = 1.0;
    }
    v.inner_constant = v.inner_constant.min(1.0);
    v
}

/// `K_0` grids over one sample with independent seeds.
#[derive(Clone, Debug)]
pub struct GridFamily {
    pub grids: Vec<DyadicGrid>,
    pub covering: Option<CoveringReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringReport {
    pub tests: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// Largest `l(Q)/eps` over covered test balls.
    pub frak_c_tilde: f64,
    /// `(eps, failures, tests)` per scale.
    pub by_scale: Vec<(f64, usize, usize)>,
}

impl GridFamily {
    pub fn n0(&self) -> usize {
        self.grids[0].n0
    }

    pub fn effective_delta(&self) -> f64 {
        self.grids[0].effective_delta
    }

    pub fn top_side(&self) -> f64 {
        self.grids[0].side(self.n0())
    }
}

pub fn build_adjacent_family(domain: &DomainSpec, sample: &BoundarySample, params: &GridParams, seeds: &[u64]) -> Result<GridFamily> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("adjacent family needs at least one grid".into()));
    }
    let cond = params.resolve()?;
    let n0 = params.top_level(cond.effective_delta, domain.flow_time());
    let sides = params.sides(&cond, n0);
    let reach = reach_table(domain, sample, &sides);
    let grids = seeds
        .par_iter()
        .map(|&s| build_grid_with_reach(domain, sample, params, &cond, n0, &sides, &reach, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridFamily { grids, covering: None })
}

/// A cube of the family or the root `bOmega`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CubeRef {
    Root,
    Cube { grid: usize, level: usize, index: usize },
}

#[derive(Clone, Debug)]
pub struct CubeLookup {
    pub cube: CubeRef,
    pub side: f64,
    pub fallback: bool,
}

/// Sample points of `B(xi, eps)`, plus the sample point nearest to `xi`.
pub fn ball_members(domain: &DomainSpec, sample: &BoundarySample, xi: &[f64], eps: f64) -> Vec<usize> {
    let mut out: Vec<usize> = sample
        .tree
        .within(xi, euclidean_reach(domain, xi, eps))
        .into_iter()
        .filter(|&i| rho_value(domain, xi, &sample.points[i]) < eps)
        .collect();
    let nn = sample.nearest(xi);
    if !out.contains(&nn) {
        out.push(nn);
        out.sort_unstable();
    }
    out
}

/// Deepest cube of the family containing `members`; ties by (grid, cube index).
pub fn smallest_cube_containing(family: &GridFamily, members: &[usize]) -> CubeLookup {
    let mut best: Option<(usize, usize, usize)> = None; // (level, grid, index)
    for (g, grid) in family.grids.iter().enumerate() {
        for k in (grid.first()..=grid.finest()).rev() {
            let q = grid.cube_of(k, members[0]);
            if members.iter().all(|&m| grid.cube_of(k, m) == q) {
                let better = match best {
                    None => true,
                    Some((bk, bg, bi)) => k > bk || (k == bk && (g, q) < (bg, bi)),
                };
                if better {
                    best = Some((k, g, q));
                }
                break;
            }
        }
    }
    match best {
        Some((k, g, q)) => CubeLookup {
            cube: CubeRef::Cube { grid: g, level: k, index: q },
            side: family.grids[g].side(k),
            fallback: false,
        },
        None => CubeLookup {
            cube: CubeRef::Root,
            side: f64::INFINITY,
            fallback: true,
        },
    }
}

/// Smallest cube of the modified family containing `B(xi, eps) ∩ sample`.
///
/// The root is returned when `eps >= delta^{N_0}` or when only cubes above
/// level `N_0` contain the ball; `fallback` marks balls no cube contains.
pub fn find_containing_cube(domain: &DomainSpec, sample: &BoundarySample, family: &GridFamily, xi: &[f64], eps: f64) -> CubeLookup {
    let root = CubeLookup {
        cube: CubeRef::Root,
        side: f64::INFINITY,
        fallback: false,
    };
    if eps >= family.top_side() {
        return root;
    }
    let look = smallest_cube_containing(family, &ball_members(domain, sample, xi, eps));
    match look.cube {
        CubeRef::Cube { level, .. } if level < family.n0() => root,
        _ => look,
    }
}

/// Test balls: `centers` random sample points times `scales` geometric scales below `delta^{N_0}`.
pub fn covering_check(domain: &DomainSpec, sample: &BoundarySample, family: &mut GridFamily, centers: usize, scales: usize, seed: u64) -> CoveringReport {
    let top = family.top_side();
    let tests: Vec<(usize, f64)> = {
        let mut rng = stream_rng(seed, 51);
        (0..centers)
            .flat_map(|_| {
                let c = rng.random_range(0..sample.len());
                (1..=scales).map(move |s| (c, top * 2f64.powi(-(s as i32))))
            })
            .collect()
    };
    let outcomes: Vec<Option<f64>> = tests
        .par_iter()
        .map(|&(c, eps)| {
            let look = smallest_cube_containing(family, &ball_members(domain, sample, &sample.points[c], eps));
            if look.fallback {
                None
            } else {
                Some(look.side / eps)
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let by_scale = (1..=scales)
        .map(|s| {
            let eps = top * 2f64.powi(-(s as i32));
            let idx: Vec<usize> = (0..tests.len()).filter(|&i| tests[i].1 == eps).collect();
            (eps, idx.iter().filter(|&&i| outcomes[i].is_none()).count(), idx.len())
        })
        .collect();
    let rep = CoveringReport {
        by_scale,
        tests: tests.len(),
        failures,
        failure_rate: failures as f64 / tests.len().max(1) as f64,
        frak_c_tilde: outcomes.iter().flatten().copied().fold(0.0, f64::max),
    };
    family.covering = Some(rep.clone());
    rep
}

/// Serializable family: domain, sample and grids.
#[derive(Serialize, Deserialize)]
pub struct FamilyDoc {
    pub domain: serde_json::Value,
    pub params: GridParams,
    pub sample: SampleDoc,
    pub grids: Vec<DyadicGrid>,
    pub covering: Option<CoveringReport>,
}

pub fn family_to_json(domain: &DomainSpec, params: &GridParams, sample: &BoundarySample, family: &GridFamily) -> String {
    let doc = FamilyDoc {
        domain: serde_json::from_str(&domain.to_json()).expect("domain json"),
        params: params.clone(),
        sample: sample.to_doc(),
        grids: family.grids.clone(),
        covering: family.covering.clone(),
    };
    serde_json::to_string(&doc).expect("family serializes")
}

pub fn family_from_json(text: &str) -> Result<(DomainSpec, GridParams, BoundarySample, GridFamily)> {
    let doc: FamilyDoc = serde_json::from_str(text)?;
    let domain = DomainSpec::from_json(&doc.domain.to_string())?;
    if doc.grids.is_empty() {
        return Err(Error::InvalidInput("grid file contains no grids".into()));
    }
    Ok((
        domain,
        doc.params,
        BoundarySample::from_doc(doc.sample),
        GridFamily {
            grids: doc.grids,
            covering: doc.covering,
        },
    ))
}

/// Smallest Euclidean distance from `z` to a sample point, for diagnostics.
pub fn sample_resolution(sample: &BoundarySample, z: &[f64]) -> f64 {
    sample.tree.nearest(z).1.sqrt()
}

/// Unit outward normal at a boundary point.
pub fn unit_normal(domain: &DomainSpec, z: &[f64]) -> Vec<f64> {
    let g = domain.gradient(z);
    let n = norm(&g);
    g.iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_surface_mass() {
        let d = DomainSpec::ball(2).unwrap();
        let s = sample_boundary(&d, 4000, 1).unwrap();
        let exact = 2.0 * std::f64::consts::PI.powi(2);
        assert!((s.total_mass - exact).abs() < 0.02 * exact);
        assert!((s.integrate(|_| 1.0) - s.total_mass).abs() < 1e-9);
        assert!(s.points.iter().all(|p| d.value(p).abs() < 1e-9));
        assert!(sample_boundary(&d, 10, 1).is_err());
    }

    #[test]
    fn ellipsoid_mass_two_seeds() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let a = sample_boundary(&d, 4000, 1).unwrap().total_mass;
        let b = sample_boundary(&d, 4000, 2).unwrap().total_mass;
        assert!((a - b).abs() < 0.03 * a);
    }

    #[test]
    fn delta_conditions() {
        let c = DeltaConditions::evaluate(0.125, 1, 2.0, 1.05, false);
        assert!(!c.condition_a_ok);
        let s = DeltaConditions::auto_stride(0.125, 2.0, 1.05);
        assert!(DeltaConditions::evaluate(0.125, s, 2.0, 1.05, false).ok());
        assert!(!DeltaConditions::evaluate(0.125, s - 1, 2.0, 1.05, false).ok());
        let p = GridParams { stride: Some(1), ..GridParams::new(0.125, 3, 2.0, 1.05) };
        let err = p.resolve().unwrap_err();
        assert!(err.to_string().contains("condition (a)"));
        assert!(p.clone().waived().resolve().is_ok());
    }

    #[test]
    fn single_point_grid() {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = BoundarySample::from_points(vec![d.reference_point()], vec![1.0], 0);
        let g = build_grid(&d, &s, &GridParams::new(0.125, 3, 1.0, 1.0).waived(), 0).unwrap();
        assert!(g.verification.axioms_hold());
        assert!(g.levels.iter().all(|l| l.cubes.len() == 1));
    }

    #[test]
    fn small_grid_axioms_and_determinism() {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = sample_boundary(&d, 600, 3).unwrap();
        let p = GridParams::new(0.125, 3, 2.0, 1.05).waived();
        let a = build_grid(&d, &s, &p, 7).unwrap();
        let b = build_grid(&d, &s, &p, 7).unwrap();
        assert!(a.verification.axioms_hold(), "{:?}", a.verification);
        assert_eq!(a, b);
        assert!(a.verification.frak_c.is_finite() && a.verification.frak_c > 0.0);
        let fam = GridFamily { grids: vec![a], covering: None };
        // lookups contain the ball
        let mut rng = stream_rng(5, 0);
        for _ in 0..20 {
            let i = rng.random_range(0..s.len());
            let eps = fam.top_side() * rng.random_range(0.05..0.9);
            let look = find_containing_cube(&d, &s, &fam, &s.points[i], eps);
            if let CubeRef::Cube { grid, level, index } = look.cube {
                let q = fam.grids[grid].cube(level, index);
                for m in ball_members(&d, &s, &s.points[i], eps) {
                    assert!(q.members.binary_search(&m).is_ok());
                }
            }
        }
        let root = find_containing_cube(&d, &s, &fam, &s.points[0], fam.top_side());
        assert_eq!(root.cube, CubeRef::Root);
    }
}
