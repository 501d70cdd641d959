//! Flow and projection tents over dyadic cubes, upper Whitney pieces, the
//! Bergman-flow tree and the tent-equivalence scan.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::boundary::{BoundarySample, CubeRef, DyadicGrid, GridFamily};
use crate::domain::{DomainSpec, Point};
use crate::error::{Error, Result};
use crate::extremal::{rho_value, scale_free_basis, tau};
use crate::flow::{flow, flow_project, nearest_project, FlowIntegrator};
use crate::numeric::{dist, norm, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TentFlavor {
    Flow,
    Proj,
}

/// Depth `-r(z)` and the sample point nearest to the projection of `z`.
#[derive(Clone, Copy, Debug)]
pub struct Located {
    pub depth: f64,
    pub foot: usize,
}

pub fn project(domain: &DomainSpec, z: &[f64], flavor: TentFlavor) -> Result<Point> {
    match flavor {
        TentFlavor::Flow => flow_project(domain, z),
        TentFlavor::Proj => nearest_project(domain, z),
    }
}

pub fn locate(domain: &DomainSpec, sample: &BoundarySample, z: &[f64], flavor: TentFlavor) -> Result<Located> {
    let depth = -domain.value(z);
    if depth <= 0.0 {
        return Ok(Located { depth, foot: usize::MAX });
    }
    let w = project(domain, z, flavor)?;
    Ok(Located {
        depth,
        foot: sample.nearest(&w),
    })
}

/// Side `l(Q)` of a cube; the root tent is all of `Omega`.
pub fn cube_side(family: &GridFamily, cube: CubeRef) -> f64 {
    match cube {
        CubeRef::Root => f64::INFINITY,
        CubeRef::Cube { grid, level, .. } => family.grids[grid].side(level),
    }
}

pub fn cube_members(family: &GridFamily, cube: CubeRef) -> Option<&[usize]> {
    match cube {
        CubeRef::Root => None,
        CubeRef::Cube { grid, level, index } => Some(&family.grids[grid].cube(level, index).members),
    }
}

pub fn located_in(family: &GridFamily, cube: CubeRef, loc: &Located) -> bool {
    if loc.depth <= 0.0 {
        return false;
    }
    match cube {
        CubeRef::Root => true,
        CubeRef::Cube { grid, level, index } => {
            let g = &family.grids[grid];
            loc.depth < g.side(level) && g.cube_of(level, loc.foot) == index
        }
    }
}

/// `z in T(Q)`: `r(z) in (-l(Q), 0)` and the flavor's projection lands in `Q`.
pub fn tent_contains(
    domain: &DomainSpec,
    sample: &BoundarySample,
    family: &GridFamily,
    cube: CubeRef,
    z: &[f64],
    flavor: TentFlavor,
) -> Result<bool> {
    let r = domain.value(z);
    if r >= 0.0 || -r >= cube_side(family, cube) {
        return Ok(false);
    }
    Ok(located_in(family, cube, &locate(domain, sample, z, flavor)?))
}

/// All tents of the modified family containing a located point: the root and,
/// per grid, the cubes at levels `k >= N_0` with `l(Q) > depth`.
pub fn containing_tents(family: &GridFamily, loc: &Located) -> Vec<CubeRef> {
    let mut out = vec![CubeRef::Root];
    if loc.depth <= 0.0 {
        return out;
    }
    for (g, grid) in family.grids.iter().enumerate() {
        for k in grid.tent_levels() {
            if grid.side(k) > loc.depth {
                out.push(CubeRef::Cube {
                    grid: g,
                    level: k,
                    index: grid.cube_of(k, loc.foot),
                });
            }
        }
    }
    out
}

/// Upper Whitney piece `W^up_Q` of a level-`k` cube.
#[derive(Clone, Debug, Serialize)]
pub struct WhitneyPiece {
    pub level: usize,
    pub cube: usize,
    /// The layer is `-upper <= r < -lower`.
    pub upper: f64,
    pub lower: f64,
    /// `c(W^up_Q)`: the flow lift of `c(Q)` to `r = -delta^k`.
    pub center: Point,
}

/// Level `k` whose layer `delta^{k+1} < depth <= delta^k` holds the point, if `k` is a tent level.
pub fn whitney_level(grid: &DyadicGrid, depth: f64) -> Option<usize> {
    grid.tent_levels().find(|&k| depth <= grid.side(k) && depth > grid.side(k + 1))
}

pub fn whitney_decompose(domain: &DomainSpec, sample: &BoundarySample, grid: &DyadicGrid, k: usize) -> Result<Vec<WhitneyPiece>> {
    if k < grid.n0 || k > grid.finest() {
        return Err(Error::InvalidInput(format!(
            "Whitney level {k} outside {}..={}",
            grid.n0,
            grid.finest()
        )));
    }
    let integ = FlowIntegrator::for_domain(domain);
    let (upper, lower) = (grid.side(k), grid.side(k + 1));
    grid.level(k)
        .unwrap()
        .cubes
        .par_iter()
        .map(|q| {
            Ok(WhitneyPiece {
                level: k,
                cube: q.index,
                upper,
                lower,
                center: flow(domain, &sample.points[q.center], upper, &integ)?,
            })
        })
        .collect()
}

/// Monte-Carlo partition scan of a layer `Omega_k`.
#[derive(Clone, Debug, Serialize)]
pub struct WhitneyScan {
    pub level: usize,
    pub samples: usize,
    pub in_layer: usize,
    pub assigned: usize,
    pub ambiguous: usize,
    pub projection_failures: usize,
    pub layer_volume: f64,
    pub layer_stderr: f64,
    /// Sum of the piece volume estimates.
    pub pieces_volume: f64,
    /// Closed-form layer volume (ball only).
    pub exact_layer_volume: Option<f64>,
    pub unambiguous_fraction: f64,
}

/// Volume of `{r < -s}` for the scaled ball: `pi^n/n! (1 - 2s)^n`.
pub fn ball_sublevel_volume(n: usize, s: f64) -> f64 {
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    std::f64::consts::PI.powi(n as i32) / fact * (1.0 - 2.0 * s).powi(n as i32)
}

pub fn whitney_partition_scan(
    domain: &DomainSpec,
    sample: &BoundarySample,
    grid: &DyadicGrid,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<WhitneyScan> {
    let (upper, lower) = (grid.side(k), grid.side(k + 1));
    let dim = domain.real_dim();
    let half: f64 = 1.0 + 1e-9;
    let box_vol = (2.0 * half).powi(dim as i32);
    let chunks = 64usize;
    let per = samples.div_ceil(chunks);
    let level = grid.level(k).ok_or_else(|| Error::InvalidInput(format!("no level {k}")))?;
    let parts: Vec<(usize, usize, usize, usize, Vec<usize>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, 7_000 + c as u64);
            let mut counts = vec![0usize; level.cubes.len()];
            let (mut inl, mut asg, mut amb, mut fail) = (0, 0, 0, 0);
            for _ in 0..per.min(samples.saturating_sub(c * per)) {
                let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-half..half)).collect();
                let r = domain.value(&z);
                if !(r >= -upper && r < -lower) {
                    continue;
                }
                inl += 1;
                match flow_project(domain, &z) {
                    Ok(w) => {
                        let (foot, d2) = sample.tree.nearest(&w);
                        asg += 1;
                        counts[level.assignment[foot]] += 1;
                        let near = sample.tree.within(&w, d2.sqrt() * (1.0 + 1e-9));
                        if near.iter().any(|&p| level.assignment[p] != level.assignment[foot]) {
                            amb += 1;
                        }
                    }
                    Err(_) => fail += 1,
                }
            }
            (inl, asg, amb, fail, counts)
        })
        .collect();
    let mut counts = vec![0usize; level.cubes.len()];
    let (mut inl, mut asg, mut amb, mut fail) = (0, 0, 0, 0);
    for (a, b, c, d, cnt) in parts {
        inl += a;
        asg += b;
        amb += c;
        fail += d;
        counts.iter_mut().zip(cnt).for_each(|(x, y)| *x += y);
    }
    let p = inl as f64 / samples as f64;
    let pieces_volume = counts.iter().map(|&c| box_vol * c as f64 / samples as f64).sum();
    let exact = (domain.kind == crate::domain::DomainKind::Ball)
        .then(|| ball_sublevel_volume(domain.n, lower) - ball_sublevel_volume(domain.n, upper));
    Ok(WhitneyScan {
        level: k,
        samples,
        in_layer: inl,
        assigned: asg,
        ambiguous: amb,
        projection_failures: fail,
        layer_volume: box_vol * p,
        layer_stderr: box_vol * (p * (1.0 - p) / samples as f64).sqrt(),
        pieces_volume,
        exact_layer_volume: exact,
        unambiguous_fraction: if asg > 0 { 1.0 - amb as f64 / asg as f64 } else { 1.0 },
    })
}

/// Whitney centers linked by cube ancestry.
#[derive(Clone, Debug, Serialize)]
pub struct TreeNode {
    pub level: usize,
    pub cube: usize,
    pub center: Point,
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BergmanFlowTree {
    pub nodes: Vec<TreeNode>,
    #[serde(skip)]
    pub index: HashMap<(usize, usize), usize>,
}

pub fn bergman_flow_tree(domain: &DomainSpec, sample: &BoundarySample, grid: &DyadicGrid) -> Result<BergmanFlowTree> {
    let mut nodes = Vec::new();
    let mut index = HashMap::new();
    for k in grid.tent_levels() {
        for piece in whitney_decompose(domain, sample, grid, k)? {
            let parent = if k > grid.n0 {
                let par = grid.cube(k, piece.cube).parent.expect("non-top cube has a parent");
                Some(index[&(k - 1, par)])
            } else {
                None
            };
            index.insert((k, piece.cube), nodes.len());
            nodes.push(TreeNode {
                level: k,
                cube: piece.cube,
                center: piece.center,
                parent,
            });
        }
    }
    Ok(BergmanFlowTree { nodes, index })
}

/// Tree order equals cube ancestry on levels `>= N_0`.
pub fn tree_matches_ancestry(tree: &BergmanFlowTree, grid: &DyadicGrid) -> bool {
    if tree.nodes.len() != grid.tent_cube_count() {
        return false;
    }
    tree.nodes.iter().all(|n| {
        let cube = grid.cube(n.level, n.cube);
        match (n.parent, cube.parent) {
            (None, _) => n.level == grid.n0,
            (Some(p), Some(cp)) => {
                let pn = &tree.nodes[p];
                pn.level + 1 == n.level && pn.cube == cp
            }
            (Some(_), None) => false,
        }
    })
}

/// Random boundary point with `rho(zeta, w) < eps`, from the polydisc `P_eps(zeta)`.
fn boundary_point_near<R: Rng>(domain: &DomainSpec, zeta: &[f64], eps: f64, radii: &[f64], basis: &[Vec<f64>], rng: &mut R) -> Option<Point> {
    for _ in 0..200 {
        let mut z = zeta.to_vec();
        for (u, t) in basis.iter().zip(radii) {
            let rad = t * rng.random::<f64>().sqrt();
            let lam = Complex64::from_polar(rad, rng.random_range(0.0..std::f64::consts::TAU));
            crate::numeric::add_scaled_into(&mut z, lam, u);
        }
        let Ok(w) = nearest_project(domain, &z) else { continue };
        if rho_value(domain, zeta, &w) < eps {
            return Some(w);
        }
    }
    None
}

/// Point at depth `s` on the inward normal through the boundary point `w`.
pub fn normal_lift(domain: &DomainSpec, w: &[f64], s: f64) -> Point {
    let g = domain.gradient(w);
    let gn = norm(&g);
    let at = |d: f64| -> Point { w.iter().zip(&g).map(|(x, gi)| x - d * gi / gn).collect() };
    let (mut lo, mut hi) = (0.0, 4.0 * s + 1e-12);
    while domain.value(&at(hi)) > -s {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if domain.value(&at(mid)) > -s {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    at(0.5 * (lo + hi))
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceRung {
    pub eps: f64,
    /// Least `c` with the sampled `T^flow_eps(zeta)` inside `T_{c eps}(zeta)`.
    pub flow_in_proj: f64,
    pub proj_in_flow: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub rungs: Vec<EquivalenceRung>,
    /// `max(1, largest multiplier)` over both directions and all rungs.
    pub c1: f64,
    pub c1_raw: f64,
    /// Largest of the two direction maxima divided by the smaller.
    pub direction_ratio: f64,
    /// Max over rungs / min over rungs of the per-rung multiplier.
    pub ladder_spread: f64,
    /// Largest `|Pi^proj(phi(zeta', t)) - zeta'| / t`; the proof bounds it by 4.
    pub displacement_per_time: f64,
    pub oracle_failures: usize,
    pub attempts: usize,
    pub valid: bool,
}

/// Empirical `C_1` of the two-sided tent inclusions at `zeta` on an eps-ladder.
pub fn tent_equivalence_scan(domain: &DomainSpec, zeta: &[f64], ladder: &[f64], samples: usize, seed: u64) -> Result<EquivalenceReport> {
    let integ = FlowIntegrator::for_domain(domain);
    let basis = scale_free_basis(domain, zeta);
    let mut rungs = Vec::new();
    let mut fails = 0usize;
    let mut attempts = 0usize;
    let mut disp: f64 = 0.0;
    for (ri, &eps) in ladder.iter().enumerate() {
        let radii = basis.iter().map(|u| tau(domain, zeta, u, eps)).collect::<Result<Vec<_>>>()?;
        let res: Vec<Option<(f64, f64, f64)>> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, (ri * 1_000_003 + i) as u64);
                let w = boundary_point_near(domain, zeta, eps, &radii, &basis, &mut rng)?;
                let s = eps * rng.random::<f64>();
                // flow tent sample, measured in the projection tent
                let zf = flow(domain, &w, s, &integ).ok()?;
                let pf = nearest_project(domain, &zf).ok()?;
                let a = rho_value(domain, zeta, &pf).max(s) / eps;
                // projection tent sample, measured in the flow tent
                let zp = normal_lift(domain, &w, s);
                let pp = flow_project(domain, &zp).ok()?;
                let b = rho_value(domain, zeta, &pp).max(s) / eps;
                Some((a, b, dist(&pf, &w) / s.max(1e-300)))
            })
            .collect();
        attempts += samples;
        fails += res.iter().filter(|r| r.is_none()).count();
        let ok: Vec<(f64, f64, f64)> = res.into_iter().flatten().collect();
        let fp = ok.iter().map(|x| x.0).fold(0.0, f64::max);
        let pf = ok.iter().map(|x| x.1).fold(0.0, f64::max);
        disp = ok.iter().map(|x| x.2).fold(disp, f64::max);
        rungs.push(EquivalenceRung {
            eps,
            flow_in_proj: fp,
            proj_in_flow: pf,
            samples: ok.len(),
        });
    }
    let fmax = rungs.iter().map(|r| r.flow_in_proj).fold(0.0, f64::max);
    let pmax = rungs.iter().map(|r| r.proj_in_flow).fold(0.0, f64::max);
    let per: Vec<f64> = rungs.iter().map(|r| r.flow_in_proj.max(r.proj_in_flow).max(1.0)).collect();
    let spread = per.iter().copied().fold(0.0, f64::max) / per.iter().copied().fold(f64::INFINITY, f64::min);
    let c1_raw = fmax.max(pmax);
    Ok(EquivalenceReport {
        rungs,
        c1: c1_raw.max(1.0),
        c1_raw,
        direction_ratio: fmax.max(1.0).max(pmax.max(1.0)) / fmax.max(1.0).min(pmax.max(1.0)),
        ladder_spread: spread,
        displacement_per_time: disp,
        oracle_failures: fails,
        attempts,
        valid: fails * 100 <= attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{build_grid, sample_boundary, GridParams};

    fn setup() -> (DomainSpec, BoundarySample, GridFamily) {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = sample_boundary(&d, 600, 2).unwrap();
        let g = build_grid(&d, &s, &GridParams::new(0.125, 2, 2.0, 1.05).waived(), 3).unwrap();
        (d, s, GridFamily { grids: vec![g], covering: None })
    }

    #[test]
    fn membership_examples() {
        let (d, s, fam) = setup();
        let integ = FlowIntegrator::for_domain(&d);
        let g = &fam.grids[0];
        let k = g.n0;
        for q in &g.level(k).unwrap().cubes[..10] {
            let cube = CubeRef::Cube { grid: 0, level: k, index: q.index };
            let z = flow(&d, &s.points[q.center], q.side / 2.0, &integ).unwrap();
            assert!(tent_contains(&d, &s, &fam, cube, &z, TentFlavor::Flow).unwrap());
            assert!(tent_contains(&d, &s, &fam, cube, &z, TentFlavor::Proj).unwrap());
            let deep = flow(&d, &s.points[q.center], 2.0 * q.side, &integ).unwrap();
            assert!(!tent_contains(&d, &s, &fam, cube, &deep, TentFlavor::Flow).unwrap());
        }
    }

    #[test]
    fn tree_is_ancestry() {
        let (d, s, fam) = setup();
        let t = bergman_flow_tree(&d, &s, &fam.grids[0]).unwrap();
        assert!(tree_matches_ancestry(&t, &fam.grids[0]));
        for n in &t.nodes {
            assert!((d.value(&n.center) + fam.grids[0].side(n.level)).abs() < 1e-9);
        }
    }

    #[test]
    fn ball_equivalence() {
        let (d, _, _) = setup();
        let rep = tent_equivalence_scan(&d, &d.reference_point(), &[0.01, 0.02], 40, 1).unwrap();
        assert!(rep.valid);
        assert!(rep.c1 >= 1.0 && rep.c1 <= 1.2, "{rep:?}");
        assert!(rep.displacement_per_time < 1e-6);
    }

    #[test]
    fn normal_lift_depth() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let mut rng = stream_rng(1, 0);
        let w = d.sample_boundary_point(&mut rng).unwrap();
        let z = normal_lift(&d, &w, 0.03);
        assert!((d.value(&z) + 0.03).abs() < 1e-12);
        let p = nearest_project(&d, &z).unwrap();
        assert!(dist(&p, &w) < 1e-8);
    }
}
