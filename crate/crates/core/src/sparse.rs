//! Tent averages, dyadic maximal operators over the tent basis, `A_p` constants,
//! positive sparse operators, and the sparse-domination and weighted-norm experiments.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bergman::{kernel_samples, site_of, KernelModel, KernelSamples, NodeSite, QuadratureScheme};
use crate::boundary::{BoundarySample, CubeRef, GridFamily};
use crate::domain::{DomainKind, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::numeric::{linear_fit, stream_rng};
use crate::tents::normal_lift;

/// Dense ids for the tents of a family: 0 is the root, then cubes grid by grid, level by level.
#[derive(Clone, Debug)]
pub struct TentIndex {
    pub n0: usize,
    /// `offsets[g][k - n0]` is the id of cube 0 of grid `g` at level `k`.
    offsets: Vec<Vec<usize>>,
    pub count: usize,
    pub grids: usize,
}

impl TentIndex {
    pub fn new(family: &GridFamily) -> Self {
        let n0 = family.n0();
        let mut next = 1;
        let offsets = family
            .grids
            .iter()
            .map(|g| {
                g.tent_levels()
                    .map(|k| {
                        let o = next;
                        next += g.level(k).unwrap().cubes.len();
                        o
                    })
                    .collect()
            })
            .collect();
        TentIndex {
            n0,
            offsets,
            count: next,
            grids: family.grids.len(),
        }
    }

    pub fn id(&self, cube: CubeRef) -> usize {
        match cube {
            CubeRef::Root => 0,
            CubeRef::Cube { grid, level, index } => self.offsets[grid][level - self.n0] + index,
        }
    }

    pub fn cube(&self, id: usize) -> CubeRef {
        if id == 0 {
            return CubeRef::Root;
        }
        for (g, offs) in self.offsets.iter().enumerate().rev() {
            if let Some(l) = offs.iter().rposition(|&o| o <= id) {
                return CubeRef::Cube {
                    grid: g,
                    level: self.n0 + l,
                    index: id - offs[l],
                };
            }
        }
        unreachable!("tent id {id} out of range")
    }

    pub fn label(&self, id: usize) -> String {
        match self.cube(id) {
            CubeRef::Root => "root".into(),
            CubeRef::Cube { grid, level, index } => format!("g{grid}/k{level}/q{index}"),
        }
    }

    /// Tents containing a site: the root, then per grid every level with `l(Q) > depth`.
    pub fn tents_of(&self, family: &GridFamily, site: NodeSite) -> Vec<usize> {
        let mut out = Vec::new();
        self.tents_into(family, site, &mut out);
        out
    }

    fn tents_into(&self, family: &GridFamily, site: NodeSite, out: &mut Vec<usize>) {
        out.clear();
        if site.depth <= 0.0 {
            return;
        }
        out.push(0);
        let Some(foot) = site.foot else { return };
        for (g, grid) in family.grids.iter().enumerate() {
            for k in grid.tent_levels() {
                if grid.side(k) > site.depth {
                    out.push(self.offsets[g][k - self.n0] + grid.cube_of(k, foot));
                }
            }
        }
    }

    pub fn contains(&self, family: &GridFamily, id: usize, site: NodeSite) -> bool {
        if site.depth <= 0.0 {
            return false;
        }
        match self.cube(id) {
            CubeRef::Root => true,
            CubeRef::Cube { grid, level, index } => {
                let g = &family.grids[grid];
                site.depth < g.side(level) && site.foot.is_some_and(|f| g.cube_of(level, f) == index)
            }
        }
    }
}

/// The tent basis `G` on a quadrature: node-to-tent incidence and tent volumes.
pub struct TentBasis<'a> {
    pub domain: &'a DomainSpec,
    pub sample: &'a BoundarySample,
    pub family: &'a GridFamily,
    pub quad: &'a QuadratureScheme,
    pub index: TentIndex,
    starts: Vec<u32>,
    ids: Vec<u32>,
    /// Quadrature volume of each tent.
    pub volume: Vec<f64>,
    pub node_count: Vec<u32>,
}

impl<'a> TentBasis<'a> {
    pub fn new(domain: &'a DomainSpec, sample: &'a BoundarySample, family: &'a GridFamily, quad: &'a QuadratureScheme) -> Self {
        let index = TentIndex::new(family);
        let mut starts = Vec::with_capacity(quad.len() + 1);
        let mut ids = Vec::new();
        let mut buf = Vec::new();
        starts.push(0u32);
        for k in 0..quad.len() {
            index.tents_into(family, quad.site(k), &mut buf);
            ids.extend(buf.iter().map(|&t| t as u32));
            starts.push(ids.len() as u32);
        }
        let mut basis = TentBasis {
            domain,
            sample,
            family,
            quad,
            volume: Vec::new(),
            node_count: vec![0; index.count],
            index,
            starts,
            ids,
        };
        basis.volume = basis.sums(|_| 1.0);
        for &t in &basis.ids {
            basis.node_count[t as usize] += 1;
        }
        basis
    }

    pub fn len(&self) -> usize {
        self.index.count
    }

    pub fn is_empty(&self) -> bool {
        self.index.count == 0
    }

    pub fn node_tents(&self, k: usize) -> &[u32] {
        &self.ids[self.starts[k] as usize..self.starts[k + 1] as usize]
    }

    /// `sum_{nodes in T} w g` for every tent.
    pub fn sums<G: Fn(usize) -> f64>(&self, g: G) -> Vec<f64> {
        let mut out = vec![0.0; self.index.count];
        for k in 0..self.quad.len() {
            let v = self.quad.weights[k] * g(k);
            if v != 0.0 {
                for &t in self.node_tents(k) {
                    out[t as usize] += v;
                }
            }
        }
        out
    }

    /// `<|f|>_T` (or `<|f|>^w_T` with node weights `w`) for every tent; NaN for empty tents.
    pub fn averages(&self, f: &[f64], weight: Option<&[f64]>) -> Vec<f64> {
        let (num, den) = match weight {
            None => (self.sums(|k| f[k].abs()), self.volume.clone()),
            Some(w) => (self.sums(|k| f[k].abs() * w[k]), self.sums(|k| w[k])),
        };
        num.iter()
            .zip(&den)
            .map(|(a, b)| if *b > 0.0 { a / b } else { f64::NAN })
            .collect()
    }

    pub fn average(&self, f: &[f64], tent: usize, weight: Option<&[f64]>) -> Result<f64> {
        if self.node_count[tent] == 0 {
            return Err(Error::EmptyRegion(format!("no quadrature node in tent {}", self.index.label(tent))));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..self.quad.len() {
            if self.node_tents(k).contains(&(tent as u32)) {
                let w = self.quad.weights[k] * weight.map_or(1.0, |w| w[k]);
                num += f[k].abs() * w;
                den += w;
            }
        }
        Ok(num / den)
    }

    pub fn site(&self, z: &[f64]) -> Result<NodeSite> {
        site_of(self.domain, self.sample, self.quad.band_top, z)
    }

    pub fn tents_at(&self, z: &[f64]) -> Result<(NodeSite, Vec<usize>)> {
        let s = self.site(z)?;
        if s.depth <= 0.0 {
            return Err(Error::InvalidInput("evaluation point must lie in the domain".into()));
        }
        Ok((s, self.index.tents_of(self.family, s)))
    }

    /// `M f = max` of tent averages over the containing tents (non-empty ones).
    pub fn maximal_from(&self, averages: &[f64], tents: &[usize]) -> f64 {
        tents.iter().map(|&t| averages[t]).filter(|v| v.is_finite()).fold(0.0, f64::max)
    }

    pub fn maximal(&self, f: &[f64], z: &[f64], weight: Option<&[f64]>) -> Result<f64> {
        let (_, tents) = self.tents_at(z)?;
        Ok(self.maximal_from(&self.averages(f, weight), &tents))
    }

    /// `M f` at every quadrature node.
    pub fn maximal_on_nodes(&self, averages: &[f64]) -> Vec<f64> {
        (0..self.quad.len())
            .map(|k| self.node_tents(k).iter().map(|&t| averages[t as usize]).filter(|v| v.is_finite()).fold(0.0, f64::max))
            .collect()
    }

    /// `sum_i sum_{Q in D^i} <f>_{T(Q)} 1_{T(Q)}(z)`; the root belongs to every `D^i`.
    pub fn sparse_from(&self, averages: &[f64], tents: &[usize]) -> SparseEvaluation {
        let mut value = 0.0;
        let mut contributors = Vec::with_capacity(tents.len());
        for &t in tents {
            let a = averages[t];
            if !a.is_finite() {
                continue;
            }
            let mult = if t == 0 { self.index.grids as f64 } else { 1.0 };
            value += mult * a;
            contributors.push((self.index.label(t), mult * a));
        }
        SparseEvaluation { value, contributors }
    }

    pub fn sparse_apply(&self, f: &[f64], z: &[f64]) -> Result<SparseEvaluation> {
        let (_, tents) = self.tents_at(z)?;
        Ok(self.sparse_from(&self.averages(f, None), &tents))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SparseEvaluation {
    pub value: f64,
    pub contributors: Vec<(String, f64)>,
}

/// Test functions defined through the site (depth, boundary cell) or the point itself.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    TentIndicator { tent: usize },
    /// Hat in `log2(depth)` centred at `center` with half-width `width` (octaves).
    DepthHat { center: f64, width: f64 },
    /// Independent uniform masses per (boundary cell, depth octave); `interior` below the band.
    CellMasses { seed: u64, interior: f64 },
    /// `z^alpha / ||z^alpha||_{L^p(w)}`-style monomial (normalization applied by callers).
    Monomial { alpha: Vec<u32> },
    /// `depth^exponent 1_T` (dual-weight-shaped when `exponent = alpha (1 - p')`).
    DualShaped { tent: usize, exponent: f64 },
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl TestFunction {
    /// Depends on the point only through its depth.
    pub fn is_circular(&self) -> bool {
        matches!(
            self,
            TestFunction::Constant { .. } | TestFunction::DepthHat { .. } | TestFunction::DualShaped { tent: 0, .. }
        )
    }

    pub fn label(&self, index: &TentIndex) -> String {
        match self {
            TestFunction::Constant { value } => format!("const:{value}"),
            TestFunction::TentIndicator { tent } => format!("tent:{}", index.label(*tent)),
            TestFunction::DepthHat { center, width } => format!("hat:{center:.3e}/{width}"),
            TestFunction::CellMasses { seed, .. } => format!("masses:{seed}"),
            TestFunction::Monomial { alpha } => format!("monomial:{alpha:?}"),
            TestFunction::DualShaped { tent, exponent } => format!("dual:{}^{exponent:.3}", index.label(*tent)),
        }
    }

    pub fn value(&self, index: &TentIndex, family: &GridFamily, point: &[f64], site: NodeSite) -> Complex64 {
        if site.depth <= 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let re = |v: f64| Complex64::new(v, 0.0);
        match self {
            TestFunction::Constant { value } => re(*value),
            TestFunction::TentIndicator { tent } => re(index.contains(family, *tent, site) as u8 as f64),
            TestFunction::DepthHat { center, width } => re((1.0 - (site.depth / center).log2().abs() / width).max(0.0)),
            TestFunction::CellMasses { seed, interior } => match site.foot {
                None => re(*interior),
                Some(f) => {
                    let octave = (-site.depth.log2()).floor().max(0.0) as u64;
                    let h = splitmix(seed ^ splitmix((f as u64) << 8 | octave.min(255)));
                    re((h >> 11) as f64 / (1u64 << 53) as f64)
                }
            },
            TestFunction::Monomial { alpha } => alpha.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (j, &a)| {
                acc * Complex64::new(point[2 * j], point[2 * j + 1]).powu(a)
            }),
            TestFunction::DualShaped { tent, exponent } => {
                if index.contains(family, *tent, site) {
                    re(site.depth.powf(*exponent))
                } else {
                    re(0.0)
                }
            }
        }
    }

    pub fn on_nodes(&self, basis: &TentBasis) -> Vec<Complex64> {
        (0..basis.quad.len())
            .map(|k| self.value(&basis.index, basis.family, &basis.quad.nodes[k], basis.quad.site(k)))
            .collect()
    }

    pub fn on_samples(&self, basis: &TentBasis, ks: &KernelSamples) -> (Vec<Complex64>, Complex64) {
        let v = ks
            .points
            .iter()
            .zip(&ks.sites)
            .map(|(p, s)| self.value(&basis.index, basis.family, p, *s))
            .collect();
        (v, self.value(&basis.index, basis.family, &ks.z, ks.site_z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightModel {
    Constant,
    /// `w = |r|^alpha`.
    Power { alpha: f64 },
}

impl WeightModel {
    pub fn value(&self, depth: f64) -> f64 {
        match self {
            WeightModel::Constant => 1.0,
            WeightModel::Power { alpha } => depth.powf(*alpha),
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            WeightModel::Constant => 0.0,
            WeightModel::Power { alpha } => *alpha,
        }
    }

    /// `int_0 s^alpha ds` and `int_0 s^{alpha (1 - p')} ds` both converge.
    pub fn ap_finite(&self, p: f64) -> bool {
        let a = self.alpha();
        a > -1.0 && a < p - 1.0
    }

    pub fn on_nodes(&self, quad: &QuadratureScheme) -> Vec<f64> {
        quad.depth.iter().map(|&d| self.value(d)).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ApRow {
    pub tent: String,
    pub w_avg: f64,
    pub dual_avg: f64,
    pub product: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ApReport {
    pub p: f64,
    pub weight: WeightModel,
    /// `[w]_{A_{p,G}}`; infinite when the dual average diverges.
    pub constant: f64,
    pub argmax: String,
    pub rows: Vec<ApRow>,
    /// `[sigma]_{A_{p'}}^{1/(p'-1)}` from the same tables.
    pub dual_constant: f64,
    pub duality_error: f64,
    pub infinite: bool,
    pub skipped_tents: usize,
}

pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// `sup_T <w>_T <w^{1-p'}>_T^{p-1}` over the tents of the basis.
pub fn ap_constant(basis: &TentBasis, weight: WeightModel, p: f64) -> Result<ApReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("p must lie in (1, inf), got {p}")));
    }
    let pp = conjugate(p);
    let w = weight.on_nodes(basis.quad);
    let sigma: Vec<f64> = w.iter().map(|x| x.powf(1.0 - pp)).collect();
    let aw = basis.averages(&w, None);
    let asig = basis.averages(&sigma, None);
    let mut rows = Vec::with_capacity(basis.len());
    let (mut best, mut arg, mut dual, mut err, mut skipped) = (0.0f64, 0usize, 0.0f64, 0.0f64, 0usize);
    for t in 0..basis.len() {
        if !(aw[t].is_finite() && asig[t].is_finite()) {
            skipped += 1;
            continue;
        }
        let prod = aw[t] * asig[t].powf(p - 1.0);
        // [sigma]_{A_p'} uses sigma^{1-p} = w
        let sprod = asig[t] * aw[t].powf(pp - 1.0);
        let dual_t = sprod.powf(1.0 / (pp - 1.0));
        err = err.max((dual_t - prod).abs() / prod);
        if prod > best {
            best = prod;
            arg = t;
        }
        dual = dual.max(dual_t);
        rows.push(ApRow {
            tent: basis.index.label(t),
            w_avg: aw[t],
            dual_avg: asig[t],
            product: prod,
        });
    }
    let infinite = !weight.ap_finite(p);
    Ok(ApReport {
        p,
        weight,
        constant: if infinite { f64::INFINITY } else { best },
        argmax: basis.index.label(arg),
        rows,
        dual_constant: if infinite { f64::INFINITY } else { dual },
        duality_error: err,
        infinite,
        skipped_tents: skipped,
    })
}

/// `P f(z)` for a list of test functions from one set of kernel samples.
pub fn project_many(basis: &TentBasis, ks: &KernelSamples, fns: &[TestFunction]) -> Vec<(Complex64, f64)> {
    fns.iter()
        .map(|f| {
            let (v, fz) = f.on_samples(basis, ks);
            ks.project(|m| v[m], fz)
        })
        .collect()
}

/// For circular `f` (depth-only) on a balanced domain, `P f = int f / Vol` identically:
/// `K(z, .)` is antiholomorphic, so its circle averages equal `K(z, 0) = 1 / Vol`.
pub fn circular_projection(basis: &TentBasis, f: &TestFunction) -> Option<Complex64> {
    if !f.is_circular() || basis.domain.kind == DomainKind::Halfspace {
        return None;
    }
    let v = f.on_nodes(basis);
    let re: Vec<f64> = v.iter().map(|c| c.re).collect();
    let im: Vec<f64> = v.iter().map(|c| c.im).collect();
    let total = basis.quad.total;
    Some(Complex64::new(basis.quad.integrate(&re).0, basis.quad.integrate(&im).0) / total)
}

#[derive(Clone, Debug, Serialize)]
pub struct SparseConfig {
    pub rungs: Vec<f64>,
    pub points_per_rung: usize,
    pub is_samples: usize,
    pub random_masses: usize,
    pub hats: usize,
    pub random_tents: usize,
}

impl SparseConfig {
    pub fn for_family(family: &GridFamily) -> Self {
        SparseConfig {
            // same ladder as the kernel-tent scan
            rungs: (1..=4).map(|j| family.top_side() * 0.5f64.powi(j)).collect(),
            points_per_rung: 25,
            is_samples: 8000,
            random_masses: 5,
            hats: 3,
            random_tents: 2,
        }
    }
}

/// Dictionary entries are indexed by their role relative to the evaluation point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Constant,
    DepthHat,
    CellMasses,
    /// Smallest tent of each grid containing `z`.
    OwnTight,
    /// Coarser tents of grid 0 containing `z`.
    OwnCoarse,
    RandomTent,
}

pub const ROLES: [Role; 6] = [Role::Constant, Role::DepthHat, Role::CellMasses, Role::OwnTight, Role::OwnCoarse, Role::RandomTent];

#[derive(Clone, Debug, Serialize)]
pub struct SparseRecord {
    pub rung: usize,
    pub depth: f64,
    pub point: usize,
    pub role: Role,
    pub function: String,
    pub pf_abs: f64,
    pub pf_stderr: f64,
    pub sparse: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoleSummary {
    pub rung: usize,
    pub role: Role,
    pub records: usize,
    /// Debiased mean square exceeds twice its standard error; only resolved roles enter the rung statistic.
    pub resolved: bool,
    /// `sqrt(mean((|Pf|^2 - stderr^2) / (A f)^2))`, noise-debiased.
    pub rms_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SparseReport {
    pub config: SparseConfig,
    pub seed: u64,
    pub records: Vec<SparseRecord>,
    pub summaries: Vec<RoleSummary>,
    /// Per rung, the largest role RMS ratio.
    pub rung_stat: Vec<f64>,
    /// Empirical `C_s`: the largest rung statistic.
    pub c_s: f64,
    pub depth_ratio: f64,
    /// Per rung RMS ratio of the tightest own tents alone.
    pub tight_rung: Vec<f64>,
    pub tight_depth_ratio: f64,
    pub max_raw_ratio: f64,
    pub violations: Vec<String>,
    pub skipped: Vec<(usize, String)>,
}

/// Lemma 4.1 check: `|P f(z)| / A f(z)` over a dictionary of nonnegative test functions
/// and evaluation points on a depth ladder.
pub fn sparse_domination_check(model: &KernelModel, basis: &TentBasis, cfg: &SparseConfig, seed: u64) -> Result<SparseReport> {
    let domain = basis.domain;
    let mut rng = stream_rng(seed, 91);
    let mut global: Vec<(Role, TestFunction)> = vec![(Role::Constant, TestFunction::Constant { value: 1.0 })];
    for j in 0..cfg.random_masses {
        global.push((
            Role::CellMasses,
            TestFunction::CellMasses {
                seed: seed.wrapping_mul(1000) + j as u64,
                interior: rng.random(),
            },
        ));
    }
    for j in 0..cfg.hats {
        let c = cfg.rungs[j % cfg.rungs.len()] * 2f64.powf(rng.random_range(-1.0..1.0));
        global.push((Role::DepthHat, TestFunction::DepthHat { center: c, width: 1.5 }));
    }
    let global_avgs: Vec<Vec<f64>> = global.iter().map(|(_, f)| node_averages(basis, f)).collect();
    let global_exact: Vec<Option<Complex64>> = global.iter().map(|(_, f)| circular_projection(basis, f)).collect();
    let mut points: Vec<(usize, usize, Point)> = Vec::new();
    for (r, &d) in cfg.rungs.iter().enumerate() {
        for i in 0..cfg.points_per_rung {
            let zeta = domain.sample_boundary_point(&mut rng)?;
            points.push((r, i, normal_lift(domain, &zeta, d)));
        }
    }
    let outcomes: Vec<std::result::Result<Vec<SparseRecord>, (usize, String)>> = points
        .par_iter()
        .enumerate()
        .map(|(pid, (r, i, z))| {
            let run = || -> Result<Vec<SparseRecord>> {
                let (site, tents) = basis.tents_at(z)?;
                let mut local: Vec<(Role, TestFunction)> = Vec::new();
                let mut tight: Vec<Option<usize>> = vec![None; basis.index.grids];
                for &t in tents.iter().skip(1) {
                    if let CubeRef::Cube { grid, .. } = basis.index.cube(t) {
                        if let Some(prev) = tight[grid] {
                            if grid == 0 {
                                local.push((Role::OwnCoarse, TestFunction::TentIndicator { tent: prev }));
                            }
                        }
                        tight[grid] = Some(t);
                    }
                }
                local.extend(tight.iter().flatten().map(|&t| (Role::OwnTight, TestFunction::TentIndicator { tent: t })));
                let mut prng = stream_rng(seed, 20_000 + pid as u64);
                for _ in 0..cfg.random_tents {
                    let t = prng.random_range(1..basis.len());
                    local.push((Role::RandomTent, TestFunction::TentIndicator { tent: t }));
                }
                let ks = kernel_samples(model, domain, basis.sample, basis.quad.band_top, z, cfg.is_samples, seed ^ ((pid as u64) << 20))?;
                let mut out = Vec::new();
                let all = global
                    .iter()
                    .zip(global_avgs.iter().zip(&global_exact))
                    .map(|(f, (a, e))| (f, Some(a), *e))
                    .chain(local.iter().map(|f| (f, None, None)));
                for ((role, f), avgs, exact) in all {
                    let owned;
                    let avgs = match avgs {
                        Some(a) => a,
                        None => {
                            owned = node_averages(basis, f);
                            &owned
                        }
                    };
                    let sp = basis.sparse_from(avgs, &tents).value;
                    let (pf, se) = match exact {
                        Some(v) => (v, 0.0),
                        None => {
                            let (v, fz) = f.on_samples(basis, &ks);
                            ks.project(|m| v[m], fz)
                        }
                    };
                    out.push(SparseRecord {
                        rung: *r,
                        depth: site.depth,
                        point: *i,
                        role: *role,
                        function: f.label(&basis.index),
                        pf_abs: pf.norm(),
                        pf_stderr: se,
                        sparse: sp,
                        ratio: if sp > 0.0 { pf.norm() / sp } else { f64::INFINITY },
                    });
                }
                Ok(out)
            };
            run().map_err(|e| (pid, e.to_string()))
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.extend(r),
            Err(s) => skipped.push(s),
        }
    }
    let violations: Vec<String> = records
        .iter()
        .filter(|r| r.sparse <= 0.0 && r.pf_abs > 3.0 * r.pf_stderr)
        .map(|r| format!("rung {} point {} {}: sparse 0, |Pf| = {:.3e}", r.rung, r.point, r.function, r.pf_abs))
        .collect();
    let mut summaries = Vec::new();
    for r in 0..cfg.rungs.len() {
        for role in ROLES {
            let sel: Vec<&SparseRecord> = records.iter().filter(|x| x.rung == r && x.role == role && x.sparse > 0.0).collect();
            if sel.is_empty() {
                continue;
            }
            let terms: Vec<f64> = sel.iter().map(|x| (x.pf_abs.powi(2) - x.pf_stderr.powi(2)) / x.sparse.powi(2)).collect();
            let n = terms.len() as f64;
            let ms = terms.iter().sum::<f64>() / n;
            let var = terms.iter().map(|t| (t - ms).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            // the debiased mean must stand clear of its own standard error
            let resolved = ms > 0.0 && (var == 0.0 || ms > 2.0 * (var / n).sqrt());
            summaries.push(RoleSummary {
                rung: r,
                role,
                records: sel.len(),
                resolved,
                rms_ratio: ms.max(0.0).sqrt(),
                max_ratio: sel.iter().map(|x| x.ratio).fold(0.0, f64::max),
            });
        }
    }
    let per_rung = |only: Option<Role>| -> Vec<f64> {
        (0..cfg.rungs.len())
            .map(|r| {
                summaries
                    .iter()
                    .filter(|s| s.rung == r && s.resolved && only.is_none_or(|o| o == s.role))
                    .map(|s| s.rms_ratio)
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let spread = |v: &[f64]| v.iter().copied().fold(0.0, f64::max) / v.iter().copied().fold(f64::INFINITY, f64::min);
    let rung_stat = per_rung(None);
    let tight_rung = per_rung(Some(Role::OwnTight));
    Ok(SparseReport {
        config: cfg.clone(),
        seed,
        c_s: rung_stat.iter().copied().fold(0.0, f64::max),
        depth_ratio: spread(&rung_stat),
        tight_depth_ratio: spread(&tight_rung),
        max_raw_ratio: records.iter().map(|x| x.ratio).filter(|x| x.is_finite()).fold(0.0, f64::max),
        rung_stat,
        tight_rung,
        summaries,
        records,
        violations,
        skipped,
    })
}

/// Tent averages of `|f|` from node values.
pub fn node_averages(basis: &TentBasis, f: &TestFunction) -> Vec<f64> {
    let v: Vec<f64> = f.on_nodes(basis).iter().map(|c| c.norm()).collect();
    basis.averages(&v, None)
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightedConfig {
    pub p: f64,
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub eval_nodes: usize,
    pub is_samples: usize,
    pub tents: usize,
}

impl WeightedConfig {
    /// Default ladders: `{0, +-0.2, +-0.4, +-0.6}` at `p = 2`, otherwise
    /// `alpha = (p - 1) {0, 0.25, 0.5, 0.75, 0.9}` towards the end where `[w]_{A_p}` blows up.
    pub fn new(p: f64) -> Self {
        let alphas = if (p - 2.0).abs() < 1e-12 {
            vec![-0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6]
        } else {
            [0.0, 0.25, 0.5, 0.75, 0.9].iter().map(|f| f * (p - 1.0)).collect()
        };
        WeightedConfig {
            p,
            alphas,
            trials: 50,
            eval_nodes: 400,
            is_samples: 2000,
            tents: 12,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightedRow {
    pub alpha: f64,
    pub ap_constant: f64,
    pub norm_lower_bound: f64,
    pub contributing_trial: String,
    pub maximal_ratio: f64,
    pub weighted_maximal_ratio: f64,
    pub duality_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightedReport {
    pub config: WeightedConfig,
    pub seed: u64,
    pub rows: Vec<WeightedRow>,
    pub slope: f64,
    pub intercept: f64,
    pub theory_exponent: f64,
    pub flagged: Vec<String>,
}

/// Stratified subsample of quadrature nodes: interior nodes and each band depth node
/// form strata; returns (node, weight) with `sum weight g ≈ int g`.
pub fn eval_design(quad: &QuadratureScheme, count: usize, seed: u64) -> Vec<(usize, f64)> {
    let mut strata: Vec<Vec<usize>> = vec![(0..quad.interior).collect()];
    let per = quad.band_per_point;
    if per > 0 {
        let points = (quad.len() - quad.interior) / per;
        for j in 0..per {
            strata.push((0..points).map(|i| quad.interior + i * per + j).collect());
        }
    }
    strata.retain(|s| !s.is_empty());
    let mut rng = stream_rng(seed, 93);
    let each = (count / strata.len()).max(1);
    let mut out = Vec::new();
    for s in strata {
        let mut s = s;
        s.shuffle(&mut rng);
        let take = each.min(s.len());
        let stratum_n = s.len() as f64;
        for &k in &s[..take] {
            out.push((k, quad.weights[k] * stratum_n / take as f64));
        }
    }
    out
}

/// Thm 4.3 experiment: `[w_alpha]_{A_p}` against a lower bound for `||P||_{L^p(w_alpha)}`
/// from a trial dictionary, with the log-log slope.
pub fn weighted_slope_experiment(model: &KernelModel, basis: &TentBasis, cfg: &WeightedConfig, seed: u64) -> Result<WeightedReport> {
    let p = cfg.p;
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("p must exceed 1, got {p}")));
    }
    if let Some(a) = cfg.alphas.iter().find(|&&a| !WeightModel::Power { alpha: a }.ap_finite(p)) {
        return Err(Error::InvalidInput(format!("alpha = {a} has infinite A_{p} constant; need -1 < alpha < {}", p - 1.0)));
    }
    let pp = conjugate(p);
    let mut rng = stream_rng(seed, 95);
    let tents = pick_tents(basis, cfg.tents, &mut rng);

    // design 0 is global, design 1 + i lives inside tents[i]
    let mut designs = vec![eval_design(basis.quad, cfg.eval_nodes, seed)];
    let per_tent = (cfg.eval_nodes / cfg.tents.max(1)).max(8);
    for &t in &tents {
        let mut inside: Vec<usize> = (0..basis.quad.len()).filter(|&k| basis.node_tents(k).contains(&(t as u32))).collect();
        inside.shuffle(&mut rng);
        let take = per_tent.min(inside.len());
        let scale = inside.len() as f64 / take as f64;
        designs.push(inside[..take].iter().map(|&k| (k, basis.quad.weights[k] * scale)).collect());
    }
    let mut trials: Vec<Trial> = vec![Trial::global(TestFunction::Constant { value: 1.0 })];
    if basis.domain.n == 2 {
        for alpha in [[1, 0], [0, 1], [2, 0], [1, 1], [3, 0]] {
            trials.push(Trial::global(TestFunction::Monomial { alpha: alpha.to_vec() }));
        }
    }
    for j in 0..cfg.trials {
        trials.push(Trial::global(TestFunction::CellMasses {
            seed: seed.wrapping_mul(7919) + j as u64,
            interior: rng.random(),
        }));
    }
    let global_trials = trials.len();
    for &a in &cfg.alphas {
        trials.push(Trial {
            f: TestFunction::DualShaped {
                tent: 0,
                exponent: a * (1.0 - pp),
            },
            alpha: Some(a),
            design: 0,
        });
    }
    for (i, &t) in tents.iter().enumerate() {
        trials.push(Trial {
            f: TestFunction::TentIndicator { tent: t },
            alpha: None,
            design: 1 + i,
        });
        for &a in &cfg.alphas {
            trials.push(Trial {
                f: TestFunction::DualShaped {
                    tent: t,
                    exponent: a * (1.0 - pp),
                },
                alpha: Some(a),
                design: 1 + i,
            });
        }
    }
    let exact: Vec<Option<Complex64>> = trials.iter().map(|t| circular_projection(basis, &t.f)).collect();
    // lower confidence values (|P f| - 2 stderr)_+ on each trial's design
    let mut lower: Vec<Vec<f64>> = vec![Vec::new(); trials.len()];
    for (d, design) in designs.iter().enumerate() {
        let members: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].design == d && exact[i].is_none()).collect();
        if members.is_empty() {
            continue;
        }
        let fns: Vec<TestFunction> = members.iter().map(|&i| trials[i].f.clone()).collect();
        let rows: Vec<Vec<f64>> = design
            .par_iter()
            .enumerate()
            .map(|(e, &(k, _))| {
                let z = &basis.quad.nodes[k];
                let s = seed ^ ((d as u64) << 40) ^ ((e as u64) << 20);
                let ks = kernel_samples(model, basis.domain, basis.sample, basis.quad.band_top, z, cfg.is_samples, s)?;
                Ok(project_many(basis, &ks, &fns).into_iter().map(|(v, se)| (v.norm() - 2.0 * se).max(0.0)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        for (j, &i) in members.iter().enumerate() {
            lower[i] = rows.iter().map(|r| r[j]).collect();
        }
    }
    let f_nodes: Vec<Vec<Complex64>> = trials.iter().map(|t| t.f.on_nodes(basis)).collect();
    let mut rows = Vec::new();
    let mut flagged = Vec::new();
    for &a in &cfg.alphas {
        let weight = WeightModel::Power { alpha: a };
        let ap = ap_constant(basis, weight, p)?;
        let w = weight.on_nodes(basis.quad);
        let mut best = (0.0f64, String::new());
        for (i, t) in trials.iter().enumerate() {
            if t.alpha.is_some_and(|b| (b - a).abs() > 1e-12) {
                continue;
            }
            let (fn_p, _) = basis.quad.integrate(&f_nodes[i].iter().zip(&w).map(|(v, ww)| v.norm().powf(p) * ww).collect::<Vec<_>>());
            if !(fn_p > 0.0) {
                continue;
            }
            let pn_p: f64 = match exact[i] {
                Some(c) => c.norm().powf(p) * basis.quad.integrate(&w).0,
                None => designs[t.design].iter().zip(&lower[i]).map(|(&(k, we), l)| we * l.powf(p) * w[k]).sum(),
            };
            let ratio = (pn_p / fn_p).powf(1.0 / p);
            if !ratio.is_finite() {
                flagged.push(format!("alpha {a}: trial {} gave a non-finite ratio", t.f.label(&basis.index)));
                continue;
            }
            if ratio > best.0 {
                best = (ratio, t.f.label(&basis.index));
            }
        }
        let (mr, mwr) = maximal_ratios(basis, &f_nodes[..global_trials], &w, p);
        rows.push(WeightedRow {
            alpha: a,
            ap_constant: ap.constant,
            norm_lower_bound: best.0,
            contributing_trial: best.1,
            maximal_ratio: mr,
            weighted_maximal_ratio: mwr,
            duality_error: ap.duality_error,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.ap_constant.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.norm_lower_bound.ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok(WeightedReport {
        config: cfg.clone(),
        seed,
        rows,
        slope,
        intercept,
        theory_exponent: 1f64.max(1.0 / (p - 1.0)),
        flagged,
    })
}

struct Trial {
    f: TestFunction,
    alpha: Option<f64>,
    design: usize,
}

impl Trial {
    fn global(f: TestFunction) -> Self {
        Trial { f, alpha: None, design: 0 }
    }
}

/// Non-empty cube tents spread over the levels of grid 0.
fn pick_tents<R: Rng>(basis: &TentBasis, count: usize, rng: &mut R) -> Vec<usize> {
    let g = &basis.family.grids[0];
    let levels: Vec<usize> = g.tent_levels().collect();
    let mut out = Vec::new();
    for i in 0..count {
        let k = levels[i % levels.len()];
        let cubes = g.level(k).unwrap().cubes.len();
        for _ in 0..64 {
            let id = basis.index.id(CubeRef::Cube { grid: 0, level: k, index: rng.random_range(0..cubes) });
            if basis.node_count[id] >= 8 && !out.contains(&id) {
                out.push(id);
                break;
            }
        }
    }
    out
}

/// Largest `||M f||_{p,w} / ||f||_{p,w}` and `||M^w f||_{p,w} / ||f||_{p,w}` over node-valued trials.
pub fn maximal_ratios(basis: &TentBasis, fns: &[Vec<Complex64>], w: &[f64], p: f64) -> (f64, f64) {
    let mut best = (0.0f64, 0.0f64);
    for f in fns {
        let a: Vec<f64> = f.iter().map(|c| c.norm()).collect();
        let (den, _) = basis.quad.integrate(&a.iter().zip(w).map(|(v, ww)| v.powf(p) * ww).collect::<Vec<_>>());
        if !(den > 0.0) {
            continue;
        }
        for (slot, weight) in [(0, None), (1, Some(w))] {
            let m = basis.maximal_on_nodes(&basis.averages(&a, weight));
            let (num, _) = basis.quad.integrate(&m.iter().zip(w).map(|(v, ww)| v.powf(p) * ww).collect::<Vec<_>>());
            let r = (num / den).powf(1.0 / p);
            if slot == 0 {
                best.0 = best.0.max(r);
            } else {
                best.1 = best.1.max(r);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bergman::hybrid_quadrature;
    use crate::boundary::{build_adjacent_family, sample_boundary, with_voronoi_weights, GridParams};
    use crate::geometry::FlowTable;

    struct Fixture {
        d: DomainSpec,
        s: BoundarySample,
        fam: GridFamily,
        q: QuadratureScheme,
    }

    fn fixture() -> Fixture {
        let d = DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap();
        let s = with_voronoi_weights(&d, &sample_boundary(&d, 600, 3).unwrap(), 10, 4).unwrap();
        let p = GridParams::new(0.125, 2, 2.0, 1.06).waived();
        let fam = build_adjacent_family(&d, &s, &p, &[0, 1]).unwrap();
        let g = &fam.grids[0];
        let sides: Vec<f64> = (g.n0..=g.finest() + 1).map(|k| g.side(k)).collect();
        let table = FlowTable::build(&d, &s, &sides, 4, 2).unwrap();
        let q = hybrid_quadrature(&d, &s, &table, &s, 20_000, 1).unwrap();
        Fixture { d, s, fam, q }
    }

    #[test]
    fn index_roundtrip() {
        let f = fixture();
        let idx = TentIndex::new(&f.fam);
        for id in [0, 1, idx.count / 2, idx.count - 1] {
            assert_eq!(idx.id(idx.cube(id)), id);
        }
    }

    #[test]
    fn ap_constants() {
        let f = fixture();
        let b = TentBasis::new(&f.d, &f.s, &f.fam, &f.q);
        for p in [4.0 / 3.0, 2.0, 4.0] {
            let r = ap_constant(&b, WeightModel::Constant, p).unwrap();
            assert_eq!(r.constant, 1.0);
        }
        let r = ap_constant(&b, WeightModel::Power { alpha: 0.3 }, 2.0).unwrap();
        assert!(r.duality_error < 1e-10 && r.constant > 1.0 && r.constant.is_finite());
        assert!(ap_constant(&b, WeightModel::Power { alpha: 1.5 }, 2.0).unwrap().infinite);
        assert!(ap_constant(&b, WeightModel::Power { alpha: -1.0 }, 4.0).unwrap().infinite);
    }

    #[test]
    fn sparse_operator_positive_and_monotone() {
        let fx = fixture();
        let b = TentBasis::new(&fx.d, &fx.s, &fx.fam, &fx.q);
        let z = normal_lift(&fx.d, &fx.s.points[5], 0.01);
        let one = vec![1.0; fx.q.len()];
        let e = b.sparse_apply(&one, &z).unwrap();
        let (_, tents) = b.tents_at(&z).unwrap();
        // root once per grid, every other containing tent once
        assert!((e.value - (tents.len() - 1 + b.index.grids) as f64).abs() < 1e-9);
        let f: Vec<f64> = (0..fx.q.len()).map(|k| (k % 7) as f64 / 7.0).collect();
        let a = b.sparse_apply(&f, &z).unwrap().value;
        assert!(a >= 0.0 && a <= e.value);
        assert!((b.maximal(&one, &z, None).unwrap() - 1.0).abs() < 1e-12);
        assert!(b.maximal(&f, &z, None).unwrap() <= 1.0);
    }

    #[test]
    fn circular_functions_project_exactly() {
        let fx = fixture();
        let b = TentBasis::new(&fx.d, &fx.s, &fx.fam, &fx.q);
        let k = KernelModel::ball_closed_form(&fx.d).unwrap();
        let hat = TestFunction::DepthHat { center: 0.05, width: 2.0 };
        let exact = circular_projection(&b, &hat).unwrap();
        let z = normal_lift(&fx.d, &fx.s.points[9], 0.05);
        let ks = kernel_samples(&k, &fx.d, &fx.s, fx.q.band_top, &z, 8000, 4).unwrap();
        let (v, se) = project_many(&b, &ks, &[hat])[0];
        assert!((v - exact).norm() < 4.0 * se + 0.02 * exact.norm(), "{v} vs {exact} (se {se})");
    }

    #[test]
    fn power_weight_range() {
        assert!(WeightModel::Power { alpha: 0.3 }.ap_finite(4.0 / 3.0));
        assert!(!WeightModel::Power { alpha: 0.34 }.ap_finite(4.0 / 3.0));
        assert!(WeightModel::Power { alpha: 2.9 }.ap_finite(4.0));
        assert!(!WeightModel::Power { alpha: -1.0 }.ap_finite(2.0));
    }
}
