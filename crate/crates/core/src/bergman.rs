//! Bergman kernel on model domains, quadrature for the projection
//! `P f(z) = int K(z, xi) f(xi) dV(xi)`, and the kernel-tent bound scan.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::boundary::{ball_members, BoundarySample, CubeRef, GridFamily};
use crate::domain::{DomainKind, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::extremal::{extremal_frame, frame_is_scale_free, polydisc_scale, polydisc_scale_ladder};
use crate::extremal::rho_value;
use crate::flow::{flow_project, nearest_project};
use crate::geometry::{coarea_volume, FlowTable, VolumeEstimate, VolumeMethod};
use crate::numeric::{cdot, norm, radical_inverse, stream_rng, PRIMES};
use crate::tents::{cube_side, normal_lift, tent_contains, TentFlavor};

/// `ln ||z^alpha||^2` on `sum |z_j|^{2 m_j} < 1`:
/// `pi^n prod(1/m_j) prod Gamma((alpha_j+1)/m_j) / Gamma(1 + sum (alpha_j+1)/m_j)`.
pub fn ln_monomial_moment(exponents: &[u32], alpha: &[u32]) -> f64 {
    let n = exponents.len() as f64;
    let mut s = n * std::f64::consts::PI.ln();
    let mut total = 0.0;
    for (&m, &a) in exponents.iter().zip(alpha) {
        let aj = (a as f64 + 1.0) / m as f64;
        s += ln_gamma(aj) - (m as f64).ln();
        total += aj;
    }
    s - ln_gamma(1.0 + total)
}

fn bounded_exponents(domain: &DomainSpec) -> Result<&[u32]> {
    if !domain.is_bounded() {
        return Err(Error::InvalidInput("the Bergman kernel needs a bounded domain".into()));
    }
    Ok(&domain.exponents)
}

pub fn monomial_moment(domain: &DomainSpec, alpha: &[u32]) -> Result<f64> {
    let e = bounded_exponents(domain)?;
    if alpha.len() != e.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            got: alpha.len(),
        });
    }
    Ok(ln_monomial_moment(e, alpha).exp())
}

/// `Vol(Omega)`.
pub fn domain_volume(domain: &DomainSpec) -> Result<f64> {
    monomial_moment(domain, &vec![0; domain.n])
}

/// Plain Monte-Carlo `int |z^alpha|^2 dV` over the box `[-1, 1]^{2n}`: (value, stderr).
pub fn monomial_moment_mc(domain: &DomainSpec, alpha: &[u32], samples: usize, seed: u64) -> Result<(f64, f64)> {
    bounded_exponents(domain)?;
    let dim = domain.real_dim();
    let box_vol = 2f64.powi(dim as i32);
    // fixed chunks keep the summation order independent of the worker count
    let chunk = 4096;
    let parts: Vec<(f64, f64)> = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = (0.0, 0.0);
            for i in c * chunk..((c + 1) * chunk).min(samples) {
                let mut rng = stream_rng(seed, i as u64);
                let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = if domain.value(&z) < 0.0 { monomial_abs2(&z, alpha) } else { 0.0 };
                acc = (acc.0 + v, acc.1 + v * v);
            }
            acc
        })
        .collect();
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    let m = samples as f64;
    let mean = s1 / m;
    let var = (s2 / m - mean * mean).max(0.0);
    Ok((box_vol * mean, box_vol * (var / m).sqrt()))
}

fn monomial_abs2(z: &[f64], alpha: &[u32]) -> f64 {
    alpha
        .iter()
        .enumerate()
        .map(|(j, &a)| (z[2 * j] * z[2 * j] + z[2 * j + 1] * z[2 * j + 1]).powi(a as i32))
        .product()
}

/// Multi-indices with `|alpha| <= cutoff`, by total degree then lexicographically.
pub fn multi_indices(n: usize, cutoff: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() + 1 == n {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in (0..=left).rev() {
            cur.push(a);
            rec(n, left - a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=cutoff {
        rec(n, d, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// Squared monomial norms for `|alpha| <= cutoff`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    pub domain_hash: [u8; 32],
    pub cutoff: u32,
    pub alphas: Vec<Vec<u32>>,
    pub ln_moments: Vec<f64>,
}

const MOMENT_MAGIC: &[u8; 4] = b"BMOM";
const MOMENT_VERSION: u32 = 1;

/// SHA-256 of the domain's JSON document.
pub fn domain_hash(domain: &DomainSpec) -> [u8; 32] {
    Sha256::digest(domain.to_json().as_bytes()).into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl MomentTable {
    pub fn compute(domain: &DomainSpec, cutoff: u32) -> Result<Self> {
        let e = bounded_exponents(domain)?;
        let alphas = multi_indices(domain.n, cutoff);
        let ln_moments = alphas.iter().map(|a| ln_monomial_moment(e, a)).collect();
        Ok(MomentTable {
            domain_hash: domain_hash(domain),
            cutoff,
            alphas,
            ln_moments,
        })
    }

    /// Cache file name for `(domain hash, cutoff)`.
    pub fn cache_path(dir: &Path, domain: &DomainSpec, cutoff: u32) -> PathBuf {
        dir.join(format!("moments-{}-{cutoff}.bmom", &hex(&domain_hash(domain))[..16]))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.alphas.first().map_or(0, |a| a.len()) as u32;
        w.write_all(MOMENT_MAGIC)?;
        w.write_all(&MOMENT_VERSION.to_le_bytes())?;
        w.write_all(&self.domain_hash)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&self.cutoff.to_le_bytes())?;
        w.write_all(&(self.alphas.len() as u64).to_le_bytes())?;
        for (a, m) in self.alphas.iter().zip(&self.ln_moments) {
            for &x in a {
                w.write_all(&(x as u16).to_le_bytes())?;
            }
            w.write_all(&m.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf4 = [0u8; 4];
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf4)?;
        if &buf4 != MOMENT_MAGIC {
            return Err(Error::InvalidInput("not a moment table".into()));
        }
        r.read_exact(&mut buf4)?;
        if u32::from_le_bytes(buf4) != MOMENT_VERSION {
            return Err(Error::InvalidInput("unsupported moment table version".into()));
        }
        let mut domain_hash = [0u8; 32];
        r.read_exact(&mut domain_hash)?;
        r.read_exact(&mut buf4)?;
        let n = u32::from_le_bytes(buf4) as usize;
        r.read_exact(&mut buf4)?;
        let cutoff = u32::from_le_bytes(buf4);
        r.read_exact(&mut buf8)?;
        let count = u64::from_le_bytes(buf8) as usize;
        let mut alphas = Vec::with_capacity(count);
        let mut ln_moments = Vec::with_capacity(count);
        let mut buf2 = [0u8; 2];
        for _ in 0..count {
            let mut a = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf2)?;
                a.push(u16::from_le_bytes(buf2) as u32);
            }
            r.read_exact(&mut buf8)?;
            alphas.push(a);
            ln_moments.push(f64::from_le_bytes(buf8));
        }
        Ok(MomentTable {
            domain_hash,
            cutoff,
            alphas,
            ln_moments,
        })
    }

    /// Load the cached table for `(domain, cutoff)` from `dir`, computing and
    /// storing it when absent or stale. Returns the table and whether it was a cache hit.
    pub fn load_or_compute(domain: &DomainSpec, cutoff: u32, dir: &Path) -> Result<(Self, bool)> {
        let path = Self::cache_path(dir, domain, cutoff);
        if let Ok(f) = std::fs::File::open(&path) {
            if let Ok(t) = Self::read_from(std::io::BufReader::new(f)) {
                if t.domain_hash == domain_hash(domain) && t.cutoff == cutoff {
                    return Ok((t, true));
                }
            }
        }
        let t = Self::compute(domain, cutoff)?;
        std::fs::create_dir_all(dir)?;
        let tmp = path.with_extension("tmp");
        t.write_to(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, &path)?;
        Ok((t, false))
    }
}

/// Sum over `|alpha| > cutoff` of `sup |z^alpha conj(xi^alpha)| / ||z^alpha||^2` for
/// gauges at most `g`, relative to the kernel floor `1 / (2^{n+1} Vol)`.
///
/// On the gauge sphere `sup prod |z_j|^{2 alpha_j} = g^{2|alpha|} prod beta_j^{alpha_j/m_j}`
/// with `beta_j = (alpha_j/m_j) / sum_k (alpha_k/m_k)`.
pub fn series_tail_bound(exponents: &[u32], cutoff: u32, g: f64) -> f64 {
    let n = exponents.len();
    let ln_floor = -ln_monomial_moment(exponents, &vec![0; n]) - (n as f64 + 1.0) * 2f64.ln();
    let mut tail = 0.0;
    let mut d = cutoff + 1;
    loop {
        let mut s = 0.0;
        for a in multi_indices_of_degree(n, d) {
            let total: f64 = a.iter().zip(exponents).map(|(&x, &m)| x as f64 / m as f64).sum();
            let mut ln_t = 2.0 * d as f64 * g.ln() - ln_monomial_moment(exponents, &a);
            for (&x, &m) in a.iter().zip(exponents) {
                if x > 0 {
                    let beta = (x as f64 / m as f64) / total;
                    ln_t += (x as f64 / m as f64) * beta.ln();
                }
            }
            s += (ln_t - ln_floor).exp();
        }
        tail += s;
        if s < 1e-3 * tail.max(1e-300) || s < 1e-30 || d > cutoff + 2000 {
            break;
        }
        d += 1;
    }
    tail
}

fn multi_indices_of_degree(n: usize, d: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() + 1 == n {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in (0..=left).rev() {
            cur.push(a);
            rec(n, left - a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, d, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Smallest cutoff whose tail bound on gauges `<= 1 - margin` is below `tol`.
pub fn choose_cutoff(domain: &DomainSpec, margin: f64, tol: f64) -> Result<u32> {
    let e = bounded_exponents(domain)?;
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidInput(format!("series margin must lie in (0, 1), got {margin}")));
    }
    let g = 1.0 - margin;
    for d in (8..=600).step_by(4) {
        if series_tail_bound(e, d, g) < tol {
            return Ok(d);
        }
    }
    Err(Error::Accuracy(format!("no cutoff <= 600 reaches tail {tol:e} at margin {margin}")))
}

/// Minkowski gauge of a bounded model domain: `z / gauge(z)` lies on `bOmega`.
pub fn gauge(domain: &DomainSpec, z: &[f64]) -> Result<f64> {
    let r = norm(z);
    if r == 0.0 {
        return Ok(0.0);
    }
    let theta: Vec<f64> = z.iter().map(|x| x / r).collect();
    Ok(r / domain.ray_boundary_radius(&theta)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    BallClosedForm,
    ReinhardtSeries,
}

#[derive(Clone, Debug)]
pub struct KernelModel {
    pub mode: KernelMode,
    pub n: usize,
    /// Series evaluation compacta: gauge `<= 1 - margin`.
    pub margin: f64,
    pub moments: Option<MomentTable>,
    inv_moments: Vec<f64>,
    prefactor: f64,
}

impl KernelModel {
    /// `n! / (pi^n (1 - <z, xi>)^{n+1})`.
    pub fn ball_closed_form(domain: &DomainSpec) -> Result<Self> {
        if domain.kind != DomainKind::Ball {
            return Err(Error::InvalidInput("closed-form kernel needs the ball".into()));
        }
        let fact: f64 = (1..=domain.n).map(|k| k as f64).product();
        Ok(KernelModel {
            mode: KernelMode::BallClosedForm,
            n: domain.n,
            margin: 0.0,
            moments: None,
            inv_moments: Vec::new(),
            prefactor: fact / std::f64::consts::PI.powi(domain.n as i32),
        })
    }

    /// Truncated monomial series from a moment table.
    pub fn series(domain: &DomainSpec, table: MomentTable, margin: f64) -> Result<Self> {
        if table.domain_hash != domain_hash(domain) {
            return Err(Error::InvalidInput("moment table belongs to another domain".into()));
        }
        let inv_moments = table.ln_moments.iter().map(|m| (-m).exp()).collect();
        Ok(KernelModel {
            mode: KernelMode::ReinhardtSeries,
            n: domain.n,
            margin,
            moments: Some(table),
            inv_moments,
            prefactor: 1.0,
        })
    }

    /// Series model with the cutoff chosen for `margin` (tail `< 1e-6`), cached in `cache_dir`.
    pub fn series_auto(domain: &DomainSpec, margin: f64, cache_dir: Option<&Path>) -> Result<Self> {
        let cutoff = choose_cutoff(domain, margin, 1e-6)?;
        let table = match cache_dir {
            Some(dir) => MomentTable::load_or_compute(domain, cutoff, dir)?.0,
            None => MomentTable::compute(domain, cutoff)?,
        };
        Self::series(domain, table, margin)
    }

    pub fn cutoff(&self) -> Option<u32> {
        self.moments.as_ref().map(|m| m.cutoff)
    }

    /// `K(z, xi)`; in series mode both points must lie in the compacta.
    pub fn kernel(&self, domain: &DomainSpec, z: &[f64], xi: &[f64]) -> Result<Complex64> {
        for p in [z, xi] {
            if p.len() != 2 * self.n {
                return Err(Error::DimensionMismatch {
                    expected: 2 * self.n,
                    got: p.len(),
                });
            }
            if domain.value(p) >= 0.0 {
                return Err(Error::InvalidInput("kernel arguments must lie in the domain".into()));
            }
        }
        if self.mode == KernelMode::ReinhardtSeries {
            let g = 1.0 - self.margin;
            for p in [z, xi] {
                let gp = gauge(domain, p)?;
                if gp > g * (1.0 + 1e-12) {
                    return Err(Error::Accuracy(format!("gauge {gp:.6} outside the series compacta (<= {g})")));
                }
            }
        }
        Ok(self.kernel_unchecked(z, xi))
    }

    pub fn kernel_unchecked(&self, z: &[f64], xi: &[f64]) -> Complex64 {
        match self.mode {
            KernelMode::BallClosedForm => {
                let q = Complex64::new(1.0, 0.0) - cdot(z, xi);
                self.prefactor / q.powi(self.n as i32 + 1)
            }
            KernelMode::ReinhardtSeries => {
                let table = self.moments.as_ref().expect("series model has moments");
                let d = table.cutoff as usize;
                let pw: Vec<Vec<Complex64>> = (0..self.n)
                    .map(|j| {
                        let w = Complex64::new(z[2 * j], z[2 * j + 1]) * Complex64::new(xi[2 * j], -xi[2 * j + 1]);
                        let mut v = Vec::with_capacity(d + 1);
                        let mut acc = Complex64::new(1.0, 0.0);
                        for _ in 0..=d {
                            v.push(acc);
                            acc *= w;
                        }
                        v
                    })
                    .collect();
                let mut s = Complex64::new(0.0, 0.0);
                for (a, inv) in table.alphas.iter().zip(&self.inv_moments) {
                    let mut t = Complex64::new(*inv, 0.0);
                    for (j, &aj) in a.iter().enumerate() {
                        t *= pw[j][aj as usize];
                    }
                    s += t;
                }
                s
            }
        }
    }
}

/// Quadrature on `Omega`: scrambled Halton nodes rejected into `Omega` (interior part)
/// followed, for hybrid schemes, by flow-table band nodes.
#[derive(Clone, Debug)]
pub struct QuadratureScheme {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    /// `-r` at each node.
    pub depth: Vec<f64>,
    /// Boundary sample index whose flow line carries the node (band nodes only).
    pub foot: Vec<Option<usize>>,
    pub seed: u64,
    pub total: f64,
    /// Interior nodes are `0..interior`.
    pub interior: usize,
    pub draws: usize,
    pub box_volume: f64,
    /// Interior nodes have depth `>= band_top` (0 for plain schemes).
    pub band_top: f64,
    pub band_per_point: usize,
    pub weight_unit: f64,
    /// Boundary weights `w_i` behind the band nodes.
    pub point_weights: Vec<f64>,
}

fn halton_interior(domain: &DomainSpec, draws: usize, min_depth: f64, seed: u64) -> Result<(Vec<Point>, f64)> {
    bounded_exponents(domain)?;
    let dim = domain.real_dim();
    if dim > PRIMES.len() {
        return Err(Error::InvalidInput("Halton nodes support n <= 6".into()));
    }
    let mut rng = stream_rng(seed, 71);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let nodes: Vec<Point> = (0..draws)
        .into_par_iter()
        .filter_map(|i| {
            let z: Vec<f64> = (0..dim)
                .map(|j| {
                    let u = (radical_inverse(i as u64 + 1, PRIMES[j]) + shift[j]).fract();
                    2.0 * u - 1.0
                })
                .collect();
            (-domain.value(&z) >= min_depth && domain.value(&z) < 0.0).then_some(z)
        })
        .collect();
    Ok((nodes, 2f64.powi(dim as i32)))
}

/// Equal-weight Halton scheme with `draws` box points (`Vol(box) / draws` each).
pub fn halton_quadrature(domain: &DomainSpec, draws: usize, seed: u64) -> Result<QuadratureScheme> {
    let (nodes, box_volume) = halton_interior(domain, draws, 0.0, seed)?;
    if nodes.is_empty() {
        return Err(Error::EmptyRegion("no Halton node inside the domain".into()));
    }
    let w = box_volume / draws as f64;
    let m = nodes.len();
    Ok(QuadratureScheme {
        depth: nodes.iter().map(|z| -domain.value(z)).collect(),
        weights: vec![w; m],
        foot: vec![None; m],
        nodes,
        seed,
        total: w * m as f64,
        interior: m,
        draws,
        box_volume,
        band_top: 0.0,
        band_per_point: 0,
        weight_unit: 0.0,
        point_weights: Vec::new(),
    })
}

/// Halton nodes with depth `>= table.breaks[0]` plus the flow-table band nodes
/// `phi(x_i, s_j)` of `band_sample` with weights `w_i J_i(s_j) gauss_j / |grad r|`.
/// Band nodes are attached to the `grid_sample` point nearest to `x_i`.
pub fn hybrid_quadrature(
    domain: &DomainSpec,
    band_sample: &BoundarySample,
    table: &FlowTable,
    grid_sample: &BoundarySample,
    draws: usize,
    seed: u64,
) -> Result<QuadratureScheme> {
    if table.position.len() != band_sample.len() {
        return Err(Error::InvalidInput("flow table does not match the band sample".into()));
    }
    let band_top = table.breaks[0];
    let (mut nodes, box_volume) = halton_interior(domain, draws, band_top, seed)?;
    let interior = nodes.len();
    let w = box_volume / draws as f64;
    let mut weights = vec![w; interior];
    let mut depth: Vec<f64> = nodes.iter().map(|z| -domain.value(z)).collect();
    let mut foot = vec![None; interior];
    let per = table.depth.len();
    let feet: Vec<usize> = band_sample.points.par_iter().map(|x| grid_sample.nearest(x)).collect();
    for (i, &f) in feet.iter().enumerate() {
        for j in 0..per {
            nodes.push(table.position[i][j].clone());
            weights.push(band_sample.weights[i] * table.density[i][j]);
            depth.push(table.depth[j]);
            foot.push(Some(f));
        }
    }
    let total = weights.iter().sum();
    Ok(QuadratureScheme {
        nodes,
        weights,
        depth,
        foot,
        seed,
        total,
        interior,
        draws,
        box_volume,
        band_top,
        band_per_point: per,
        weight_unit: band_sample.weight_unit,
        point_weights: band_sample.weights.clone(),
    })
}

impl QuadratureScheme {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum w g` with a standard error: Monte-Carlo variance over the Halton draws
    /// plus the Voronoi-weight variance of the band part.
    pub fn integrate_complex(&self, g: &[Complex64]) -> (Complex64, f64) {
        let mut s = Complex64::new(0.0, 0.0);
        for (w, v) in self.weights.iter().zip(g) {
            s += v * *w;
        }
        (s, self.stderr_of(|k| g[k].norm()))
    }

    pub fn integrate(&self, g: &[f64]) -> (f64, f64) {
        let s = self.weights.iter().zip(g).map(|(w, v)| w * v).sum();
        (s, self.stderr_of(|k| g[k].abs()))
    }

    fn stderr_of<F: Fn(usize) -> f64>(&self, g: F) -> f64 {
        let mut var = 0.0;
        if self.draws > 0 && self.interior > 0 {
            let m = self.draws as f64;
            let (mut s1, mut s2) = (0.0, 0.0);
            for k in 0..self.interior {
                let v = g(k);
                s1 += v;
                s2 += v * v;
            }
            let mean = s1 / m;
            var += self.box_volume * self.box_volume * (s2 / m - mean * mean).max(0.0) / m;
        }
        if self.band_per_point > 0 {
            let per = self.band_per_point;
            let cols: Vec<f64> = (0..self.point_weights.len())
                .map(|i| {
                    let base = self.interior + i * per;
                    (base..base + per).map(|k| self.weights[k] * g(k)).sum()
                })
                .collect();
            if self.weight_unit > 0.0 {
                // Voronoi weights: Var(w_i) = unit * w_i
                for (f, &w_i) in cols.iter().zip(&self.point_weights) {
                    if w_i > 0.0 {
                        var += self.weight_unit * f * f / w_i;
                    }
                }
            } else {
                // independent boundary points
                let m = cols.len() as f64;
                let mean = cols.iter().sum::<f64>() / m;
                var += cols.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() * m / (m - 1.0).max(1.0);
            }
        }
        var.sqrt()
    }
}

/// `P f(z) = sum K(z, node) f(node) w` with its quadrature error.
pub fn project(model: &KernelModel, domain: &DomainSpec, quad: &QuadratureScheme, f: &[Complex64], z: &[f64]) -> Result<(Complex64, f64)> {
    if f.len() != quad.len() {
        return Err(Error::DimensionMismatch {
            expected: quad.len(),
            got: f.len(),
        });
    }
    if domain.value(z) >= 0.0 {
        return Err(Error::InvalidInput("projection point must lie in the domain".into()));
    }
    if model.mode == KernelMode::ReinhardtSeries {
        let g = gauge(domain, z)?;
        if g > 1.0 - model.margin {
            return Err(Error::Accuracy(format!("gauge {g:.6} outside the series compacta")));
        }
    }
    let g: Vec<Complex64> = quad
        .nodes
        .par_iter()
        .zip(f.par_iter())
        .map(|(xi, fv)| model.kernel_unchecked(z, xi) * fv)
        .collect();
    Ok(quad.integrate_complex(&g))
}

/// Tent volumes `Vol(T^flow(Q))` for every tent of a family, from coarea quadrature.
#[derive(Clone, Debug)]
pub struct TentVolumes {
    pub root: VolumeEstimate,
    /// `[grid][level - N_0][cube]`.
    pub cubes: Vec<Vec<Vec<VolumeEstimate>>>,
    n0: usize,
}

impl TentVolumes {
    pub fn from_table(domain: &DomainSpec, sample: &BoundarySample, family: &GridFamily, table: &FlowTable) -> Result<Self> {
        let cubes = family
            .grids
            .iter()
            .map(|g| {
                g.tent_levels()
                    .map(|k| {
                        let side = g.side(k);
                        g.level(k)
                            .unwrap()
                            .cubes
                            .iter()
                            .map(|q| coarea_volume(table, sample, &q.members, side))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(TentVolumes {
            root: VolumeEstimate {
                value: domain_volume(domain)?,
                stderr: 0.0,
                samples: 0,
                method: VolumeMethod::CoareaQuadrature,
            },
            cubes,
            n0: family.n0(),
        })
    }

    pub fn get(&self, cube: CubeRef) -> VolumeEstimate {
        match cube {
            CubeRef::Root => self.root,
            CubeRef::Cube { grid, level, index } => self.cubes[grid][level - self.n0][index],
        }
    }
}

/// `inf{eps : w in P_eps(zeta)}` for any `w`, through the frame route that fits the domain.
pub fn polydisc_scale_any(domain: &DomainSpec, zeta: &[f64], w: &[f64]) -> Result<f64> {
    if frame_is_scale_free(domain) {
        Ok(polydisc_scale(domain, zeta, w))
    } else {
        Ok(polydisc_scale_ladder(domain, zeta, w, 1e-7, domain.flow_time(), 0)?.unwrap_or(f64::INFINITY))
    }
}

/// `rho~(z, xi) = inf{eps : z, xi in P_eps(Pi^proj(z))}` and the foot `Pi^proj(z)`.
pub fn rho_tilde(domain: &DomainSpec, z: &[f64], xi: &[f64]) -> Result<(f64, Point)> {
    let zeta = nearest_project(domain, z)?;
    let v = polydisc_scale_any(domain, &zeta, z)?.max(polydisc_scale_any(domain, &zeta, xi)?);
    Ok((v, zeta))
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelTentConfig {
    pub pairs_per_rung: usize,
    /// Depths of `z`; each rung also draws `xi` from `P_{c d}(Pi^proj(z))`.
    pub rungs: Vec<f64>,
    /// Range of `c` (log-uniform).
    pub spread: (f64, f64),
    /// Lower bound `l(Q) >= C_sel rho~` on the selected cube.
    pub c_select: f64,
    /// The selected cube contains `B(Pi^proj(z), C_ball rho~)`.
    pub c_ball: f64,
    /// Pairs with `z` and `xi` drawn independently in the flow band.
    pub far_pairs: usize,
}

impl KernelTentConfig {
    pub fn for_family(family: &GridFamily, pairs_per_rung: usize) -> Self {
        let top = family.top_side();
        KernelTentConfig {
            pairs_per_rung,
            rungs: (1..=4).map(|j| top * 0.5f64.powi(j)).collect(),
            spread: (0.125, 2.0),
            c_select: 2.0,
            c_ball: 2.0,
            far_pairs: pairs_per_rung / 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PairRecord {
    pub rung: Option<usize>,
    pub depth_z: f64,
    pub depth_xi: f64,
    pub rho_tilde: f64,
    pub rho_tilde_swapped: f64,
    pub cube: String,
    pub level: Option<usize>,
    pub side: f64,
    pub root: bool,
    pub contained: bool,
    pub kernel_abs: f64,
    pub tent_volume: f64,
    pub a: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RungSummary {
    pub depth: f64,
    pub pairs: usize,
    pub root_pairs: usize,
    pub failures: usize,
    pub max_a: f64,
    pub median_a: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelTentReport {
    pub config: KernelTentConfig,
    pub seed: u64,
    pub pairs: Vec<PairRecord>,
    pub rungs: Vec<RungSummary>,
    pub skipped: Vec<(usize, String)>,
    pub a_max: f64,
    pub depth_ratio: f64,
    pub failure_rate: f64,
    /// Largest `max(rho~(z,xi)/rho~(xi,z), rho~(xi,z)/rho~(z,xi))`.
    pub symmetry: f64,
    pub pass: bool,
}

fn cube_label(c: CubeRef) -> String {
    match c {
        CubeRef::Root => "root".into(),
        CubeRef::Cube { grid, level, index } => format!("g{grid}/k{level}/q{index}"),
    }
}

/// A pair `(z, xi)` with `z` at depth `d` over a random boundary point and `xi` in
/// the polydisc `P_{c d}` there.
fn draw_pair(domain: &DomainSpec, d: f64, spread: (f64, f64), rng: &mut impl Rng) -> Result<(Point, Point)> {
    let zeta = domain.sample_boundary_point(rng)?;
    let z = normal_lift(domain, &zeta, d);
    let c = (spread.0.ln() + rng.random::<f64>() * (spread.1 / spread.0).ln()).exp();
    let eps = (c * d).min(domain.flow_time());
    let frame = extremal_frame(domain, &zeta, eps, 0)?;
    for _ in 0..1000 {
        let lambda: Vec<Complex64> = frame
            .radii
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let (rad, ang) = (t * rng.random::<f64>().sqrt(), std::f64::consts::TAU * rng.random::<f64>());
                let l = Complex64::from_polar(rad, ang);
                // the normal coordinate points outward; keep xi inside
                if k == 0 {
                    Complex64::new(-l.re.abs(), l.im)
                } else {
                    l
                }
            })
            .collect();
        let xi = frame.reconstruct(&lambda);
        let r = domain.value(&xi);
        if r < 0.0 && -r < domain.flow_time() {
            return Ok((z, xi));
        }
    }
    Err(Error::EmptyRegion("no polydisc draw inside the band".into()))
}

/// Deepest family cube with `l(Q) >= C_sel rho~` containing `B(zeta, C_ball rho~) ∩ sample`
/// and the cells `extra_cells` (sample cells of continuum points of the ball);
/// the root when no level `>= N_0` qualifies.
pub fn select_cube(
    domain: &DomainSpec,
    sample: &BoundarySample,
    family: &GridFamily,
    zeta: &[f64],
    rt: f64,
    extra_cells: &[usize],
    cfg: &KernelTentConfig,
) -> CubeRef {
    let target = cfg.c_select * rt;
    let mut members = ball_members(domain, sample, zeta, cfg.c_ball * rt);
    members.extend_from_slice(extra_cells);
    let mut best: Option<(usize, usize, usize)> = None;
    for (g, grid) in family.grids.iter().enumerate() {
        for k in grid.tent_levels().rev() {
            if grid.side(k) < target {
                continue;
            }
            let q = grid.cube_of(k, members[0]);
            if members.iter().all(|&m| grid.cube_of(k, m) == q) {
                if best.is_none_or(|(bk, bg, bi)| k > bk || (k == bk && (g, q) < (bg, bi))) {
                    best = Some((k, g, q));
                }
                break;
            }
        }
    }
    match best {
        Some((level, grid, index)) => CubeRef::Cube { grid, level, index },
        None => CubeRef::Root,
    }
}

/// Lemma 3.8 scan: `A = |K(z, xi)| Vol(T^flow(Q))` with `Q` from [`select_cube`].
#[allow(clippy::too_many_arguments)]
pub fn kernel_tent_bound_scan(
    model: &KernelModel,
    domain: &DomainSpec,
    sample: &BoundarySample,
    family: &GridFamily,
    volumes: &TentVolumes,
    cfg: &KernelTentConfig,
    seed: u64,
) -> Result<KernelTentReport> {
    let mut jobs: Vec<(usize, Option<usize>)> = Vec::new();
    for (r, _) in cfg.rungs.iter().enumerate() {
        for _ in 0..cfg.pairs_per_rung {
            jobs.push((jobs.len(), Some(r)));
        }
    }
    for _ in 0..cfg.far_pairs {
        jobs.push((jobs.len(), None));
    }
    let top = family.top_side();
    let results: Vec<std::result::Result<PairRecord, (usize, String)>> = jobs
        .par_iter()
        .map(|&(id, rung)| {
            let run = || -> Result<PairRecord> {
                let mut rng = stream_rng(seed, 10_000 + id as u64);
                let (z, xi) = match rung {
                    Some(r) => draw_pair(domain, cfg.rungs[r], cfg.spread, &mut rng)?,
                    None => (
                        domain.sample_band_point(&mut rng, top)?,
                        domain.sample_band_point(&mut rng, top)?,
                    ),
                };
                let (rt, zeta) = rho_tilde(domain, &z, &xi)?;
                let (rt_swapped, _) = rho_tilde(domain, &xi, &z)?;
                // continuum claim: both flow feet lie in B(zeta, C_ball rho~)
                let feet = [flow_project(domain, &z)?, flow_project(domain, &xi)?];
                let in_ball = feet.iter().all(|w| rho_value(domain, &zeta, w) < cfg.c_ball * rt);
                let cells: Vec<usize> = if in_ball { feet.iter().map(|w| sample.nearest(w)).collect() } else { Vec::new() };
                let look = select_cube(domain, sample, family, &zeta, rt, &cells, cfg);
                let contained = in_ball
                    && tent_contains(domain, sample, family, look, &z, TentFlavor::Flow)?
                    && tent_contains(domain, sample, family, look, &xi, TentFlavor::Flow)?;
                let k = model.kernel(domain, &z, &xi)?.norm();
                let vol = volumes.get(look).value;
                Ok(PairRecord {
                    rung,
                    depth_z: -domain.value(&z),
                    depth_xi: -domain.value(&xi),
                    rho_tilde: rt,
                    rho_tilde_swapped: rt_swapped,
                    cube: cube_label(look),
                    level: match look {
                        CubeRef::Root => None,
                        CubeRef::Cube { level, .. } => Some(level),
                    },
                    side: cube_side(family, look),
                    root: look == CubeRef::Root,
                    contained,
                    kernel_abs: k,
                    tent_volume: vol,
                    a: k * vol,
                })
            };
            run().map_err(|e| (id, e.to_string()))
        })
        .collect();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(p) => pairs.push(p),
            Err(s) => skipped.push(s),
        }
    }
    let rungs: Vec<RungSummary> = cfg
        .rungs
        .iter()
        .enumerate()
        .map(|(r, &d)| {
            let mine: Vec<&PairRecord> = pairs.iter().filter(|p| p.rung == Some(r)).collect();
            let mut a: Vec<f64> = mine.iter().filter(|p| p.contained).map(|p| p.a).collect();
            a.sort_by(f64::total_cmp);
            RungSummary {
                depth: d,
                pairs: mine.len(),
                root_pairs: mine.iter().filter(|p| p.root).count(),
                failures: mine.iter().filter(|p| !p.contained).count(),
                max_a: a.last().copied().unwrap_or(f64::NAN),
                median_a: a.get(a.len() / 2).copied().unwrap_or(f64::NAN),
            }
        })
        .collect();
    let a_max = pairs.iter().filter(|p| p.contained).map(|p| p.a).fold(0.0, f64::max);
    let maxes: Vec<f64> = rungs.iter().map(|r| r.max_a).filter(|v| v.is_finite()).collect();
    let depth_ratio = maxes.iter().copied().fold(0.0, f64::max) / maxes.iter().copied().fold(f64::INFINITY, f64::min);
    let failures = pairs.iter().filter(|p| !p.contained).count();
    let failure_rate = failures as f64 / pairs.len().max(1) as f64;
    let symmetry = pairs
        .iter()
        .filter(|p| p.rho_tilde > 0.0 && p.rho_tilde_swapped > 0.0)
        .map(|p| (p.rho_tilde / p.rho_tilde_swapped).max(p.rho_tilde_swapped / p.rho_tilde))
        .fold(1.0, f64::max);
    let pass = a_max.is_finite() && failure_rate <= 0.02 && depth_ratio <= 2.0 && skipped.is_empty();
    Ok(KernelTentReport {
        config: cfg.clone(),
        seed,
        pairs,
        rungs,
        skipped,
        a_max,
        depth_ratio,
        failure_rate,
        symmetry,
        pass,
    })
}

/// Depth and boundary cell of a point of `Omega`, the data tent membership needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSite {
    /// `-r`; non-positive outside `Omega`.
    pub depth: f64,
    /// Grid-sample point nearest to `Pi^flow` (band points only).
    pub foot: Option<usize>,
}

/// Site of `z`: the flow foot is computed only below `band_top`, where tents live.
pub fn site_of(domain: &DomainSpec, grid_sample: &BoundarySample, band_top: f64, z: &[f64]) -> Result<NodeSite> {
    let depth = -domain.value(z);
    if depth <= 0.0 || depth >= band_top {
        return Ok(NodeSite { depth, foot: None });
    }
    Ok(NodeSite {
        depth,
        foot: Some(grid_sample.nearest(&flow_project(domain, z)?)),
    })
}

impl QuadratureScheme {
    pub fn site(&self, k: usize) -> NodeSite {
        NodeSite {
            depth: self.depth[k],
            foot: self.foot[k],
        }
    }
}

/// Importance samples for `xi -> K(z, xi)`: a mixture of the box `[-1, 1]^{2n}` and
/// polydiscs `{|lambda_k| < 2 tau_k(zeta, u_k, eps_j)}` at `zeta = Pi^proj(z)` with
/// `eps_j = depth(z) 2^{j-1}` up to order one.
#[derive(Clone, Debug)]
pub struct KernelSamples {
    pub z: Point,
    pub site_z: NodeSite,
    pub points: Vec<Point>,
    pub sites: Vec<NodeSite>,
    /// `K(z, xi_m) / (M q(xi_m))`, zero outside `Omega`.
    pub ratio: Vec<Complex64>,
    pub components: usize,
}

pub fn kernel_samples(
    model: &KernelModel,
    domain: &DomainSpec,
    grid_sample: &BoundarySample,
    band_top: f64,
    z: &[f64],
    count: usize,
    seed: u64,
) -> Result<KernelSamples> {
    use crate::extremal::{scale_free_basis, tau_unchecked, SliceResolution};
    bounded_exponents(domain)?;
    let dim = domain.real_dim();
    let site_z = site_of(domain, grid_sample, band_top, z)?;
    if site_z.depth <= 0.0 {
        return Err(Error::InvalidInput("projection point must lie in the domain".into()));
    }
    let zeta = nearest_project(domain, z).or_else(|_| flow_project(domain, z));
    let mut discs: Vec<(Point, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    if let Ok(zeta) = zeta {
        let basis = if frame_is_scale_free(domain) {
            scale_free_basis(domain, &zeta)
        } else {
            extremal_frame(domain, &zeta, site_z.depth.min(domain.flow_time()), 0)?.basis
        };
        let res = SliceResolution { angles: 16, radial: 9 };
        let mut eps = 0.5 * site_z.depth;
        while eps <= 1.0 {
            let radii: Option<Vec<f64>> = basis
                .iter()
                .map(|u| tau_unchecked(domain, &zeta, u, eps, res, 1e-3).ok().map(|t| (2.0 * t).min(2.0)))
                .collect();
            match radii {
                Some(r) => discs.push((zeta.clone(), basis.clone(), r)),
                None => break,
            }
            eps *= 2.0;
        }
    }
    let box_density = 0.5f64.powi(dim as i32);
    let p_box = if discs.is_empty() { 1.0 } else { 0.2 };
    let p_disc = if discs.is_empty() { 0.0 } else { 0.8 / discs.len() as f64 };
    let disc_density: Vec<f64> = discs
        .iter()
        .map(|(_, _, r)| 1.0 / r.iter().map(|t| std::f64::consts::PI * t * t).product::<f64>())
        .collect();
    let mut rng = stream_rng(seed, 81);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let pick: f64 = rng.random();
        let xi: Point = if pick < p_box {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        } else {
            let j = (((pick - p_box) / p_disc) as usize).min(discs.len() - 1);
            let (c, basis, radii) = &discs[j];
            let mut xi = c.clone();
            for (u, &t) in basis.iter().zip(radii) {
                let l = Complex64::from_polar(t * rng.random::<f64>().sqrt(), std::f64::consts::TAU * rng.random::<f64>());
                crate::numeric::add_scaled_into(&mut xi, l, u);
            }
            xi
        };
        points.push(xi);
    }
    let m = count as f64;
    let rows: Vec<Result<(NodeSite, Complex64)>> = points
        .par_iter()
        .map(|xi| {
            let site = site_of(domain, grid_sample, band_top, xi)?;
            if site.depth <= 0.0 {
                return Ok((site, Complex64::new(0.0, 0.0)));
            }
            let in_box = xi.iter().all(|x| x.abs() <= 1.0);
            let mut q = if in_box { p_box * box_density } else { 0.0 };
            for ((c, basis, radii), dd) in discs.iter().zip(&disc_density) {
                let v = crate::numeric::sub(xi, c);
                if basis.iter().zip(radii).all(|(u, &t)| cdot(&v, u).norm() < t) {
                    q += p_disc * dd;
                }
            }
            Ok((site, model.kernel_unchecked(z, xi) / (m * q)))
        })
        .collect();
    let mut sites = Vec::with_capacity(count);
    let mut ratio = Vec::with_capacity(count);
    for r in rows {
        let (s, w) = r?;
        sites.push(s);
        ratio.push(w);
    }
    Ok(KernelSamples {
        z: z.to_vec(),
        site_z,
        points,
        sites,
        ratio,
        components: discs.len() + 1,
    })
}

impl KernelSamples {
    /// `P f(z)` with the control variate `f(z) int K(z, .) = f(z)`; `f(m)` is the
    /// value at sample `m`, `fz` the value at `z`. Returns the estimate and its stderr.
    pub fn project<F: Fn(usize) -> Complex64>(&self, f: F, fz: Complex64) -> (Complex64, f64) {
        let m = self.ratio.len() as f64;
        let mut s = Complex64::new(0.0, 0.0);
        let mut s2 = 0.0;
        for (k, r) in self.ratio.iter().enumerate() {
            if r.norm() == 0.0 {
                continue;
            }
            let y = r * (f(k) - fz);
            s += y;
            s2 += y.norm_sqr();
        }
        // per-sample terms are y_m = M r_m (f - fz); Var(mean) = (E|y|^2 - |E y|^2) / M
        let var = ((s2 * m) - s.norm_sqr()).max(0.0) / (m - 1.0).max(1.0);
        (fz + s, var.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;
    use std::f64::consts::PI;

    fn ball() -> DomainSpec {
        DomainSpec::ball(2).unwrap().with_nbhd_width(0.3).unwrap()
    }

    #[test]
    fn ball_moments_closed_form() {
        let d = ball();
        assert!((monomial_moment(&d, &[0, 0]).unwrap() - PI * PI / 2.0).abs() < 1e-12);
        assert!((monomial_moment(&d, &[1, 0]).unwrap() - PI * PI / 6.0).abs() < 1e-12);
        let (mc, se) = monomial_moment_mc(&d, &[1, 0], 200_000, 3).unwrap();
        assert!((mc - PI * PI / 6.0).abs() < 4.0 * se, "{mc} +- {se}");
    }

    #[test]
    fn ellipsoid_volume_matches_mc() {
        let e = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let v = domain_volume(&e).unwrap();
        let (mc, se) = monomial_moment_mc(&e, &[0, 0], 200_000, 5).unwrap();
        assert!((v - mc).abs() < 4.0 * se, "{v} vs {mc} +- {se}");
    }

    #[test]
    fn kernel_at_origin_and_diagonal() {
        let d = ball();
        let k = KernelModel::ball_closed_form(&d).unwrap();
        let o = vec![0.0; 4];
        assert!((k.kernel(&d, &o, &o).unwrap().re - 2.0 / (PI * PI)).abs() < 1e-14);
        let z = vec![0.6, 0.2, -0.1, 0.3];
        let s: f64 = z.iter().map(|x| x * x).sum();
        let kz = k.kernel(&d, &z, &z).unwrap();
        assert!(kz.im.abs() < 1e-12);
        assert!((kz.re * (1.0 - s).powi(3) - 2.0 / (PI * PI)).abs() < 1e-12);
    }

    #[test]
    fn series_matches_closed_form_and_is_hermitian() {
        let d = ball();
        let cf = KernelModel::ball_closed_form(&d).unwrap();
        let se = KernelModel::series(&d, MomentTable::compute(&d, 40).unwrap(), 0.2).unwrap();
        let mut rng = stream_rng(1, 1);
        for _ in 0..30 {
            let a: Vec<f64> = d.sample_band_point(&mut rng, 1.0).unwrap().iter().map(|x| 0.8 * x).collect();
            let b: Vec<f64> = d.sample_band_point(&mut rng, 1.0).unwrap().iter().map(|x| 0.8 * x).collect();
            let (x, y) = (cf.kernel(&d, &a, &b).unwrap(), se.kernel(&d, &a, &b).unwrap());
            assert!((x - y).norm() / x.norm() < 1e-6);
            assert!((se.kernel(&d, &b, &a).unwrap() - y.conj()).norm() < 1e-12 * x.norm().max(1.0));
        }
    }

    #[test]
    fn series_refuses_outside_compacta() {
        let d = ball();
        let se = KernelModel::series(&d, MomentTable::compute(&d, 12).unwrap(), 0.2).unwrap();
        let z = vec![0.95, 0.0, 0.0, 0.0];
        assert!(matches!(se.kernel(&d, &z, &z), Err(Error::Accuracy(_))));
    }

    #[test]
    fn moment_cache_roundtrip() {
        let d = DomainSpec::ellipsoid(&[1, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, hit_a) = MomentTable::load_or_compute(&d, 10, dir.path()).unwrap();
        let (b, hit_b) = MomentTable::load_or_compute(&d, 10, dir.path()).unwrap();
        assert!(!hit_a && hit_b);
        assert_eq!(a.alphas, b.alphas);
        assert_eq!(a.ln_moments, b.ln_moments);
        // another domain never reads this entry
        let other = MomentTable::cache_path(dir.path(), &ball(), 10);
        assert_ne!(other, MomentTable::cache_path(dir.path(), &d, 10));
    }

    #[test]
    fn cutoff_grows_with_margin_shrinking() {
        let d = ball();
        let a = choose_cutoff(&d, 0.4, 1e-6).unwrap();
        let b = choose_cutoff(&d, 0.2, 1e-6).unwrap();
        assert!(a <= b, "{a} {b}");
    }

    #[test]
    fn halton_total_volume() {
        let d = ball();
        let q = halton_quadrature(&d, 100_000, 2).unwrap();
        assert!((q.total - PI * PI / 2.0).abs() / (PI * PI / 2.0) < 0.01, "{}", q.total);
    }

    #[test]
    fn importance_sampled_reproducing_property() {
        let d = ball();
        let k = KernelModel::ball_closed_form(&d).unwrap();
        let s = crate::boundary::sample_boundary(&d, 600, 3).unwrap();
        let z = vec![0.7, 0.1, 0.2, -0.3];
        let ks = kernel_samples(&k, &d, &s, 0.125, &z, 6000, 9).unwrap();
        let h = |p: &[f64]| Complex64::new(p[0], p[1]) * Complex64::new(p[2], p[3]);
        let (v, se) = ks.project(|m| h(&ks.points[m]), h(&z));
        assert!((v - h(&z)).norm() < 4.0 * se + 1e-3, "{v} vs {} (se {se})", h(&z));
        let (c, _) = ks.project(|_| Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        assert!((c - 1.0).norm() < 1e-12);
    }
}
