//! Bergman kernel: ball closed form, Reinhardt monomial series with the cached
//! moment table, and quadrature projection of holomorphic test functions.
//!
//!     cargo run --release --example bergman_kernel

use dyadic_tents::bergman::{halton_quadrature, project, KernelModel, MomentTable};
use dyadic_tents::DomainSpec;
use num_complex::Complex64;

fn main() -> dyadic_tents::Result<()> {
    let d = DomainSpec::ball(2)?.with_nbhd_width(0.3)?;
    let closed = KernelModel::ball_closed_form(&d)?;
    let cache = std::env::temp_dir().join("dyadic-tents-moments");
    let series = KernelModel::series_auto(&d, 0.2, Some(&cache))?;
    let (a, b) = ([0.3, 0.1, -0.2, 0.4], [0.5, -0.2, 0.1, 0.3]);
    let (x, y) = (closed.kernel(&d, &a, &b)?, series.kernel(&d, &a, &b)?);
    println!("K(a, b): closed {x:.10}, series {y:.10} (cutoff {:?}, cache {})", series.cutoff(), cache.display());
    let (_, hit) = MomentTable::load_or_compute(&d, series.cutoff().unwrap(), &cache)?;
    println!("moment cache hit on reload: {hit}");

    let ell = DomainSpec::ellipsoid(&[1, 2])?;
    let es = KernelModel::series_auto(&ell, 0.2, Some(&cache))?;
    println!("ellipsoid K(0, 0) = {:.6} (1/Vol = {:.6})", es.kernel(&ell, &[0.0; 4], &[0.0; 4])?.re, 1.0 / dyadic_tents::bergman::domain_volume(&ell)?);

    // P reproduces holomorphic functions up to quadrature error
    let q = halton_quadrature(&d, 100_000, 1)?;
    let f: Vec<Complex64> = q.nodes.iter().map(|p| Complex64::new(p[0], p[1])).collect();
    let z = [0.3, 0.1, -0.2, 0.4];
    let (pz, se) = project(&closed, &d, &q, &f, &z)?;
    println!("P(z1)(z) = {pz:.4} +- {se:.1e}, z1 = 0.3+0.1i");
    Ok(())
}
