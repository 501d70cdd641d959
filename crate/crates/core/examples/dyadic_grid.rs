//! Boundary sample with Voronoi weights, an adjacent family of dyadic grids, the
//! axiom report, test-ball covering and the JSON round trip.
//!
//!     cargo run --release --example dyadic_grid

use dyadic_tents::boundary::{build_adjacent_family, covering_check, family_from_json, family_to_json, sample_boundary, with_voronoi_weights, GridParams};
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    let d = DomainSpec::ball(2)?.with_nbhd_width(0.3)?;
    let s = with_voronoi_weights(&d, &sample_boundary(&d, 1500, 1)?, 10, 2)?;
    println!("{} points, total mass {:.4} (sphere area {:.4})", s.len(), s.total_mass, dyadic_tents::boundary::sphere_area(2));

    // delta = 1/8 violates 96 kappa^6 delta <= 1; the strict parameters are refused
    let mut strict = GridParams::new(0.125, 2, 2.0, 1.06);
    strict.stride = Some(1);
    println!("strict: {}", strict.resolve().unwrap_err());

    let params = GridParams::new(0.125, 2, 2.0, 1.06).waived();
    let mut fam = build_adjacent_family(&d, &s, &params, &[0, 1, 2, 3, 4, 5, 6, 7])?;
    for (i, g) in fam.grids.iter().enumerate() {
        let v = &g.verification;
        println!("grid {i}: N0 {} cubes {} frak_c {:.3} axioms {}", g.n0, g.cube_count(), v.frak_c, v.axioms_hold());
    }
    let cov = covering_check(&d, &s, &mut fam, 100, 5, 3);
    println!("covering failure rate {:.4} over {} balls", cov.failure_rate, cov.tests);

    let text = family_to_json(&d, &params, &s, &fam);
    let (_, _, s2, fam2) = family_from_json(&text)?;
    println!("json round trip: {} bytes, {} points, {} grids", text.len(), s2.len(), fam2.grids.len());
    Ok(())
}
