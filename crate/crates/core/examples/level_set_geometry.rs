//! Mean curvature, area evolution along the flow, and tent volumes against
//! sigma(Q) l(Q) and the upper Whitney slab.
//!
//!     cargo run --release --example level_set_geometry

use dyadic_tents::boundary::{build_adjacent_family, sample_boundary, with_voronoi_weights, GridParams};
use dyadic_tents::geometry::{area_evolution_check, curvature_check, whitney_volume_comparability, FlowTable, McConfig};
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    let d = DomainSpec::ball(2)?.with_nbhd_width(0.3)?;
    let c = curvature_check(&d, 100, 1)?;
    println!("ball H: expected {:?}, max error {:?}", c.expected, c.max_abs_error);

    let s = with_voronoi_weights(&d, &sample_boundary(&d, 1200, 2)?, 10, 3)?;
    let e = area_evolution_check(&d, &s.points[..4], &[0.01, 0.05, 0.1], 3, 0.05, 1e-4, 1e-3, 4)?;
    println!("evolution residual {:.2e}, Gronwall {:.3} vs bound {:.3}", e.max_residual, e.gronwall_c, e.curvature_bound);

    let fam = build_adjacent_family(&d, &s, &GridParams::new(0.125, 2, 2.0, 1.06).waived(), &[0])?;
    let g = &fam.grids[0];
    let sides: Vec<f64> = (g.n0..=g.finest() + 1).map(|k| g.side(k)).collect();
    let table = FlowTable::build(&d, &s, &sides, 12, 2)?;
    for k in g.tent_levels() {
        let r = whitney_volume_comparability(&d, &s, &fam, &table, 0, k, Some(3), McConfig::default(), 5)?;
        let lo = r.rows.iter().map(|w| w.prop35_ratio).fold(f64::INFINITY, f64::min);
        let hi = r.rows.iter().map(|w| w.prop35_ratio).fold(0.0, f64::max);
        println!("level {k}: {} cubes, Vol/(sigma l) in [{lo:.3}, {hi:.3}], Vol(T)/Vol(W) in [{:.3}, {:.3}] (bound {:.3})", r.rows.len(), r.min_ratio, r.max_ratio, r.bound);
    }
    Ok(())
}
