//! A_p constants of power weights |r|^alpha and the weighted norm-slope experiment.
//!
//!     cargo run --release --example weighted_slopes

use dyadic_tents::bergman::{hybrid_quadrature, KernelModel};
use dyadic_tents::boundary::{build_adjacent_family, sample_boundary, with_voronoi_weights, GridParams};
use dyadic_tents::geometry::FlowTable;
use dyadic_tents::sparse::{ap_constant, weighted_slope_experiment, TentBasis, WeightModel, WeightedConfig};
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    let d = DomainSpec::ball(2)?.with_nbhd_width(0.3)?;
    let s = with_voronoi_weights(&d, &sample_boundary(&d, 1500, 1)?, 10, 2)?;
    let fam = build_adjacent_family(&d, &s, &GridParams::new(0.125, 2, 2.0, 1.06).waived(), &[0, 1, 2, 3])?;
    let g = &fam.grids[0];
    let sides: Vec<f64> = (g.n0..=g.finest() + 1).map(|k| g.side(k)).collect();
    let table = FlowTable::build(&d, &s, &sides, 12, 2)?;
    let q = hybrid_quadrature(&d, &s, &table, &s, 50_000, 3)?;
    let basis = TentBasis::new(&d, &s, &fam, &q);

    for alpha in [-0.6, -0.3, 0.0, 0.3, 0.6] {
        let r = ap_constant(&basis, WeightModel::Power { alpha }, 2.0)?;
        println!("[|r|^{alpha:+.1}]_A2 = {:.4} (radial model {:.4}), duality error {:.1e}", r.constant, 1.0 / (1.0 - alpha * alpha), r.duality_error);
    }
    let model = KernelModel::ball_closed_form(&d)?;
    for p in [2.0, 4.0 / 3.0, 4.0] {
        let r = weighted_slope_experiment(&model, &basis, &WeightedConfig::new(p), 5)?;
        println!("p = {p:.3}: slope {:.3} (theorem exponent {:.3})", r.slope, r.theory_exponent);
    }
    Ok(())
}
