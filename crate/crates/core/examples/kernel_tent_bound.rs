//! Kernel-tent bound scan: |K(z, xi)| Vol(T(Q)) over pairs on a depth ladder.
//!
//!     cargo run --release --example kernel_tent_bound

use dyadic_tents::bergman::{kernel_tent_bound_scan, KernelModel, KernelTentConfig, TentVolumes};
use dyadic_tents::boundary::{build_adjacent_family, sample_boundary, with_voronoi_weights, GridParams};
use dyadic_tents::geometry::FlowTable;
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    let d = DomainSpec::ball(2)?.with_nbhd_width(0.3)?;
    let s = with_voronoi_weights(&d, &sample_boundary(&d, 1500, 1)?, 10, 2)?;
    let fam = build_adjacent_family(&d, &s, &GridParams::new(0.125, 2, 2.0, 1.06).waived(), &[0, 1, 2, 3])?;
    let g = &fam.grids[0];
    let sides: Vec<f64> = (g.n0..=g.finest() + 1).map(|k| g.side(k)).collect();
    let table = FlowTable::build(&d, &s, &sides, 12, 2)?;
    let vols = TentVolumes::from_table(&d, &s, &fam, &table)?;
    let model = KernelModel::ball_closed_form(&d)?;
    let r = kernel_tent_bound_scan(&model, &d, &s, &fam, &vols, &KernelTentConfig::for_family(&fam, 100), 3)?;
    for x in &r.rungs {
        println!("depth {:.3e}: {} pairs, {} at the root, max A {:.3}, median A {:.3}", x.depth, x.pairs, x.root_pairs, x.max_a, x.median_a);
    }
    println!("A {:.3}, depth ratio {:.3}, containment failures {:.4}, pass {}", r.a_max, r.depth_ratio, r.failure_rate, r.pass);
    Ok(())
}
