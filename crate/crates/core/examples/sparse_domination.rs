//! Tent averages, the dyadic maximal function, the sparse operator and the
//! sparse-domination check on the ball.
//!
//!     cargo run --release --example sparse_domination

use dyadic_tents::bergman::{hybrid_quadrature, KernelModel};
use dyadic_tents::boundary::{build_adjacent_family, sample_boundary, with_voronoi_weights, GridParams};
use dyadic_tents::geometry::FlowTable;
use dyadic_tents::sparse::{sparse_domination_check, SparseConfig, TentBasis, TestFunction};
use dyadic_tents::tents::normal_lift;
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
    println!("{} tents over {} quadrature nodes", basis.len(), q.len());

    let z = normal_lift(&d, &d.reference_point(), 0.01);
    let one = TestFunction::Constant { value: 1.0 }.on_nodes(&basis);
    let one: Vec<f64> = one.iter().map(|c| c.re).collect();
    let e = basis.sparse_apply(&one, &z)?;
    println!("A1(z) = {} from {} tents", e.value, e.contributors.len());
    let (_, tents) = basis.tents_at(&z)?;
    let tight = *tents.last().unwrap();
    let ind: Vec<f64> = TestFunction::TentIndicator { tent: tight }.on_nodes(&basis).iter().map(|c| c.re).collect();
    println!("M 1_T(z) = {:.3} for T = {}", basis.maximal(&ind, &z, None)?, basis.index.label(tight));

    let r = sparse_domination_check(&KernelModel::ball_closed_form(&d)?, &basis, &SparseConfig::for_family(&fam), 4)?;
    println!("C_s {:.4}, rung statistics {:?}, depth ratio {:.3}, violations {}", r.c_s, r.rung_stat, r.depth_ratio, r.violations.len());
    Ok(())
}
