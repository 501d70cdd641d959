//! Flow versus projection tents, the Whitney partition of a layer and the
//! Bergman-flow tree.
//!
//!     cargo run --release --example tent_equivalence

use dyadic_tents::boundary::{build_grid, sample_boundary, GridParams};
use dyadic_tents::tents::{bergman_flow_tree, tent_equivalence_scan, tree_matches_ancestry, whitney_partition_scan};
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    for d in [DomainSpec::ball(2)?, DomainSpec::ellipsoid(&[1, 2])?] {
        let d = d.with_nbhd_width(0.3)?;
        let r = tent_equivalence_scan(&d, &d.reference_point(), &[0.005, 0.01, 0.02, 0.04], 40, 1)?;
        println!("{}: C1 {:.3}, direction ratio {:.3}, ladder spread {:.3}", d.name(), r.c1, r.direction_ratio, r.ladder_spread);
    }
    let d = DomainSpec::ball(2)?.with_nbhd_width(0.3)?;
    let s = sample_boundary(&d, 1000, 2)?;
    let g = build_grid(&d, &s, &GridParams::new(0.125, 2, 2.0, 1.06).waived(), 3)?;
    for k in g.tent_levels() {
        let w = whitney_partition_scan(&d, &s, &g, k, 200_000, 4)?;
        println!("layer {k}: MC volume {:.4e} +- {:.1e}, exact {:.4e}, unambiguous {:.3}", w.layer_volume, w.layer_stderr, w.exact_layer_volume.unwrap(), w.unambiguous_fraction);
    }
    let tree = bergman_flow_tree(&d, &s, &g)?;
    println!("tree: {} nodes, matches cube ancestry: {}", tree.nodes.len(), tree_matches_ancestry(&tree, &g));
    Ok(())
}
