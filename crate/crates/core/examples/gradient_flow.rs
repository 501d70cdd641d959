//! The normalized gradient flow, its area factor and the two boundary projections.
//!
//!     cargo run --release --example gradient_flow

use dyadic_tents::flow::{flow, flow_project, flow_with_area, nearest_project, FlowIntegrator};
use dyadic_tents::numeric::{dist, norm, stream_rng};
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    let ball = DomainSpec::ball(2)?.with_nbhd_width(0.3)?;
    let integ = FlowIntegrator::for_domain(&ball);
    let z = [0.6, 0.0, 0.0, 0.8];
    let p = flow(&ball, &z, 0.1, &integ)?;
    println!("ball: |phi(z, 0.1)| = {:.12}, closed form {:.12}", norm(&p), 0.8f64.sqrt());
    let st = flow_with_area(&ball, &z, 0.1, &integ)?;
    println!("ball: log area factor {:.10}, closed form {:.10}", st.log_area, 1.5 * 0.8f64.ln());

    let ell = DomainSpec::ellipsoid(&[1, 2])?.with_nbhd_width(0.3)?;
    let integ = FlowIntegrator::for_domain(&ell);
    let mut rng = stream_rng(1, 0);
    let (mut resid, mut back, mut gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let w = ell.sample_boundary_point(&mut rng)?;
        let q = flow(&ell, &w, 0.05, &integ)?;
        resid = resid.max((ell.value(&q) + 0.05).abs());
        back = back.max(dist(&flow_project(&ell, &q)?, &w));
        gap = gap.max(dist(&nearest_project(&ell, &q)?, &w));
    }
    println!("ellipsoid: max |r(phi) + t| {resid:.1e}, flow round trip {back:.1e}, |Pi_proj - Pi_flow| up to {gap:.3e}");
    Ok(())
}
