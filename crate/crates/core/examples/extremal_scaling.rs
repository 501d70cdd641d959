//! Extremal radii tau(xi, u, eps), the extremal frame and the quasimetric rho.
//!
//!     cargo run --release --example extremal_scaling

use dyadic_tents::extremal::{extremal_frame, rho, scale_free_basis, tau};
use dyadic_tents::numeric::linear_fit;
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    let eps: Vec<f64> = (4..=10).map(|k| 2f64.powi(-k)).collect();
    for d in [DomainSpec::ball(2)?, DomainSpec::ellipsoid(&[1, 2])?] {
        let d = d.with_nbhd_width(0.3)?;
        let xi = d.reference_point();
        for (k, u) in scale_free_basis(&d, &xi).iter().enumerate() {
            let ys = eps.iter().map(|&e| tau(&d, &xi, u, e).map(f64::ln)).collect::<dyadic_tents::Result<Vec<_>>>()?;
            let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
            println!("{} u{}: log-log slope {:.4}", d.name(), k + 1, linear_fit(&xs, &ys).0);
        }
        let f = extremal_frame(&d, &xi, 0.01, 1)?;
        println!("  frame radii at eps = 0.01: {:?}", f.radii);
        let mut near = xi.clone();
        near[2] = 0.05;
        let v = rho(&d, &xi, &near)?;
        println!("  rho(xi, xi + 0.05 e3) = {:.4e} (at cap: {})", v.value, v.at_cap);
    }
    Ok(())
}
