//! Model domains: defining functions, jets, convexity and the C_Omega estimate.
//!
//!     cargo run --release --example domain_model

use dyadic_tents::domain::{convexity_check, estimate_c_omega, finite_difference_check, gradient_band_check};
use dyadic_tents::DomainSpec;

fn main() -> dyadic_tents::Result<()> {
    for d in [DomainSpec::ball(2)?, DomainSpec::ellipsoid(&[1, 2])?] {
        let xi = d.reference_point();
        let jet = d.eval_jet(&xi)?;
        println!("{}: r(xi) = {:.1e}, grad r(xi) = {:?}", d.name(), jet.value, jet.gradient);
        println!("  json {}", d.to_json());
        let cv = convexity_check(&d, 300, 1)?;
        let gb = gradient_band_check(&d, 300, 2)?;
        let fd = finite_difference_check(&d, 100, 3)?;
        println!("  convexity min eig {:.3e} pass {}", cv.min_eigenvalue, cv.pass);
        println!("  |grad r| on band in [{:.3}, {:.3}] pass {}", gb.band_min, gb.band_max, gb.pass);
        println!("  finite differences: grad {:.1e} hess {:.1e}", fd.gradient_rel_err, fd.hessian_rel_err);
        println!("  C_Omega ~ {:.3}", estimate_c_omega(&d, 300, 4)?);
    }
    Ok(())
}
