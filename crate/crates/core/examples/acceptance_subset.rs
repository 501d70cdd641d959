//! Runs selected acceptance criteria at full desk scale (4000 points, 8 grids).
//! Criteria come from the command line, default `1 4 5`.
//!
//!     cargo run --release --example acceptance_subset -- 1 4 5 8

use dyadic_tents::suite::{Suite, SuiteConfig};

fn main() -> dyadic_tents::Result<()> {
    let ids: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids = if ids.is_empty() { vec![1, 4, 5] } else { ids };
    let suite = Suite::new(SuiteConfig::default())?;
    for i in ids {
        println!("{}", suite.run(i).line());
    }
    Ok(())
}
