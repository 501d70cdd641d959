//! Runs the twelve acceptance criteria at desk scale and prints one line each.
//!
//! Criterion 9 (kernel-tent bound) is a known, analysed failure at this sample
//! resolution; it is printed as FAIL but does not fail the run. Any other failing
//! criterion does.

use dyadic_tents::suite::{Suite, SuiteConfig};

const KNOWN_RED: &[u32] = &[9];

fn main() {
    let start = std::time::Instant::now();
    let suite = match Suite::new(SuiteConfig::default()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("acceptance setup failed: {e}");
            std::process::exit(1);
        }
    };
    println!("acceptance: setup {:.1} s", start.elapsed().as_secs_f64());
    let mut unexpected = Vec::new();
    for id in 1..=12 {
        let c = suite.run(id);
        let note = match (c.pass, KNOWN_RED.contains(&id)) {
            (false, true) => "  (known red, analysed in the decisions ledger)",
            (false, false) => {
                unexpected.push(id);
                ""
            }
            _ => "",
        };
        println!("{}{note}", c.line());
    }
    println!("acceptance: {:.1} s total", start.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
