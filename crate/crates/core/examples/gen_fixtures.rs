//! Rewrite the committed benchmark fixtures.
//!
//! ```text
//! cargo run -p lipbnb --example gen_fixtures [output-dir]
//! ```

use std::path::PathBuf;

use lipbnb::problems::{generate, problem_json, BENCHMARK_NAMES};

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    std::fs::create_dir_all(&dir)?;
    for name in BENCHMARK_NAMES {
        let weights = generate::fixture_json(name).expect("known benchmark");
        std::fs::write(dir.join(format!("{name}.json")), weights)?;
        let problem = problem_json(name).expect("known benchmark");
        std::fs::write(dir.join(format!("{name}.problem.json")), problem)?;
        println!("wrote {name}");
    }
    Ok(())
}
