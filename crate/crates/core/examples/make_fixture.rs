//! Writes the bundled demo series: `cargo run -p ssal-core --example make_fixture -- data/fixture.csv`

use std::fmt::Write as _;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/fixture.csv".into());
    let frame = ssal_core::synthetic::fixture(500, 0);
    let mut out = frame.feature_names.join(",");
    out.push('\n');
    for t in 0..frame.len() {
        let row: Vec<String> = frame.values.row(t).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    std::fs::write(&path, out)?;
    println!("wrote {} rows to {path}", frame.len());
    Ok(())
}
