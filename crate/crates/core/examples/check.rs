//! Run the built-in numerical self-checks and print every measured error.

use fvae::verify::{run, Scope};

fn main() -> fvae::Result<()> {
    let scope = std::env::args()
        .nth(1)
        .map(|s| Scope::parse(&s).unwrap_or_else(|| panic!("unknown scope {s}")))
        .unwrap_or(Scope::All);
    let mut ok = true;
    for suite in run(scope)? {
        println!("{}", suite.suite.name());
        for c in &suite.checks {
            println!("  {c}");
        }
        ok &= suite.passed();
    }
    if !ok {
        std::process::exit(1);
    }
    Ok(())
}
