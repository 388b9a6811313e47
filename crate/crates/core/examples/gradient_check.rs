//! Check every gradient of a small full model against central differences,
//! then run the rest of the built-in consistency checks.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use mvan::model::Variant;
use mvan::selfcheck::{model_gradient_check, run_selfcheck, toy_model, GRADIENT_TOLERANCE};

fn main() -> mvan::Result<()> {
    let (model, batch) = toy_model(Variant::Mvan, 0)?;
    let report = model_gradient_check(&model, &batch)?;
    println!("{:<40} {:>12}", "parameter", "max rel err");
    for (name, err) in &report.per_param {
        println!("{name:<40} {err:>12.2e}");
    }
    println!(
        "{} coordinates, worst {:.2e} in {}",
        report.checked,
        report.max_rel_error,
        report.worst_param.as_deref().unwrap_or("-")
    );
    assert!(report.passes(GRADIENT_TOLERANCE));

    println!();
    let mut ok = true;
    for c in run_selfcheck(0) {
        println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    if !ok {
        std::process::exit(1);
    }
    Ok(())
}
