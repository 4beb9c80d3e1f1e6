//! Finite-difference check of every differentiable building block.

fn main() -> anyhow::Result<()> {
    for check in matnet::checks::gradient_suite()? {
        let r = &check.report;
        println!(
            "{:<34} max rel {:.2e}  {}",
            check.name,
            r.max_rel_error,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
