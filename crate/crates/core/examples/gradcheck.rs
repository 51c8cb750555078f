//! Runs the full gradient-check suite: every layer, the policy network and
//! the meta-gradient of each inner loss.

fn main() {
    let results = milearn::gradcheck::run_all(0);
    for r in &results {
        println!(
            "{:<28} {:>4} params  rel err {:.2e}  {}",
            r.name,
            r.params,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", results.len());
}
