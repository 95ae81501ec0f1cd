//! Central-difference gradient checks for every op, every layer and the
//! micro model under all sixteen toggle combinations.
//!
//! cargo run --release --example gradient_check

use etlab::gradcheck::{full_suite, TOLERANCE};

fn main() -> etlab::Result<()> {
    let (reports, elapsed) = full_suite(2)?;
    for r in &reports {
        let mark = if r.passed() { " " } else { "!" };
        print!("{mark} {:<56} {:.3e}", r.name, r.max_rel_error);
        // failures on tiny gradients sit at the finite-difference roundoff floor
        if let (false, Some((input, w))) = (r.passed(), &r.worst) {
            print!("  worst {input}: |a-n|={:.1e}, floor {:.1e}", (w.analytic - w.numeric).abs(), w.roundoff_floor());
        }
        println!();
    }
    let passed = reports.iter().filter(|r| r.passed()).count();
    println!("{passed}/{} within {TOLERANCE:e}, {:.1}s", reports.len(), elapsed.as_secs_f64());
    Ok(())
}
