//! Window plans for both strategies: offsets, view counts, coverage and
//! seam positions.
//!
//!     cargo run --example plan_views

use spotdiff::planner::{plan_shifted, plan_static};

fn main() -> spotdiff::Result<()> {
    let (wp, w) = (256, 64);

    for stride in [8, 16, 32, 64] {
        let plan = plan_static(wp, w, stride)?;
        let cov = plan.coverage();
        println!(
            "multidiffusion stride {stride:>2}: {:>2} views, coverage {}..{}",
            plan.count(),
            cov.iter().min().unwrap(),
            cov.iter().max().unwrap()
        );
    }

    // Rejected geometries say why.
    if let Err(e) = plan_static(250, 64, 16) {
        println!("250/64/16 rejected: {e}");
    }

    for shift in [0, 10, 63] {
        let plan = plan_shifted(wp, w, shift)?;
        println!(
            "spotdiffusion shift {shift:>2}: offsets {:?}, seams at {:?}",
            plan.offsets,
            plan.boundary_positions()
        );
    }
    Ok(())
}
