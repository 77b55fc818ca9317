//! The translate / crop / concatenate round trip behind shifted tiling.
//!
//!     cargo run --example shifted_tiling

use spotdiff::grid::Latent;
use spotdiff::planner::plan_shifted;

fn main() -> spotdiff::Result<()> {
    let x = Latent::from_fn(12, 2, 1, |r, c, _| (10 * r + c) as f64)?;
    let s = 3;

    let moved = x.translate(s);
    println!("row 0:          {:?}", &x.values()[..12]);
    println!("translated by {s}: {:?}", &moved.values()[..12]);

    // Disjoint windows over the translated panorama, then back again.
    let plan = plan_shifted(12, 4, s as usize)?;
    let windows: Vec<Latent> = plan.offsets.iter().map(|&o| moved.crop_window(o, 4)).collect::<Result<_, _>>()?;
    for (k, win) in windows.iter().enumerate() {
        println!("window {k} starts at original column {}: {:?}", plan.source_offset(k), &win.values()[..4]);
    }
    let back = Latent::concat_windows(&windows)?.translate(-s);
    assert_eq!(back, x);

    // Crops past the right edge wrap around.
    let wrapped = x.crop_window(10, 4)?;
    println!("crop at 10, width 4: {:?}", &wrapped.values()[..4]);
    Ok(())
}
