//! Difference map, Otsu threshold and extreme-point box for a hand-made
//! reconstruction that misses one object.

use fodloc::imaging::{
    difference_map, extreme_points, otsu_threshold, threshold_map, ImagePatch, OtsuOutcome, Raster,
};

fn main() -> fodloc::Result<()> {
    let background = ImagePatch::new(Raster::filled(48, 48, [0.45, 0.45, 0.42]));
    let mut original = background.clone();
    for y in 20..31 {
        for x in 8..26 {
            original.raster.set_pixel(x, y, [0.9, 0.2, 0.1]);
        }
    }

    let diff = difference_map(&original, &background)?;
    match otsu_threshold(&diff, 256) {
        OtsuOutcome::Threshold(t) => {
            let seg = threshold_map(&diff, t);
            println!("threshold {t:.4}, {} pixels segmented", seg.count());
            println!("box {:?}", extreme_points(&seg));
        }
        OtsuOutcome::Degenerate => println!("nothing to segment"),
    }

    // a perfect reconstruction leaves nothing to threshold
    let same = difference_map(&background, &background)?;
    println!("identical input: {:?}", otsu_threshold(&same, 256));
    Ok(())
}
