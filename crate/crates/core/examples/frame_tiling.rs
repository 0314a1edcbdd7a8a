//! Resizes a 4K frame to the 448-pixel grid, splits it into patches and
//! reassembles it.

use fodloc::data::{assemble_patches, grid_shape, resize_to_grid, split_into_patches, Frame, PatchSpec};
use fodloc::imaging::Raster;

fn main() -> fodloc::Result<()> {
    let (w, h) = (3840, 2160);
    let data = (0..w * h * 3).map(|i| ((i / 3) % w) as f32 / w as f32).collect();
    let frame = Frame::new(Raster::new(w, h, data)?, "uas_0001");
    let spec = PatchSpec::field();

    let resized = resize_to_grid(&frame, &spec)?;
    let (rows, cols) = grid_shape(&resized, &spec)?;
    let patches = split_into_patches(&resized, &spec)?;
    println!(
        "{}x{} -> {}x{}: {rows} rows x {cols} cols = {} patches",
        w,
        h,
        resized.width(),
        resized.height(),
        patches.len()
    );

    let back = assemble_patches(&patches, rows, cols, &spec)?;
    println!("reassembled frame identical: {}", back == resized.raster);
    Ok(())
}
