//! Writes a small synthetic dataset to a directory and prints its layout.
//!
//! cargo run --example synthetic_dataset -- /tmp/fod-data

use fodloc::data::{build_dataset, load_annotations, PatchSpec, Split, SyntheticSceneConfig};

fn main() -> fodloc::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fod-data".into());
    let out = std::path::Path::new(&out);

    let mut cfg = SyntheticSceneConfig::new(7, PatchSpec::square(64)?);
    cfg.fraction_clean = 0.3;
    let manifest = build_dataset(&cfg, 20, 10, out)?;
    let gts = load_annotations(&manifest.annotations_path(), &cfg.patch)?;

    println!(
        "{} train / {} test patches in {}",
        manifest.split(Split::Train).count(),
        manifest.split(Split::Test).count(),
        out.display()
    );
    for g in &gts {
        println!("  {} {:>9} {:?}", g.patch_id, g.label, g.bbox);
    }
    Ok(())
}
