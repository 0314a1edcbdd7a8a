//! Scores a hand-written detection CSV against annotations and sweeps the
//! IoU threshold.

use fodloc::data::read_annotations;
use fodloc::data::PatchSpec;
use fodloc::eval::{default_sweep_thresholds, evaluate, threshold_sweep};
use fodloc::pipeline::read_detections;

const DETECTIONS: &str = "\
patch_id,x_min,y_min,x_max,y_max,mean_difference,label,score
p1,10,10,30,30,0.41,,
p2,0,0,12,12,0.22,,
p3,40,40,60,58,0.35,bolt,0.93
";

const ANNOTATIONS: &str = "\
patch_id,x_min,y_min,x_max,y_max,label
p1,12,12,30,32,wrench
p2,30,30,50,50,bolt
p3,40,42,60,60,bolt
";

fn main() -> fodloc::Result<()> {
    let dets = read_detections(DETECTIONS.as_bytes())?;
    let gts = read_annotations(ANNOTATIONS.as_bytes(), &PatchSpec::square(64)?)?;

    let report = evaluate(&dets, &gts, 0.3);
    report.write_csv(std::io::stdout().lock()).expect("stdout");

    let curve = threshold_sweep(&dets, &gts, &default_sweep_thresholds())?;
    curve.write_table(std::io::stdout().lock()).expect("stdout");
    println!("non-increasing: {}", curve.is_non_increasing());
    Ok(())
}
