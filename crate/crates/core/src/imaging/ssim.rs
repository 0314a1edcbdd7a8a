use super::{DifferenceMap, ImagePatch, CHANNELS};
use crate::error::{Error, Result};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Structural-dissimilarity map `(1 − SSIM) / 2`, channel-averaged.
///
/// Local statistics use a uniform `window × window` neighbourhood clipped at
/// the patch border. Window sums come from summed-area tables.
pub fn ssim_map(original: &ImagePatch, reconstruction: &ImagePatch, window: usize) -> Result<DifferenceMap> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!("SSIM window must be odd and >= 3, got {window}")));
    }
    let (a, b) = (&original.raster, &reconstruction.raster);
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "patch {}×{} vs reconstruction {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    let r = window / 2;
    let mut acc = vec![0.0f64; w * h];
    for c in 0..CHANNELS {
        let x: Vec<f64> = a.data().iter().skip(c).step_by(CHANNELS).map(|&v| v as f64).collect();
        let y: Vec<f64> = b.data().iter().skip(c).step_by(CHANNELS).map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let tables = [&x, &y, &xx, &yy, &xy].map(|v| SummedArea::new(v, w, h));
        for py in 0..h {
            let (y0, y1) = (py.saturating_sub(r), (py + r + 1).min(h));
            for px in 0..w {
                let (x0, x1) = (px.saturating_sub(r), (px + r + 1).min(w));
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let [sx, sy, sxx, syy, sxy] = tables.each_ref().map(|t| t.sum(x0, y0, x1, y1) / n);
                let vx = (sxx - sx * sx).max(0.0);
                let vy = (syy - sy * sy).max(0.0);
                let cov = sxy - sx * sy;
                let ssim = ((2.0 * sx * sy + C1) * (2.0 * cov + C2)) / ((sx * sx + sy * sy + C1) * (vx + vy + C2));
                acc[py * w + px] += ((1.0 - ssim) / 2.0).clamp(0.0, 1.0);
            }
        }
    }
    DifferenceMap::new(w, h, acc.into_iter().map(|v| (v / CHANNELS as f64) as f32).collect())
}

struct SummedArea {
    w: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(v: &[f64], w: usize, h: usize) -> Self {
        let mut table = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += v[y * w + x];
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        SummedArea { w, table }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.w + 1;
        self.table[y1 * s + x1] - self.table[y0 * s + x1] - self.table[y1 * s + x0] + self.table[y0 * s + x0]
    }
}
