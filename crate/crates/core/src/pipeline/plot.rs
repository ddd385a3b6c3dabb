use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::metrics::{read_metrics, MetricsRecord};
use crate::Result;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 24;

/// Rasterizes one or more `(x, y)` series into a line chart with a frame and
/// a zero line when zero lies in range. Axes carry no labels; the file name
/// names the quantity.
pub fn line_chart(series: &[(&[(f64, f64)], Rgb<u8>)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let pts = series.iter().flat_map(|(s, _)| s.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let frame = Rgb([120, 120, 120]);
    for x in MARGIN..WIDTH - MARGIN {
        img.put_pixel(x, MARGIN, frame);
        img.put_pixel(x, HEIGHT - MARGIN, frame);
    }
    for y in MARGIN..=HEIGHT - MARGIN {
        img.put_pixel(MARGIN, y, frame);
        img.put_pixel(WIDTH - MARGIN, y, frame);
    }
    if x0 > x1 {
        return img;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (w, h) = ((WIDTH - 2 * MARGIN) as f64, (HEIGHT - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| {
        (MARGIN as f64 + (x - x0) / (x1 - x0) * w, (HEIGHT - MARGIN) as f64 - (y - y0) / (y1 - y0) * h)
    };
    if y0 < 0.0 && y1 > 0.0 {
        let (_, zy) = to_px(x0, 0.0);
        for x in MARGIN..WIDTH - MARGIN {
            img.put_pixel(x, zy.round() as u32, Rgb([200, 200, 200]));
        }
    }
    for (s, color) in series {
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let p = to_px(x, y);
            let a = prev.unwrap_or(p);
            let n = ((p.0 - a.0).abs().max((p.1 - a.1).abs()).ceil() as usize).max(1);
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let (px, py) = (a.0 + t * (p.0 - a.0), a.1 + t * (p.1 - a.1));
                img.put_pixel((px.round() as u32).min(WIDTH - 1), (py.round() as u32).min(HEIGHT - 1), *color);
            }
            prev = Some(p);
        }
    }
    img
}

/// Writes loss, episode-return and evaluation charts for a metrics file.
pub fn plot(metrics: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let records = read_metrics(metrics)?;
    std::fs::create_dir_all(out_dir)?;
    let mut loss = Vec::new();
    let mut kl = Vec::new();
    let mut returns = Vec::new();
    let mut evals = Vec::new();
    for r in &records {
        match r {
            MetricsRecord::Update { global_step, loss: l, .. } => {
                loss.push((*global_step as f64, l.total));
                kl.push((*global_step as f64, l.kl));
            }
            MetricsRecord::Episode { env_step, episode_return, .. } => returns.push((*env_step as f64, *episode_return)),
            MetricsRecord::Eval { env_step, mean_return, .. } => evals.push((*env_step as f64, *mean_return)),
        }
    }
    let blue = Rgb([30, 90, 200]);
    let red = Rgb([200, 50, 40]);
    let charts = [
        ("loss_total.png", vec![(loss.as_slice(), blue)]),
        ("loss_kl.png", vec![(kl.as_slice(), red)]),
        ("returns.png", vec![(returns.as_slice(), blue), (evals.as_slice(), red)]),
    ];
    let mut written = Vec::new();
    for (name, series) in charts {
        let path = out_dir.join(name);
        line_chart(&series).save(&path)?;
        written.push(path);
    }
    Ok(written)
}
