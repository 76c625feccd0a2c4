//! Evaluation and reporting: PSNR, measured bpp, BD-rate, information
//! distribution across bitstream components, and RD sweeps.

use std::path::Path;

use rayon::prelude::*;

use cca_codec::BitstreamContainer;
use cca_pipeline::{compress, decompress, PipelineError, PipelineResult, RgbImage, TrainedModel};

/// One rate-distortion measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub model_id: String,
}

/// Payload-bit shares of the hyperprior and each latent slice.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoDistribution {
    pub z_share: f64,
    pub slice_shares: Vec<f64>,
}

impl InfoDistribution {
    pub fn total(&self) -> f64 {
        self.z_share + self.slice_shares.iter().sum::<f64>()
    }
}

/// 10*log10(255^2 / MSE); +inf for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> PipelineResult<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(PipelineError::Invalid(format!(
            "psnr: dimension mismatch {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut se = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = *x as f64 - *y as f64;
        se += d * d;
    }
    let mse = se / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// (total bpp incl. header, payload-only bpp) over the true dimensions.
pub fn bpp_measure(container: &BitstreamContainer) -> (f64, f64) {
    let pixels = (container.width as f64) * (container.height as f64);
    let total = 8.0 * container.serialized_len() as f64 / pixels;
    let payload = 8.0 * container.payload_len() as f64 / pixels;
    (total, payload)
}

/// Monotone piecewise-cubic (Fritsch-Carlson) slopes.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let mut s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            s = 0.0;
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            s = 3.0 * d0;
        }
        s
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

#[allow(clippy::manual_range_contains)]
fn pchip_eval(x: &[f64], y: &[f64], d: &[f64], q: f64) -> f64 {
    let n = x.len();
    let mut i = match x.binary_search_by(|v| v.partial_cmp(&q).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    };
    if q <= x[0] {
        i = 0;
    }
    let h = x[i + 1] - x[i];
    let t = (q - x[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y[i] + h10 * h * d[i] + h01 * y[i + 1] + h11 * h * d[i + 1]
}

struct Curve {
    psnr: Vec<f64>,
    log_rate: Vec<f64>,
    slopes: Vec<f64>,
}

impl Curve {
    fn build(points: &[RdPoint], min_points: usize) -> PipelineResult<Curve> {
        if points.len() < min_points || points.len() < 3 {
            return Err(PipelineError::Invalid(format!(
                "BD-rate needs at least {min_points} points per curve, got {}",
                points.len()
            )));
        }
        let mut sorted: Vec<&RdPoint> = points.iter().collect();
        sorted.sort_by(|a, b| a.psnr.partial_cmp(&b.psnr).unwrap());
        for w in sorted.windows(2) {
            if w[1].psnr <= w[0].psnr {
                return Err(PipelineError::Invalid(
                    "BD-rate needs strictly increasing PSNR values".into(),
                ));
            }
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN rates
        let degenerate = sorted.iter().any(|p| !(p.bpp > 0.0) || !p.psnr.is_finite());
        if degenerate {
            return Err(PipelineError::Invalid(
                "BD-rate needs finite PSNR and positive rates".into(),
            ));
        }
        let psnr: Vec<f64> = sorted.iter().map(|p| p.psnr).collect();
        let log_rate: Vec<f64> = sorted.iter().map(|p| p.bpp.ln()).collect();
        let slopes = pchip_slopes(&psnr, &log_rate);
        Ok(Curve {
            psnr,
            log_rate,
            slopes,
        })
    }

    fn eval(&self, q: f64) -> f64 {
        pchip_eval(&self.psnr, &self.log_rate, &self.slopes, q)
    }
}

/// Bjontegaard rate difference in percent (negative: `test` is better),
/// integrating piecewise-cubic log-rate over the common PSNR range with
/// composite Simpson on 1000 subintervals. Requires four points per
/// curve.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> PipelineResult<f64> {
    bd_rate_with_min_points(anchor, test, 4)
}

/// BD-rate with a relaxed point-count floor; the paired-training
/// ablation compares three-point curves (its rate points are fixed by
/// protocol), which piecewise-cubic interpolation still supports.
pub fn bd_rate_with_min_points(
    anchor: &[RdPoint],
    test: &[RdPoint],
    min_points: usize,
) -> PipelineResult<f64> {
    let a = Curve::build(anchor, min_points)?;
    let t = Curve::build(test, min_points)?;
    let lo = a.psnr[0].max(t.psnr[0]);
    let hi = a.psnr[a.psnr.len() - 1].min(t.psnr[t.psnr.len() - 1]);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN endpoints
    if !(hi > lo) {
        return Err(PipelineError::Invalid(format!(
            "BD-rate: no PSNR overlap (anchor [{:.2}, {:.2}], test [{:.2}, {:.2}])",
            a.psnr[0],
            a.psnr[a.psnr.len() - 1],
            t.psnr[0],
            t.psnr[t.psnr.len() - 1]
        )));
    }
    const N: usize = 1000;
    let h = (hi - lo) / N as f64;
    let f = |q: f64| t.eval(q) - a.eval(q);
    let mut integral = f(lo) + f(hi);
    for i in 1..N {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * f(lo + i as f64 * h);
    }
    integral *= h / 3.0;
    let mean = integral / (hi - lo);
    Ok(100.0 * (mean.exp() - 1.0))
}

/// Compress each image and report mean payload-bit shares per component.
pub fn info_distribution(
    trained: &TrainedModel<f64>,
    images: &[RgbImage],
) -> PipelineResult<InfoDistribution> {
    if images.is_empty() {
        return Err(PipelineError::Invalid(
            "info_distribution needs at least one image".into(),
        ));
    }
    let per_image: Vec<PipelineResult<Vec<f64>>> = images
        .par_iter()
        .map(|img| {
            let (container, _) = compress(trained, img)?;
            let z = 8.0 * container.z_payload.len() as f64;
            let slices: Vec<f64> = container
                .slice_payloads
                .iter()
                .map(|p| 8.0 * p.len() as f64)
                .collect();
            let total = z + slices.iter().sum::<f64>();
            if total == 0.0 {
                return Err(PipelineError::Invalid("empty payloads".into()));
            }
            let mut shares = vec![z / total];
            shares.extend(slices.iter().map(|b| b / total));
            Ok(shares)
        })
        .collect();
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0.0;
    for r in per_image {
        let shares = r?;
        n += 1.0;
        match &mut acc {
            Some(a) => {
                for (x, s) in a.iter_mut().zip(&shares) {
                    *x += s;
                }
            }
            None => acc = Some(shares),
        }
    }
    let mut shares = acc.unwrap();
    for s in shares.iter_mut() {
        *s /= n;
    }
    Ok(InfoDistribution {
        z_share: shares[0],
        slice_shares: shares[1..].to_vec(),
    })
}

/// Mean (bpp, psnr) of a model over an image set.
pub fn eval_model(
    trained: &TrainedModel<f64>,
    images: &[RgbImage],
) -> PipelineResult<Vec<(f64, f64)>> {
    images
        .par_iter()
        .map(|img| {
            let (container, _) = compress(trained, img)?;
            let out = decompress(trained, &container)?;
            let (bpp, _) = bpp_measure(&container);
            Ok((bpp, psnr(img, &out)?))
        })
        .collect()
}

/// One RD point per (lambda, model), averaged over the image set, sorted
/// by bpp.
pub fn rd_sweep(
    models: &[(f64, TrainedModel<f64>, String)],
    images: &[RgbImage],
) -> PipelineResult<Vec<RdPoint>> {
    let mut points = Vec::new();
    for (lambda, trained, id) in models {
        let per = eval_model(trained, images)?;
        let n = per.len() as f64;
        let bpp = per.iter().map(|p| p.0).sum::<f64>() / n;
        let psnr = per.iter().map(|p| p.1).sum::<f64>() / n;
        points.push(RdPoint {
            lambda: *lambda,
            bpp,
            psnr,
            model_id: id.clone(),
        });
    }
    points.sort_by(|a, b| a.bpp.partial_cmp(&b.bpp).unwrap());
    Ok(points)
}

// --- CSV io -------------------------------------------------------------

pub fn write_rd_csv(path: &Path, points: &[RdPoint]) -> PipelineResult<()> {
    let mut out = String::from("lambda,bpp,psnr,model_id\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.lambda, p.bpp, p.psnr, p.model_id));
    }
    std::fs::write(path, out).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_rd_csv(path: &Path) -> PipelineResult<Vec<RdPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| PipelineError::Invalid("empty csv".into()))?;
    if header.trim() != "lambda,bpp,psnr,model_id" {
        return Err(PipelineError::Invalid(format!(
            "unexpected rd csv header {header:?}"
        )));
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(PipelineError::Invalid(format!(
                "rd csv line {}: expected 4 columns",
                i + 2
            )));
        }
        let parse = |s: &str| -> PipelineResult<f64> {
            s.trim()
                .parse()
                .map_err(|_| PipelineError::Invalid(format!("rd csv line {}: bad number {s:?}", i + 2)))
        };
        points.push(RdPoint {
            lambda: parse(cols[0])?,
            bpp: parse(cols[1])?,
            psnr: parse(cols[2])?,
            model_id: cols[3].trim().to_string(),
        });
    }
    Ok(points)
}

pub fn write_infodist_csv(path: &Path, d: &InfoDistribution) -> PipelineResult<()> {
    let mut out = String::from("component,share\n");
    out.push_str(&format!("z,{}\n", d.z_share));
    for (i, s) in d.slice_shares.iter().enumerate() {
        out.push_str(&format!("slice_{},{}\n", i + 1, s));
    }
    std::fs::write(path, out).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_infodist_csv(path: &Path) -> PipelineResult<InfoDistribution> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("component,share") {
        return Err(PipelineError::Invalid("bad infodist header".into()));
    }
    let mut z = None;
    let mut slices = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (name, val) = line
            .split_once(',')
            .ok_or_else(|| PipelineError::Invalid("bad infodist row".into()))?;
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|_| PipelineError::Invalid(format!("bad share {val:?}")))?;
        if name == "z" {
            z = Some(v);
        } else {
            slices.push(v);
        }
    }
    Ok(InfoDistribution {
        z_share: z.ok_or_else(|| PipelineError::Invalid("missing z row".into()))?,
        slice_shares: slices,
    })
}

pub fn write_eval_csv(path: &Path, rows: &[(String, f64, f64)]) -> PipelineResult<()> {
    let mut out = String::from("image,bpp,psnr\n");
    for (name, bpp, psnr) in rows {
        out.push_str(&format!("{name},{bpp},{psnr}\n"));
    }
    std::fs::write(path, out).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_eval_csv(path: &Path) -> PipelineResult<Vec<(String, f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("image,bpp,psnr") {
        return Err(PipelineError::Invalid("bad eval csv header".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(PipelineError::Invalid("eval csv needs 3 columns".into()));
        }
        let num = |s: &str| -> PipelineResult<f64> {
            s.trim()
                .parse()
                .map_err(|_| PipelineError::Invalid(format!("bad eval number {s:?}")))
        };
        rows.push((cols[0].to_string(), num(cols[1])?, num(cols[2])?));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cca_pipeline::synth_image;

    #[test]
    fn psnr_examples() {
        let a = synth_image(1, 24, 16);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        // +/-1 everywhere: MSE 1 -> 20 log10(255) = 48.13 dB.
        let mut b = a.clone();
        for (i, v) in b.data.iter_mut().enumerate() {
            if *v == 255 || (*v != 0 && i % 2 != 0) {
                *v -= 1;
            } else {
                *v += 1;
            }
        }
        let got = psnr(&a, &b).unwrap();
        assert!((got - 48.130_803_608_679_93).abs() < 0.01, "{got}");

        // MSE = 255^2 -> 0 dB.
        let black = RgbImage::new(4, 4, vec![0; 48]).unwrap();
        let white = RgbImage::new(4, 4, vec![255; 48]).unwrap();
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);

        let small = RgbImage::new(2, 2, vec![0; 12]).unwrap();
        assert!(psnr(&a, &small).is_err());
    }

    #[test]
    fn bpp_measure_examples() {
        // 41-byte header (3 slices), empty payloads, 64x64.
        let c = BitstreamContainer {
            profile_id: 0,
            lambda_index: 0,
            height: 64,
            width: 64,
            model_checksum: 0,
            z_payload: vec![],
            slice_payloads: vec![vec![], vec![], vec![]],
        };
        let (total, payload) = bpp_measure(&c);
        assert!((total - 41.0 * 8.0 / 4096.0).abs() < 1e-12);
        assert!((total - 0.0801).abs() < 2e-4);
        assert_eq!(payload, 0.0);

        // Doubling the width halves total bpp for a fixed payload.
        let mut wide = c.clone();
        wide.width = 128;
        assert!((bpp_measure(&wide).0 - total / 2.0).abs() < 1e-12);
        assert!(payload <= total);
    }

    fn curve(rates: &[f64], psnrs: &[f64]) -> Vec<RdPoint> {
        rates
            .iter()
            .zip(psnrs)
            .map(|(&bpp, &psnr)| RdPoint {
                lambda: 0.0,
                bpp,
                psnr,
                model_id: "m".into(),
            })
            .collect()
    }

    #[test]
    fn bd_rate_identities() {
        let psnrs = [30.0, 32.5, 34.0, 36.0, 38.5];
        let rates = [0.25, 0.4, 0.6, 0.95, 1.5];
        let a = curve(&rates, &psnrs);

        // Identical curves: exactly zero.
        assert!(bd_rate(&a, &a).unwrap().abs() < 1e-12);

        // Test at 0.9x the anchor rates: exactly -10%.
        let t = curve(&rates.map(|r| r * 0.9), &psnrs);
        let bd = bd_rate(&a, &t).unwrap();
        assert!((bd + 10.0).abs() < 0.01, "{bd}");

        // Swap identity: bd(a,t) == -bd(t,a)/(1+bd(t,a)/100).
        let t2 = curve(&[0.22, 0.43, 0.55, 1.02, 1.4], &[30.5, 32.0, 34.5, 36.2, 38.0]);
        let ab = bd_rate(&a, &t2).unwrap();
        let ba = bd_rate(&t2, &a).unwrap();
        assert!((ab + ba / (1.0 + ba / 100.0)).abs() < 1e-9, "{ab} vs {ba}");

        // Input order does not matter.
        let mut shuffled = t2.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 4);
        assert_eq!(bd_rate(&a, &shuffled).unwrap(), ab);
    }

    #[test]
    fn bd_rate_errors() {
        let a = curve(&[0.2, 0.4, 0.8, 1.6], &[30.0, 32.0, 34.0, 36.0]);
        let few = curve(&[0.2, 0.4, 0.8], &[30.0, 32.0, 34.0]);
        assert!(bd_rate(&a, &few).is_err());
        let disjoint = curve(&[0.2, 0.4, 0.8, 1.6], &[40.0, 42.0, 44.0, 46.0]);
        assert!(bd_rate(&a, &disjoint).is_err());
    }

    #[test]
    fn csv_roundtrips() {
        let dir = std::env::temp_dir().join("cca_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("rd.csv");
        let pts = curve(&[0.5, 0.75, 1.0, 2.0], &[31.0, 33.0, 35.0, f64::INFINITY]);
        write_rd_csv(&p, &pts).unwrap();
        let back = read_rd_csv(&p).unwrap();
        assert_eq!(back, pts);

        let d = InfoDistribution {
            z_share: 0.125,
            slice_shares: vec![0.5, 0.25, 0.125],
        };
        let p2 = dir.join("id.csv");
        write_infodist_csv(&p2, &d).unwrap();
        assert_eq!(read_infodist_csv(&p2).unwrap(), d);

        let p3 = dir.join("eval.csv");
        let rows = vec![
            ("a.ppm".to_string(), 0.51, 31.25),
            ("b.ppm".to_string(), 1.5, f64::INFINITY),
        ];
        write_eval_csv(&p3, &rows).unwrap();
        assert_eq!(read_eval_csv(&p3).unwrap(), rows);
    }
}
