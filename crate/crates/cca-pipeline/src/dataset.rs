//! PPM (P6) image IO, deterministic crop sampling and a synthetic
//! training corpus generator.

use std::fs;
use std::path::{Path, PathBuf};

use cca_core::rng;
use cca_core::TensorData;

use crate::error::{io_err, PipelineError, PipelineResult};

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// RGB interleaved, row-major, len = 3 * width * height.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> PipelineResult<Self> {
        if data.len() != 3 * width * height {
            return Err(PipelineError::Dataset(format!(
                "image buffer {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar [1,3,h,w] tensor in the 0..255 value range.
    pub fn to_tensor(&self) -> TensorData<f64> {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0f64; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                let px = self.pixel(x, y);
                for c in 0..3 {
                    data[c * h * w + y * w + x] = px[c] as f64;
                }
            }
        }
        TensorData::new(vec![1, 3, h, w], data).unwrap()
    }

    /// Back from a planar [1,3,h,w] 0..255 tensor, rounding and clamping.
    pub fn from_tensor(t: &TensorData<f64>) -> PipelineResult<Self> {
        if t.shape.len() != 4 || t.shape[0] != 1 || t.shape[1] != 3 {
            return Err(PipelineError::Dataset(format!(
                "expected [1,3,h,w] tensor, got {:?}",
                t.shape
            )));
        }
        let (h, w) = (t.shape[2], t.shape[3]);
        let mut data = vec![0u8; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = t.data[c * h * w + y * w + x].round_ties_even();
                    data[3 * (y * w + x) + c] = v.clamp(0.0, 255.0) as u8;
                }
            }
        }
        RgbImage::new(w, h, data)
    }
}

/// Read a binary PPM (P6, maxval 255).
pub fn read_ppm(path: &Path) -> PipelineResult<RgbImage> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_ppm(&bytes).map_err(|m| PipelineError::Dataset(format!("{}: {m}", path.display())))
}

fn parse_ppm(bytes: &[u8]) -> Result<RgbImage, String> {
    let mut pos = 0usize;
    let mut token = |skip_one_ws: bool| -> Result<Vec<u8>, String> {
        // Skip whitespace and comments.
        loop {
            if pos >= bytes.len() {
                return Err("truncated header".into());
            }
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let tok = bytes[start..pos].to_vec();
        if skip_one_ws {
            if pos >= bytes.len() {
                return Err("truncated after header".into());
            }
            pos += 1; // single whitespace before raster
        }
        Ok(tok)
    };
    if token(false)? != b"P6" {
        return Err("not a P6 ppm".into());
    }
    let parse_num = |tok: Vec<u8>| -> Result<usize, String> {
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| "bad header number".into())
    };
    let width = parse_num(token(false)?)?;
    let height = parse_num(token(false)?)?;
    let maxval = parse_num(token(true)?)?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    let need = 3 * width * height;
    if bytes.len() < pos + need {
        return Err(format!(
            "raster truncated: need {need} bytes, have {}",
            bytes.len() - pos
        ));
    }
    RgbImage::new(width, height, bytes[pos..pos + need].to_vec()).map_err(|e| e.to_string())
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> PipelineResult<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Deterministic random-crop sampler over a fixed image list.
pub struct CropSampler {
    images: Vec<RgbImage>,
    names: Vec<String>,
    crop: usize,
    seed: u64,
}

impl CropSampler {
    /// Load every `.ppm` in a directory (sorted by name). Undersized
    /// images are skipped and reported in the warning list.
    pub fn load_dir(dir: &Path, crop: usize, seed: u64) -> PipelineResult<(Self, Vec<String>)> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "ppm").unwrap_or(false))
            .collect();
        files.sort();
        let mut images = Vec::new();
        let mut names = Vec::new();
        let mut warnings = Vec::new();
        for f in files {
            let img = read_ppm(&f)?;
            let name = f
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            if img.width < crop || img.height < crop {
                warnings.push(format!(
                    "{name}: {}x{} smaller than crop {crop}",
                    img.width, img.height
                ));
                continue;
            }
            images.push(img);
            names.push(name);
        }
        if images.is_empty() {
            return Err(PipelineError::Dataset(format!(
                "no usable images in {}",
                dir.display()
            )));
        }
        Ok((
            CropSampler {
                images,
                names,
                crop,
                seed,
            },
            warnings,
        ))
    }

    pub fn from_images(images: Vec<RgbImage>, crop: usize, seed: u64) -> PipelineResult<Self> {
        if images.is_empty() {
            return Err(PipelineError::Dataset("empty image set".into()));
        }
        if images.iter().any(|i| i.width < crop || i.height < crop) {
            return Err(PipelineError::Dataset(
                "image smaller than the crop size".into(),
            ));
        }
        let names = (0..images.len()).map(|i| format!("image{i}")).collect();
        Ok(CropSampler {
            images,
            crop,
            seed,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Crop tensor [1,3,c,c] (0..255 values) for a global draw index.
    pub fn sample(&self, draw: u64) -> (TensorData<f64>, usize) {
        let key = rng::derive_key(&[self.seed, 0xC404]);
        let idx = rng::uniform_index(key, 3 * draw, self.images.len());
        let img = &self.images[idx];
        let x0 = rng::uniform_index(key, 3 * draw + 1, img.width - self.crop + 1);
        let y0 = rng::uniform_index(key, 3 * draw + 2, img.height - self.crop + 1);
        let c = self.crop;
        let mut data = vec![0.0f64; 3 * c * c];
        for y in 0..c {
            for x in 0..c {
                let px = img.pixel(x0 + x, y0 + y);
                for ch in 0..3 {
                    data[ch * c * c + y * c + x] = px[ch] as f64;
                }
            }
        }
        (TensorData::new(vec![1, 3, c, c], data).unwrap(), idx)
    }

    pub fn batch(&self, step: u64, batch_size: usize) -> Vec<TensorData<f64>> {
        (0..batch_size)
            .map(|i| self.sample(step * batch_size as u64 + i as u64).0)
            .collect()
    }
}

/// Deterministic synthetic image: smooth cosine fields, a few soft
/// shapes and mild texture noise, loosely photographic statistics.
pub fn synth_image(seed: u64, width: usize, height: usize) -> RgbImage {
    let key = rng::derive_key(&[seed, 0x5EED]);
    let mut data = vec![0u8; 3 * width * height];
    let nw = 2 + rng::uniform_index(key, 0, 3);
    let waves: Vec<[f64; 4]> = (0..nw)
        .map(|i| {
            [
                rng::uniform_sym(key, 10 + 4 * i as u64, 60.0),
                rng::uniform_sym(key, 11 + 4 * i as u64, 0.09),
                rng::uniform_sym(key, 12 + 4 * i as u64, 0.09),
                rng::uniform_sym(key, 13 + 4 * i as u64, 3.0),
            ]
        })
        .collect();
    let ns = 2 + rng::uniform_index(key, 1, 4);
    struct Shape {
        cx: f64,
        cy: f64,
        r: f64,
        soft: f64,
        color: [f64; 3],
        rect: bool,
    }
    let shapes: Vec<Shape> = (0..ns)
        .map(|i| {
            let b = 100 + 8 * i as u64;
            Shape {
                cx: (rng::uniform_pm_half(key, b) + 0.5) * width as f64,
                cy: (rng::uniform_pm_half(key, b + 1) + 0.5) * height as f64,
                r: (rng::uniform_pm_half(key, b + 2) + 0.6) * 0.35 * width.min(height) as f64,
                soft: 1.5 + (rng::uniform_pm_half(key, b + 3) + 0.5) * 6.0,
                color: [
                    rng::uniform_sym(key, b + 4, 90.0),
                    rng::uniform_sym(key, b + 5, 90.0),
                    rng::uniform_sym(key, b + 6, 90.0),
                ],
                rect: rng::uniform_index(key, b + 7, 2) == 0,
            }
        })
        .collect();
    let base = [
        128.0 + rng::uniform_sym(key, 7, 50.0),
        128.0 + rng::uniform_sym(key, 8, 50.0),
        128.0 + rng::uniform_sym(key, 9, 50.0),
    ];
    for y in 0..height {
        for x in 0..width {
            let mut luma = 0.0;
            for w in &waves {
                luma += w[0] * (w[1] * x as f64 + w[2] * y as f64 + w[3]).cos();
            }
            let mut px = [base[0] + luma, base[1] + 0.8 * luma, base[2] + 1.2 * luma];
            for s in &shapes {
                let d = if s.rect {
                    (x as f64 - s.cx).abs().max((y as f64 - s.cy).abs())
                } else {
                    ((x as f64 - s.cx).powi(2) + (y as f64 - s.cy).powi(2)).sqrt()
                };
                let t = 1.0 / (1.0 + ((d - s.r) / s.soft).exp());
                for (p, c) in px.iter_mut().zip(&s.color) {
                    *p += t * c;
                }
            }
            let nidx = (y * width + x) as u64;
            for (c, &v) in px.iter().enumerate() {
                let noise = rng::uniform_sym(key, 10_000 + 3 * nidx + c as u64, 3.0);
                data[3 * (y * width + x) + c] = (v + noise).clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage {
        width,
        height,
        data,
    }
}

/// A fixed synthetic corpus; index ranges disjoint from `synth_image`
/// seeds used elsewhere select held-out material.
pub fn synth_corpus(seed: u64, count: usize, width: usize, height: usize) -> Vec<RgbImage> {
    (0..count)
        .map(|i| synth_image(rng::derive_key(&[seed, i as u64]), width, height))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let img = synth_image(5, 37, 23);
        let dir = std::env::temp_dir().join("cca_ppm_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.ppm");
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_parses_comments_and_rejects_garbage() {
        let ok = b"P6 # comment\n# another\n2 1\n255\n\x01\x02\x03\x04\x05\x06";
        let img = parse_ppm(ok).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert!(parse_ppm(b"P5 2 1 255 xxxxxx").is_err());
        assert!(parse_ppm(b"P6 2 1 255 \x01").is_err());
        assert!(parse_ppm(b"P6 2 1 65535 xxxxxx").is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_in_range() {
        let imgs = synth_corpus(9, 7, 48, 40);
        let s1 = CropSampler::from_images(imgs.clone(), 32, 123).unwrap();
        let s2 = CropSampler::from_images(imgs, 32, 123).unwrap();
        for draw in 0..32 {
            let (a, _) = s1.sample(draw);
            let (b, _) = s2.sample(draw);
            assert_eq!(a.data, b.data);
            assert!(a.data.iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn sampler_covers_all_files() {
        let imgs = synth_corpus(11, 13, 40, 40);
        let s = CropSampler::from_images(imgs, 32, 7).unwrap();
        let mut seen = vec![false; 13];
        // Coupon collector at n=13 needs ~41 draws in expectation; 600
        // draws make a miss essentially impossible.
        for draw in 0..600 {
            seen[s.sample(draw).1] = true;
        }
        assert!(seen.iter().all(|&s| s), "{seen:?}");
    }

    #[test]
    fn tensor_roundtrip_and_crop_values() {
        let img = synth_image(3, 32, 32);
        let t = img.to_tensor();
        assert_eq!(t.shape, vec![1, 3, 32, 32]);
        let back = RgbImage::from_tensor(&t).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn synthetic_images_have_structure() {
        // Not constant, not white noise: neighbor correlation is high.
        let img = synth_image(21, 64, 64);
        let t = img.to_tensor();
        let mut same = 0.0;
        let mut diff = 0.0;
        let mut n = 0.0;
        for y in 0..63 {
            for x in 0..63 {
                let a = t.data[y * 64 + x];
                same += (a - t.data[y * 64 + x + 1]).abs();
                diff += (a - t.data[((y + 31) % 64) * 64 + ((x + 31) % 64)]).abs();
                n += 1.0;
            }
        }
        assert!(same / n < 0.6 * diff / n, "no spatial structure");
    }
}
