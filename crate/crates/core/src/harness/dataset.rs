//! Image datasets: the synthetic generator, the raw-tensor container, the
//! external manifest loader and bicubic resampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::nn::Tensor;
use crate::rng::{stream_id, stream_rng};

const TENSOR_MAGIC: &str = "RAW-TENSOR";
const STREAM_SYNTH: u64 = 0x5359_4e54;
const STREAM_SPLIT: u64 = 0x5350_4c54;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> char {
        match self {
            Split::Train => 't',
            Split::Val => 'v',
            Split::Test => 's',
        }
    }

    fn from_code(c: char) -> Option<Self> {
        match c {
            't' => Some(Split::Train),
            'v' => Some(Split::Val),
            's' => Some(Split::Test),
            _ => None,
        }
    }
}

/// Generator settings for smooth band-correlated random fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub count: usize,
    pub bands: usize,
    pub size: usize,
    /// Gaussian smoothing width range in pixels; one width per image.
    pub smooth_px: [f64; 2],
    /// Weight of the structure shared by all bands.
    pub shared_weight: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { count: 512, bands: 3, size: 16, smooth_px: [1.5, 3.0], shared_weight: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Synthetic { seed: u64, params: SynthParams },
    External { manifest: String },
}

/// Images `(bands, H, W)` in `[0, 1]` with a train/val/test assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: [usize; 3],
    pub images: Vec<Vec<f32>>,
    pub splits: Vec<Split>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    shape: [usize; 3],
    splits: String,
    provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Stacks the chosen images into `(n, bands, H, W)`.
    pub fn batch(&self, idx: &[usize]) -> Tensor<f32> {
        let [b, h, w] = self.shape;
        let mut data = Vec::with_capacity(idx.len() * b * h * w);
        for &i in idx {
            data.extend_from_slice(&self.images[i]);
        }
        Tensor::from_vec(&[idx.len(), b, h, w], data).expect("images share the dataset shape")
    }

    /// SHA-256 over shape, pixels and split assignment.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for d in self.shape {
            h.update((d as u64).to_le_bytes());
        }
        for img in &self.images {
            for v in img {
                h.update(v.to_le_bytes());
            }
        }
        h.update(self.splits.iter().map(|s| s.code()).collect::<String>().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let n: usize = self.shape.iter().product();
        if self.splits.len() != self.images.len() {
            return Err(HarnessError::Data(format!("{} split labels for {} images", self.splits.len(), self.images.len())));
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.len() != n {
                return Err(HarnessError::Data(format!("image {i} has {} values, shape needs {n}", img.len())));
            }
            if let Some(j) = img.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(HarnessError::Data(format!("image {i} pixel {j} = {} outside [0, 1]", img[j])));
            }
        }
        Ok(())
    }

    /// Writes `dataset.toml` and `images.rawt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        let [b, h, w] = self.shape;
        let flat: Vec<f64> = self.images.iter().flatten().map(|&v| f64::from(v)).collect();
        RawTensor { dtype: DType::F32, shape: vec![self.len(), b, h, w], data: flat }.write(&dir.join("images.rawt"))?;
        let meta = DatasetMeta {
            shape: self.shape,
            splits: self.splits.iter().map(|s| s.code()).collect(),
            provenance: self.provenance.clone(),
        };
        write_atomic(&dir.join("dataset.toml"), toml::to_string(&meta)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let meta: DatasetMeta = toml::from_str(&fs::read_to_string(dir.join("dataset.toml"))?)?;
        let t = RawTensor::read(&dir.join("images.rawt"))?;
        let per: usize = meta.shape.iter().product();
        if t.shape.len() != 4 || t.shape[1..] != meta.shape {
            return Err(HarnessError::Data(format!("images.rawt shape {:?} does not match {:?}", t.shape, meta.shape)));
        }
        let images: Vec<Vec<f32>> = t.data.chunks(per).map(|c| c.iter().map(|&v| v as f32).collect()).collect();
        let splits = meta
            .splits
            .chars()
            .map(|c| Split::from_code(c).ok_or_else(|| HarnessError::Data(format!("unknown split code {c:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let ds = Self { shape: meta.shape, images, splits, provenance: meta.provenance };
        ds.validate()?;
        Ok(ds)
    }
}

/// 80/10/10 train/val/test assignment from a seeded permutation.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let n_val = ((n as f64 * 0.1).round() as usize).max(usize::from(n >= 3)).min(n);
    let n_train = ((n as f64 * 0.8).round() as usize).min(n - n_val);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            splits[i] = Split::Train;
        } else if rank < n_train + n_val {
            splits[i] = Split::Val;
        }
    }
    splits
}

/// Periodic Gaussian blur of a `size × size` field.
fn blur(field: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let n = size as isize;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for (ki, d) in (-radius..=radius).enumerate() {
                    let (rr, cc) = if horizontal { (r, (c + d).rem_euclid(n)) } else { ((r + d).rem_euclid(n), c) };
                    acc += kernel[ki] * src[(rr * n + cc) as usize];
                }
                out[(r * n + c) as usize] = acc / norm;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Smooth band-correlated images: each band mixes a shared low-pass field
/// with its own, then the whole image is rescaled onto `[0, 1]`.
pub fn generate_synthetic(params: &SynthParams, seed: u64) -> Result<Dataset, HarnessError> {
    if params.count == 0 || params.bands == 0 || params.size < 2 {
        return Err(HarnessError::Config(format!("degenerate synthetic dataset {params:?}")));
    }
    let [lo, hi] = params.smooth_px;
    if !(lo > 0.0 && hi >= lo) || !(0.0..=1.0).contains(&params.shared_weight) {
        return Err(HarnessError::Config(format!("bad generator settings {params:?}")));
    }
    let s = params.size;
    let images = (0..params.count)
        .map(|i| {
            let mut rng = stream_rng(seed, stream_id(&[STREAM_SYNTH, i as u64]));
            let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let field = |rng: &mut crate::rng::StreamRng| {
                let white: Vec<f64> = (0..s * s).map(|_| rng.sample(StandardNormal)).collect();
                let mut f = blur(&white, s, sigma);
                standardize(&mut f);
                f
            };
            let shared = field(&mut rng);
            let w = params.shared_weight;
            let mut img = Vec::with_capacity(params.bands * s * s);
            for _ in 0..params.bands {
                let own = field(&mut rng);
                let gain: f64 = rng.random_range(0.6..1.0);
                let offset: f64 = rng.random_range(-0.5..0.5);
                img.extend(shared.iter().zip(&own).map(|(a, b)| gain * (w * a + (1.0 - w) * b) + offset));
            }
            let min = img.iter().copied().fold(f64::INFINITY, f64::min);
            let max = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = (max - min).max(1e-12);
            img.iter().map(|v| (((v - min) / span) as f32).clamp(0.0, 1.0)).collect()
        })
        .collect();
    Ok(Dataset {
        shape: [params.bands, s, s],
        images,
        splits: assign_splits(params.count, seed),
        provenance: Provenance::Synthetic { seed, params: params.clone() },
    })
}

/// Mean correlation between horizontally adjacent pixels, per band plane.
pub fn adjacent_correlation(ds: &Dataset) -> f64 {
    let [b, h, w] = ds.shape;
    let mut total = 0.0;
    let mut count = 0usize;
    for img in &ds.images {
        for plane in img.chunks(h * w).take(b) {
            let pairs: Vec<(f64, f64)> = (0..h)
                .flat_map(|r| (0..w - 1).map(move |c| (r, c)))
                .map(|(r, c)| (f64::from(plane[r * w + c]), f64::from(plane[r * w + c + 1])))
                .collect();
            let n = pairs.len() as f64;
            let (ma, mb) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
            let cov: f64 = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).sum();
            let va: f64 = pairs.iter().map(|(a, _)| (a - ma).powi(2)).sum();
            let vb: f64 = pairs.iter().map(|(_, b)| (b - mb).powi(2)).sum();
            if va > 0.0 && vb > 0.0 {
                total += cov / (va * vb).sqrt();
                count += 1;
            }
        }
    }
    total / count.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[serde(rename = "f32le")]
    F32,
    #[serde(rename = "f64le")]
    F64,
}

impl DType {
    fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32le",
            DType::F64 => "f64le",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Self-describing tensor file: one text line
/// `RAW-TENSOR 1 <f32le|f64le> <d0>x<d1>x…` followed by row-major
/// little-endian values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims: Vec<String> = self.shape.iter().map(usize::to_string).collect();
        let mut out = format!("{TENSOR_MAGIC} 1 {} {}\n", self.dtype.name(), dims.join("x")).into_bytes();
        for &v in &self.data {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn from_reader<R: BufRead>(mut r: R, origin: &str) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Data(format!("{origin}: {m}"));
        let mut line = String::new();
        r.read_line(&mut line)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != TENSOR_MAGIC || parts[1] != "1" {
            return Err(bad("not a RAW-TENSOR 1 file".into()));
        }
        let dtype = match parts[2] {
            "f32le" => DType::F32,
            "f64le" => DType::F64,
            other => return Err(bad(format!("unsupported dtype {other:?}"))),
        };
        let shape =
            parts[3].split('x').map(|d| d.parse::<usize>().map_err(|e| bad(format!("shape: {e}")))).collect::<Result<Vec<_>, _>>()?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let n: usize = shape.iter().product();
        if bytes.len() != n * dtype.width() {
            return Err(bad(format!("shape {shape:?} needs {} bytes, found {}", n * dtype.width(), bytes.len())));
        }
        let data = match dtype {
            DType::F32 => bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect(),
            DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        };
        Ok(Self { dtype, shape, data })
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        Self::from_reader(BufReader::new(fs::File::open(path)?), &path.display().to_string())
    }
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Keys cubic convolution kernel with `a = −0.5`.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t.powi(3) - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t.powi(3) + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Bicubic resampling of a 1-D line onto `out_n` cell centres. Samples past
/// either end are extrapolated linearly from the two outermost values.
fn resample_line(line: &[f64], out_n: usize) -> Vec<f64> {
    let n = line.len();
    let at = |i: isize| -> f64 {
        if n == 1 {
            return line[0];
        }
        if i < 0 {
            line[0] + i as f64 * (line[1] - line[0])
        } else if i as usize >= n {
            line[n - 1] + (i as f64 - (n - 1) as f64) * (line[n - 1] - line[n - 2])
        } else {
            line[i as usize]
        }
    };
    (0..out_n)
        .map(|j| {
            let x = (j as f64 + 0.5) * n as f64 / out_n as f64 - 0.5;
            let i0 = x.floor();
            let t = x - i0;
            (-1..=2).map(|m| at(i0 as isize + m) * keys(t - m as f64)).sum()
        })
        .collect()
}

/// Separable bicubic resampling of a row-major `h × w` plane.
pub fn resample_bicubic(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let rows: Vec<f64> = src.chunks(w).flat_map(|r| resample_line(r, out_w)).collect();
    let mut out = vec![0.0; out_h * out_w];
    for c in 0..out_w {
        let col: Vec<f64> = (0..h).map(|r| rows[r * out_w + c]).collect();
        for (r, v) in resample_line(&col, out_h).into_iter().enumerate() {
            out[r * out_w + c] = v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandEntry {
    pub file: String,
    pub dtype: DType,
    /// `(H, W)` of the stored plane.
    pub shape: [usize; 2],
    pub resolution_m: f64,
    /// Raw value that maps to 1.0.
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub bands: Vec<BandEntry>,
}

/// Index of external multi-band patches. Band files are headerless planar
/// arrays; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Common grid; defaults to the grid of each sample's finest band.
    #[serde(default)]
    pub target_shape: Option<[usize; 2]>,
    #[serde(default)]
    pub split_seed: u64,
    pub sample: Vec<SampleEntry>,
}

fn read_band(dir: &Path, band: &BandEntry) -> Result<Vec<f64>, HarnessError> {
    let path = dir.join(&band.file);
    let bytes = fs::read(&path).map_err(|e| HarnessError::Band { file: band.file.clone(), msg: e.to_string() })?;
    let n = band.shape[0] * band.shape[1];
    if bytes.len() != n * band.dtype.width() {
        return Err(HarnessError::Band {
            file: band.file.clone(),
            msg: format!("shape {:?} needs {} bytes, file has {}", band.shape, n * band.dtype.width(), bytes.len()),
        });
    }
    Ok(match band.dtype {
        DType::F32 => bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect(),
        DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
    })
}

/// Loads every sample of a manifest, resampling bands onto a common grid
/// and dividing by each band's `max`. Raw values outside `[0, max]` are a
/// range error; bicubic overshoot after resampling is clamped.
pub fn load_manifest(path: &Path) -> Result<Dataset, HarnessError> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest = toml::from_str(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    if manifest.sample.is_empty() {
        return Err(HarnessError::Data(format!("{}: manifest lists no samples", path.display())));
    }
    let mut shape = None;
    let mut images = Vec::with_capacity(manifest.sample.len());
    for s in &manifest.sample {
        if s.bands.is_empty() {
            return Err(HarnessError::Data(format!("sample {:?} has no bands", s.id)));
        }
        let finest = s.bands.iter().min_by(|a, b| a.resolution_m.total_cmp(&b.resolution_m)).expect("non-empty");
        let [th, tw] = manifest.target_shape.unwrap_or(finest.shape);
        let this_shape = [s.bands.len(), th, tw];
        match shape {
            None => shape = Some(this_shape),
            Some(prev) if prev != this_shape => {
                return Err(HarnessError::Data(format!("sample {:?} has shape {this_shape:?}, earlier samples {prev:?}", s.id)))
            }
            _ => {}
        }
        let mut img = Vec::with_capacity(this_shape.iter().product());
        for (bi, band) in s.bands.iter().enumerate() {
            if !(band.max.is_finite() && band.max > 0.0) {
                return Err(HarnessError::Band { file: band.file.clone(), msg: format!("band {bi}: max must be positive") });
            }
            let raw = read_band(dir, band)?;
            if let Some(i) = raw.iter().position(|v| !(*v >= 0.0 && *v <= band.max)) {
                return Err(HarnessError::Range {
                    file: band.file.clone(),
                    band: bi,
                    index: i,
                    value: raw[i],
                    max: band.max,
                });
            }
            let scaled: Vec<f64> = raw.iter().map(|v| v / band.max).collect();
            let plane = resample_bicubic(&scaled, band.shape[0], band.shape[1], th, tw);
            img.extend(plane.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)));
        }
        images.push(img);
    }
    let n = images.len();
    let ds = Dataset {
        shape: shape.expect("at least one sample"),
        images,
        splits: assign_splits(n, manifest.split_seed),
        provenance: Provenance::External { manifest: path.display().to_string() },
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams { count: 40, bands: 3, size: 16, ..Default::default() }
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = generate_synthetic(&small(), 3).unwrap();
        let b = generate_synthetic(&small(), 3).unwrap();
        let c = generate_synthetic(&small(), 4).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        a.validate().unwrap();
        let all: Vec<f32> = a.images.iter().flatten().copied().collect();
        assert!(all.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synthetic_images_are_smooth() {
        let ds = generate_synthetic(&small(), 1).unwrap();
        assert!(adjacent_correlation(&ds) > 0.5, "{}", adjacent_correlation(&ds));
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let s = assign_splits(100, 9);
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (80, 10, 10));
        assert_eq!(s, assign_splits(100, 9));
        let tiny = assign_splits(3, 0);
        assert!(tiny.contains(&Split::Val));
    }

    #[test]
    fn dataset_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small(), 5).unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.hash(), ds.hash());
    }

    #[test]
    fn raw_tensor_round_trip_and_errors() {
        let t = RawTensor { dtype: DType::F64, shape: vec![2, 3], data: vec![0.5, -1.0, 3.25, 1e-300, 7.0, 8.0] };
        let bytes = t.to_bytes();
        assert_eq!(RawTensor::from_reader(&bytes[..], "mem").unwrap(), t);
        assert!(RawTensor::from_reader(&bytes[..bytes.len() - 1], "mem").is_err());
        assert!(RawTensor::from_reader(&b"RAW-TENSOR 1 i8 2\n\x00\x00"[..], "mem").is_err());
    }

    #[test]
    fn bicubic_reproduces_bilinear_ramp() {
        let f = |y: f64, x: f64| 0.1 + 0.05 * y + 0.03 * x + 0.002 * x * y;
        let src: Vec<f64> = (0..8).flat_map(|r| (0..8).map(move |c| f(r as f64, c as f64))).collect();
        let up = resample_bicubic(&src, 8, 8, 16, 16);
        for r in 0..16 {
            for c in 0..16 {
                let (y, x) = ((r as f64 + 0.5) / 2.0 - 0.5, (c as f64 + 0.5) / 2.0 - 0.5);
                assert!((up[r * 16 + c] - f(y, x)).abs() < 1e-3);
            }
        }
    }

    fn write_band(dir: &Path, name: &str, values: &[f32]) {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(name), bytes).unwrap();
    }

    #[test]
    fn manifest_single_band_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f32> = (0..16).map(|i| i as f32 / 17.0).collect();
        write_band(dir.path(), "a.f32", &values);
        let manifest = r#"
[[sample]]
id = "p0"
[[sample.bands]]
file = "a.f32"
dtype = "f32le"
shape = [4, 4]
resolution_m = 10.0
max = 1.0
"#;
        fs::write(dir.path().join("m.toml"), manifest).unwrap();
        let ds = load_manifest(&dir.path().join("m.toml")).unwrap();
        assert_eq!(ds.shape, [1, 4, 4]);
        assert_eq!(ds.images[0], values);
    }

    #[test]
    fn manifest_resamples_coarse_band_and_rejects_range() {
        let dir = tempfile::tempdir().unwrap();
        write_band(dir.path(), "fine.f32", &[100.0; 16]);
        write_band(dir.path(), "coarse.f32", &[50.0; 4]);
        let manifest = r#"
[[sample]]
id = "p0"
bands = [
  { file = "fine.f32", dtype = "f32le", shape = [4, 4], resolution_m = 10.0, max = 200.0 },
  { file = "coarse.f32", dtype = "f32le", shape = [2, 2], resolution_m = 20.0, max = 100.0 },
]
"#;
        fs::write(dir.path().join("m.toml"), manifest).unwrap();
        let ds = load_manifest(&dir.path().join("m.toml")).unwrap();
        assert_eq!(ds.shape, [2, 4, 4]);
        assert!(ds.images[0].iter().all(|&v| (v - 0.5).abs() < 1e-6));

        write_band(dir.path(), "coarse.f32", &[50.0, 150.0, 0.0, 0.0]);
        match load_manifest(&dir.path().join("m.toml")) {
            Err(HarnessError::Range { file, band, index, .. }) => assert_eq!((file.as_str(), band, index), ("coarse.f32", 1, 1)),
            other => panic!("expected a range error, got {other:?}"),
        }
    }
}
