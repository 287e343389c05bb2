//! Synthetic rectangles (+1) and ellipses (−1) under random locally affine
//! distortions.
//!
//! An item is rendered by pulling the clean shape back through
//! `x ↦ ψ(x + η(x))`, where `ψ` blends `K` random affine maps with normalized
//! Gaussian weights and `η` is a smooth periodic displacement built from a few
//! low Fourier modes. Both Jacobians are checked analytically at every
//! supersample so every accepted distortion is orientation preserving.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarImage};
use crate::io::{self, PgmDepth, SCHEMA_VERSION};
use crate::parallel::{map_ordered, Jobs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformationConfig {
    /// Number of affine patches.
    pub patches: usize,
    /// Largest rotation of a patch, degrees.
    pub max_rotation_deg: f64,
    /// Per-axis scale range of a patch.
    pub scale_range: [f64; 2],
    pub max_shear: f64,
    /// Largest translation of a patch as a fraction of the grid.
    pub max_translation: f64,
    /// Patch centres are drawn within this fraction of the grid around the shape centre.
    pub patch_spread: f64,
    /// Gaussian width of the blending weights as a fraction of the grid.
    pub blend_width: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        DeformationConfig {
            patches: 4,
            max_rotation_deg: 20.0,
            scale_range: [0.8, 1.25],
            max_shear: 0.15,
            max_translation: 0.05,
            patch_spread: 0.2,
            blend_width: 0.15,
        }
    }
}

impl DeformationConfig {
    /// No distortion at all.
    pub fn identity() -> Self {
        DeformationConfig {
            max_rotation_deg: 0.0,
            scale_range: [1.0, 1.0],
            max_shear: 0.0,
            max_translation: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Peak amplitude of the smooth random displacement as a fraction of the grid.
    pub magnitude: f64,
    /// Highest Fourier mode used.
    pub max_mode: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            magnitude: 0.1,
            max_mode: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeGenConfig {
    pub grid: GridSpec,
    pub n_per_class: usize,
    /// Range of each side length (rectangle) or diameter (ellipse) as a fraction of the grid.
    pub size_range: [f64; 2],
    /// Largest offset of the shape centre from the grid centre, as a fraction of the grid.
    pub center_jitter: f64,
    /// Orientation is drawn from `[−max, max]` degrees; 90 covers every orientation.
    pub max_orientation_deg: f64,
    /// Scale ellipse axes by `2/√π` so both classes have equal expected area.
    pub equal_area: bool,
    pub deformation: DeformationConfig,
    pub noise: NoiseConfig,
    /// Subsamples per axis per pixel.
    pub supersample: usize,
    /// Clear band at the border the shape support may not enter, as a fraction of the grid.
    pub margin: f64,
    pub max_retries: usize,
    pub depth: PgmDepth,
    pub seed: u64,
}

impl Default for ShapeGenConfig {
    fn default() -> Self {
        ShapeGenConfig {
            grid: GridSpec {
                nx: 64,
                ny: 64,
                hx: 1.0,
                hy: 1.0,
            },
            n_per_class: 100,
            size_range: [0.3, 0.45],
            center_jitter: 0.05,
            max_orientation_deg: 30.0,
            equal_area: true,
            deformation: DeformationConfig::default(),
            noise: NoiseConfig::default(),
            supersample: 4,
            margin: 0.1,
            max_retries: 50,
            depth: PgmDepth::Sixteen,
            seed: 0,
        }
    }
}

impl ShapeGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let [lo, hi] = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::input(format!("size_range must satisfy 0 < lo <= hi < 1, got {:?}", self.size_range)));
        }
        let [slo, shi] = self.deformation.scale_range;
        if !(slo > 0.0 && slo <= shi) {
            return Err(Error::input("deformation scale_range must satisfy 0 < lo <= hi"));
        }
        if self.deformation.patches == 0 || self.supersample == 0 || self.n_per_class == 0 {
            return Err(Error::input("patches, supersample and n_per_class must be >= 1"));
        }
        let nonneg = [
            self.center_jitter,
            self.max_orientation_deg,
            self.deformation.max_rotation_deg,
            self.deformation.max_shear,
            self.deformation.max_translation,
            self.deformation.patch_spread,
            self.noise.magnitude,
            self.margin,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input("generator magnitudes must be finite and >= 0"));
        }
        if !(self.deformation.blend_width > 0.0) {
            return Err(Error::input("blend_width must be > 0"));
        }
        if self.margin >= 0.5 {
            return Err(Error::input("margin must be < 0.5"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Rectangle,
    Ellipse,
}

/// Clean shape: centre, orientation and half-extents.
#[derive(Debug, Clone, Copy)]
struct BaseShape {
    kind: Shape,
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    a: f64,
    b: f64,
}

impl BaseShape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        match self.kind {
            Shape::Rectangle => u.abs() <= self.a && v.abs() <= self.b,
            Shape::Ellipse => (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    cx: f64,
    cy: f64,
    /// Row-major 2×2 linear part.
    m: [f64; 4],
    tx: f64,
    ty: f64,
}

impl Patch {
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (
            self.cx + self.m[0] * dx + self.m[1] * dy + self.tx,
            self.cy + self.m[2] * dx + self.m[3] * dy + self.ty,
        )
    }
}

/// `ψ(x) = Σ_k w_k(x) A_k(x)` with `w_k ∝ exp(−|x − c_k|² / 2s²)`.
struct Blend {
    patches: Vec<Patch>,
    inv_s2: f64,
}

impl Blend {
    /// Value and Jacobian `[∂ψx/∂x, ∂ψx/∂y, ∂ψy/∂x, ∂ψy/∂y]`.
    fn eval(&self, x: f64, y: f64) -> ((f64, f64), [f64; 4]) {
        // log-weights shifted by their max for stability far from every centre
        let mut logw: Vec<f64> = self
            .patches
            .iter()
            .map(|p| -0.5 * ((x - p.cx).powi(2) + (y - p.cy).powi(2)) * self.inv_s2)
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logw.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        // ∇w_k = w_k (g_k − ḡ), g_k = −(x − c_k)/s²
        let (mut gbx, mut gby) = (0.0, 0.0);
        for (w, p) in logw.iter().zip(&self.patches) {
            gbx += w / total * -(x - p.cx) * self.inv_s2;
            gby += w / total * -(y - p.cy) * self.inv_s2;
        }
        let (mut px, mut py) = (0.0, 0.0);
        let mut jac = [0.0; 4];
        for (w, p) in logw.iter().zip(&self.patches) {
            let w = w / total;
            let (ax, ay) = p.apply(x, y);
            let dwx = w * (-(x - p.cx) * self.inv_s2 - gbx);
            let dwy = w * (-(y - p.cy) * self.inv_s2 - gby);
            px += w * ax;
            py += w * ay;
            jac[0] += w * p.m[0] + ax * dwx;
            jac[1] += w * p.m[1] + ax * dwy;
            jac[2] += w * p.m[2] + ay * dwx;
            jac[3] += w * p.m[3] + ay * dwy;
        }
        ((px, py), jac)
    }
}

/// Periodic `η(x) = Σ c·sin(2π(k·x)/L + φ)` per component.
struct SmoothNoise {
    /// `(kx, ky, amplitude, phase)` per component.
    x_modes: Vec<(f64, f64, f64, f64)>,
    y_modes: Vec<(f64, f64, f64, f64)>,
}

impl SmoothNoise {
    fn eval(&self, x: f64, y: f64) -> ((f64, f64), [f64; 4]) {
        let comp = |modes: &[(f64, f64, f64, f64)]| {
            let (mut v, mut dx, mut dy) = (0.0, 0.0, 0.0);
            for &(kx, ky, c, ph) in modes {
                let arg = kx * x + ky * y + ph;
                v += c * arg.sin();
                dx += c * kx * arg.cos();
                dy += c * ky * arg.cos();
            }
            (v, dx, dy)
        };
        let (ex, exx, exy) = comp(&self.x_modes);
        let (ey, eyx, eyy) = comp(&self.y_modes);
        ((ex, ey), [1.0 + exx, exy, eyx, 1.0 + eyy])
    }
}

fn det(m: &[f64; 4]) -> f64 {
    m[0] * m[3] - m[1] * m[2]
}

fn draw_base(cfg: &ShapeGenConfig, kind: Shape, rng: &mut ChaCha8Rng) -> BaseShape {
    let (lx, ly) = extent(&cfg.grid);
    let side = lx.min(ly);
    let [lo, hi] = cfg.size_range;
    let mut a = 0.5 * side * rng.random_range(lo..=hi);
    let mut b = 0.5 * side * rng.random_range(lo..=hi);
    if kind == Shape::Ellipse && cfg.equal_area {
        let s = 2.0 / PI.sqrt();
        a *= s;
        b *= s;
    }
    let m = cfg.max_orientation_deg.to_radians();
    let theta = rng.random_range(-m..=m);
    let j = cfg.center_jitter;
    BaseShape {
        kind,
        cx: 0.5 * lx + lx * rng.random_range(-j..=j),
        cy: 0.5 * ly + ly * rng.random_range(-j..=j),
        cos: theta.cos(),
        sin: theta.sin(),
        a,
        b,
    }
}

fn draw_blend(cfg: &ShapeGenConfig, base: &BaseShape, rng: &mut ChaCha8Rng) -> Blend {
    let d = &cfg.deformation;
    let (lx, ly) = extent(&cfg.grid);
    let patches = (0..d.patches)
        .map(|_| {
            let rot = rng.random_range(-1.0..=1.0) * d.max_rotation_deg.to_radians();
            let sx = rng.random_range(d.scale_range[0]..=d.scale_range[1]);
            let sy = rng.random_range(d.scale_range[0]..=d.scale_range[1]);
            let shear = rng.random_range(-1.0..=1.0) * d.max_shear;
            let (c, s) = (rot.cos(), rot.sin());
            // R · [[1, shear], [0, 1]] · diag(sx, sy)
            let m = [c * sx, (c * shear - s) * sy, s * sx, (s * shear + c) * sy];
            Patch {
                cx: base.cx + lx * d.patch_spread * rng.random_range(-1.0..=1.0),
                cy: base.cy + ly * d.patch_spread * rng.random_range(-1.0..=1.0),
                m,
                tx: lx * d.max_translation * rng.random_range(-1.0..=1.0),
                ty: ly * d.max_translation * rng.random_range(-1.0..=1.0),
            }
        })
        .collect();
    let s = d.blend_width * lx.min(ly);
    Blend {
        patches,
        inv_s2: 1.0 / (s * s),
    }
}

fn draw_noise(cfg: &ShapeGenConfig, rng: &mut ChaCha8Rng) -> SmoothNoise {
    let (lx, ly) = extent(&cfg.grid);
    let kmax = cfg.noise.max_mode as i64;
    let modes: Vec<(i64, i64)> = (0..=kmax)
        .flat_map(|kx| (-kmax..=kmax).map(move |ky| (kx, ky)))
        .filter(|&(kx, ky)| (kx > 0 || ky > 0) && kx * kx + ky * ky <= kmax * kmax)
        .collect();
    // amplitudes sum to at most the configured peak displacement
    let peak = cfg.noise.magnitude * lx.min(ly);
    let per = if modes.is_empty() { 0.0 } else { peak / modes.len() as f64 };
    let draw = |rng: &mut ChaCha8Rng| {
        modes
            .iter()
            .map(|&(kx, ky)| {
                (
                    2.0 * PI * kx as f64 / lx,
                    2.0 * PI * ky as f64 / ly,
                    per * rng.random_range(-1.0..=1.0),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect::<Vec<_>>()
    };
    SmoothNoise {
        x_modes: draw(rng),
        y_modes: draw(rng),
    }
}

fn extent(g: &GridSpec) -> (f64, f64) {
    (g.nx as f64 * g.hx, g.ny as f64 * g.hy)
}

/// Renders one attempt; `None` when the distortion folds or the shape enters the margin.
fn render(cfg: &ShapeGenConfig, base: &BaseShape, blend: &Blend, noise: &SmoothNoise) -> Option<Vec<f64>> {
    let g = &cfg.grid;
    let s = cfg.supersample;
    let weight = 1.0 / (s * s) as f64;
    let (mx, my) = (
        (cfg.margin * g.nx as f64).ceil() as usize,
        (cfg.margin * g.ny as f64).ceil() as usize,
    );
    let mut data = vec![0.0; g.len()];
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let mut acc = 0.0;
            for sy in 0..s {
                for sx in 0..s {
                    let x = (ix as f64 + (sx as f64 + 0.5) / s as f64 - 0.5) * g.hx;
                    let y = (iy as f64 + (sy as f64 + 0.5) / s as f64 - 0.5) * g.hy;
                    let ((nx, ny), jn) = noise.eval(x, y);
                    let ((qx, qy), jb) = blend.eval(x + nx, y + ny);
                    if det(&jn) <= 0.0 || det(&jb) <= 0.0 {
                        return None;
                    }
                    if base.contains(qx, qy) {
                        acc += weight;
                    }
                }
            }
            let inside_band = ix < mx || iy < my || ix + mx >= g.nx || iy + my >= g.ny;
            if inside_band && acc > 0.0 {
                return None;
            }
            data[iy * g.nx + ix] = acc;
        }
    }
    Some(data)
}

/// Quantizes to the PGM depth so written and in-memory images are identical.
fn quantize(data: &mut [f64], depth: PgmDepth) {
    let q = match depth {
        PgmDepth::Eight => 255.0,
        PgmDepth::Sixteen => 65535.0,
    };
    for v in data.iter_mut() {
        *v = ((v.clamp(0.0, 1.0) * q).round() as u32) as f64 / q;
    }
}

fn generate_item(cfg: &ShapeGenConfig, index: usize) -> Result<ScalarImage> {
    let kind = if index < cfg.n_per_class {
        Shape::Rectangle
    } else {
        Shape::Ellipse
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    for attempt in 0..=cfg.max_retries {
        let base = draw_base(cfg, kind, &mut rng);
        let blend = draw_blend(cfg, &base, &mut rng);
        let noise = draw_noise(cfg, &mut rng);
        if let Some(data) = render(cfg, &base, &blend, &noise) {
            if attempt > 0 {
                log::debug!("item {index} accepted after {attempt} retries");
            }
            let mut img = ScalarImage::new(cfg.grid, data)?.min_max_normalized().into_data();
            quantize(&mut img, cfg.depth);
            return ScalarImage::new(cfg.grid, img);
        }
    }
    Err(Error::numerical(
        format!(
            "item {index}: no admissible distortion after {} retries; reduce the deformation scales",
            cfg.max_retries
        ),
        None,
    ))
}

/// Generated images with `+1` (rectangle) and `−1` (ellipse) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDataset {
    pub images: Vec<ScalarImage>,
    pub labels: Vec<i8>,
}

/// `n_per_class` rectangles followed by `n_per_class` ellipses.
pub fn generate(cfg: &ShapeGenConfig, jobs: Jobs) -> Result<ShapeDataset> {
    cfg.validate()?;
    let n = 2 * cfg.n_per_class;
    let idx: Vec<usize> = (0..n).collect();
    let images = map_ordered(jobs, &idx, |&i| generate_item(cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..n).map(|i| if i < cfg.n_per_class { 1 } else { -1 }).collect();
    Ok(ShapeDataset { images, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    config: ShapeGenConfig,
    seed: u64,
    files: Vec<String>,
}

pub fn image_name(index: usize) -> String {
    format!("img_{index:04}.pgm")
}

/// Writes `img_XXXX.pgm`, `labels.csv` and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, data: &ShapeDataset, cfg: &ShapeGenConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = String::from("filename,label\n");
    let mut files = Vec::with_capacity(data.images.len());
    for (i, (img, z)) in data.images.iter().zip(&data.labels).enumerate() {
        let name = image_name(i);
        io::write_pgm(&dir.join(&name), img, cfg.depth)?;
        labels.push_str(&format!("{name},{z}\n"));
        files.push(name);
    }
    io::write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;
    io::write_json(
        &dir.join("manifest.json"),
        &Manifest {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            seed: cfg.seed,
            files,
        },
    )
}

/// Parses a `filename,label` CSV with header; paths are resolved against the CSV's directory.
pub fn read_labels(path: &Path) -> Result<Vec<(PathBuf, i8)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (name, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::format(path, format!("line {}: expected filename,label", lineno + 1)))?;
        let z: i8 = label
            .trim()
            .parse()
            .ok()
            .filter(|z| *z == 1 || *z == -1)
            .ok_or_else(|| Error::format(path, format!("line {}: label must be 1 or -1", lineno + 1)))?;
        out.push((base.join(name.trim()), z));
    }
    Ok(out)
}

/// Loads every image listed in a labels CSV.
pub fn read_dataset(labels_csv: &Path) -> Result<(Vec<PathBuf>, ShapeDataset)> {
    let entries = read_labels(labels_csv)?;
    let missing: Vec<String> = entries
        .iter()
        .filter(|(p, _)| !p.exists())
        .map(|(p, _)| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::input(format!("missing images: {}", missing.join(", "))));
    }
    let images = entries.iter().map(|(p, _)| io::read_pgm(p)).collect::<Result<Vec<_>>>()?;
    let labels = entries.iter().map(|(_, z)| *z).collect();
    let paths = entries.into_iter().map(|(p, _)| p).collect();
    Ok((paths, ShapeDataset { images, labels }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> ShapeGenConfig {
        ShapeGenConfig {
            grid: GridSpec::new(32, 32).unwrap(),
            n_per_class: n,
            ..Default::default()
        }
    }

    #[test]
    fn counts_labels_and_range() {
        let d = generate(&small(3), Jobs::serial()).unwrap();
        assert_eq!(d.images.len(), 6);
        assert_eq!(d.labels, vec![1, 1, 1, -1, -1, -1]);
        for img in &d.images {
            let (lo, hi) = img.data().iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn deterministic_and_independent_of_jobs() {
        let cfg = small(3);
        let a = generate(&cfg, Jobs::serial()).unwrap();
        let b = generate(&cfg, Jobs::new(3)).unwrap();
        assert_eq!(a, b);
        let c = generate(&ShapeGenConfig { seed: 1, ..cfg }, Jobs::serial()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn margin_band_stays_clear() {
        let cfg = small(4);
        let d = generate(&cfg, Jobs::serial()).unwrap();
        let m = (cfg.margin * 32.0).ceil() as usize;
        for img in &d.images {
            for iy in 0..32 {
                for ix in 0..32 {
                    if ix < m || iy < m || ix + m >= 32 || iy + m >= 32 {
                        assert_eq!(img.get(ix, iy), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn undistorted_shapes_match_indicators() {
        let cfg = ShapeGenConfig {
            deformation: DeformationConfig::identity(),
            noise: NoiseConfig {
                magnitude: 0.0,
                ..Default::default()
            },
            ..small(2)
        };
        for i in 0..4 {
            let kind = if i < 2 { Shape::Rectangle } else { Shape::Ellipse };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let base = draw_base(&cfg, kind, &mut rng);
            let img = generate_item(&cfg, i).unwrap();
            // coverage is exact away from the boundary, partial only on boundary pixels
            let mut boundary = 0;
            for iy in 0..32 {
                for ix in 0..32 {
                    let v = img.get(ix, iy);
                    let corners = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
                        .map(|(dx, dy)| base.contains(ix as f64 + dx, iy as f64 + dy));
                    if corners.iter().all(|&c| c) {
                        assert_eq!(v, 1.0, "{ix},{iy}");
                    } else if corners.iter().all(|&c| !c) && base.kind == Shape::Rectangle {
                        assert_eq!(v, 0.0, "{ix},{iy}");
                    } else if v > 0.0 && v < 1.0 {
                        boundary += 1;
                    }
                }
            }
            assert!(boundary > 0);
        }
    }

    #[test]
    fn blend_jacobian_matches_finite_differences() {
        let cfg = ShapeGenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = draw_base(&cfg, Shape::Ellipse, &mut rng);
        let blend = draw_blend(&cfg, &base, &mut rng);
        let noise = draw_noise(&cfg, &mut rng);
        let h = 1e-5;
        let check = |f: &dyn Fn(f64, f64) -> ((f64, f64), [f64; 4]), x: f64, y: f64| {
            let (_, j) = f(x, y);
            let ((ax, ay), _) = f(x + h, y);
            let ((bx, by), _) = f(x - h, y);
            let ((cx, cy), _) = f(x, y + h);
            let ((dx, dy), _) = f(x, y - h);
            let fd = [(ax - bx) / (2.0 * h), (cx - dx) / (2.0 * h), (ay - by) / (2.0 * h), (cy - dy) / (2.0 * h)];
            for k in 0..4 {
                assert!((j[k] - fd[k]).abs() < 1e-6, "{k}: {} vs {}", j[k], fd[k]);
            }
        };
        for &(x, y) in &[(20.0, 30.0), (33.3, 31.1), (45.0, 12.5)] {
            check(&|x, y| blend.eval(x, y), x, y);
            // the noise Jacobian is that of x + η(x)
            check(
                &|x, y| {
                    let ((ex, ey), j) = noise.eval(x, y);
                    ((x + ex, y + ey), j)
                },
                x,
                y,
            );
        }
    }

    #[test]
    fn impossible_margin_errors() {
        let cfg = ShapeGenConfig {
            size_range: [0.9, 0.95],
            max_retries: 2,
            ..small(1)
        };
        assert!(matches!(generate(&cfg, Jobs::serial()), Err(Error::Numerical { .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(2);
        let d = generate(&cfg, Jobs::serial()).unwrap();
        write_dataset(dir.path(), &d, &cfg).unwrap();
        let (paths, back) = read_dataset(&dir.path().join("labels.csv")).unwrap();
        assert_eq!(paths.len(), 4);
        assert_eq!(back, d);
        fs::remove_file(dir.path().join(image_name(1))).unwrap();
        let err = read_dataset(&dir.path().join("labels.csv")).unwrap_err();
        assert!(err.to_string().contains("img_0001.pgm"));
    }
}
