//! Projection heatmaps.
//!
//! Each key frame owns seven single-channel images: one per point-model
//! structure (base, tower top, blade centre, blade tips) and one per line
//! structure (tower, nacelle, blades). Values lie in `[0, 1]` and are read as
//! the likelihood that the structure projects to that pixel.
//!
//! Pixel `(u, v)` has its centre at integer coordinates `(u, v)`; `u` runs
//! along a row, `v` down the columns. Sampling is bicubic Catmull-Rom with
//! border replication and returns the analytic spatial gradient.
//!
//! [`render_synthetic`] draws these images directly from a ground-truth
//! turbine and pose, standing in for a learned detector.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::turbine::{instantiate_points, LineId, ModelPointId, PointId, TurbineParams};

/// Floor applied to sampled values before taking the log.
pub const LOG_FLOOR: f64 = 1e-6;

/// Peak brightness bound for clutter blobs.
pub const CLUTTER_MAX_PEAK: f64 = 0.7;

/// Camera-frame depth at which rendered line segments are clipped.
const NEAR_CLIP: f64 = 1e-3;

/// Gaussian footprints are evaluated out to this many standard deviations.
const KERNEL_EXTENT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    PointBase,
    PointTop,
    PointHub,
    PointBlade,
    LineTower,
    LineNacelle,
    LineBlade,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::PointBase,
        Channel::PointTop,
        Channel::PointHub,
        Channel::PointBlade,
        Channel::LineTower,
        Channel::LineNacelle,
        Channel::LineBlade,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Display key, e.g. `P-g`.
    pub fn key(self) -> &'static str {
        match self {
            Channel::PointBase => "P-g",
            Channel::PointTop => "P-t",
            Channel::PointHub => "P-r",
            Channel::PointBlade => "P-b",
            Channel::LineTower => "L-t",
            Channel::LineNacelle => "L-r",
            Channel::LineBlade => "L-b",
        }
    }

    /// File stem inside a frame directory, e.g. `Pg`.
    pub fn file_stem(self) -> &'static str {
        match self {
            Channel::PointBase => "Pg",
            Channel::PointTop => "Pt",
            Channel::PointHub => "Pr",
            Channel::PointBlade => "Pb",
            Channel::LineTower => "Lt",
            Channel::LineNacelle => "Lr",
            Channel::LineBlade => "Lb",
        }
    }

    pub fn for_point(id: PointId) -> Channel {
        match id {
            PointId::Base => Channel::PointBase,
            PointId::TowerTop => Channel::PointTop,
            PointId::Hub => Channel::PointHub,
            PointId::Blade1 | PointId::Blade2 | PointId::Blade3 => Channel::PointBlade,
        }
    }

    pub fn for_line(id: LineId) -> Channel {
        match id {
            LineId::Tower => Channel::LineTower,
            LineId::Nacelle => Channel::LineNacelle,
            LineId::Blade1 | LineId::Blade2 | LineId::Blade3 => Channel::LineBlade,
        }
    }

    /// Channel that carries evidence for a model point or split point.
    pub fn for_model_point(id: ModelPointId) -> Channel {
        match id {
            ModelPointId::Point(p) => Channel::for_point(p),
            ModelPointId::Line { line, .. } => Channel::for_line(line),
        }
    }
}

/// One heatmap channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    /// Validates dimensions and finiteness, then clamps values into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pixel at index {i}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(ImageGrid {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ImageGrid {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        ImageGrid {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Builds a grid from `f(u, v)`, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v).clamp(0.0, 1.0));
            }
        }
        ImageGrid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Whether `pos` lies inside the pixel-centre lattice.
    pub fn contains(&self, pos: &Vector2<f64>) -> bool {
        pos.x >= 0.0
            && pos.y >= 0.0
            && pos.x <= (self.width - 1) as f64
            && pos.y <= (self.height - 1) as f64
    }

    /// Bicubic value and spatial gradient at `pos`.
    pub fn interpolate(&self, pos: &Vector2<f64>) -> (f64, Vector2<f64>) {
        catmull_rom(self.width, self.height, &self.data, pos)
    }

    /// Bilinear value, `None` outside the lattice.
    pub fn sample_bilinear(&self, pos: &Vector2<f64>) -> Option<f64> {
        if !self.contains(pos) {
            return None;
        }
        let x0 = (pos.x.floor() as usize).min(self.width - 1);
        let y0 = (pos.y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = pos.x - x0 as f64;
        let fy = pos.y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

fn catmull_rom_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let dw = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, dw)
}

/// Catmull-Rom bicubic sampling over raw row-major data with replicated borders.
pub(crate) fn catmull_rom(
    width: usize,
    height: usize,
    data: &[f64],
    pos: &Vector2<f64>,
) -> (f64, Vector2<f64>) {
    // beyond two pixels outside the border every tap replicates the edge
    let x = pos.x.clamp(-3.0, width as f64 + 2.0);
    let y = pos.y.clamp(-3.0, height as f64 + 2.0);
    let ix = x.floor();
    let iy = y.floor();
    let (wx, dwx) = catmull_rom_weights(x - ix);
    let (wy, dwy) = catmull_rom_weights(y - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let col = |k: i64| (ix + k - 1).clamp(0, width as i64 - 1) as usize;
    let row = |k: i64| (iy + k - 1).clamp(0, height as i64 - 1) as usize;
    let cols = [col(0), col(1), col(2), col(3)];

    // derivative weights sum to zero, so differencing against the second tap
    // keeps the gradient of a locally constant field exactly zero
    let mut along = [0.0; 4];
    let mut along_d = [0.0; 4];
    for j in 0..4 {
        let r = row(j as i64) * width;
        let reference = data[r + cols[1]];
        for i in 0..4 {
            let g = data[r + cols[i]];
            along[j] += wx[i] * g;
            along_d[j] += dwx[i] * (g - reference);
        }
    }
    let mut value = 0.0;
    let mut gx = 0.0;
    let mut gy = 0.0;
    for j in 0..4 {
        value += wy[j] * along[j];
        gx += wy[j] * along_d[j];
        gy += dwy[j] * (along[j] - along[1]);
    }
    (value, Vector2::new(gx, gy))
}

/// `-log(max(value, eps))` of the bicubic sample and its spatial gradient.
///
/// The sample is also capped at 1 so the cost stays non-negative where the
/// interpolant overshoots; the gradient is zero wherever either bound is
/// active.
pub fn neg_log_prob(grid: &ImageGrid, pos: &Vector2<f64>) -> (f64, Vector2<f64>) {
    let (value, grad) = grid.interpolate(pos);
    if value <= LOG_FLOOR {
        (-LOG_FLOOR.ln(), Vector2::zeros())
    } else if value >= 1.0 {
        (0.0, Vector2::zeros())
    } else {
        (-value.ln(), -grad / value)
    }
}

/// The seven channels of one key frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImageSet {
    pub frame_index: usize,
    channels: Vec<ImageGrid>,
}

impl ProjectionImageSet {
    /// `channels` must be in [`Channel::ALL`] order and share dimensions.
    pub fn new(frame_index: usize, channels: Vec<ImageGrid>) -> Result<Self> {
        if channels.len() != Channel::ALL.len() {
            return Err(Error::invalid(format!(
                "projection image set needs 7 channels, got {}",
                channels.len()
            )));
        }
        let (w, h) = (channels[0].width, channels[0].height);
        if channels.iter().any(|c| c.width != w || c.height != h) {
            return Err(Error::invalid("projection image channels differ in size"));
        }
        Ok(ProjectionImageSet {
            frame_index,
            channels,
        })
    }

    pub fn empty(frame_index: usize, width: usize, height: usize) -> Self {
        ProjectionImageSet {
            frame_index,
            channels: vec![ImageGrid::zeros(width, height); Channel::ALL.len()],
        }
    }

    pub fn channel(&self, c: Channel) -> &ImageGrid {
        &self.channels[c.index()]
    }

    pub fn channels(&self) -> impl Iterator<Item = (Channel, &ImageGrid)> {
        Channel::ALL.into_iter().zip(self.channels.iter())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.channels[0].width, self.channels[0].height)
    }
}

/// Fidelity knobs for the synthetic renderer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Std of point blobs, pixels.
    pub point_sigma: f64,
    /// Falloff of line ridges, pixels.
    pub line_sigma: f64,
    /// Probability that a single structure is missing from its channel.
    pub dropout_prob: f64,
    /// Global Gaussian blur, pixels; zero disables it.
    pub blur_sigma: f64,
    /// Spurious blobs scattered over random channels.
    pub clutter_count: usize,
    pub noise_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            point_sigma: 3.0,
            line_sigma: 2.0,
            dropout_prob: 0.05,
            blur_sigma: 0.75,
            clutter_count: 2,
            noise_seed: 0,
        }
    }
}

impl RenderConfig {
    /// Exact renders: no dropout, blur or clutter.
    pub fn noise_free() -> Self {
        RenderConfig {
            dropout_prob: 0.0,
            blur_sigma: 0.0,
            clutter_count: 0,
            ..Default::default()
        }
    }

    /// Scales the pixel-sized knobs from the 128-pixel reference width.
    pub fn scaled_for_width(mut self, width: usize) -> Self {
        let s = width as f64 / 128.0;
        self.point_sigma *= s;
        self.line_sigma *= s;
        self.blur_sigma *= s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.point_sigma > 0.0 && self.line_sigma > 0.0) {
            return Err(Error::invalid("render sigmas must be positive"));
        }
        if !(self.blur_sigma >= 0.0) || !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::invalid(
                "blur sigma must be non-negative and dropout a probability",
            ));
        }
        Ok(())
    }
}

/// Accumulates structures into a channel by per-pixel maximum.
struct Canvas {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Pixel window `[lo, hi]` covering `[min - pad, max + pad]`, if any.
    fn window(&self, min: Vector2<f64>, max: Vector2<f64>, pad: f64) -> Option<[usize; 4]> {
        let u0 = (min.x - pad).ceil().max(0.0);
        let v0 = (min.y - pad).ceil().max(0.0);
        let u1 = (max.x + pad).floor().min((self.width - 1) as f64);
        let v1 = (max.y + pad).floor().min((self.height - 1) as f64);
        if u0 > u1 || v0 > v1 {
            return None;
        }
        Some([u0 as usize, v0 as usize, u1 as usize, v1 as usize])
    }

    fn blob(&mut self, centre: Vector2<f64>, sigma: f64, peak: f64) {
        let Some([u0, v0, u1, v1]) = self.window(centre, centre, KERNEL_EXTENT * sigma) else {
            return;
        };
        let inv = 1.0 / (2.0 * sigma * sigma);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let d2 = (u as f64 - centre.x).powi(2) + (v as f64 - centre.y).powi(2);
                let val = peak * (-d2 * inv).exp();
                let px = &mut self.data[v * self.width + u];
                *px = px.max(val);
            }
        }
    }

    fn ridge(&mut self, a: Vector2<f64>, b: Vector2<f64>, sigma: f64) {
        let lo = a.inf(&b);
        let hi = a.sup(&b);
        let Some([u0, v0, u1, v1]) = self.window(lo, hi, KERNEL_EXTENT * sigma) else {
            return;
        };
        let inv = 1.0 / (2.0 * sigma * sigma);
        let ab = b - a;
        let len2 = ab.norm_squared();
        for v in v0..=v1 {
            for u in u0..=u1 {
                let p = Vector2::new(u as f64, v as f64);
                let s = if len2 > 0.0 {
                    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d2 = (p - (a + ab * s)).norm_squared();
                let val = (-d2 * inv).exp();
                let px = &mut self.data[v * self.width + u];
                *px = px.max(val);
            }
        }
    }

    fn blur(&mut self, sigma: f64) {
        if sigma <= 0.0 {
            return;
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);

        let (w, h) = (self.width as i64, self.height as i64);
        let mut tmp = vec![0.0; self.data.len()];
        for v in 0..h {
            for u in 0..w {
                let mut acc = 0.0;
                for (k, wk) in kernel.iter().enumerate() {
                    let uu = (u + k as i64 - radius).clamp(0, w - 1);
                    acc += wk * self.data[(v * w + uu) as usize];
                }
                tmp[(v * w + u) as usize] = acc;
            }
        }
        for v in 0..h {
            for u in 0..w {
                let mut acc = 0.0;
                for (k, wk) in kernel.iter().enumerate() {
                    let vv = (v + k as i64 - radius).clamp(0, h - 1);
                    acc += wk * tmp[(vv * w + u) as usize];
                }
                self.data[(v * w + u) as usize] = acc;
            }
        }
    }

    fn into_grid(self) -> ImageGrid {
        // stored heatmaps are f32, so renders are too
        ImageGrid::from_fn(self.width, self.height, |u, v| {
            self.data[v * self.width + u] as f32 as f64
        })
    }
}

/// Clips a camera-frame segment to the near plane and projects it.
fn project_segment(
    k: &CameraIntrinsics,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let (mut a, mut b) = (*a, *b);
    if a.z < NEAR_CLIP && b.z < NEAR_CLIP {
        return None;
    }
    if a.z < NEAR_CLIP {
        a = a + (b - a) * ((NEAR_CLIP - a.z) / (b.z - a.z));
    } else if b.z < NEAR_CLIP {
        b = b + (a - b) * ((NEAR_CLIP - b.z) / (a.z - b.z));
    }
    Some((k.project_camera(&a).ok()?, k.project_camera(&b).ok()?))
}

/// Per-frame random stream derived from the render seed.
pub(crate) fn frame_rng(seed: u64, frame_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index as u64);
    rng
}

/// Renders the seven projection images of a ground-truth turbine.
///
/// Point channels carry a unit-peak Gaussian at every point in front of the
/// camera, line channels a ridge `exp(-d^2 / 2 sigma^2)` around every
/// projected segment. Structures are then dropped, the channels blurred and
/// clutter added according to `cfg`. The output depends only on the inputs,
/// `cfg.noise_seed` and `frame_index`.
pub fn render_synthetic(
    theta_gt: &TurbineParams,
    pose_gt: &Pose,
    k: &CameraIntrinsics,
    dims: (usize, usize),
    cfg: &RenderConfig,
    frame_index: usize,
) -> Result<ProjectionImageSet> {
    let (width, height) = dims;
    if width == 0 || height == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    cfg.validate()?;
    let points = instantiate_points(theta_gt)?;
    let mut rng = frame_rng(cfg.noise_seed, frame_index);
    let mut canvases: Vec<Canvas> = Channel::ALL.iter().map(|_| Canvas::new(width, height)).collect();

    for id in PointId::ALL {
        // one draw per structure so the stream does not depend on visibility
        let dropped = rng.gen::<f64>() < cfg.dropout_prob;
        let pc = pose_gt.transform(&points.get(id));
        if dropped {
            continue;
        }
        if let Ok(px) = k.project_camera(&pc) {
            canvases[Channel::for_point(id).index()].blob(px, cfg.point_sigma, 1.0);
        }
    }
    for id in LineId::ALL {
        let dropped = rng.gen::<f64>() < cfg.dropout_prob;
        if dropped {
            continue;
        }
        let (a, b) = id.endpoints();
        let ca = pose_gt.transform(&points.get(a));
        let cb = pose_gt.transform(&points.get(b));
        if let Some((pa, pb)) = project_segment(k, &ca, &cb) {
            canvases[Channel::for_line(id).index()].ridge(pa, pb, cfg.line_sigma);
        }
    }
    for canvas in &mut canvases {
        canvas.blur(cfg.blur_sigma);
    }
    for _ in 0..cfg.clutter_count {
        let channel = rng.gen_range(0..Channel::ALL.len());
        let centre = Vector2::new(
            rng.gen_range(0.0..width as f64),
            rng.gen_range(0.0..height as f64),
        );
        let peak = rng.gen_range(0.3..=CLUTTER_MAX_PEAK);
        canvases[channel].blob(centre, cfg.point_sigma, peak);
    }

    let channels = canvases.into_iter().map(Canvas::into_grid).collect();
    ProjectionImageSet::new(frame_index, channels)
}
