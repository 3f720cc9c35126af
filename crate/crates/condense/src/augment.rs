//! Differentiable image augmentation.
//!
//! Every transform is built from graph primitives, so augmented pixels keep
//! gradients and a matching loss evaluated on augmented batches
//! backpropagates through the augmentation into the synthetic images. The
//! siamese entry point applies one parameter draw to two batches, which is
//! what lets gradients computed from augmented real data stay comparable
//! with gradients from identically augmented synthetic data.
//!
//! Parameter draws at the exact identity short-circuit and return the input
//! node unchanged, so an identity augmentation is bit-exact and free.

use autodiff::{AdError, Graph, NodeId, Real, Shape, Tensor};
use rand::Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Coordinates closer than this to an integer snap onto it when building
/// sampling grids, so transforms that are index permutations in exact
/// arithmetic (half-turn rotations, unit scales) stay exact despite
/// trigonometric rounding.
const GRID_SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AugError {
    #[error("augmentation parameter out of range: {0}")]
    OutOfRange(String),
    #[error("no admissible augmentation kinds to sample from")]
    EmptyKindSet,
    #[error("batch shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugKind {
    Crop,
    Cutout,
    Flip,
    Scale,
    Rotate,
    Color,
}

impl AugKind {
    pub const ALL: [AugKind; 6] = [
        AugKind::Crop,
        AugKind::Cutout,
        AugKind::Flip,
        AugKind::Scale,
        AugKind::Rotate,
        AugKind::Color,
    ];
}

macro_rules! enum_text_aug {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self {
                    $($variant => $text),+
                };
                f.write_str(s)
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($variant)),+,
                    other => Err(format!("unknown {} '{}'", stringify!($ty), other)),
                }
            }
        }
    };
}

enum_text_aug!(AugKind {
    AugKind::Crop => "crop",
    AugKind::Cutout => "cutout",
    AugKind::Flip => "flip",
    AugKind::Scale => "scale",
    AugKind::Rotate => "rotate",
    AugKind::Color => "color",
});

/// One sampled transform. Identity is its own variant so the no-op path is
/// explicit; parameter draws landing exactly on the identity normalize to
/// it.
#[derive(Clone, Debug, PartialEq)]
pub enum AugParam {
    Identity,
    /// Integer content shift: output pixel `(y, x)` reads input
    /// `(y + dy, x + dx)`, out-of-bounds reads are zero.
    Crop { dy: i64, dx: i64 },
    /// Zeroes a `side x side` square centered at `(cy, cx)`, clipped to the
    /// image.
    Cutout { cy: i64, cx: i64, side: usize },
    /// Horizontal mirror.
    Flip,
    /// Isotropic zoom about the image center; `factor > 1` magnifies.
    Scale { factor: f64 },
    /// Rotation about the image center, bilinear resampling, zero padding.
    Rotate { degrees: f64 },
    /// Pixel affine color jitter: add `shift`, then mix toward the channel
    /// mean by `saturation`, then toward the per-image mean by `contrast`.
    Color { shift: f64, saturation: f64, contrast: f64 },
}

impl AugParam {
    pub fn is_identity(&self) -> bool {
        match self {
            AugParam::Identity => true,
            AugParam::Crop { dy, dx } => *dy == 0 && *dx == 0,
            AugParam::Cutout { side, .. } => *side == 0,
            AugParam::Flip => false,
            AugParam::Scale { factor } => *factor == 1.0,
            AugParam::Rotate { degrees } => *degrees == 0.0,
            AugParam::Color { shift, saturation, contrast } => {
                *shift == 0.0 && *saturation == 1.0 && *contrast == 1.0
            }
        }
    }
}

/// Sampling ranges for every transform kind.
#[derive(Clone, Debug, PartialEq)]
pub struct AugRanges {
    /// Crop shift bound as a fraction of each spatial extent (rounded up).
    pub crop_pad_frac: f64,
    /// Cutout side as a fraction of the height (rounded up).
    pub cutout_frac: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Rotation bound in degrees; draws are uniform in `[-deg, deg]`.
    pub rotate_deg: f64,
    /// Brightness amplitude: the shift is `(u - 0.5) * brightness` for
    /// `u ~ U[0, 1]`.
    pub brightness: f64,
    /// Saturation draw is uniform in `[0, saturation_max]`.
    pub saturation_max: f64,
    pub contrast_lo: f64,
    pub contrast_hi: f64,
}

impl Default for AugRanges {
    fn default() -> Self {
        Self {
            crop_pad_frac: 0.125,
            cutout_frac: 0.5,
            scale_lo: 1.0 / 1.2,
            scale_hi: 1.2,
            rotate_deg: 15.0,
            brightness: 1.0,
            saturation_max: 2.0,
            contrast_lo: 0.5,
            contrast_hi: 1.5,
        }
    }
}

/// How augmentation parameters are drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum AugStrategy {
    /// Always the identity.
    None,
    /// Always the one given kind.
    Single(AugKind),
    /// Uniform over the admissible kind set, then that kind's parameters.
    Combination,
}

impl fmt::Display for AugStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugStrategy::None => f.write_str("none"),
            AugStrategy::Single(k) => write!(f, "{k}"),
            AugStrategy::Combination => f.write_str("combination"),
        }
    }
}

impl FromStr for AugStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AugStrategy::None),
            "combination" => Ok(AugStrategy::Combination),
            other => other.parse::<AugKind>().map(AugStrategy::Single),
        }
    }
}

/// A complete augmentation distribution: strategy, ranges, and the kind
/// pool for combinations.
#[derive(Clone, Debug, PartialEq)]
pub struct AugDistribution {
    pub strategy: AugStrategy,
    pub ranges: AugRanges,
    /// Kinds a combination draws from.
    pub kinds: Vec<AugKind>,
    /// Removes horizontal flip from combinations; set for digit datasets
    /// whose glyphs are orientation-sensitive.
    pub exclude_flip: bool,
}

impl AugDistribution {
    pub fn new(strategy: AugStrategy) -> Self {
        Self {
            strategy,
            ranges: AugRanges::default(),
            kinds: AugKind::ALL.to_vec(),
            exclude_flip: false,
        }
    }

    pub fn none() -> Self {
        Self::new(AugStrategy::None)
    }

    fn admissible(&self) -> Vec<AugKind> {
        self.kinds
            .iter()
            .copied()
            .filter(|k| !(self.exclude_flip && *k == AugKind::Flip))
            .collect()
    }

    /// Draws one transform for images of the given spatial extent.
    ///
    /// Each kind consumes a fixed number of draws from `rng` in a fixed
    /// order, so a given stream position always yields the same parameter.
    pub fn sample<R: Rng>(&self, h: usize, w: usize, rng: &mut R) -> Result<AugParam, AugError> {
        match &self.strategy {
            AugStrategy::None => Ok(AugParam::Identity),
            AugStrategy::Single(kind) => self.sample_kind(*kind, h, w, rng),
            AugStrategy::Combination => {
                let pool = self.admissible();
                if pool.is_empty() {
                    return Err(AugError::EmptyKindSet);
                }
                let kind = pool[rng.random_range(0..pool.len())];
                self.sample_kind(kind, h, w, rng)
            }
        }
    }

    /// Draws one independent transform per image.
    pub fn sample_each<R: Rng>(
        &self,
        n: usize,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Result<Vec<AugParam>, AugError> {
        (0..n).map(|_| self.sample(h, w, rng)).collect()
    }

    fn sample_kind<R: Rng>(
        &self,
        kind: AugKind,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Result<AugParam, AugError> {
        let r = &self.ranges;
        let param = match kind {
            AugKind::Crop => {
                let py = (r.crop_pad_frac * h as f64).ceil() as i64;
                let px = (r.crop_pad_frac * w as f64).ceil() as i64;
                let dy = rng.random_range(-py..=py);
                let dx = rng.random_range(-px..=px);
                AugParam::Crop { dy, dx }
            }
            AugKind::Cutout => {
                let side = (r.cutout_frac * h as f64).ceil() as usize;
                let cy = rng.random_range(0..h as i64);
                let cx = rng.random_range(0..w as i64);
                AugParam::Cutout { cy, cx, side }
            }
            AugKind::Flip => {
                if rng.random_range(0..2u32) == 1 {
                    AugParam::Flip
                } else {
                    AugParam::Identity
                }
            }
            AugKind::Scale => {
                if r.scale_lo <= 0.0 || r.scale_hi < r.scale_lo {
                    return Err(AugError::OutOfRange(format!(
                        "scale range [{}, {}]",
                        r.scale_lo, r.scale_hi
                    )));
                }
                AugParam::Scale { factor: rng.random_range(r.scale_lo..=r.scale_hi) }
            }
            AugKind::Rotate => {
                if r.rotate_deg < 0.0 {
                    return Err(AugError::OutOfRange(format!("rotate bound {}", r.rotate_deg)));
                }
                AugParam::Rotate { degrees: rng.random_range(-r.rotate_deg..=r.rotate_deg) }
            }
            AugKind::Color => {
                if r.contrast_lo > r.contrast_hi || r.saturation_max < 0.0 {
                    return Err(AugError::OutOfRange(
                        "contrast or saturation range is inverted".into(),
                    ));
                }
                let shift = (rng.random_range(0.0..=1.0) - 0.5) * r.brightness;
                let saturation = rng.random_range(0.0..=r.saturation_max);
                let contrast = rng.random_range(r.contrast_lo..=r.contrast_hi);
                AugParam::Color { shift, saturation, contrast }
            }
        };
        Ok(if param.is_identity() { AugParam::Identity } else { param })
    }
}

fn expect_rank4<T: Real>(g: &Graph<T>, x: NodeId) -> Result<(usize, usize, usize, usize), AugError> {
    let s = g.shape(x);
    if s.ndim() != 4 {
        return Err(AugError::ShapeMismatch(format!("images must be rank 4, got {s}")));
    }
    Ok((s.dim(0), s.dim(1), s.dim(2), s.dim(3)))
}

/// Applies one transform to a whole batch inside the graph.
pub fn apply<T: Real>(g: &mut Graph<T>, x: NodeId, param: &AugParam) -> Result<NodeId, AugError> {
    let (_, c, h, w) = expect_rank4(g, x)?;
    if param.is_identity() {
        return Ok(x);
    }
    match param {
        AugParam::Identity => Ok(x),
        AugParam::Crop { dy, dx } => {
            if dy.unsigned_abs() as usize > h || dx.unsigned_abs() as usize > w {
                return Err(AugError::OutOfRange(format!(
                    "crop shift ({dy}, {dx}) exceeds image extent {h}x{w}"
                )));
            }
            Ok(g.translate(x, *dy, *dx)?)
        }
        AugParam::Cutout { cy, cx, side } => {
            let mask = cutout_mask::<T>(1, &[(*cy, *cx, *side)], 1, h, w);
            let m = g.constant(mask);
            let mb = g.broadcast(m, g.shape(x))?;
            Ok(g.mul(x, mb)?)
        }
        AugParam::Flip => Ok(g.flip_w(x)?),
        AugParam::Scale { factor } => {
            if *factor <= 0.0 || !factor.is_finite() {
                return Err(AugError::OutOfRange(format!("scale factor {factor}")));
            }
            let n = g.shape(x).dim(0);
            let grid = geometry_grid::<T>(n, h, w, &|y, xx| scale_src(*factor, h, w, y, xx));
            let gn = g.constant(grid);
            Ok(g.grid_sample(x, gn)?)
        }
        AugParam::Rotate { degrees } => {
            let n = g.shape(x).dim(0);
            let rad = degrees.to_radians();
            let grid = geometry_grid::<T>(n, h, w, &|y, xx| rotate_src(rad, h, w, y, xx));
            let gn = g.constant(grid);
            Ok(g.grid_sample(x, gn)?)
        }
        AugParam::Color { shift, saturation, contrast } => {
            let mut y = x;
            if *shift != 0.0 {
                y = g.add_scalar(y, *shift)?;
            }
            if *saturation != 1.0 {
                let m = g.sum_axes(y, &[1], true)?;
                let m = g.scale(m, 1.0 / c as f64)?;
                let mb = g.broadcast(m, g.shape(y))?;
                let d = g.sub(y, mb)?;
                let ds = g.scale(d, *saturation)?;
                y = g.add(ds, mb)?;
            }
            if *contrast != 1.0 {
                let m = g.sum_axes(y, &[1, 2, 3], true)?;
                let m = g.scale(m, 1.0 / (c * h * w) as f64)?;
                let mb = g.broadcast(m, g.shape(y))?;
                let d = g.sub(y, mb)?;
                let dc = g.scale(d, *contrast)?;
                y = g.add(dc, mb)?;
            }
            Ok(y)
        }
    }
}

/// Applies one transform draw identically to two batches and returns both
/// augmented nodes. The two batches must have the same channel and spatial
/// geometry (batch sizes may differ).
pub fn siamese_apply<T: Real>(
    g: &mut Graph<T>,
    a: NodeId,
    b: NodeId,
    param: &AugParam,
) -> Result<(NodeId, NodeId), AugError> {
    let (_, ca, ha, wa) = expect_rank4(g, a)?;
    let (_, cb, hb, wb) = expect_rank4(g, b)?;
    if (ca, ha, wa) != (cb, hb, wb) {
        return Err(AugError::ShapeMismatch(format!(
            "siamese batches disagree: {ca}x{ha}x{wa} vs {cb}x{hb}x{wb}"
        )));
    }
    Ok((apply(g, a, param)?, apply(g, b, param)?))
}

/// Applies an independent transform to each image of a batch.
///
/// Geometry is expressed as one sampling grid over the whole batch,
/// cutouts as one mask, and color as per-image scalars, so the cost stays
/// batch-level regardless of how the per-image draws mix kinds.
pub fn apply_each<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    params: &[AugParam],
) -> Result<NodeId, AugError> {
    let (n, c, h, w) = expect_rank4(g, x)?;
    if params.len() != n {
        return Err(AugError::ShapeMismatch(format!(
            "{} parameter draws for a batch of {n}",
            params.len()
        )));
    }
    if params.iter().all(|p| p.is_identity()) {
        return Ok(x);
    }
    for p in params {
        if let AugParam::Crop { dy, dx } = p {
            if dy.unsigned_abs() as usize > h || dx.unsigned_abs() as usize > w {
                return Err(AugError::OutOfRange(format!(
                    "crop shift ({dy}, {dx}) exceeds image extent {h}x{w}"
                )));
            }
        }
        if let AugParam::Scale { factor } = p {
            if *factor <= 0.0 || !factor.is_finite() {
                return Err(AugError::OutOfRange(format!("scale factor {factor}")));
            }
        }
    }

    let mut y = x;

    let needs_geometry = params.iter().any(|p| {
        matches!(
            p,
            AugParam::Crop { .. } | AugParam::Flip | AugParam::Scale { .. } | AugParam::Rotate { .. }
        ) && !p.is_identity()
    });
    if needs_geometry {
        let mut grid = Vec::with_capacity(n * h * w * 2);
        for p in params {
            let src: Box<dyn Fn(usize, usize) -> (f64, f64)> = match p {
                AugParam::Crop { dy, dx } => {
                    let (dy, dx) = (*dy, *dx);
                    Box::new(move |y, x| ((y as i64 + dy) as f64, (x as i64 + dx) as f64))
                }
                AugParam::Flip => Box::new(move |y, x| (y as f64, (w - 1 - x) as f64)),
                AugParam::Scale { factor } => {
                    let f = *factor;
                    Box::new(move |y, x| scale_src(f, h, w, y, x))
                }
                AugParam::Rotate { degrees } => {
                    let rad = degrees.to_radians();
                    Box::new(move |y, x| rotate_src(rad, h, w, y, x))
                }
                _ => Box::new(|y, x| (y as f64, x as f64)),
            };
            push_grid_plane::<T>(&mut grid, h, w, &*src);
        }
        let gn = g.constant(Tensor::from_vec(Shape::d4(n, h, w, 2), grid));
        y = g.grid_sample(y, gn)?;
    }

    let cut: Vec<(i64, i64, usize)> = params
        .iter()
        .map(|p| match p {
            AugParam::Cutout { cy, cx, side } => (*cy, *cx, *side),
            _ => (0, 0, 0),
        })
        .collect();
    if cut.iter().any(|(_, _, s)| *s > 0) {
        let mask = cutout_mask::<T>(n, &cut, 1, h, w);
        let m = g.constant(mask);
        let mb = g.broadcast(m, g.shape(y))?;
        y = g.mul(y, mb)?;
    }

    let shifts: Vec<f64> = params
        .iter()
        .map(|p| match p {
            AugParam::Color { shift, .. } => *shift,
            _ => 0.0,
        })
        .collect();
    if shifts.iter().any(|s| *s != 0.0) {
        let sv: Vec<T> = shifts.iter().map(|s| T::from_f64(*s)).collect();
        let sn = g.constant(Tensor::from_vec(Shape::d4(n, 1, 1, 1), sv));
        let sb = g.broadcast(sn, g.shape(y))?;
        y = g.add(y, sb)?;
    }

    let sats: Vec<f64> = params
        .iter()
        .map(|p| match p {
            AugParam::Color { saturation, .. } => *saturation,
            _ => 1.0,
        })
        .collect();
    if sats.iter().any(|s| *s != 1.0) {
        let m = g.sum_axes(y, &[1], true)?;
        let m = g.scale(m, 1.0 / c as f64)?;
        let mb = g.broadcast(m, g.shape(y))?;
        let d = g.sub(y, mb)?;
        let sv: Vec<T> = sats.iter().map(|s| T::from_f64(*s)).collect();
        let sn = g.constant(Tensor::from_vec(Shape::d4(n, 1, 1, 1), sv));
        let sb = g.broadcast(sn, g.shape(y))?;
        let ds = g.mul(d, sb)?;
        y = g.add(ds, mb)?;
    }

    let cons: Vec<f64> = params
        .iter()
        .map(|p| match p {
            AugParam::Color { contrast, .. } => *contrast,
            _ => 1.0,
        })
        .collect();
    if cons.iter().any(|v| *v != 1.0) {
        let m = g.sum_axes(y, &[1, 2, 3], true)?;
        let m = g.scale(m, 1.0 / (c * h * w) as f64)?;
        let mb = g.broadcast(m, g.shape(y))?;
        let d = g.sub(y, mb)?;
        let cv: Vec<T> = cons.iter().map(|v| T::from_f64(*v)).collect();
        let cn = g.constant(Tensor::from_vec(Shape::d4(n, 1, 1, 1), cv));
        let cb = g.broadcast(cn, g.shape(y))?;
        let dc = g.mul(d, cb)?;
        y = g.add(dc, mb)?;
    }

    Ok(y)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < GRID_SNAP {
        r
    } else {
        v
    }
}

fn scale_src(factor: f64, h: usize, w: usize, y: usize, x: usize) -> (f64, f64) {
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    (snap(cy + (y as f64 - cy) / factor), snap(cx + (x as f64 - cx) / factor))
}

fn rotate_src(rad: f64, h: usize, w: usize, y: usize, x: usize) -> (f64, f64) {
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (s, c) = rad.sin_cos();
    let dy = y as f64 - cy;
    let dx = x as f64 - cx;
    let sx = cx + c * dx + s * dy;
    let sy = cy - s * dx + c * dy;
    (snap(sy), snap(sx))
}

fn push_grid_plane<T: Real>(
    grid: &mut Vec<T>,
    h: usize,
    w: usize,
    src: &dyn Fn(usize, usize) -> (f64, f64),
) {
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y, x);
            grid.push(T::from_f64(sy));
            grid.push(T::from_f64(sx));
        }
    }
}

fn geometry_grid<T: Real>(
    n: usize,
    h: usize,
    w: usize,
    src: &dyn Fn(usize, usize) -> (f64, f64),
) -> Tensor<T> {
    let mut plane = Vec::with_capacity(h * w * 2);
    push_grid_plane::<T>(&mut plane, h, w, src);
    let mut grid = Vec::with_capacity(n * plane.len());
    for _ in 0..n {
        grid.extend_from_slice(&plane);
    }
    Tensor::from_vec(Shape::d4(n, h, w, 2), grid)
}

fn cutout_mask<T: Real>(
    n: usize,
    regions: &[(i64, i64, usize)],
    c: usize,
    h: usize,
    w: usize,
) -> Tensor<T> {
    assert_eq!(regions.len(), n);
    let mut mask = vec![T::one(); n * c * h * w];
    for (i, &(cy, cx, side)) in regions.iter().enumerate() {
        if side == 0 {
            continue;
        }
        let half = (side / 2) as i64;
        let y0 = (cy - half).clamp(0, h as i64) as usize;
        let y1 = (cy - half + side as i64).clamp(0, h as i64) as usize;
        let x0 = (cx - half).clamp(0, w as i64) as usize;
        let x1 = (cx - half + side as i64).clamp(0, w as i64) as usize;
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for y in y0..y1 {
                for x in x0..x1 {
                    mask[base + y * w + x] = T::zero();
                }
            }
        }
    }
    Tensor::from_vec(Shape::d4(n, c, h, w), mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn image_node(g: &mut Graph<f64>, data: Vec<f64>, n: usize, c: usize, h: usize, w: usize) -> NodeId {
        g.constant(Tensor::from_vec(Shape::d4(n, c, h, w), data))
    }

    #[test]
    fn identity_returns_the_same_node() {
        let mut g = Graph::new();
        let x = image_node(&mut g, vec![1.0, 2.0, 3.0, 4.0], 1, 1, 2, 2);
        for p in [
            AugParam::Identity,
            AugParam::Crop { dy: 0, dx: 0 },
            AugParam::Cutout { cy: 1, cx: 1, side: 0 },
            AugParam::Scale { factor: 1.0 },
            AugParam::Rotate { degrees: 0.0 },
            AugParam::Color { shift: 0.0, saturation: 1.0, contrast: 1.0 },
        ] {
            assert_eq!(apply(&mut g, x, &p).unwrap(), x, "{p:?}");
        }
    }

    #[test]
    fn crop_shifts_content_with_zero_fill() {
        let mut g = Graph::new();
        let x = image_node(&mut g, vec![1.0, 2.0, 3.0, 4.0], 1, 1, 2, 2);
        let y = apply(&mut g, x, &AugParam::Crop { dy: 1, dx: 0 }).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn cutout_zeroes_clipped_square_exactly() {
        let mut g = Graph::new();
        let x = image_node(&mut g, (1..=16).map(f64::from).collect(), 1, 1, 4, 4);
        let y = apply(&mut g, x, &AugParam::Cutout { cy: 0, cx: 3, side: 2 }).unwrap();
        let v = g.value(y).data().to_vec();
        let xs = g.value(x).data().to_vec();
        for (i, (a, b)) in v.iter().zip(&xs).enumerate() {
            let (row, col) = (i / 4, i % 4);
            if row < 1 && col >= 2 {
                assert_eq!(*a, 0.0, "pixel {i}");
            } else {
                assert_eq!(a, b, "pixel {i}");
            }
        }
    }

    #[test]
    fn rotate_half_turn_reverses_pixels() {
        let mut g = Graph::new();
        let x = image_node(&mut g, vec![1.0, 2.0, 3.0, 4.0], 1, 1, 2, 2);
        let y = apply(&mut g, x, &AugParam::Rotate { degrees: 180.0 }).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 3.0, 2.0, 1.0]);
        let z = apply(&mut g, x, &AugParam::Flip).unwrap();
        assert_eq!(g.value(z).data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn scale_preserves_constant_images() {
        let mut g = Graph::new();
        let x = image_node(&mut g, vec![0.7; 25], 1, 1, 5, 5);
        let y = apply(&mut g, x, &AugParam::Scale { factor: 1.15 }).unwrap();
        for v in g.value(y).data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
        let z = apply(&mut g, x, &AugParam::Scale { factor: 2.0 }).unwrap();
        let center = g.value(z).data()[2 * 5 + 2];
        assert!((center - 0.7).abs() < 1e-12);
    }

    #[test]
    fn color_formulas_match_hand_computation() {
        let mut g = Graph::new();
        let x = image_node(&mut g, vec![0.0, 1.0, 0.0, 1.0, 2.0, 3.0, 2.0, 3.0], 1, 2, 2, 2);
        let p = AugParam::Color { shift: 0.25, saturation: 2.0, contrast: 1.0 };
        let y = apply(&mut g, x, &p).unwrap();
        let v = g.value(y).data().to_vec();
        let shifted = [0.25, 1.25, 0.25, 1.25, 2.25, 3.25, 2.25, 3.25];
        for i in 0..4 {
            let m = (shifted[i] + shifted[i + 4]) / 2.0;
            assert!((v[i] - ((shifted[i] - m) * 2.0 + m)).abs() < 1e-12);
            assert!((v[i + 4] - ((shifted[i + 4] - m) * 2.0 + m)).abs() < 1e-12);
        }

        let pc = AugParam::Color { shift: 0.0, saturation: 1.0, contrast: 0.5 };
        let yc = apply(&mut g, x, &pc).unwrap();
        let vc = g.value(yc).data().to_vec();
        let mean = 1.5;
        let xs = [0.0, 1.0, 0.0, 1.0, 2.0, 3.0, 2.0, 3.0];
        for i in 0..8 {
            assert!((vc[i] - ((xs[i] - mean) * 0.5 + mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_parameters_respect_ranges() {
        let dist = AugDistribution::new(AugStrategy::Combination);
        let mut rng = seeds::derive(3, &[seeds::tag::OMEGA]);
        let mut seen_flip = false;
        for _ in 0..400 {
            match dist.sample(28, 28, &mut rng).unwrap() {
                AugParam::Crop { dy, dx } => {
                    assert!(dy.abs() <= 4 && dx.abs() <= 4);
                }
                AugParam::Cutout { cy, cx, side } => {
                    assert_eq!(side, 14);
                    assert!((0..28).contains(&cy) && (0..28).contains(&cx));
                }
                AugParam::Flip => seen_flip = true,
                AugParam::Scale { factor } => {
                    assert!((1.0 / 1.2..=1.2).contains(&factor));
                }
                AugParam::Rotate { degrees } => assert!(degrees.abs() <= 15.0),
                AugParam::Color { shift, saturation, contrast } => {
                    assert!(shift.abs() <= 0.5);
                    assert!((0.0..=2.0).contains(&saturation));
                    assert!((0.5..=1.5).contains(&contrast));
                }
                AugParam::Identity => {}
            }
        }
        assert!(seen_flip);
    }

    #[test]
    fn digit_combination_never_flips() {
        let mut dist = AugDistribution::new(AugStrategy::Combination);
        dist.exclude_flip = true;
        let mut rng = seeds::derive(4, &[seeds::tag::OMEGA]);
        for _ in 0..600 {
            let p = dist.sample(28, 28, &mut rng).unwrap();
            assert!(!matches!(p, AugParam::Flip));
        }
        let single = AugDistribution {
            strategy: AugStrategy::Single(AugKind::Flip),
            exclude_flip: true,
            ..AugDistribution::new(AugStrategy::None)
        };
        let mut hits = 0;
        for _ in 0..100 {
            if matches!(single.sample(28, 28, &mut rng).unwrap(), AugParam::Flip) {
                hits += 1;
            }
        }
        assert!(hits > 20, "single flip stays available when explicitly requested");
    }

    #[test]
    fn empty_kind_set_errors() {
        let mut dist = AugDistribution::new(AugStrategy::Combination);
        dist.kinds = vec![AugKind::Flip];
        dist.exclude_flip = true;
        let mut rng = seeds::derive(5, &[seeds::tag::OMEGA]);
        assert!(matches!(dist.sample(8, 8, &mut rng), Err(AugError::EmptyKindSet)));
    }

    #[test]
    fn per_image_matches_shared_for_every_kind() {
        let mut rng = seeds::derive(6, &[seeds::tag::OMEGA]);
        let data: Vec<f64> = (0..3 * 2 * 6 * 6).map(|i| ((i * 37 % 23) as f64) / 7.0 - 1.0).collect();
        for param in [
            AugParam::Crop { dy: -1, dx: 2 },
            AugParam::Cutout { cy: 2, cx: 3, side: 3 },
            AugParam::Flip,
            AugParam::Scale { factor: 1.17 },
            AugParam::Rotate { degrees: -11.0 },
            AugParam::Color {
                shift: rng.random_range(-0.5..0.5),
                saturation: 1.3,
                contrast: 0.8,
            },
        ] {
            let mut g = Graph::new();
            let x = image_node(&mut g, data.clone(), 3, 2, 6, 6);
            let shared = apply(&mut g, x, &param).unwrap();
            let each = apply_each(&mut g, x, &[param.clone(), param.clone(), param.clone()]).unwrap();
            let a = g.value(shared).data().to_vec();
            let b = g.value(each).data().to_vec();
            for (i, (va, vb)) in a.iter().zip(&b).enumerate() {
                assert!((va - vb).abs() < 1e-12, "{param:?} pixel {i}: {va} vs {vb}");
            }
        }
    }

    #[test]
    fn per_image_draws_differ_across_images() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 16).map(|i| i as f64).collect();
        let x = image_node(&mut g, data, 2, 1, 4, 4);
        let params = vec![AugParam::Crop { dy: 1, dx: 0 }, AugParam::Flip];
        let y = apply_each(&mut g, x, &params).unwrap();
        let v = g.value(y).data();
        assert_eq!(&v[..4], &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(&v[16..20], &[19.0, 18.0, 17.0, 16.0]);
    }

    #[test]
    fn siamese_requires_matching_geometry() {
        let mut g = Graph::new();
        let a = image_node(&mut g, vec![0.0; 16], 1, 1, 4, 4);
        let b = image_node(&mut g, vec![0.0; 18], 2, 1, 3, 3);
        assert!(matches!(
            siamese_apply(&mut g, a, b, &AugParam::Flip),
            Err(AugError::ShapeMismatch(_))
        ));
        let c = image_node(&mut g, vec![1.0; 32], 2, 1, 4, 4);
        let (ya, yc) = siamese_apply(&mut g, a, c, &AugParam::Crop { dy: 1, dx: 1 }).unwrap();
        assert!(g.value(ya).all_finite() && g.value(yc).all_finite());
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let dist = AugDistribution::new(AugStrategy::Combination);
        let a: Vec<AugParam> = {
            let mut rng = seeds::derive(9, &[seeds::tag::OMEGA, 2, 7]);
            (0..20).map(|_| dist.sample(28, 28, &mut rng).unwrap()).collect()
        };
        let b: Vec<AugParam> = {
            let mut rng = seeds::derive(9, &[seeds::tag::OMEGA, 2, 7]);
            (0..20).map(|_| dist.sample(28, 28, &mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
