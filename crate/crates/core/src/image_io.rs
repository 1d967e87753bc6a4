//! Image decoding, resolution policy and extractor normalization.

use std::path::Path;

use image::{ImageFormat, ImageReader, Rgb, RgbImage};
use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;

/// Per-channel ImageNet statistics the VGG19 extractor was trained with.
pub const EXTRACTOR_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const EXTRACTOR_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Style/content side ratio beyond which a mismatch warning is raised.
pub const STYLE_MISMATCH_FACTOR: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    /// Values in `[0, 1]`.
    Unit,
    /// Extractor statistics applied.
    Normalized,
}

impl RangeMode {
    fn name(self) -> &'static str {
        match self {
            RangeMode::Unit => "unit",
            RangeMode::Normalized => "normalized",
        }
    }
}

/// A three-channel raster stored as `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T> {
    data: Array3<T>,
    range: RangeMode,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(data: Array3<T>, range: RangeMode) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch {
                left: vec![c, h, w],
                right: vec![3, h.max(1), w.max(1)],
            });
        }
        if range == RangeMode::Unit && data.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::WrongRangeMode {
                expected: "unit",
                found: "out-of-range values",
            });
        }
        Ok(Self { data, range })
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize, usize)) -> T) -> Result<Self> {
        Self::new(Array3::from_shape_fn((3, height, width), f), RangeMode::Unit)
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Array3::from_elem((3, height, width), value), RangeMode::Unit)
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    pub fn range(&self) -> RangeMode {
        self.range
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn shape(&self) -> [usize; 3] {
        let (c, h, w) = self.data.dim();
        [c, h, w]
    }

    fn require(&self, mode: RangeMode) -> Result<()> {
        if self.range != mode {
            return Err(Error::WrongRangeMode {
                expected: mode.name(),
                found: self.range.name(),
            });
        }
        Ok(())
    }

    /// Converts between scalar precisions without changing the range tag.
    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            data: self.data.mapv(|v| U::lit(v.as_f64())),
            range: self.range,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StylePolicy {
    #[default]
    KeepOriginal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResizePolicy {
    pub content_target: (usize, usize),
    pub style_policy: StylePolicy,
}

impl Default for ResizePolicy {
    fn default() -> Self {
        Self {
            content_target: (500, 500),
            style_policy: StylePolicy::KeepOriginal,
        }
    }
}

impl ResizePolicy {
    pub fn with_content_target(height: usize, width: usize) -> Result<Self> {
        let policy = Self {
            content_target: (height, width),
            ..Self::default()
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        let (height, width) = self.content_target;
        if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
            return Err(Error::InvalidTarget { height, width });
        }
        Ok(())
    }
}

fn unreadable(path: &Path, reason: impl ToString) -> Error {
    Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Decodes a PNG or JPEG into a unit-range RGB tensor. Grayscale sources are
/// replicated across the three channels.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageTensor<T>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| unreadable(path, e))?
        .with_guessed_format()
        .map_err(|e| unreadable(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Jpeg) => {}
        _ => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
            })
        }
    }
    let rgb = reader.decode().map_err(|e| unreadable(path, e))?.to_rgb8();
    Ok(from_rgb8(&rgb))
}

pub fn from_rgb8<T: Scalar>(rgb: &RgbImage) -> ImageTensor<T> {
    let (w, h) = rgb.dimensions();
    let scale = T::lit(1.0 / 255.0);
    let data = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        T::from_u8(rgb.get_pixel(x as u32, y as u32)[c]).expect("u8") * scale
    });
    ImageTensor {
        data,
        range: RangeMode::Unit,
    }
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8<T: Scalar>(img: &ImageTensor<T>) -> Result<RgbImage> {
    img.require(RangeMode::Unit)?;
    let (h, w) = img.dims();
    let d = &img.data;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([quantize(d[[0, y, x]]), quantize(d[[1, y, x]]), quantize(d[[2, y, x]])])
    }))
}

/// Writes an 8-bit RGB file; the format follows the extension (PNG or JPEG).
pub fn save_image<T: Scalar>(img: &ImageTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path).map_err(|_| Error::UnsupportedFormat {
        path: path.to_path_buf(),
    })?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
        });
    }
    to_rgb8(img)?
        .save_with_format(path, format)
        .map_err(|e| unreadable(path, e))
}

/// Writes a single-channel map as an 8-bit grayscale PNG, values clamped to `[0, 1]`.
pub fn save_gray<T: Scalar>(gray: ArrayView2<'_, T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = gray.dim();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(gray[[y as usize, x as usize]])])
    });
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| unreadable(path, e))
}

/// Bilinearly resamples the content image to the policy's target size.
pub fn prepare_content<T: Scalar>(img: &ImageTensor<T>, policy: &ResizePolicy) -> Result<ImageTensor<T>> {
    policy.validate()?;
    let (th, tw) = policy.content_target;
    let mut data = kernels::resize_bilinear(img.data.view(), th, tw);
    if img.range == RangeMode::Unit {
        // Convex combinations stay in range; clamp guards rounding at the ends.
        data.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
    }
    Ok(ImageTensor { data, range: img.range })
}

#[derive(Clone, Debug)]
pub struct PreparedStyle<T> {
    pub image: ImageTensor<T>,
    /// Set when a style side differs from the content target by more than
    /// [`STYLE_MISMATCH_FACTOR`].
    pub warning: Option<String>,
}

/// Style images keep their native resolution; extreme mismatches against the
/// content target are reported but never rejected.
pub fn prepare_style<T: Scalar>(img: &ImageTensor<T>, policy: &ResizePolicy) -> PreparedStyle<T> {
    let (sh, sw) = img.dims();
    let (ch, cw) = policy.content_target;
    let off = |a: usize, b: usize| {
        let r = a as f64 / b.max(1) as f64;
        !(1.0 / STYLE_MISMATCH_FACTOR..=STYLE_MISMATCH_FACTOR).contains(&r)
    };
    let warning = (off(sh, ch) || off(sw, cw)).then(|| {
        let msg = format!(
            "style image {sh}x{sw} differs from content {ch}x{cw} by more than {STYLE_MISMATCH_FACTOR}x; style may transfer unevenly"
        );
        log::warn!("{msg}");
        msg
    });
    PreparedStyle {
        image: img.clone(),
        warning,
    }
}

fn channel_map<T: Scalar>(data: &Array3<T>, f: impl Fn(usize, T) -> T) -> Array3<T> {
    let mut out = data.clone();
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        plane.mapv_inplace(|v| f(c, v));
    }
    out
}

/// Per-channel scale and shift implementing [`normalize`]: `x * scale + shift`.
pub fn normalization_affine<T: Scalar>() -> (Vec<T>, Vec<T>) {
    let scale = EXTRACTOR_STD.iter().map(|s| T::lit(1.0 / s)).collect();
    let shift = EXTRACTOR_MEAN
        .iter()
        .zip(EXTRACTOR_STD)
        .map(|(m, s)| T::lit(-m / s))
        .collect();
    (scale, shift)
}

pub fn normalize<T: Scalar>(img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    img.require(RangeMode::Unit)?;
    // Same arithmetic as the in-graph affine, so both paths agree bit for bit.
    let (scale, shift) = normalization_affine::<T>();
    Ok(ImageTensor {
        data: channel_map(&img.data, |c, v| v * scale[c] + shift[c]),
        range: RangeMode::Normalized,
    })
}

/// Inverse of [`normalize`], clamped into `[0, 1]`.
pub fn denormalize<T: Scalar>(img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    img.require(RangeMode::Normalized)?;
    let mean: Vec<T> = EXTRACTOR_MEAN.iter().map(|&m| T::lit(m)).collect();
    let std: Vec<T> = EXTRACTOR_STD.iter().map(|&s| T::lit(s)).collect();
    Ok(ImageTensor {
        data: channel_map(&img.data, |c, v| (v * std[c] + mean[c]).max(T::zero()).min(T::one())),
        range: RangeMode::Unit,
    })
}

/// Copies one channel plane out of the tensor.
pub fn plane<T: Scalar>(img: &ImageTensor<T>, channel: usize) -> Array2<T> {
    img.data.index_axis(Axis(0), channel).to_owned()
}
